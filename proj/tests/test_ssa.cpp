#include "doctest.h"

#include <cmath>

#include "cme/errors.hpp"
#include "cme/ssa.hpp"

using namespace cme;

namespace {

ReactionNetwork birth_death(double birth, double decay) {
    ReactionNetwork net;
    net.species = {"X"};
    net.reactions.push_back({{+1}, birth, {}});
    net.reactions.push_back({{-1}, decay, {{{0}, FactorForm::Poly, {0.0, 1.0}}}});
    return net;
}

TruncatedStateSpace box(std::vector<long> lo, std::vector<long> hi) {
    return TruncatedStateSpace{std::move(lo), std::move(hi)};
}

} // namespace

TEST_CASE("zero-reaction network is absorbing") {
    ReactionNetwork net;
    net.species = {"A", "B"};
    const Trajectory traj = simulate_trajectory(net, {3, 4}, 100.0, 1);
    CHECK(traj.times.empty());
    CHECK(traj.state_at(0.0) == std::vector<long>{3, 4});
    CHECK(traj.state_at(99.0) == std::vector<long>{3, 4});
}

TEST_CASE("fixed seed reproduces the trajectory bit for bit") {
    const ReactionNetwork net = builtin_cascade(3);
    const Trajectory t1 = simulate_trajectory(net, {0, 0, 0}, 20.0, 42);
    const Trajectory t2 = simulate_trajectory(net, {0, 0, 0}, 20.0, 42);
    CHECK(t1.times == t2.times);
    CHECK(t1.states == t2.states);
    const Trajectory t3 = simulate_trajectory(net, {0, 0, 0}, 20.0, 43);
    CHECK(t1.times != t3.times);
}

TEST_CASE("trajectories stay nonnegative and move by one stoichiometry") {
    const ReactionNetwork net = builtin_lambda_phage();
    const Trajectory traj = simulate_trajectory(net, {0, 0, 0, 0, 0}, 10.0, 7);
    REQUIRE(!traj.times.empty());
    std::vector<long> prev = traj.x0;
    double tprev = 0.0;
    for (size_t k = 0; k < traj.times.size(); ++k) {
        CHECK(traj.times[k] > tprev);
        tprev = traj.times[k];
        int moved = 0;
        for (size_t s = 0; s < prev.size(); ++s) {
            CHECK(traj.states[k][s] >= 0);
            moved += static_cast<int>(std::abs(traj.states[k][s] - prev[s]));
        }
        CHECK(moved == 1);
        prev = traj.states[k];
    }
    CHECK_THROWS_AS(simulate_trajectory(net, {-1, 0, 0, 0, 0}, 1.0, 0), ValidationError);
}

TEST_CASE("single-run ensemble is the trajectory's indicator histogram") {
    const ReactionNetwork net = birth_death(2.0, 0.1);
    const std::vector<double> times = {1.0, 5.0, 9.0};
    const TruncatedStateSpace range = box({0}, {127});
    const EnsembleSummary sum = run_ensemble(net, {0}, times, range, 1, 1234);
    const Trajectory traj = simulate_trajectory(net, {0}, 10.0, 1234);
    for (size_t ti = 0; ti < times.size(); ++ti) {
        const long v = traj.state_at(times[ti])[0];
        long long total = 0;
        for (size_t b = 0; b < sum.histograms[ti][0].size(); ++b) {
            total += sum.histograms[ti][0][b];
            if (static_cast<long>(b) == v)
                CHECK(sum.histograms[ti][0][b] == 1);
            else
                CHECK(sum.histograms[ti][0][b] == 0);
        }
        CHECK(total == 1);
        CHECK(sum.mean[ti][0] == doctest::Approx(double(v)).epsilon(1e-14));
    }
}

TEST_CASE("birth-death ensemble reaches the stationary mean") {
    const ReactionNetwork net = birth_death(2.0, 0.1);  // stationary mean 20
    const TruncatedStateSpace range = box({0}, {127});
    const EnsembleSummary sum = run_ensemble(net, {0}, {60.0}, range, 10000, 99);
    CHECK(sum.clipped == 0);
    long long total = 0;
    for (long long c : sum.histograms[0][0]) total += c;
    CHECK(total == 10000);
    const double se = sum.stderr_[0][0];
    CHECK(se > 0.0);
    CHECK(std::abs(sum.mean[0][0] - 20.0) < 3.0 * se);
    // Poisson(20): standard error near sqrt(20/N)
    CHECK(se == doctest::Approx(std::sqrt(20.0 / 10000.0)).epsilon(0.2));
}

TEST_CASE("out-of-range samples are clipped into the boundary bin") {
    const ReactionNetwork net = birth_death(5.0, 0.0);  // pure growth
    const TruncatedStateSpace range = box({0}, {3});
    const EnsembleSummary sum = run_ensemble(net, {0}, {100.0}, range, 50, 7);
    CHECK(sum.clipped == 50);
    CHECK(sum.histograms[0][0][3] == 50);
    CHECK(sum.mean[0][0] == 3.0);
}

TEST_CASE("ensembles are reproducible for a fixed base seed") {
    const ReactionNetwork net = builtin_cascade(2);
    const TruncatedStateSpace range = box({0, 0}, {63, 63});
    const EnsembleSummary a = run_ensemble(net, {0, 0}, {5.0, 10.0}, range, 200, 11);
    const EnsembleSummary b = run_ensemble(net, {0, 0}, {5.0, 10.0}, range, 200, 11);
    CHECK(a.histograms == b.histograms);
    CHECK(a.clipped == b.clipped);
}
