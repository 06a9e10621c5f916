#include "cme/ssa.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cme/errors.hpp"

namespace cme {

std::vector<long> Trajectory::state_at(double t) const {
    // states[k] holds from times[k] (inclusive) to times[k+1]
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return x0;
    return states[static_cast<size_t>(it - times.begin()) - 1];
}

namespace {

/// One direct-method step: returns the waiting time and fires a reaction in
/// place, or returns a negative time when the total rate is zero (absorbing).
double ssa_step(const ReactionNetwork& net, std::vector<long>& x, std::mt19937_64& rng,
                std::vector<double>& a) {
    double total = 0.0;
    for (int mu = 0; mu < net.num_reactions(); ++mu) {
        a[static_cast<size_t>(mu)] = propensity_eval(net, mu, x);
        total += a[static_cast<size_t>(mu)];
    }
    if (total <= 0.0) return -1.0;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double tau = -std::log1p(-uni(rng)) / total;
    double target = uni(rng) * total, acc = 0.0;
    int mu = net.num_reactions() - 1;
    for (int m = 0; m < net.num_reactions(); ++m) {
        acc += a[static_cast<size_t>(m)];
        if (acc >= target) {
            mu = m;
            break;
        }
    }
    const Reaction& r = net.reactions[static_cast<size_t>(mu)];
    for (size_t s = 0; s < x.size(); ++s) x[s] += r.stoich[s];
    return tau;
}

} // namespace

Trajectory simulate_trajectory(const ReactionNetwork& net, const std::vector<long>& x0,
                               double t_end, std::uint64_t seed) {
    for (long v : x0)
        if (v < 0) throw ValidationError("initial state must be nonnegative");
    Trajectory traj;
    traj.seed = seed;
    traj.x0 = x0;
    std::mt19937_64 rng(seed);
    std::vector<long> x = x0;
    std::vector<double> a(static_cast<size_t>(net.num_reactions()));
    double t = 0.0;
    for (;;) {
        std::vector<long> next = x;
        const double tau = ssa_step(net, next, rng, a);
        if (tau < 0.0 || t + tau > t_end) break;
        t += tau;
        x = std::move(next);
        traj.times.push_back(t);
        traj.states.push_back(x);
    }
    return traj;
}

Eigen::VectorXd EnsembleSummary::marginal(int time_idx, int species) const {
    const auto& h = histograms[static_cast<size_t>(time_idx)][static_cast<size_t>(species)];
    Eigen::VectorXd out(static_cast<Eigen::Index>(h.size()));
    for (size_t i = 0; i < h.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = static_cast<double>(h[i]) / static_cast<double>(n_runs);
    return out;
}

EnsembleSummary run_ensemble(const ReactionNetwork& net, const std::vector<long>& x0,
                             const std::vector<double>& output_times,
                             const TruncatedStateSpace& range, long long n_runs,
                             std::uint64_t base_seed) {
    if (n_runs < 1) throw ValidationError("run_ensemble: need at least one run");
    const int d = net.num_species();
    const size_t nt = output_times.size();

    EnsembleSummary sum;
    sum.times = output_times;
    sum.range = range;
    sum.n_runs = n_runs;
    sum.histograms.assign(nt, std::vector<std::vector<long long>>(static_cast<size_t>(d)));
    for (size_t ti = 0; ti < nt; ++ti)
        for (int s = 0; s < d; ++s)
            sum.histograms[ti][static_cast<size_t>(s)]
                .assign(static_cast<size_t>(range.extent(s)), 0);
    long long clipped = 0;

#pragma omp parallel reduction(+ : clipped)
    {
        // integer accumulators merge exactly, in any thread order
        auto local = sum.histograms;
        std::vector<double> a(static_cast<size_t>(net.num_reactions()));
#pragma omp for schedule(static)
        for (long long run = 0; run < n_runs; ++run) {
            std::mt19937_64 rng(base_seed + static_cast<std::uint64_t>(run));
            std::vector<long> x = x0;
            double t = 0.0;
            size_t next_out = 0;
            bool absorbed = false;
            while (next_out < nt) {
                double tau = -1.0;
                std::vector<long> nx;
                if (!absorbed) {
                    nx = x;
                    tau = ssa_step(net, nx, rng, a);
                    if (tau < 0.0) absorbed = true;
                }
                const double t_next = absorbed ? output_times.back() + 1.0 : t + tau;
                while (next_out < nt && output_times[next_out] < t_next) {
                    for (int s = 0; s < d; ++s) {
                        long v = x[static_cast<size_t>(s)];
                        const long lo = range.lower[static_cast<size_t>(s)];
                        const long hi = range.upper[static_cast<size_t>(s)];
                        if (v < lo || v > hi) {
                            ++clipped;
                            v = std::clamp(v, lo, hi);
                        }
                        ++local[next_out][static_cast<size_t>(s)][static_cast<size_t>(v - lo)];
                    }
                    ++next_out;
                }
                if (!absorbed) {
                    t += tau;
                    x = std::move(nx);
                }
            }
        }
#pragma omp critical
        for (size_t ti = 0; ti < nt; ++ti)
            for (int s = 0; s < d; ++s)
                for (size_t b = 0; b < local[ti][static_cast<size_t>(s)].size(); ++b)
                    sum.histograms[ti][static_cast<size_t>(s)][b] +=
                        local[ti][static_cast<size_t>(s)][b];
    }
    sum.clipped = clipped;

    sum.mean.assign(nt, std::vector<double>(static_cast<size_t>(d), 0.0));
    sum.stderr_.assign(nt, std::vector<double>(static_cast<size_t>(d), 0.0));
    for (size_t ti = 0; ti < nt; ++ti)
        for (int s = 0; s < d; ++s) {
            const auto& h = sum.histograms[ti][static_cast<size_t>(s)];
            double m1 = 0.0, m2 = 0.0;
            for (size_t b = 0; b < h.size(); ++b) {
                const double v =
                    static_cast<double>(range.lower[static_cast<size_t>(s)] + static_cast<long>(b));
                m1 += static_cast<double>(h[b]) * v;
                m2 += static_cast<double>(h[b]) * v * v;
            }
            m1 /= static_cast<double>(n_runs);
            m2 /= static_cast<double>(n_runs);
            sum.mean[ti][static_cast<size_t>(s)] = m1;
            if (n_runs > 1) {
                const double var = std::max(0.0, m2 - m1 * m1) * static_cast<double>(n_runs) /
                                   static_cast<double>(n_runs - 1);
                sum.stderr_[ti][static_cast<size_t>(s)] =
                    std::sqrt(var / static_cast<double>(n_runs));
            }
        }
    return sum;
}

} // namespace cme
