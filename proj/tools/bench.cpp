// Benchmark: OpenMP kernels against their serial reference implementations.

#include <chrono>
#include <cstdio>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cme/dense.hpp"
#include "cme/model.hpp"
#include "cme/ssa.hpp"

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

int main() {
#ifdef _OPENMP
    std::cout << "OpenMP threads: " << omp_get_max_threads() << "\n";
#else
    std::cout << "OpenMP: disabled\n";
#endif

    // operator application on the 5-species toggle-switch model
    {
        const cme::ReactionNetwork net = cme::builtin_lambda_phage();
        cme::TruncatedStateSpace space;
        space.lower = {0, 0, 0, 0, 0};
        space.upper = {15, 40, 10, 10, 10};
        const cme::CMEOperator op = cme::make_operator(net, space);
        Eigen::VectorXd p = Eigen::VectorXd::Ones(space.size()) / space.size_as_double();

        const int reps = 20;
        auto t0 = std::chrono::steady_clock::now();
        Eigen::VectorXd serial;
        for (int i = 0; i < reps; ++i) serial = cme::apply_operator_serial(op, p);
        const double ts = seconds_since(t0) / reps;
        t0 = std::chrono::steady_clock::now();
        Eigen::VectorXd parallel;
        for (int i = 0; i < reps; ++i) parallel = cme::apply_operator(op, p);
        const double tp = seconds_since(t0) / reps;
        std::printf("operator apply (%lld states): serial %.4f s, parallel %.4f s, "
                    "speedup %.2fx, max |diff| %.3g\n",
                    static_cast<long long>(space.size()), ts, tp, ts / tp,
                    (serial - parallel).cwiseAbs().maxCoeff());
    }

    // stochastic ensembles: run-level parallelism with exact integer merging
    {
        const cme::ReactionNetwork net = cme::builtin_schloegl();
        cme::TruncatedStateSpace range;
        range.lower = {0};
        range.upper = {799};
        const std::vector<long> x0 = {0};
        const std::vector<double> times = {5.0};
        const long long n = 2000;

        const auto t0 = std::chrono::steady_clock::now();
        const cme::EnsembleSummary sum = cme::run_ensemble(net, x0, times, range, n, 7);
        std::printf("ssa ensemble (%lld runs to t=5): %.3f s, mean %.3f\n", n,
                    seconds_since(t0), sum.mean[0][0]);
    }
    return 0;
}
