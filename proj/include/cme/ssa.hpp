#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cme/grid.hpp"
#include "cme/model.hpp"

namespace cme {

/// One Gillespie (direct method) sample path: the state after each event.
struct Trajectory {
    std::uint64_t seed = 0;
    std::vector<double> times;              // strictly increasing event times
    std::vector<std::vector<long>> states;  // state after each event
    std::vector<long> x0;

    /// State at time t (piecewise constant, right-continuous).
    std::vector<long> state_at(double t) const;
};

Trajectory simulate_trajectory(const ReactionNetwork& net, const std::vector<long>& x0,
                               double t_end, std::uint64_t seed);

/// Streaming ensemble statistics on a truncated range: per-species histograms
/// (out-of-range samples clipped into the boundary bin and counted), means and
/// standard errors, all from integer accumulators so the result is independent
/// of summation order.
struct EnsembleSummary {
    std::vector<double> times;
    TruncatedStateSpace range;
    long long n_runs = 0;
    // [time][species][bin], each histogram sums to n_runs
    std::vector<std::vector<std::vector<long long>>> histograms;
    std::vector<std::vector<double>> mean;    // [time][species]
    std::vector<std::vector<double>> stderr_; // [time][species]
    long long clipped = 0;                    // clipped (time, species) samples

    Eigen::VectorXd marginal(int time_idx, int species) const; // histogram / N
};

EnsembleSummary run_ensemble(const ReactionNetwork& net, const std::vector<long>& x0,
                             const std::vector<double>& output_times,
                             const TruncatedStateSpace& range, long long n_runs,
                             std::uint64_t base_seed);

} // namespace cme
