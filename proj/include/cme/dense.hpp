#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "cme/gmres.hpp"
#include "cme/grid.hpp"
#include "cme/model.hpp"
#include "cme/ttn.hpp"

namespace cme {

/// Matrix-free CME generator on the truncated box: precomputed per-reaction
/// shift maps and propensity tables, applied without assembling a matrix.
struct CMEOperator {
    ReactionNetwork net;
    TruncatedStateSpace space;
    LeafGrid grid;                           // all species, species 0 fastest
    std::vector<ShiftMap> shift;             // [mu][x] -> index of x - nu, or -1
    std::vector<std::vector<double>> alpha;  // [mu][x]
};

CMEOperator make_operator(const ReactionNetwork& net, const TruncatedStateSpace& space);

/// (A p)(x) = sum_mu 1{x+nu in box} [ alpha_mu(x-nu) p(x-nu) 1{x-nu in box}
///                                    - alpha_mu(x) p(x) ]:
/// channels that would fire out of the box are switched off entirely, so the
/// truncated generator has zero column sums and conserves total probability.
/// The parallel kernel splits over destination states, so both variants add in
/// the same order and give identical results.
Eigen::VectorXd apply_operator(const CMEOperator& op, const Eigen::VectorXd& p);
Eigen::VectorXd apply_operator_serial(const CMEOperator& op, const Eigen::VectorXd& p);

enum class Scheme { Explicit, Implicit };

struct DenseTrajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;
};

/// Fixed-step Euler integration, sampled at `output_times` (each rounded to
/// the nearest step). Implicit steps solve (I - dt A) p_next = p with
/// matrix-free restarted GMRES; stiff operators may need a larger Krylov
/// space than the default.
DenseTrajectory integrate_dense(const CMEOperator& op, const Eigen::VectorXd& p0,
                                const std::vector<double>& output_times, double dt,
                                Scheme scheme, const GmresOptions& krylov = {});

/// Best rank-r approximation across the cut {left_species | rest}: reshape to
/// a matrix, truncate the SVD at r, reshape back.
DenseDistribution best_rank_approx(const DenseDistribution& dense,
                                   const std::vector<int>& left_species, int r);

/// Marginal and mean of a full distribution (oracle helpers).
Eigen::VectorXd dense_marginal(const DenseDistribution& d, int species);
double dense_mean(const DenseDistribution& d, int species);

/// Classical RK4 for dx/dt = -k0 x^3 + k1 x^2 - k2 x + k3 with the builtin
/// Schloegl constants. Returns (t, x) at every step.
std::vector<std::pair<double, double>> schloegl_ode(double x0, double t_end, double dt);

} // namespace cme
