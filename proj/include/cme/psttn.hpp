#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cme/dense.hpp"
#include "cme/gmres.hpp"
#include "cme/grid.hpp"
#include "cme/model.hpp"
#include "cme/ttn.hpp"

namespace cme {

/// Per-node, per-reaction propensity-weighted Gram matrices: A uses the
/// shifted factor/basis pair, B the unshifted one. Indexed [node id][mu],
/// each r^tau x r^tau.
struct CoefficientStore {
    std::vector<std::vector<Eigen::MatrixXd>> A, B;
};

struct SolverConfig {
    double dt = 1e-3;
    double t_end = 1.0;
    Scheme scheme = Scheme::Explicit;
    int substeps = 1;        // Euler substeps per subflow ODE
    int tracked_moments = 2; // per-species moment orders held to their balance laws
    GmresOptions krylov;
    std::vector<double> output_times; // multiples of dt
    bool keep_snapshots = true;
};

struct RunResult {
    std::vector<double> times;
    std::vector<double> mass;
    std::vector<std::vector<double>> mean, stddev; // [time][species]
    std::vector<TTNState> snapshots;               // if keep_snapshots
};

/// Population-independent contraction coefficient for one child of a node:
/// child_c[i',j'] = sum_{i,j,is,js} G[..i'..] G[..j'..] sibling[is,js] parent[i,j]
/// where the child's mode of G carries i'/j' and the sibling's mode is/js.
/// Works for both the shifted (A,a) and unshifted (B,b) families.
std::vector<Eigen::MatrixXd> compute_ab_child(const Tensor3& g, bool left_child,
                                              const std::vector<Eigen::MatrixXd>& sibling,
                                              const std::vector<Eigen::MatrixXd>& parent);

/// First-order projector-splitting integrator on a binary tree tensor
/// network. One instance owns its state and coefficient store exclusively.
///
/// The splitting itself does not track linear observables faithfully: the
/// component of the right-hand side outside the tangent space of the low-rank
/// manifold carries probability flux that the subflows never see, so each
/// macro step drifts by O(dt) times a smooth, rank-dependent defect rate in
/// total mass and in the per-species moments. These obey exactly computable
/// balance laws: mass is conserved, d<x_i>/dt is the stoichiometry-weighted
/// sum of expected (box-masked) propensities, and d<x_i^2>/dt additionally
/// involves the x_i-weighted expectations; all of them factorize over the
/// tree. The solver therefore measures, for every macro step, the raw defect
/// of each tracked functional (mass, first and second moments) against its
/// balance-law prediction and removes it through rank-one updates of the leaf
/// factors, one per functional at the leaf carrying its species, coupled by
/// an exact cross-effect solve. The moment rows remove their full measured
/// defect; the mass row removes a linear extrapolation of its two previous
/// raw defects, which leaves an O(dt^3) residual per step and hence an
/// O(dt^2) accumulated mass error (the first two steps compensate their own
/// measured defects exactly).
class PsttnSolver {
public:
    PsttnSolver(TTNState state, ReactionNetwork net, SolverConfig cfg);

    /// One macro step of size cfg.dt (the three subflows from the root).
    void step();
    /// Macro loop over [0, t_end] emitting observables at the output times.
    RunResult run();

    const TTNState& state() const { return s_; }
    const CoefficientStore& store() const { return ab_; }
    const SolverConfig& config() const { return cfg_; }
    long long step_index() const { return step_index_; }

    /// Rebuild every A/B from the current factors (invariant testing).
    CoefficientStore compute_store_fresh() const;

    /// Max deviation between the core-equation coefficients contracted down
    /// to the child edge and the directly factorized child-edge coefficients,
    /// at internal node `node` with G = the right-mode QR factor of its
    /// connection tensor.
    double check_identity_ef_gh(int node) const;

    /// Sub-ODE steps, public for oracle comparisons.
    Eigen::MatrixXd k_step(int leaf_pos, const Eigen::MatrixXd& k0,
                           const std::vector<Eigen::MatrixXd>& a,
                           const std::vector<Eigen::MatrixXd>& b) const;
    Eigen::MatrixXd s_step(const Eigen::MatrixXd& s0, const std::vector<Eigen::MatrixXd>& a_gram,
                           const std::vector<Eigen::MatrixXd>& b_gram,
                           const std::vector<Eigen::MatrixXd>& a,
                           const std::vector<Eigen::MatrixXd>& b) const;
    Tensor3 c_step(const Tensor3& c2, const std::vector<Eigen::MatrixXd>& a0,
                   const std::vector<Eigen::MatrixXd>& b0, const std::vector<Eigen::MatrixXd>& a1,
                   const std::vector<Eigen::MatrixXd>& b1, const std::vector<Eigen::MatrixXd>& a,
                   const std::vector<Eigen::MatrixXd>& b) const;

    /// Identity coefficients of the root edge (per reaction, 1x1 ones).
    std::vector<Eigen::MatrixXd> root_ab() const;

    /// Raw (uncompensated) defects of the tracked functionals (mass first,
    /// then the per-species first moments, then the per-species second
    /// moments) measured for the last macro step.
    const Eigen::VectorXd& last_raw_defects() const { return defect_hist_[1]; }

    /// Current values of the tracked functionals.
    Eigen::VectorXd functional_values() const;
    /// Exact rates d<f_j>/dt of the tracked functionals at the current state.
    Eigen::VectorXd functional_rates() const;

private:
    TTNState s_;
    ReactionNetwork net_;
    FactorAssignment assign_;
    SolverConfig cfg_;
    std::vector<std::vector<std::vector<double>>> table_; // [leaf][mu][x]
    std::vector<std::vector<ShiftMap>> shift_;            // [leaf][mu]
    CoefficientStore ab_;
    long long step_index_ = 0;
    Eigen::VectorXd prev_vals_;      // tracked functionals after the last correction
    Eigen::VectorXd prev_rates_;     // their exact rates at that state
    Eigen::VectorXd defect_hist_[2]; // raw defects of the two previous steps
    int defect_count_ = 0;

    void compensate_functionals();
    Eigen::VectorXd remove_functional_defects(const Eigen::VectorXd& amounts);
    std::vector<Eigen::VectorXd> functional_weights(int j) const;
    double moment_scale(int sp) const;
    double expected_propensity(int mu, const std::vector<Eigen::VectorXd>& extra = {}) const;
    void refresh_leaf_ab(int node);
    void refresh_internal_ab(int node);
    Eigen::VectorXd evolve(const Eigen::VectorXd& y0, const LinearOp& rhs,
                           const std::string& where) const;
    Tensor3 integrate_node(int node, Tensor3 c0, const std::vector<Eigen::MatrixXd>& a,
                           const std::vector<Eigen::MatrixXd>& b, const std::string& path);
    void guard_finite(const Eigen::Ref<const Eigen::VectorXd>& v, const std::string& where) const;
    void step_single_leaf();
};

} // namespace cme
