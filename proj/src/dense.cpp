#include "cme/dense.hpp"

#include <cmath>

#include "cme/errors.hpp"
#include "cme/gmres.hpp"

namespace cme {

CMEOperator make_operator(const ReactionNetwork& net, const TruncatedStateSpace& space) {
    if (net.num_species() != space.num_species())
        throw ValidationError("operator: species count mismatch between model and box");
    CMEOperator op;
    op.net = net;
    op.space = space;
    std::vector<int> all(static_cast<size_t>(space.num_species()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    op.grid = LeafGrid(all, space);
    const std::int64_t n = op.grid.size();
    for (int mu = 0; mu < net.num_reactions(); ++mu) {
        const Reaction& r = net.reactions[static_cast<size_t>(mu)];
        std::vector<long> nu(r.stoich.begin(), r.stoich.end());
        std::vector<long> neg(nu.size());
        for (size_t j = 0; j < nu.size(); ++j) neg[j] = -nu[j];
        op.shift.push_back(build_shift_map(op.grid, nu));
        // channels firing out of the box are switched off, so the truncated
        // generator conserves total probability exactly
        const ShiftMap fwd = build_shift_map(op.grid, neg);
        std::vector<double> a(static_cast<size_t>(n));
        for (std::int64_t i = 0; i < n; ++i)
            a[static_cast<size_t>(i)] =
                fwd[static_cast<size_t>(i)] >= 0
                    ? propensity_eval(net, mu, op.grid.inverse_index(i))
                    : 0.0;
        op.alpha.push_back(std::move(a));
    }
    return op;
}

namespace {

inline double row_value(const CMEOperator& op, const Eigen::VectorXd& p, std::int64_t x) {
    double acc = 0.0;
    for (size_t mu = 0; mu < op.alpha.size(); ++mu) {
        const std::int64_t src = op.shift[mu][static_cast<size_t>(x)];
        if (src >= 0) acc += op.alpha[mu][static_cast<size_t>(src)] * p[src];
        acc -= op.alpha[mu][static_cast<size_t>(x)] * p[x];
    }
    return acc;
}

} // namespace

Eigen::VectorXd apply_operator(const CMEOperator& op, const Eigen::VectorXd& p) {
    const std::int64_t n = op.grid.size();
    Eigen::VectorXd out(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t x = 0; x < n; ++x) out[x] = row_value(op, p, x);
    return out;
}

Eigen::VectorXd apply_operator_serial(const CMEOperator& op, const Eigen::VectorXd& p) {
    const std::int64_t n = op.grid.size();
    Eigen::VectorXd out(n);
    for (std::int64_t x = 0; x < n; ++x) out[x] = row_value(op, p, x);
    return out;
}

DenseTrajectory integrate_dense(const CMEOperator& op, const Eigen::VectorXd& p0,
                                const std::vector<double>& output_times, double dt,
                                Scheme scheme, const GmresOptions& krylov) {
    if (dt <= 0) throw ValidationError("integrate_dense: dt must be positive");
    DenseTrajectory traj;
    Eigen::VectorXd p = p0;
    long long step = 0;
    for (double t : output_times) {
        const long long target = std::llround(t / dt);
        for (; step < target; ++step) {
            if (scheme == Scheme::Explicit) {
                p += dt * apply_operator(op, p);
            } else {
                const Eigen::VectorXd rhs = p;
                p = gmres(
                    [&](const Eigen::VectorXd& v) {
                        return (v - dt * apply_operator(op, v)).eval();
                    },
                    rhs, p, krylov);
            }
        }
        traj.times.push_back(static_cast<double>(target) * dt);
        traj.states.push_back(p);
    }
    return traj;
}

DenseDistribution best_rank_approx(const DenseDistribution& dense,
                                   const std::vector<int>& left_species, int r) {
    const std::int64_t n = dense.space.size();
    if (n > kDenseGuard) throw ValidationError("best_rank_approx: state count exceeds the guard");
    std::vector<bool> in_left(static_cast<size_t>(dense.space.num_species()), false);
    for (int s : left_species) in_left[static_cast<size_t>(s)] = true;
    std::vector<int> right_species;
    for (int s = 0; s < dense.space.num_species(); ++s)
        if (!in_left[static_cast<size_t>(s)]) right_species.push_back(s);

    const LeafGrid gl(left_species, dense.space), gr(right_species, dense.space);
    std::vector<int> all(static_cast<size_t>(dense.space.num_species()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const LeafGrid gg(all, dense.space);

    Eigen::MatrixXd m(gl.size(), gr.size());
    std::vector<long> x(all.size());
    std::vector<long> xl(left_species.size()), xr(right_species.size());
    std::vector<std::int64_t> rows(static_cast<size_t>(n)), cols(static_cast<size_t>(n));
    for (std::int64_t g = 0; g < n; ++g) {
        x = gg.inverse_index(g);
        for (size_t k = 0; k < left_species.size(); ++k)
            xl[k] = x[static_cast<size_t>(left_species[k])];
        for (size_t k = 0; k < right_species.size(); ++k)
            xr[k] = x[static_cast<size_t>(right_species[k])];
        rows[static_cast<size_t>(g)] = gl.linear_index(xl);
        cols[static_cast<size_t>(g)] = gr.linear_index(xr);
        m(rows[static_cast<size_t>(g)], cols[static_cast<size_t>(g)]) = dense.p[g];
    }
    const int rr = std::min<int>(r, static_cast<int>(std::min(m.rows(), m.cols())));
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::MatrixXd mr = svd.matrixU().leftCols(rr) *
                               svd.singularValues().head(rr).asDiagonal() *
                               svd.matrixV().leftCols(rr).transpose();
    DenseDistribution out;
    out.space = dense.space;
    out.p.resize(n);
    for (std::int64_t g = 0; g < n; ++g)
        out.p[g] = mr(rows[static_cast<size_t>(g)], cols[static_cast<size_t>(g)]);
    return out;
}

Eigen::VectorXd dense_marginal(const DenseDistribution& d, int species) {
    const long ext = d.space.extent(species);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(ext);
    std::vector<int> all(static_cast<size_t>(d.space.num_species()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const LeafGrid gg(all, d.space);
    for (std::int64_t g = 0; g < d.space.size(); ++g)
        out[gg.inverse_index(g)[static_cast<size_t>(species)] -
            d.space.lower[static_cast<size_t>(species)]] += d.p[g];
    return out;
}

double dense_mean(const DenseDistribution& d, int species) {
    const Eigen::VectorXd m = dense_marginal(d, species);
    double acc = 0.0;
    for (long c = 0; c < m.size(); ++c)
        acc += static_cast<double>(d.space.lower[static_cast<size_t>(species)] + c) * m[c];
    return acc;
}

std::vector<std::pair<double, double>> schloegl_ode(double x0, double t_end, double dt) {
    if (dt <= 0) throw ValidationError("schloegl_ode: dt must be positive");
    const double k0 = 2.5e-4, k1 = 0.18, k2 = 37.5, k3 = 2200.0;
    auto f = [&](double x) { return -k0 * x * x * x + k1 * x * x - k2 * x + k3; };
    std::vector<std::pair<double, double>> traj;
    double x = x0, t = 0.0;
    traj.emplace_back(t, x);
    const long long steps = std::llround(t_end / dt);
    for (long long i = 0; i < steps; ++i) {
        const double a = f(x);
        const double b = f(x + 0.5 * dt * a);
        const double c = f(x + 0.5 * dt * b);
        const double d = f(x + dt * c);
        x += dt / 6.0 * (a + 2 * b + 2 * c + d);
        t = static_cast<double>(i + 1) * dt;
        traj.emplace_back(t, x);
    }
    return traj;
}

} // namespace cme
