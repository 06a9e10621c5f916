#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>

#include "cme/errors.hpp"

namespace cme {

using LinearOp = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct GmresOptions {
    int restart = 20;
    double rel_tol = 1e-10;
    int max_iters = 500; // total Arnoldi steps across restarts
};

/// Matrix-free restarted GMRES for the (nonsymmetric) linear systems of the
/// implicit Euler steps. Throws NumericalError if the residual target is not
/// met within the iteration cap.
inline Eigen::VectorXd gmres(const LinearOp& apply, const Eigen::VectorXd& b,
                             const Eigen::VectorXd& x0, const GmresOptions& opt = {}) {
    const double bnorm = b.norm();
    if (bnorm == 0.0) return Eigen::VectorXd::Zero(b.size());
    const double target = opt.rel_tol * bnorm;

    Eigen::VectorXd x = x0;
    int total = 0;
    while (total < opt.max_iters) {
        Eigen::VectorXd r = b - apply(x);
        double beta = r.norm();
        if (beta <= target) return x;

        const int m = opt.restart;
        Eigen::MatrixXd v(b.size(), m + 1);
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m + 1, m);
        Eigen::VectorXd cs(m), sn(m), g = Eigen::VectorXd::Zero(m + 1);
        v.col(0) = r / beta;
        g[0] = beta;

        int k = 0;
        for (; k < m && total < opt.max_iters; ++k, ++total) {
            Eigen::VectorXd w = apply(v.col(k));
            for (int j = 0; j <= k; ++j) { // modified Gram-Schmidt
                h(j, k) = v.col(j).dot(w);
                w -= h(j, k) * v.col(j);
            }
            h(k + 1, k) = w.norm();
            const bool breakdown = h(k + 1, k) == 0.0; // exact Krylov invariance
            v.col(k + 1) = breakdown ? Eigen::VectorXd::Zero(b.size()).eval()
                                     : (w / h(k + 1, k)).eval();
            // apply stored Givens rotations, then a new one
            for (int j = 0; j < k; ++j) {
                const double t = cs[j] * h(j, k) + sn[j] * h(j + 1, k);
                h(j + 1, k) = -sn[j] * h(j, k) + cs[j] * h(j + 1, k);
                h(j, k) = t;
            }
            const double denom = std::hypot(h(k, k), h(k + 1, k));
            cs[k] = denom == 0 ? 1.0 : h(k, k) / denom;
            sn[k] = denom == 0 ? 0.0 : h(k + 1, k) / denom;
            h(k, k) = denom;
            h(k + 1, k) = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            if (std::abs(g[k + 1]) <= target || breakdown) {
                ++k;
                ++total;
                break;
            }
        }
        const Eigen::VectorXd y =
            h.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
        x += v.leftCols(k) * y;
        if ((b - apply(x)).norm() <= target) return x;
    }
    throw NumericalError("gmres: no convergence within " + std::to_string(opt.max_iters) +
                         " iterations");
}

} // namespace cme
