#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cme/errors.hpp"
#include "cme/ttn.hpp"

namespace cme {

/// Multinomial(n; p,...,p) over all species, zero outside |x| <= n.
inline DenseDistribution multinomial_initial(const TruncatedStateSpace& space, int n, double p) {
    const int d = space.num_species();
    if (n < 0 || p <= 0.0 || d * p >= 1.0)
        throw ValidationError("multinomial initial condition needs n >= 0 and d*p < 1");
    std::vector<int> all(static_cast<size_t>(d));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const LeafGrid grid(all, space);
    auto fact = [](long k) {
        double v = 1.0;
        for (long i = 2; i <= k; ++i) v *= static_cast<double>(i);
        return v;
    };
    DenseDistribution out;
    out.space = space;
    out.p = Eigen::VectorXd::Zero(space.size());
    const double rest = 1.0 - d * p;
    for (std::int64_t i = 0; i < space.size(); ++i) {
        const std::vector<long> x = grid.inverse_index(i);
        long total = 0;
        double denom = 1.0;
        for (long xi : x) {
            total += xi;
            denom *= fact(xi);
        }
        if (total > n) continue;
        out.p[i] = fact(n) / (denom * fact(n - total)) * std::pow(p, total) *
                   std::pow(rest, n - total);
    }
    return out;
}

/// Point mass at x as per-leaf indicator vectors (a product distribution).
inline std::vector<Eigen::VectorXd> delta_product(const PartitionTree& tree,
                                                  const TruncatedStateSpace& space,
                                                  const std::vector<long>& x) {
    std::vector<Eigen::VectorXd> out;
    for (const LeafGrid& g : make_leaf_grids(tree, space)) {
        std::vector<long> local;
        for (int s : g.species()) local.push_back(x[static_cast<size_t>(s)]);
        Eigen::VectorXd v = Eigen::VectorXd::Zero(g.size());
        v[g.linear_index(local)] = 1.0;
        out.push_back(std::move(v));
    }
    return out;
}

/// Point mass at x as a full array.
inline DenseDistribution delta_dense(const TruncatedStateSpace& space, const std::vector<long>& x) {
    std::vector<int> all(static_cast<size_t>(space.num_species()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const LeafGrid grid(all, space);
    DenseDistribution out;
    out.space = space;
    out.p = Eigen::VectorXd::Zero(space.size());
    out.p[grid.linear_index(x)] = 1.0;
    return out;
}

} // namespace cme
