#include "cme/grid.hpp"

#include <cmath>

#include "cme/errors.hpp"

namespace cme {

std::int64_t TruncatedStateSpace::size() const {
    std::int64_t n = 1;
    for (int s = 0; s < num_species(); ++s) n *= extent(s);
    return n;
}

double TruncatedStateSpace::size_as_double() const {
    double n = 1.0;
    for (int s = 0; s < num_species(); ++s) n *= static_cast<double>(extent(s));
    return n;
}

LeafGrid::LeafGrid(std::vector<int> species, const TruncatedStateSpace& space)
    : species_(std::move(species)) {
    std::int64_t stride = 1;
    for (int s : species_) {
        if (space.lower[static_cast<size_t>(s)] >= space.upper[static_cast<size_t>(s)])
            throw ValidationError("truncation requires lower < upper for species " +
                                  std::to_string(s));
        lower_.push_back(space.lower[static_cast<size_t>(s)]);
        upper_.push_back(space.upper[static_cast<size_t>(s)]);
        stride_.push_back(stride);
        stride *= space.extent(s);
    }
    size_ = stride;
}

std::int64_t LeafGrid::linear_index(const std::vector<long>& x) const {
    std::int64_t idx = 0;
    for (size_t k = 0; k < species_.size(); ++k) {
        if (x[k] < lower_[k] || x[k] > upper_[k])
            throw ValidationError("population tuple outside the truncated box");
        idx += stride_[k] * (x[k] - lower_[k]);
    }
    return idx;
}

std::vector<long> LeafGrid::inverse_index(std::int64_t idx) const {
    std::vector<long> x(species_.size());
    for (size_t k = 0; k < species_.size(); ++k) {
        const std::int64_t e = upper_[k] - lower_[k] + 1;
        x[k] = lower_[k] + static_cast<long>(idx % e);
        idx /= e;
    }
    return x;
}

ShiftMap build_shift_map(const LeafGrid& grid, const std::vector<long>& nu) {
    ShiftMap map(static_cast<size_t>(grid.size()));
    const size_t k = grid.species().size();
    std::vector<long> x(k), shifted(k);
    for (size_t j = 0; j < k; ++j) x[j] = grid.lower(static_cast<int>(j));
    for (std::int64_t i = 0; i < grid.size(); ++i) {
        bool ok = true;
        for (size_t j = 0; j < k; ++j) {
            shifted[j] = x[j] - nu[j];
            if (shifted[j] < grid.lower(static_cast<int>(j)) ||
                shifted[j] > grid.upper(static_cast<int>(j))) {
                ok = false;
                break;
            }
        }
        map[static_cast<size_t>(i)] = ok ? grid.linear_index(shifted) : -1;
        // odometer increment, first species fastest
        for (size_t j = 0; j < k; ++j) {
            if (++x[j] <= grid.upper(static_cast<int>(j))) break;
            x[j] = grid.lower(static_cast<int>(j));
        }
    }
    return map;
}

std::vector<long> restrict_stoich(const Reaction& r, const LeafGrid& grid) {
    std::vector<long> nu;
    for (int s : grid.species()) nu.push_back(r.stoich[static_cast<size_t>(s)]);
    return nu;
}

std::vector<std::vector<double>> leaf_propensity_table(const ReactionNetwork& net,
                                                       const FactorAssignment& assign,
                                                       const LeafGrid& grid, int leaf) {
    std::vector<std::vector<double>> table(static_cast<size_t>(net.num_reactions()));
    for (int mu = 0; mu < net.num_reactions(); ++mu) {
        auto& row = table[static_cast<size_t>(mu)];
        row.resize(static_cast<size_t>(grid.size()));
        const std::vector<long> nu = restrict_stoich(net.reactions[static_cast<size_t>(mu)], grid);
        for (std::int64_t i = 0; i < grid.size(); ++i) {
            const std::vector<long> x = grid.inverse_index(i);
            bool inside = true;
            for (size_t k = 0; k < nu.size(); ++k) {
                const long dst = x[k] + nu[k];
                if (dst < grid.lower(static_cast<int>(k)) ||
                    dst > grid.upper(static_cast<int>(k))) {
                    inside = false;
                    break;
                }
            }
            row[static_cast<size_t>(i)] =
                inside ? assign.leaf_value(net, mu, leaf, x, grid.species()) : 0.0;
        }
    }
    return table;
}

} // namespace cme
