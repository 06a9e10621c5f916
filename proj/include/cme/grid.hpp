#pragma once

#include <cstdint>
#include <vector>

#include "cme/model.hpp"
#include "cme/tree.hpp"

namespace cme {

/// Box truncation zeta_i <= x_i <= eta_i of the infinite state space.
struct TruncatedStateSpace {
    std::vector<long> lower; // zeta
    std::vector<long> upper; // eta

    int num_species() const { return static_cast<int>(lower.size()); }
    long extent(int s) const { return upper[static_cast<size_t>(s)] - lower[static_cast<size_t>(s)] + 1; }
    std::int64_t size() const;
    /// Entry count as double; safe for boxes far beyond addressable memory.
    double size_as_double() const;
};

/// Linear indexing of the population tuples of one leaf (or of the full
/// space). The first listed species varies fastest.
class LeafGrid {
public:
    LeafGrid() = default;
    LeafGrid(std::vector<int> species, const TruncatedStateSpace& space);

    const std::vector<int>& species() const { return species_; }
    std::int64_t size() const { return size_; }
    long lower(int k) const { return lower_[static_cast<size_t>(k)]; }
    long upper(int k) const { return upper_[static_cast<size_t>(k)]; }
    long extent(int k) const { return upper_[static_cast<size_t>(k)] - lower_[static_cast<size_t>(k)] + 1; }

    std::int64_t linear_index(const std::vector<long>& x) const;
    std::vector<long> inverse_index(std::int64_t idx) const;

private:
    std::vector<int> species_;
    std::vector<long> lower_, upper_;
    std::vector<std::int64_t> stride_;
    std::int64_t size_ = 0;
};

/// For every linear index i of x, the linear index of x - nu, or -1 when the
/// source state leaves the box (the gain term is dropped there).
using ShiftMap = std::vector<std::int64_t>;

ShiftMap build_shift_map(const LeafGrid& grid, const std::vector<long>& nu);

/// Stoichiometry of reaction mu restricted to the grid's species.
std::vector<long> restrict_stoich(const Reaction& r, const LeafGrid& grid);

/// table[mu][i] = product of the factors assigned to this leaf, evaluated at
/// inverse_index(i); the constant is included on the designated leaf. Entries
/// whose shifted leaf state x + nu leaves the leaf box are zeroed: the
/// per-leaf indicators multiply to the full-box indicator, so the assembled
/// operator switches off out-of-box channels and conserves mass.
std::vector<std::vector<double>> leaf_propensity_table(const ReactionNetwork& net,
                                                       const FactorAssignment& assign,
                                                       const LeafGrid& grid, int leaf);

} // namespace cme
