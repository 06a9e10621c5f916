#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "cme/grid.hpp"
#include "cme/tensor3.hpp"
#include "cme/tree.hpp"

namespace cme {

/// Default guard against materializing a full distribution by accident.
constexpr std::int64_t kDenseGuard = std::int64_t(1) << 24;

/// Full probability array over the truncated box, species 0 fastest.
struct DenseDistribution {
    TruncatedStateSpace space;
    Eigen::VectorXd p;
};

/// Binary tree tensor network state: orthonormalizable low-rank factors at
/// the leaves, connection tensors at the internal nodes, external rank 1 at
/// the root. Plain value type; safe to copy and move between threads.
struct TTNState {
    PartitionTree tree;
    TruncatedStateSpace space;
    std::vector<LeafGrid> grids;          // by leaf position
    std::vector<Eigen::MatrixXd> leaf_x;  // by leaf position, n^tau x r^tau
    std::vector<Tensor3> connect;         // by node id; empty at leaves

    const LeafGrid& grid_of_node(int node) const {
        return grids[static_cast<size_t>(tree.leaf_position(node))];
    }
};

std::vector<LeafGrid> make_leaf_grids(const PartitionTree& tree, const TruncatedStateSpace& space);

/// Map from tree-order linear state index (leaf blocks left to right, left
/// fastest) to the global linear index (species 0 fastest).
std::vector<std::int64_t> tree_to_global_map(const PartitionTree& tree,
                                             const TruncatedStateSpace& space);

/// Exact contraction of the network into the full array. Guarded.
DenseDistribution eval_full(const TTNState& s, std::int64_t guard = kDenseGuard);

/// Exact rank-1 representation of a product distribution, padded with
/// orthonormal completion columns and zero coefficients to the tree's ranks.
TTNState from_product(const std::vector<Eigen::VectorXd>& leaf_distributions,
                      const PartitionTree& tree, const TruncatedStateSpace& space);

/// Hierarchical SVD truncation of a dense distribution to the tree's ranks.
TTNState from_dense(const DenseDistribution& dense, const PartitionTree& tree,
                    std::int64_t guard = kDenseGuard);

/// Leaf-to-root QR sweep: all non-root factors get orthonormal columns, the
/// represented distribution is unchanged.
void orthonormalize(TTNState& s);

/// Observables by leaf-weight contraction; the dense array is never formed.
double mass(const TTNState& s);
Eigen::VectorXd marginal(const TTNState& s, int species);
double moment(const TTNState& s, int species, int order);
std::pair<double, double> mean_std(const TTNState& s, int species);

/// Generic contraction with one weight vector per species (empty = ones).
double contract_weights(const TTNState& s, const std::vector<Eigen::VectorXd>& weights);

/// Local weight vector over a leaf node's grid: product of the per-species
/// weights (empty = ones) evaluated at each grid point.
Eigen::VectorXd leaf_weight_vector(const TTNState& s, int node,
                                   const std::vector<Eigen::VectorXd>& weights);

/// Weighted contraction of the subtree below `node` with one weight vector
/// per species (empty = ones): entry i is the contraction carried by the
/// node's i-th basis column.
Eigen::VectorXd weighted_contraction(const TTNState& s, int node,
                                     const std::vector<Eigen::VectorXd>& weights);

/// Ones-contraction of the subtree below `node`: entry i is the total mass
/// carried by the node's i-th basis column.
Eigen::VectorXd ones_contraction(const TTNState& s, int node);

struct MemoryFootprint {
    double entries; // double: the count may exceed 2^63 for reporting-only trees
    double bytes;   // entries * 8
};
MemoryFootprint memory_footprint(const PartitionTree& tree, const TruncatedStateSpace& space);

void save_snapshot(const TTNState& s, const std::string& path);
TTNState load_snapshot(const std::string& path);

} // namespace cme
