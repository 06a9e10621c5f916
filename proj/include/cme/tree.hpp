#pragma once

#include <string>
#include <vector>

namespace cme {

/// One node of a binary species-partition tree. Leaves carry an ordered
/// species list, internal nodes carry the rank shared by both child edges.
/// `rank` is the dimension of the edge towards the parent (1 at the root).
struct TreeNode {
    int parent = -1;
    int left = -1;
    int right = -1;
    std::vector<int> species; // leaves only
    int rank = 1;

    bool is_leaf() const { return left < 0; }
};

/// Binary partition of the species 0..d-1. Nodes are stored in depth-first
/// preorder with the root at index 0.
class PartitionTree {
public:
    std::vector<TreeNode> nodes;
    int num_species = 0;

    int root() const { return 0; }
    bool is_leaf(int n) const { return nodes[n].is_leaf(); }
    bool single_leaf() const { return nodes.size() == 1; }

    /// Leaf node ids from left to right.
    std::vector<int> leaves() const;
    /// All species below node n, in leaf order (left to right, each leaf in
    /// its declared order).
    std::vector<int> species_under(int n) const;
    /// Index into leaves() for a leaf node id.
    int leaf_position(int leaf_node) const;

    std::string to_string() const;
    std::vector<int> internal_ranks() const; // preorder, matches parse input
};

/// Parse the partition grammar, e.g. "((0 1)((2 3)(4)))". `ranks` lists the
/// child-edge rank of every internal node in depth-first preorder; a
/// single-leaf tree takes an empty list. Validates species coverage and the
/// multilinear rank condition.
PartitionTree parse_partition(const std::string& text, const std::vector<int>& ranks);

} // namespace cme
