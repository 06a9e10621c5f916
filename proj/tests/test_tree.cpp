#include "doctest.h"

#include "cme/errors.hpp"
#include "cme/tree.hpp"

using namespace cme;

TEST_CASE("toggle-switch partitions parse with the expected shape") {
    const PartitionTree p0 = parse_partition("((0 1)((2 3)(4)))", {5, 5});
    CHECK(p0.num_species == 5);
    CHECK(p0.leaves().size() == 3);
    CHECK(p0.nodes[static_cast<size_t>(p0.root())].rank == 1);
    // left child of the root is the {0,1} leaf
    const TreeNode& root = p0.nodes[0];
    CHECK(p0.is_leaf(root.left));
    CHECK(p0.nodes[static_cast<size_t>(root.left)].species == std::vector<int>{0, 1});
    CHECK(p0.nodes[static_cast<size_t>(root.left)].rank == 5);
    CHECK_FALSE(p0.is_leaf(root.right));

    const PartitionTree p1 = parse_partition("(((0 1)(2 3))(4))", {5, 5});
    CHECK(p1.leaves().size() == 3);
    CHECK_FALSE(p1.is_leaf(p1.nodes[0].left));
    CHECK(p1.is_leaf(p1.nodes[0].right));
}

TEST_CASE("single-leaf tree takes an empty rank list") {
    const PartitionTree t = parse_partition("((0 1 2 3 4))", {});
    CHECK(t.single_leaf());
    CHECK(t.num_species == 5);
    CHECK(t.nodes[0].species == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(t.nodes[0].rank == 1);
}

TEST_CASE("species coverage and rank validation") {
    CHECK_THROWS_AS(parse_partition("((0 1)(3))", {2}), ValidationError);  // missing 2
    CHECK_THROWS_AS(parse_partition("((0 1)(1 2))", {2}), ValidationError); // duplicate
    CHECK_THROWS_AS(parse_partition("((0 1)(2)", {2}), ParseError);         // parens
    CHECK_THROWS_AS(parse_partition("((0)(1))", {2, 2}), ValidationError);  // extra rank
    CHECK_THROWS_AS(parse_partition("((0 1)((2 3)(4)))", {5}), ValidationError);
    // rank condition: the parent edge rank may not exceed the product of the
    // two child edge ranks
    CHECK_THROWS_AS(parse_partition("((0 1)((2 3)(4)))", {5, 2}), ValidationError);
    CHECK_NOTHROW(parse_partition("((0 1)((2 3)(4)))", {25, 5}));
    CHECK_NOTHROW(parse_partition("((0 1)((2 3)(4)))", {2, 5}));
}

TEST_CASE("to_string round-trips through the parser") {
    for (const std::string text :
         {"((0 1)((2 3)(4)))", "(((0 1)(2 3))(4))", "((0 1 2 3 4))", "((0)(1))"}) {
        const std::vector<int> ranks(text == "((0 1 2 3 4))" ? 0u
                                     : text == "((0)(1))"    ? 1u
                                                             : 2u,
                                     2);
        const PartitionTree t = parse_partition(text, ranks);
        const PartitionTree t2 = parse_partition(t.to_string(), t.internal_ranks());
        CHECK(t.to_string() == t2.to_string());
        CHECK(t.num_species == t2.num_species);
    }
}

TEST_CASE("species_under walks leaves left to right") {
    const PartitionTree p0 = parse_partition("((0 1)((2 3)(4)))", {5, 5});
    CHECK(p0.species_under(p0.root()) == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(p0.species_under(p0.nodes[0].right) == std::vector<int>{2, 3, 4});
    const std::vector<int> ls = p0.leaves();
    CHECK(p0.leaf_position(ls[2]) == 2);
}
