#include "cme/tree.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <sstream>

#include "cme/errors.hpp"

namespace cme {

std::vector<int> PartitionTree::leaves() const {
    std::vector<int> out;
    // preorder storage means left subtree precedes right subtree
    for (size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].is_leaf()) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> PartitionTree::species_under(int n) const {
    const TreeNode& node = nodes[static_cast<size_t>(n)];
    if (node.is_leaf()) return node.species;
    std::vector<int> out = species_under(node.left);
    std::vector<int> right = species_under(node.right);
    out.insert(out.end(), right.begin(), right.end());
    return out;
}

int PartitionTree::leaf_position(int leaf_node) const {
    const std::vector<int> ls = leaves();
    for (size_t i = 0; i < ls.size(); ++i)
        if (ls[i] == leaf_node) return static_cast<int>(i);
    return -1;
}

std::string PartitionTree::to_string() const {
    std::function<std::string(int)> rec = [&](int n) -> std::string {
        const TreeNode& node = nodes[static_cast<size_t>(n)];
        if (node.is_leaf()) {
            std::ostringstream os;
            os << "(";
            for (size_t i = 0; i < node.species.size(); ++i)
                os << (i ? " " : "") << node.species[i];
            os << ")";
            return os.str();
        }
        return "(" + rec(node.left) + rec(node.right) + ")";
    };
    if (single_leaf()) return "(" + rec(0) + ")";
    return rec(0);
}

std::vector<int> PartitionTree::internal_ranks() const {
    std::vector<int> out;
    for (const TreeNode& n : nodes)
        if (!n.is_leaf()) out.push_back(nodes[static_cast<size_t>(n.left)].rank);
    return out;
}

namespace {

struct Parser {
    const std::string& s;
    size_t pos = 0;

    explicit Parser(const std::string& text) : s(text) {}

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError("partition string, position " + std::to_string(pos) + ": " + msg);
    }
    void skip_ws() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    char peek() {
        skip_ws();
        if (pos >= s.size()) fail("unexpected end of input");
        return s[pos];
    }
    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos;
    }

    // tree := "(" digits ")" | "(" tree tree ")"; a parenthesized single
    // subtree collapses (allows "((0 1 2))" for the no-cut tree).
    int parse_tree(PartitionTree& t) {
        expect('(');
        skip_ws();
        if (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
            TreeNode leaf;
            while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
                size_t end;
                leaf.species.push_back(std::stoi(s.substr(pos), &end));
                pos += end;
                skip_ws();
            }
            expect(')');
            t.nodes.push_back(std::move(leaf));
            return static_cast<int>(t.nodes.size()) - 1;
        }
        // internal: reserve the slot so children follow in preorder
        const int self = static_cast<int>(t.nodes.size());
        t.nodes.emplace_back();
        const int left = parse_tree(t);
        skip_ws();
        if (peek() == ')') {
            // single wrapped subtree: drop the wrapper node
            ++pos;
            t.nodes.erase(t.nodes.begin() + self);
            for (TreeNode& n : t.nodes) {
                if (n.left > self) --n.left;
                if (n.right > self) --n.right;
                if (n.parent > self) --n.parent;
            }
            return left - 1;
        }
        const int right = parse_tree(t);
        expect(')');
        t.nodes[static_cast<size_t>(self)].left = left;
        t.nodes[static_cast<size_t>(self)].right = right;
        t.nodes[static_cast<size_t>(left)].parent = self;
        t.nodes[static_cast<size_t>(right)].parent = self;
        return self;
    }
};

} // namespace

PartitionTree parse_partition(const std::string& text, const std::vector<int>& ranks) {
    PartitionTree t;
    Parser p(text);
    p.parse_tree(t);
    p.skip_ws();
    if (p.pos != text.size())
        throw ParseError("partition string: trailing characters at position " +
                         std::to_string(p.pos));

    // species coverage
    std::vector<int> all;
    for (const TreeNode& n : t.nodes)
        if (n.is_leaf()) all.insert(all.end(), n.species.begin(), n.species.end());
    std::vector<int> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    for (size_t i = 0; i < sorted.size(); ++i)
        if (sorted[i] != static_cast<int>(i))
            throw ValidationError("partition must cover species 0..d-1 exactly once");
    t.num_species = static_cast<int>(all.size());

    // attach ranks: preorder list over internal nodes, one shared child rank each
    size_t k = 0;
    for (TreeNode& n : t.nodes) {
        if (n.is_leaf()) continue;
        if (k >= ranks.size()) throw ValidationError("too few ranks for partition");
        if (ranks[k] < 1) throw ValidationError("ranks must be positive");
        t.nodes[static_cast<size_t>(n.left)].rank = ranks[k];
        t.nodes[static_cast<size_t>(n.right)].rank = ranks[k];
        ++k;
    }
    if (k != ranks.size()) throw ValidationError("too many ranks for partition");

    // rank condition at every internal node
    for (const TreeNode& n : t.nodes) {
        if (n.is_leaf()) continue;
        const long rp = n.rank;
        const long r0 = t.nodes[static_cast<size_t>(n.left)].rank;
        const long r1 = t.nodes[static_cast<size_t>(n.right)].rank;
        if (rp > r0 * r1 || r0 > r1 * rp || r1 > r0 * rp)
            throw ValidationError("rank condition violated at an internal node: (" +
                                  std::to_string(rp) + "," + std::to_string(r0) + "," +
                                  std::to_string(r1) + ")");
    }
    return t;
}

} // namespace cme
