#include "cme/ttn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>

#include "cme/errors.hpp"

namespace cme {

std::vector<LeafGrid> make_leaf_grids(const PartitionTree& tree, const TruncatedStateSpace& space) {
    std::vector<LeafGrid> grids;
    for (int leaf : tree.leaves())
        grids.emplace_back(tree.nodes[static_cast<size_t>(leaf)].species, space);
    return grids;
}

std::vector<std::int64_t> tree_to_global_map(const PartitionTree& tree,
                                             const TruncatedStateSpace& space) {
    const std::vector<LeafGrid> grids = make_leaf_grids(tree, space);
    std::vector<int> all_species(static_cast<size_t>(space.num_species()));
    for (size_t i = 0; i < all_species.size(); ++i) all_species[i] = static_cast<int>(i);
    const LeafGrid global(all_species, space);

    const std::int64_t n = space.size();
    std::vector<std::int64_t> map(static_cast<size_t>(n));
    std::vector<long> x(static_cast<size_t>(space.num_species()));
    const std::vector<int> leaves = tree.leaves();
    for (std::int64_t t = 0; t < n; ++t) {
        std::int64_t rest = t;
        for (size_t l = 0; l < grids.size(); ++l) {
            const std::int64_t nl = grids[l].size();
            const std::vector<long> tup = grids[l].inverse_index(rest % nl);
            rest /= nl;
            const auto& sp = tree.nodes[static_cast<size_t>(leaves[l])].species;
            for (size_t k = 0; k < sp.size(); ++k) x[static_cast<size_t>(sp[k])] = tup[k];
        }
        map[static_cast<size_t>(t)] = global.linear_index(x);
    }
    return map;
}

namespace {

Eigen::MatrixXd materialize(const TTNState& s, int node) {
    const TreeNode& n = s.tree.nodes[static_cast<size_t>(node)];
    if (n.is_leaf()) return s.leaf_x[static_cast<size_t>(s.tree.leaf_position(node))];
    const Eigen::MatrixXd x0 = materialize(s, n.left);
    const Eigen::MatrixXd x1 = materialize(s, n.right);
    const Tensor3& q = s.connect[static_cast<size_t>(node)];
    const Eigen::Index n0 = x0.rows(), n1 = x1.rows();
    Eigen::MatrixXd out(n0 * n1, q.d0());
    Eigen::MatrixXd qi(q.d1(), q.d2());
    for (int i = 0; i < q.d0(); ++i) {
        for (int k = 0; k < q.d2(); ++k)
            for (int j = 0; j < q.d1(); ++j) qi(j, k) = q(i, j, k);
        const Eigen::MatrixXd mi = x0 * qi * x1.transpose();
        out.col(i) = Eigen::Map<const Eigen::VectorXd>(mi.data(), n0 * n1);
    }
    return out;
}

} // namespace

DenseDistribution eval_full(const TTNState& s, std::int64_t guard) {
    const std::int64_t n = s.space.size();
    if (n > guard)
        throw ValidationError("eval_full: state count " + std::to_string(n) +
                              " exceeds the guard " + std::to_string(guard));
    // external rank is 1, so the materialized root has a single column
    const Eigen::VectorXd tree_order = materialize(s, s.tree.root()).col(0);
    const std::vector<std::int64_t> map = tree_to_global_map(s.tree, s.space);
    DenseDistribution out;
    out.space = s.space;
    out.p.resize(n);
    for (std::int64_t t = 0; t < n; ++t) out.p[map[static_cast<size_t>(t)]] = tree_order[t];
    return out;
}

TTNState from_product(const std::vector<Eigen::VectorXd>& leaf_distributions,
                      const PartitionTree& tree, const TruncatedStateSpace& space) {
    TTNState s;
    s.tree = tree;
    s.space = space;
    s.grids = make_leaf_grids(tree, space);
    s.leaf_x.resize(s.grids.size());
    s.connect.resize(tree.nodes.size());

    double total_norm = 1.0;
    const std::vector<int> leaves = tree.leaves();
    for (size_t l = 0; l < leaves.size(); ++l) {
        const Eigen::VectorXd& u = leaf_distributions[l];
        if (u.size() != s.grids[l].size())
            throw ValidationError("leaf distribution size mismatch");
        const double nrm = u.norm();
        if (nrm == 0.0) throw ValidationError("zero-norm leaf distribution");
        total_norm *= nrm;
        const int r = tree.nodes[static_cast<size_t>(leaves[l])].rank;
        if (u.size() < r)
            throw ValidationError("leaf rank exceeds the leaf grid size");
        s.leaf_x[l] = orthonormal_completion(u / nrm, r);
    }
    for (size_t node = 0; node < tree.nodes.size(); ++node) {
        const TreeNode& n = tree.nodes[node];
        if (n.is_leaf()) continue;
        const int d0 = n.rank;
        const int d1 = tree.nodes[static_cast<size_t>(n.left)].rank;
        const int d2 = tree.nodes[static_cast<size_t>(n.right)].rank;
        Tensor3 q(d0, d1, d2);
        // distinct unit pairs keep the implied internal factors orthonormal
        for (int i = 0; i < d0; ++i) q(i, i % d1, i / d1) = 1.0;
        if (static_cast<int>(node) == tree.root()) q(0, 0, 0) = total_norm;
        s.connect[node] = std::move(q);
    }
    if (tree.single_leaf()) {
        // the sole leaf carries the distribution itself (external rank 1)
        s.leaf_x[0] = leaf_distributions[0];
    }
    return s;
}

namespace {

Eigen::MatrixXd truncated_basis(const Eigen::MatrixXd& m, int r) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
    const Eigen::MatrixXd u = svd.matrixU();
    if (u.cols() >= r) return u.leftCols(r);
    return orthonormal_completion(u, r);
}

void build_from_dense(TTNState& s, int node, const Eigen::MatrixXd& v) {
    const TreeNode& n = s.tree.nodes[static_cast<size_t>(node)];
    if (n.is_leaf()) {
        s.leaf_x[static_cast<size_t>(s.tree.leaf_position(node))] = v;
        return;
    }
    std::int64_t sz0 = 1, sz1 = 1;
    for (int sp : s.tree.species_under(n.left)) sz0 *= s.space.extent(sp);
    for (int sp : s.tree.species_under(n.right)) sz1 *= s.space.extent(sp);
    const int r_out = static_cast<int>(v.cols());
    const int c0 = s.tree.nodes[static_cast<size_t>(n.left)].rank;
    const int c1 = s.tree.nodes[static_cast<size_t>(n.right)].rank;

    // mode-0 unfolding is a reshape of v's column-major storage
    const Eigen::Map<const Eigen::MatrixXd> m0(v.data(), sz0, sz1 * r_out);
    Eigen::MatrixXd m1(sz1, sz0 * r_out);
    for (int i = 0; i < r_out; ++i) {
        const Eigen::Map<const Eigen::MatrixXd> vi(v.col(i).data(), sz0, sz1);
        m1.middleCols(i * sz0, sz0) = vi.transpose();
    }
    const Eigen::MatrixXd u0 = truncated_basis(m0, c0);
    const Eigen::MatrixXd u1 = truncated_basis(m1, c1);

    Tensor3 q(r_out, c0, c1);
    for (int i = 0; i < r_out; ++i) {
        const Eigen::Map<const Eigen::MatrixXd> vi(v.col(i).data(), sz0, sz1);
        const Eigen::MatrixXd core = u0.transpose() * vi * u1; // c0 x c1
        for (int k = 0; k < c1; ++k)
            for (int j = 0; j < c0; ++j) q(i, j, k) = core(j, k);
    }
    s.connect[static_cast<size_t>(node)] = std::move(q);
    build_from_dense(s, n.left, u0);
    build_from_dense(s, n.right, u1);
}

} // namespace

TTNState from_dense(const DenseDistribution& dense, const PartitionTree& tree,
                    std::int64_t guard) {
    const std::int64_t n = dense.space.size();
    if (n > guard)
        throw ValidationError("from_dense: state count exceeds the guard");
    if (dense.p.size() != n) throw ValidationError("dense distribution size mismatch");

    TTNState s;
    s.tree = tree;
    s.space = dense.space;
    s.grids = make_leaf_grids(tree, s.space);
    s.leaf_x.resize(s.grids.size());
    s.connect.resize(tree.nodes.size());

    // permute into tree order
    const std::vector<std::int64_t> map = tree_to_global_map(tree, s.space);
    Eigen::VectorXd tv(n);
    for (std::int64_t t = 0; t < n; ++t) tv[t] = dense.p[map[static_cast<size_t>(t)]];

    if (tree.single_leaf()) {
        s.leaf_x[0] = tv;
        return s;
    }
    build_from_dense(s, tree.root(), tv);
    orthonormalize(s);
    return s;
}

void orthonormalize(TTNState& s) {
    if (s.tree.single_leaf()) return; // the root factor is the distribution itself
    std::function<void(int)> rec = [&](int node) {
        const TreeNode& n = s.tree.nodes[static_cast<size_t>(node)];
        Eigen::MatrixXd r;
        if (n.is_leaf()) {
            Eigen::MatrixXd& x = s.leaf_x[static_cast<size_t>(s.tree.leaf_position(node))];
            QRPair qr = qr_nonneg(x);
            x = std::move(qr.q);
            r = std::move(qr.r);
        } else {
            rec(n.left);
            rec(n.right);
            if (node == s.tree.root()) return;
            Tensor3& q = s.connect[static_cast<size_t>(node)];
            QRPair qr = qr_nonneg(q.unfold_parent());
            r = std::move(qr.r);
            q = Tensor3::fold_parent(qr.q, q.d0(), q.d1(), q.d2());
        }
        Tensor3& pq = s.connect[static_cast<size_t>(n.parent)];
        const TreeNode& pn = s.tree.nodes[static_cast<size_t>(n.parent)];
        pq = (pn.left == node) ? pq.contract_left(r) : pq.contract_right(r);
    };
    rec(s.tree.root());
}

Eigen::VectorXd leaf_weight_vector(const TTNState& s, int node,
                                   const std::vector<Eigen::VectorXd>& weights) {
    const LeafGrid& g = s.grid_of_node(node);
    Eigen::VectorXd w(g.size());
    for (std::int64_t i = 0; i < g.size(); ++i) {
        const std::vector<long> x = g.inverse_index(i);
        double v = 1.0;
        for (size_t k = 0; k < x.size(); ++k) {
            const int sp = g.species()[k];
            const Eigen::VectorXd& ws = weights[static_cast<size_t>(sp)];
            if (ws.size() > 0) v *= ws[x[k] - g.lower(static_cast<int>(k))];
        }
        w[i] = v;
    }
    return w;
}

namespace {

Eigen::VectorXd contract_weights_below(const TTNState& s,
                                       const std::vector<Eigen::VectorXd>& weights, int start) {
    std::function<Eigen::VectorXd(int)> rec = [&](int node) -> Eigen::VectorXd {
        const TreeNode& n = s.tree.nodes[static_cast<size_t>(node)];
        if (n.is_leaf()) {
            return s.leaf_x[static_cast<size_t>(s.tree.leaf_position(node))].transpose() *
                   leaf_weight_vector(s, node, weights);
        }
        const Eigen::VectorXd v0 = rec(n.left);
        const Eigen::VectorXd v1 = rec(n.right);
        const Tensor3& q = s.connect[static_cast<size_t>(node)];
        Eigen::VectorXd out = Eigen::VectorXd::Zero(q.d0());
        for (int k = 0; k < q.d2(); ++k)
            for (int j = 0; j < q.d1(); ++j) {
                const double vv = v0[j] * v1[k];
                if (vv == 0.0) continue;
                for (int i = 0; i < q.d0(); ++i) out[i] += q(i, j, k) * vv;
            }
        return out;
    };
    return rec(start);
}

} // namespace

double contract_weights(const TTNState& s, const std::vector<Eigen::VectorXd>& weights) {
    return contract_weights_below(s, weights, s.tree.root())[0];
}

Eigen::VectorXd weighted_contraction(const TTNState& s, int node,
                                     const std::vector<Eigen::VectorXd>& weights) {
    return contract_weights_below(s, weights, node);
}

Eigen::VectorXd ones_contraction(const TTNState& s, int node) {
    return contract_weights_below(
        s, std::vector<Eigen::VectorXd>(static_cast<size_t>(s.space.num_species())), node);
}

double mass(const TTNState& s) {
    return contract_weights(s, std::vector<Eigen::VectorXd>(static_cast<size_t>(s.space.num_species())));
}

Eigen::VectorXd marginal(const TTNState& s, int species) {
    const long ext = s.space.extent(species);
    Eigen::VectorXd out(ext);
    std::vector<Eigen::VectorXd> w(static_cast<size_t>(s.space.num_species()));
    for (long c = 0; c < ext; ++c) {
        w[static_cast<size_t>(species)] = Eigen::VectorXd::Unit(ext, c);
        out[c] = contract_weights(s, w);
    }
    return out;
}

double moment(const TTNState& s, int species, int order) {
    const long ext = s.space.extent(species);
    std::vector<Eigen::VectorXd> w(static_cast<size_t>(s.space.num_species()));
    Eigen::VectorXd ws(ext);
    for (long c = 0; c < ext; ++c)
        ws[c] = std::pow(static_cast<double>(s.space.lower[static_cast<size_t>(species)] + c),
                         order);
    w[static_cast<size_t>(species)] = ws;
    return contract_weights(s, w);
}

std::pair<double, double> mean_std(const TTNState& s, int species) {
    const double m1 = moment(s, species, 1);
    const double m2 = moment(s, species, 2);
    return {m1, std::sqrt(std::max(0.0, m2 - m1 * m1))};
}

MemoryFootprint memory_footprint(const PartitionTree& tree, const TruncatedStateSpace& space) {
    double entries = 0.0;
    for (size_t node = 0; node < tree.nodes.size(); ++node) {
        const TreeNode& n = tree.nodes[node];
        if (n.is_leaf()) {
            double sz = 1.0;
            for (int sp : n.species) sz *= static_cast<double>(space.extent(sp));
            entries += sz * n.rank;
        } else {
            entries += static_cast<double>(n.rank) *
                       tree.nodes[static_cast<size_t>(n.left)].rank *
                       tree.nodes[static_cast<size_t>(n.right)].rank;
        }
    }
    return {entries, entries * 8.0};
}

namespace {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

} // namespace

void save_snapshot(const TTNState& s, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open snapshot file for writing: " + path);
    os.write("TTNCME1", 7);
    const std::string tstr = s.tree.to_string();
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tstr.size()));
    os.write(tstr.data(), static_cast<std::streamsize>(tstr.size()));
    const std::vector<int> ranks = s.tree.internal_ranks();
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ranks.size()));
    for (int r : ranks) write_pod<std::int32_t>(os, r);
    const std::vector<int> leaves = s.tree.leaves();
    for (int leaf : leaves) {
        const auto& sp = s.tree.nodes[static_cast<size_t>(leaf)].species;
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(sp.size()));
        for (int spp : sp) {
            write_pod<std::int64_t>(os, s.space.lower[static_cast<size_t>(spp)]);
            write_pod<std::int64_t>(os, s.space.upper[static_cast<size_t>(spp)]);
        }
    }
    for (size_t node = 0; node < s.tree.nodes.size(); ++node) {
        if (s.tree.nodes[node].is_leaf()) {
            const Eigen::MatrixXd& x =
                s.leaf_x[static_cast<size_t>(s.tree.leaf_position(static_cast<int>(node)))];
            os.write(reinterpret_cast<const char*>(x.data()),
                     static_cast<std::streamsize>(sizeof(double)) * x.size());
        } else {
            const Tensor3& q = s.connect[node];
            os.write(reinterpret_cast<const char*>(q.vec().data()),
                     static_cast<std::streamsize>(sizeof(double)) * q.size());
        }
    }
}

TTNState load_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open snapshot file: " + path);
    char magic[7];
    is.read(magic, 7);
    if (std::strncmp(magic, "TTNCME1", 7) != 0)
        throw ParseError("snapshot file: bad magic");
    const auto tlen = read_pod<std::uint32_t>(is);
    std::string tstr(tlen, '\0');
    is.read(tstr.data(), tlen);
    const auto nranks = read_pod<std::uint32_t>(is);
    std::vector<int> ranks(nranks);
    for (auto& r : ranks) r = read_pod<std::int32_t>(is);

    PartitionTree tree = parse_partition(tstr, ranks);
    TruncatedStateSpace space;
    space.lower.resize(static_cast<size_t>(tree.num_species));
    space.upper.resize(static_cast<size_t>(tree.num_species));
    for (int leaf : tree.leaves()) {
        const auto& sp = tree.nodes[static_cast<size_t>(leaf)].species;
        const auto cnt = read_pod<std::uint32_t>(is);
        if (cnt != sp.size()) throw ParseError("snapshot file: leaf bounds mismatch");
        for (int spp : sp) {
            space.lower[static_cast<size_t>(spp)] = read_pod<std::int64_t>(is);
            space.upper[static_cast<size_t>(spp)] = read_pod<std::int64_t>(is);
        }
    }
    TTNState s;
    s.tree = tree;
    s.space = space;
    s.grids = make_leaf_grids(tree, space);
    s.leaf_x.resize(s.grids.size());
    s.connect.resize(tree.nodes.size());
    for (size_t node = 0; node < tree.nodes.size(); ++node) {
        const TreeNode& n = tree.nodes[node];
        if (n.is_leaf()) {
            const int pos = tree.leaf_position(static_cast<int>(node));
            Eigen::MatrixXd x(s.grids[static_cast<size_t>(pos)].size(),
                              tree.single_leaf() ? 1 : n.rank);
            is.read(reinterpret_cast<char*>(x.data()),
                    static_cast<std::streamsize>(sizeof(double)) * x.size());
            s.leaf_x[static_cast<size_t>(pos)] = std::move(x);
        } else {
            Tensor3 q(n.rank, tree.nodes[static_cast<size_t>(n.left)].rank,
                      tree.nodes[static_cast<size_t>(n.right)].rank);
            is.read(reinterpret_cast<char*>(q.vec().data()),
                    static_cast<std::streamsize>(sizeof(double)) * q.size());
            s.connect[node] = std::move(q);
        }
    }
    if (!is) throw ParseError("snapshot file: truncated payload");
    return s;
}

} // namespace cme
