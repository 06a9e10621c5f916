#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <utility>
#include <vector>

namespace cme {

/// Order-3 connection tensor Q[i,j,k] with i = parent index, j = left child,
/// k = right child. Stored with i fastest, then j, then k.
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int d0, int d1, int d2) : d0_(d0), d1_(d1), d2_(d2) {
        data_.setZero(static_cast<Eigen::Index>(d0) * d1 * d2);
    }

    int d0() const { return d0_; }
    int d1() const { return d1_; }
    int d2() const { return d2_; }
    Eigen::Index size() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    double& operator()(int i, int j, int k) {
        return data_[i + static_cast<Eigen::Index>(d0_) * (j + static_cast<Eigen::Index>(d1_) * k)];
    }
    double operator()(int i, int j, int k) const {
        return data_[i + static_cast<Eigen::Index>(d0_) * (j + static_cast<Eigen::Index>(d1_) * k)];
    }

    Eigen::VectorXd& vec() { return data_; }
    const Eigen::VectorXd& vec() const { return data_; }

    /// M(i + d0*k, j): free left-child index.
    Eigen::MatrixXd unfold_left() const {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(d0_) * d2_, d1_);
        for (int k = 0; k < d2_; ++k)
            for (int j = 0; j < d1_; ++j)
                for (int i = 0; i < d0_; ++i) m(i + static_cast<Eigen::Index>(d0_) * k, j) = (*this)(i, j, k);
        return m;
    }
    /// M(i + d0*j, k): free right-child index (contiguous view of storage).
    Eigen::MatrixXd unfold_right() const {
        return Eigen::Map<const Eigen::MatrixXd>(data_.data(), static_cast<Eigen::Index>(d0_) * d1_, d2_);
    }
    /// M(j + d1*k, i): free parent index.
    Eigen::MatrixXd unfold_parent() const {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(d1_) * d2_, d0_);
        for (int k = 0; k < d2_; ++k)
            for (int j = 0; j < d1_; ++j)
                for (int i = 0; i < d0_; ++i) m(j + static_cast<Eigen::Index>(d1_) * k, i) = (*this)(i, j, k);
        return m;
    }

    static Tensor3 fold_left(const Eigen::MatrixXd& m, int d0, int d1, int d2) {
        Tensor3 t(d0, d1, d2);
        for (int k = 0; k < d2; ++k)
            for (int j = 0; j < d1; ++j)
                for (int i = 0; i < d0; ++i) t(i, j, k) = m(i + static_cast<Eigen::Index>(d0) * k, j);
        return t;
    }
    static Tensor3 fold_right(const Eigen::MatrixXd& m, int d0, int d1, int d2) {
        Tensor3 t(d0, d1, d2);
        for (int k = 0; k < d2; ++k)
            for (int j = 0; j < d1; ++j)
                for (int i = 0; i < d0; ++i) t(i, j, k) = m(i + static_cast<Eigen::Index>(d0) * j, k);
        return t;
    }
    static Tensor3 fold_parent(const Eigen::MatrixXd& m, int d0, int d1, int d2) {
        Tensor3 t(d0, d1, d2);
        for (int k = 0; k < d2; ++k)
            for (int j = 0; j < d1; ++j)
                for (int i = 0; i < d0; ++i) t(i, j, k) = m(j + static_cast<Eigen::Index>(d1) * k, i);
        return t;
    }

    /// Contract one mode with a matrix: out(i,j,k) = sum_i' M(i,i') T(i',j,k)
    /// (and analogously for the child modes).
    Tensor3 contract_parent(const Eigen::MatrixXd& m) const {
        Tensor3 out(static_cast<int>(m.rows()), d1_, d2_);
        for (int k = 0; k < d2_; ++k)
            for (int j = 0; j < d1_; ++j)
                for (int i = 0; i < out.d0_; ++i) {
                    double s = 0;
                    for (int p = 0; p < d0_; ++p) s += m(i, p) * (*this)(p, j, k);
                    out(i, j, k) = s;
                }
        return out;
    }
    Tensor3 contract_left(const Eigen::MatrixXd& m) const {
        Tensor3 out(d0_, static_cast<int>(m.rows()), d2_);
        for (int k = 0; k < d2_; ++k)
            for (int j = 0; j < out.d1_; ++j)
                for (int i = 0; i < d0_; ++i) {
                    double s = 0;
                    for (int p = 0; p < d1_; ++p) s += m(j, p) * (*this)(i, p, k);
                    out(i, j, k) = s;
                }
        return out;
    }
    Tensor3 contract_right(const Eigen::MatrixXd& m) const {
        Tensor3 out(d0_, d1_, static_cast<int>(m.rows()));
        for (int k = 0; k < out.d2_; ++k)
            for (int j = 0; j < d1_; ++j)
                for (int i = 0; i < d0_; ++i) {
                    double s = 0;
                    for (int p = 0; p < d2_; ++p) s += m(k, p) * (*this)(i, j, p);
                    out(i, j, k) = s;
                }
        return out;
    }

private:
    int d0_ = 0, d1_ = 0, d2_ = 0;
    Eigen::VectorXd data_;
};

struct QRPair {
    Eigen::MatrixXd q; // m x n, orthonormal columns
    Eigen::MatrixXd r; // n x n, upper triangular, nonnegative diagonal
};

/// Thin Householder QR with the sign convention diag(R) >= 0.
inline QRPair qr_nonneg(const Eigen::MatrixXd& a) {
    assert(a.rows() >= a.cols());
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::Index n = a.cols();
    QRPair out;
    out.q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), n);
    out.r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (out.r(j, j) < 0) {
            out.r.row(j) = -out.r.row(j);
            out.q.col(j) = -out.q.col(j);
        }
    }
    return out;
}

enum class TensorMode { Left, Right, Parent };

/// QR of a tensor unfolding: the returned tensor has orthonormal columns in
/// the chosen mode's unfolding, and refolding (tensor, r) reconstructs the
/// input via the mode contraction with r's transpose.
struct TensorQR {
    Tensor3 q;
    Eigen::MatrixXd r;
};

inline TensorQR matricize_qr(const Tensor3& t, TensorMode mode) {
    TensorQR out;
    switch (mode) {
    case TensorMode::Left: {
        QRPair qr = qr_nonneg(t.unfold_left());
        out.q = Tensor3::fold_left(qr.q, t.d0(), t.d1(), t.d2());
        out.r = std::move(qr.r);
        break;
    }
    case TensorMode::Right: {
        QRPair qr = qr_nonneg(t.unfold_right());
        out.q = Tensor3::fold_right(qr.q, t.d0(), t.d1(), t.d2());
        out.r = std::move(qr.r);
        break;
    }
    case TensorMode::Parent: {
        QRPair qr = qr_nonneg(t.unfold_parent());
        out.q = Tensor3::fold_parent(qr.q, t.d0(), t.d1(), t.d2());
        out.r = std::move(qr.r);
        break;
    }
    }
    return out;
}

/// Extend the orthonormal columns of u to `cols` columns using canonical
/// basis vectors (deterministic).
inline Eigen::MatrixXd orthonormal_completion(const Eigen::MatrixXd& u, int cols) {
    assert(u.rows() >= cols);
    Eigen::MatrixXd out(u.rows(), cols);
    out.leftCols(u.cols()) = u;
    int have = static_cast<int>(u.cols());
    for (Eigen::Index cand = 0; cand < u.rows() && have < cols; ++cand) {
        Eigen::VectorXd v = Eigen::VectorXd::Unit(u.rows(), cand);
        for (int pass = 0; pass < 2; ++pass)
            for (int j = 0; j < have; ++j) v -= out.col(j).dot(v) * out.col(j);
        const double nrm = v.norm();
        if (nrm > 1e-6) out.col(have++) = v / nrm;
    }
    assert(have == cols);
    return out;
}

} // namespace cme
