#include "glvm/linalg.hpp"

#include <cmath>
#include <stdexcept>

#include "glvm/rng.hpp"

namespace glvm {

namespace {

// Fixed start vector with incommensurate entries so it is never orthogonal
// to the leading singular subspace in practice.
VectorXd power_start(Eigen::Index dim) {
    VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
        v[i] = 1.0 + 0.5 * std::sin(static_cast<double>(i) + 1.0);
    return v / v.norm();
}

// Power iteration on a gram operator v -> G v; returns the Rayleigh quotient.
template <typename GramOp>
double power_iterate(Eigen::Index dim, int steps, GramOp&& gram) {
    if (dim == 0) return 0.0;
    VectorXd v = power_start(dim);
    VectorXd gv(dim);
    for (int s = 0; s < steps; ++s) {
        gv = gram(v);
        double norm = gv.norm();
        if (norm <= 0.0) return 0.0;
        v = gv / norm;
    }
    gv = gram(v);
    return v.dot(gv);
}

}  // namespace

double sigma_max_sq(const MatrixXd& A, int steps) {
    return power_iterate(A.cols(), steps,
                         [&](const VectorXd& v) -> VectorXd { return A.transpose() * (A * v); });
}

double masked_rows_sigma_max_sq(const MatrixXd& A, const ArrayXd& row_mask, int steps) {
    if (row_mask.size() != A.rows())
        throw std::invalid_argument("masked_rows_sigma_max_sq: mask length != rows");
    return power_iterate(A.cols(), steps, [&](const VectorXd& v) -> VectorXd {
        VectorXd t = (A * v).array() * row_mask;
        return A.transpose() * t;
    });
}

double design_sigma_max_sq(const MatrixXd& X, const MatrixXd& U, const ArrayXd& mask, int steps) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    const Eigen::Index k = U.cols();
    if (U.rows() != 0 && U.rows() != n)
        throw std::invalid_argument("design_sigma_max_sq: U rows != X rows");
    if (mask.size() != n) throw std::invalid_argument("design_sigma_max_sq: mask length != rows");
    return power_iterate(1 + p + k, steps, [&](const VectorXd& v) -> VectorXd {
        VectorXd t = VectorXd::Constant(n, v[0]);
        t.noalias() += X * v.segment(1, p);
        if (k > 0) t.noalias() += U * v.tail(k);
        t.array() *= mask;
        VectorXd out(1 + p + k);
        out[0] = t.sum();
        out.segment(1, p).noalias() = X.transpose() * t;
        if (k > 0) out.tail(k).noalias() = U.transpose() * t;
        return out;
    });
}

TruncatedSvd truncated_svd(const MatrixXd& A, int rank) {
    const Eigen::Index n = A.rows();
    const Eigen::Index q = A.cols();
    if (rank < 1) throw std::invalid_argument("truncated_svd: rank must be >= 1");
    if (rank > std::min(n, q)) throw std::invalid_argument("truncated_svd: rank exceeds min(rows, cols)");

    TruncatedSvd out;
    if (std::min(n, q) <= 512) {
        Eigen::BDCSVD<MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
        out.U = svd.matrixU().leftCols(rank);
        out.S = svd.singularValues().head(rank);
        out.V = svd.matrixV().leftCols(rank);
        return out;
    }

    // Randomized subspace iteration (Halko et al. style) with oversampling.
    const Eigen::Index sketch = std::min<Eigen::Index>(std::min(n, q), rank + 10);
    Rng rng(0x5bd1e995u);
    MatrixXd omega(q, sketch);
    for (Eigen::Index j = 0; j < sketch; ++j)
        for (Eigen::Index i = 0; i < q; ++i) omega(i, j) = rng.normal();
    MatrixXd Y = A * omega;
    Eigen::HouseholderQR<MatrixXd> qr(Y);
    MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, sketch);
    for (int it = 0; it < 8; ++it) {
        MatrixXd Z = A.transpose() * Q;
        Eigen::HouseholderQR<MatrixXd> qrz(Z);
        Z = qrz.householderQ() * MatrixXd::Identity(q, sketch);
        Y = A * Z;
        Eigen::HouseholderQR<MatrixXd> qry(Y);
        Q = qry.householderQ() * MatrixXd::Identity(n, sketch);
    }
    MatrixXd B = Q.transpose() * A;
    Eigen::BDCSVD<MatrixXd> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.U = Q * svd.matrixU().leftCols(rank);
    out.S = svd.singularValues().head(rank);
    out.V = svd.matrixV().leftCols(rank);
    return out;
}

}  // namespace glvm
