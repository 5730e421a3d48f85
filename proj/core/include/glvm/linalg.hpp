#pragma once

#include <Eigen/Dense>

namespace glvm {

using Eigen::ArrayXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double soft_threshold(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

/// Largest squared singular value of A, estimated with power iteration on
/// A^T A from a fixed start vector. The estimate is a lower bound, so callers
/// that need a step-size denominator should apply sigma_margin().
double sigma_max_sq(const MatrixXd& A, int steps = 30);

/// Same for diag(row_mask) * A with a 0/1 mask.
double masked_rows_sigma_max_sq(const MatrixXd& A, const ArrayXd& row_mask, int steps = 30);

/// Largest squared singular value of the design [1 X U] restricted to rows
/// with mask = 1, without materializing the stacked matrix. U may have zero
/// columns.
double design_sigma_max_sq(const MatrixXd& X, const MatrixXd& U, const ArrayXd& mask,
                           int steps = 30);

/// Inflation applied to power-iteration estimates before they are used as
/// Lipschitz constants; the raw Rayleigh quotient sits just below the true
/// sigma_max^2 and a bare 1/L step could then overshoot.
inline double sigma_margin(double sigma_sq) { return 1.05 * sigma_sq; }

struct TruncatedSvd {
    MatrixXd U;   // n x k, orthonormal columns
    VectorXd S;   // k singular values, descending
    MatrixXd V;   // q x k, orthonormal columns
};

/// Rank-k truncated SVD. Exact (divide and conquer) for small matrices,
/// randomized subspace iteration with a fixed internal seed for large ones;
/// both paths are deterministic.
TruncatedSvd truncated_svd(const MatrixXd& A, int rank);

}  // namespace glvm
