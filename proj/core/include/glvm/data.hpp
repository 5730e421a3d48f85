#pragma once

#include <Eigen/Dense>
#include <vector>

#include "glvm/family.hpp"

namespace glvm {

using Eigen::ArrayXXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Observed responses, observation mask, and covariates. Y(i,j) holds the
/// response of subject i on item j and is 0 at unobserved cells; mask is 1.0
/// where observed and 0.0 where missing; X holds centered covariates.
struct DataSet {
    MatrixXd Y;                    // n x q
    ArrayXXd mask;                 // n x q, values 0 or 1
    MatrixXd X;                    // n x p
    std::vector<Family> families;  // one per item

    Eigen::Index n() const { return Y.rows(); }
    Eigen::Index q() const { return Y.cols(); }
    Eigen::Index p() const { return X.cols(); }

    VectorXd obs_per_item() const { return mask.colwise().sum().matrix().transpose(); }
    VectorXd obs_per_subject() const { return mask.rowwise().sum().matrix(); }

    /// Enforces shape agreement, legal mask values, response validity at
    /// observed cells, at least one observation per row and column, and
    /// finite nonconstant covariate columns. Throws DataError.
    void validate() const;
};

/// Model parameters: per-item intercepts, covariate effects, loadings, and
/// per-subject latent scores.
struct ParamSet {
    VectorXd beta0;  // q
    MatrixXd B;      // q x p, row j = covariate effects of item j
    MatrixXd Gamma;  // q x K, row j = loadings of item j
    MatrixXd U;      // n x K, row i = latent scores of subject i

    Eigen::Index K() const { return Gamma.cols(); }

    static ParamSet zeros(Eigen::Index n, Eigen::Index q, Eigen::Index p, Eigen::Index k);
};

/// W(i,j) = beta0_j + Gamma_j . U_i + B_j . X_i for every cell, observed or
/// not. Throws DataError on any dimension mismatch, naming the offending
/// axis.
MatrixXd linear_predictor(const DataSet& data, const ParamSet& params);

/// Penalized average loss
///   -(1/(n q)) sum over observed cells of loglik + lambda * sum_j |B_j|_1.
/// Diagnostic only; the fitting loop's trace records the per-item-normalized
/// variant whose block descent is exact (see OuterTrace).
double joint_objective(const DataSet& data, const ParamSet& params, double lambda);

}  // namespace glvm
