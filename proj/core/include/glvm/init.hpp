#pragma once

#include <vector>

#include "glvm/data.hpp"

namespace glvm {

struct InitConfig {
    double eps_clip = 0.01;   // mean-space clip before applying the link
    int refine_steps = 20;    // covariate-free descent rounds
    double box_D = 10.0;      // sup-norm box for scores, loadings, intercepts
    int threads = 0;          // 0 = hardware concurrency
};

/// Spectral starting values: intercepts from clipped column means, then a
/// rank-K truncated SVD of the centered, inverse-observation-rate-scaled
/// residual matrix. Scores are sqrt(n) times the left factor; loadings are
/// the right factor scaled by the singular values and the average curvature
/// at the intercepts. B starts at zero. Rows of U and Gamma are clipped into
/// [-box_D, box_D]. Throws DataError when K >= min(n, q) or K < 1.
ParamSet spectral_init(const DataSet& data, int K, const InitConfig& cfg = {});

/// Projected block gradient descent on the covariate-free objective
/// -(1/(n q)) sum of observed loglik(beta0_j + Gamma_j . U_i): each round
/// updates all (beta0_j, Gamma_j) given U, then all U_i, with every
/// coordinate projected into [-box_D, box_D]. The objective is checked to be
/// non-increasing across rounds (1e-10 slack); a violation throws
/// NumericalError. Returns the refined parameters (B passes through).
ParamSet refine_covfree(const DataSet& data, const ParamSet& start, const InitConfig& cfg = {});

/// Covariate-free objective used by refine_covfree (diagnostic).
double covfree_objective(const DataSet& data, const ParamSet& params);

/// Anchor-based start: spectral + refine on the anchor items only (items
/// whose covariate effects are known to be zero) gives U; every other item
/// is then fit by a single penalized regression at the given lambda.
/// Throws DataError when anchors are empty, repeat, are out of range, or
/// number fewer than K.
ParamSet anchor_init(const DataSet& data, int K, const std::vector<int>& anchor_items,
                     double lambda, const InitConfig& cfg = {});

}  // namespace glvm
