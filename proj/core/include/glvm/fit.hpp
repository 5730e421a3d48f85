#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glvm/data.hpp"

namespace glvm {

using Eigen::ArrayXd;

enum class StepRule { Lipschitz, Backtracking };

struct FitConfig {
    std::optional<double> lambda;     // empty = choose by cross-validation
    std::vector<double> lambda_grid;  // CV grid; empty = default_lambda_grid
    int m1 = 0;                       // item-regression steps; 0 = ceil(10 log n)
    int m2 = 0;                       // score-update steps; 0 = ceil(10 (log n + log q))
    int max_outer = 50;
    double tol_outer = 1e-4;
    double box_D = 10.0;              // sup-norm box for latent scores
    StepRule step_rule = StepRule::Lipschitz;
    int cv_folds = 5;
    std::uint64_t seed = 0;
    int threads = 0;                  // 0 = hardware concurrency

    int resolved_m1(Eigen::Index n) const;
    int resolved_m2(Eigen::Index n, Eigen::Index q) const;
};

/// Rate-scaled default penalty, 0.5 sqrt(log p / n).
double default_lambda(Eigen::Index n, Eigen::Index p);
std::vector<double> default_lambda_grid(Eigen::Index n, Eigen::Index p);

struct OuterTrace {
    // Mean per-item penalized objective after the sweep,
    // (1/q) sum_j [-(1/n_j) sum_obs loglik + lambda |beta_j|_1]. Both
    // half-sweeps descend this quantity under full observation, so the
    // recorded trace is non-increasing.
    double objective = 0.0;
    double max_block_change = 0.0;  // max Frobenius change over the four blocks
};

struct FitResult {
    ParamSet params;
    double lambda = 0.0;
    std::vector<OuterTrace> trace;
    bool converged = false;
    long long clamp_count = 0;  // predictor evaluations outside the family domain
    std::vector<std::string> warnings;
};

/// Coefficients of one item regression.
struct ItemParams {
    double beta0 = 0.0;
    VectorXd beta;   // p, soft-thresholded block
    VectorXd gamma;  // K, unpenalized
};

struct SolveStats {
    long long clamps = 0;
    double objective = 0.0;  // penalized objective at the returned point
};

/// One item's L1-penalized regression of y on [1, X, U] via m1
/// proximal-gradient steps. Only the covariate block is soft-thresholded.
/// The Lipschitz rule uses the family curvature bound and the masked design
/// spectrum; backtracking halves the step until sufficient decrease. The
/// penalized objective must not increase across steps (1e-10 slack), else
/// NumericalError. warm, when given, supplies the starting point; otherwise
/// the start is zero with the intercept at the link of the clipped observed
/// mean. U may have zero columns.
ItemParams fit_item(const Eigen::Ref<const VectorXd>& y, const Eigen::Ref<const ArrayXd>& mask,
                    const MatrixXd& X, const MatrixXd& U, const Family& family, double lambda,
                    int m1, StepRule rule, const ItemParams* warm = nullptr,
                    SolveStats* stats = nullptr);

/// Penalized objective of one item regression (diagnostic for tests).
double item_objective(const Eigen::Ref<const VectorXd>& y, const Eigen::Ref<const ArrayXd>& mask,
                      const MatrixXd& X, const MatrixXd& U, const Family& family, double lambda,
                      const ItemParams& theta);

/// One subject's latent-score update: m2 projected-gradient steps on the
/// average observed negative log-likelihood at fixed offsets
/// (offset_j = beta0_j + B_j . x_i), each iterate clipped into
/// [-box_D, box_D]^K. All-zero observed loadings return u_init projected.
VectorXd update_latent(const Eigen::Ref<const VectorXd>& y_row,
                       const Eigen::Ref<const ArrayXd>& mask_row,
                       const Eigen::Ref<const VectorXd>& offset, const MatrixXd& Gamma,
                       const std::vector<Family>& families,
                       const Eigen::Ref<const VectorXd>& u_init, int m2, double box_D,
                       SolveStats* stats = nullptr);

/// Objective of one subject's update (diagnostic for tests).
double latent_objective(const Eigen::Ref<const VectorXd>& y_row,
                        const Eigen::Ref<const ArrayXd>& mask_row,
                        const Eigen::Ref<const VectorXd>& offset, const MatrixXd& Gamma,
                        const std::vector<Family>& families,
                        const Eigen::Ref<const VectorXd>& u);

/// Alternating fit: each outer iteration runs every item regression at the
/// current scores (in parallel), then every score update (in parallel),
/// stopping when the largest block change drops below tol_outer or after
/// max_outer iterations. cfg.lambda must be set; use cross_validate or
/// fit_model when it is not. Item regressions warm-start from the previous
/// outer iterate (zeros plus the init intercepts at the first one).
FitResult alternate(const DataSet& data, int K, const FitConfig& cfg, const ParamSet& init);

/// Latent-free reference fit: one penalized regression per item on the
/// covariates only. Returned with K = 0 blocks so downstream inference
/// treats it like any other fit.
FitResult fit_baseline(const DataSet& data, double lambda, int m1,
                       StepRule rule = StepRule::Lipschitz, int threads = 0);

struct CvResult {
    double lambda_star = 0.0;
    std::vector<double> grid;
    std::vector<double> cv_error;  // mean held-out squared error per grid point
};

/// K-fold cross-validation over observed cells. Held-out cells are masked
/// during fitting and scored by squared error against the fitted mean. Fold
/// draws that would empty a subject or item are rejected and redrawn (at
/// most 100 attempts). Ties prefer the larger penalty.
CvResult cross_validate(const DataSet& data, int K, const FitConfig& cfg);

/// cross_validate when cfg.lambda is empty, then alternate from a spectral
/// start refined without covariates.
FitResult fit_model(const DataSet& data, int K, const FitConfig& cfg);

}  // namespace glvm
