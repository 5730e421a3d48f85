#pragma once

#include <string>
#include <utility>
#include <vector>

#include "glvm/fit.hpp"

namespace glvm {

/// One covariate effect to test: coefficient (item, covariate) of B.
struct DebiasTarget {
    Eigen::Index item = 0;
    Eigen::Index covariate = 0;
};

struct DebiasReport {
    double beta_hat = 0.0;     // penalized estimate
    double beta_tilde = 0.0;   // one-step corrected estimate
    double info_F = 0.0;       // partial information, positive by convention
    double se = 0.0;           // 1 / sqrt(n_j info_F)
    double z = 0.0;
    double p_value = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    int w_hat_support = 0;     // nonzeros in the decorrelation vector
    double lambda_prime = 0.0;
};

struct DebiasOptions {
    int m1 = 0;                 // decorrelation steps; 0 = ceil(10 log n_j)
    bool score_at_null = false; // z from the score with this coefficient zeroed
    int cv_folds = 5;           // folds for cv_lambda_prime
};

/// Penalty for the decorrelation regression, 0.5 (sqrt(log n / q)
/// + sqrt(support) sqrt(log p / n)). support is the fitted item's |beta|_0.
double default_lambda_prime(double n_obs, Eigen::Index q, Eigen::Index p, Eigen::Index support);

/// Cross-validated choice of the decorrelation penalty. Subjects are split
/// round-robin (subject i to fold i mod cv_folds); each candidate penalty is
/// scored by the held-out quadratic risk of the decorrelation regression,
/// summed over folds and targets. Candidates are {0, 1/16, 1/8, 1/4, 1/2, 1}
/// times the largest default_lambda_prime across the target items, at their
/// fitted supports. Exact ties break to the stronger penalty. Fold systems
/// with no held-out subjects or a zero-curvature column are skipped; if every
/// fold system is skipped the choice is a UsageError.
double cv_lambda_prime(const DataSet& data, const FitResult& fit,
                       const std::vector<DebiasTarget>& targets, const DebiasOptions& opt = {});

/// Decorrelation vector: L1-penalized weighted regression of the target
/// covariate column on the remaining design (1, X_-k, U), weights the
/// curvature of the fitted model at each observed cell. Solved by m1
/// proximal-gradient steps. Coefficients are ordered (1, X_-k, U), length
/// p + K. Throws DataError when a design column has zero curvature mass.
VectorXd decorrelate(const DataSet& data, const FitResult& fit, const DebiasTarget& target,
                     double lambda_prime, int m1);

/// Decorrelated score S_hat and partial information F_hat for one target at
/// the fitted parameters. Throws NumericalError("degenerate partial
/// information") when F_hat <= 1e-10.
std::pair<double, double> score_and_info(const DataSet& data, const FitResult& fit,
                                         const DebiasTarget& target, const VectorXd& w_hat);

/// One-step corrected estimate with Wald test and confidence interval:
/// beta_tilde = beta_hat + S_hat / F_hat, se = 1 / sqrt(n_j F_hat),
/// CI beta_tilde +- z_{1-alpha/2} se. With score_at_null the test statistic
/// is instead sqrt(n_j) S / sqrt(F) with the target coefficient zeroed in
/// the predictor; the estimate and interval are unchanged.
DebiasReport debias_one(const DataSet& data, const FitResult& fit, const DebiasTarget& target,
                        double lambda_prime, double alpha = 0.05, const DebiasOptions& opt = {});

enum class Correction { None, Bonferroni };

struct ScreenResult {
    std::vector<DebiasReport> reports;  // aligned with targets
    std::vector<std::string> errors;    // aligned; nonempty marks a failed target
    std::vector<bool> flagged;          // aligned; p-value at or below the cutoff
    std::vector<int> biased_per_covariate;  // flagged counts, length p
};

/// Batch testing over many targets. Bonferroni divides alpha by the number
/// of targets. Degenerate targets are recorded in errors and skipped, not
/// fatal. Targets of one item share the curvature system, so grouping the
/// list by item is cheapest.
ScreenResult screen(const DataSet& data, const FitResult& fit,
                    const std::vector<DebiasTarget>& targets, double lambda_prime, double alpha,
                    Correction correction, const DebiasOptions& opt = {}, int threads = 0);

}  // namespace glvm
