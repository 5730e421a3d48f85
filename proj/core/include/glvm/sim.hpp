#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glvm/debias.hpp"
#include "glvm/fit.hpp"

namespace glvm {

using Cell = std::pair<Eigen::Index, Eigen::Index>;  // (item, covariate)

/// One synthetic-study design: joint AR(1)-correlated covariates and latent
/// variables, a J x s block of uniform signal coefficients, and the cells
/// used for the type-I and power bookkeeping.
struct SimConfig {
    Eigen::Index n = 100;
    Eigen::Index q = 50;
    Eigen::Index p = 80;
    int K = 3;
    double rho = 0.0;       // AR(1) correlation across the (X, U) coordinates
    double a = 0.5;         // signal floor; effects drawn from [a, a + 0.5]
    int J = 10;             // leading items carrying signal
    int s = 10;             // leading covariates with signal per such item
    double intercept = 1.0;
    std::string family = "bernoulli-logit";
    int reps = 100;
    std::uint64_t seed = 1;
    std::vector<Cell> signal_cells;  // empty = the min(J,10) x min(s,10) corner
    std::vector<Cell> null_cells;    // empty = ten zero-effect items, placed past
                                     // the signal rows proportionally to q

    std::vector<Cell> resolved_signal_cells() const;
    std::vector<Cell> resolved_null_cells() const;
    void validate() const;
};

/// The exact covariance the generator realizes: ar1_covariance(d, rho)(a, b)
/// = rho^|a-b|.
MatrixXd ar1_covariance(Eigen::Index d, double rho);

struct SimDraw {
    DataSet data;
    ParamSet truth;
};

/// One seeded replicate: rows of (X, U) jointly N(0, ar1_covariance(p + K)),
/// loadings standard normal, signal effects Unif[a, a + 0.5] on the J x s
/// block, responses drawn from the family at the true predictor, full mask.
/// Deterministic in (cfg.seed, rep_index) and independent across reps.
SimDraw generate(const SimConfig& cfg, std::uint64_t rep_index);

struct AlignResult {
    MatrixXd G;       // least-squares map of fitted scores onto the truth
    double err = 0.0; // ||u_hat G^T - u_true||_F / sqrt(n)
};

/// Best linear alignment of fitted latent scores with the truth, since the
/// factorization is only identified up to an invertible mix.
AlignResult align(const MatrixXd& u_hat, const MatrixXd& u_true);

/// Loading error under the same alignment: ||gamma_hat G^{-1} - gamma_true||_F
/// / sqrt(q), so score and loading errors use one consistent G.
double align_loadings(const MatrixXd& gamma_hat, const MatrixXd& gamma_true, const MatrixXd& G);

struct SimMetrics {
    static constexpr double unset = std::numeric_limits<double>::quiet_NaN();
    double type1 = unset;     // rejection fraction over the null cells
    double power = unset;     // rejection fraction over the signal cells
    double mse_B = unset;     // ||B_hat - B*||_F^2 / (q p)
    double coverage = unset;  // CI coverage fraction over the signal cells
    double align_err_U = unset;
    double align_err_Gamma = unset;
    double beta_err_signal = unset;  // median row L2 error over signal items
    double pivot = unset;            // (beta_tilde - beta*) / se at the first signal cell
    int failed_targets = 0;
    ArrayXXd rejections;  // q x p: 1/0 where tested, NaN elsewhere
};

/// Per-replicate metrics from one screening pass. Targets with recorded
/// errors are excluded from every rate and counted in failed_targets.
SimMetrics evaluate(const SimConfig& cfg, const std::vector<DebiasTarget>& targets,
                    const ScreenResult& sr, const ParamSet& fitted, const ParamSet& truth);

enum class SimMethod {
    Latent,   // spectral start + alternating fit, penalty by the rate rule
    Baseline  // latent-free penalized regressions, penalty by pilot CV
};

struct GridOptions {
    double alpha = 0.05;
    Correction correction = Correction::None;
    FitConfig fit;           // budgets/box; lambda set = override both methods
    DebiasOptions debias;
    std::optional<double> lambda_prime;  // unset = rate default with support s
    bool lambda_prime_cv = false;  // unset lambda_prime: cross-validate on a
                                   // pilot fit instead of the rate default
    std::string out_dir;     // nonempty = per-rep JSON persistence and resume
    bool keep_reps = false;  // retain per-rep metrics on the row
    int threads = 0;         // replicate-level parallelism
};

struct SimRow {
    SimConfig cfg;
    SimMethod method = SimMethod::Latent;
    double lambda = 0.0;  // penalty the fits used
    double lambda_prime = 0.0;
    int reps_done = 0;
    int reps_failed = 0;
    std::vector<std::string> failures;  // "rep 3: what went wrong"
    SimMetrics mean;  // scalars averaged over replicates, NaNs skipped;
                      // failed_targets totalled; rejections averaged cellwise
    SimMetrics se;    // Monte Carlo standard errors for the scalar metrics
    std::vector<SimMetrics> per_rep;  // with keep_reps; failed reps left all-NaN
};

/// Full study: per config, generate -> fit -> screen -> evaluate across
/// replicates, aggregated with fixed-order reductions so results match
/// bit for bit across thread counts. Failed replicates are recorded on the
/// row and excluded from the aggregates, never silently dropped. With
/// out_dir set, each replicate's metrics are written as JSON keyed by the
/// config fingerprint and reloaded on the next run instead of recomputed.
std::vector<SimRow> run_grid(const std::vector<SimConfig>& cfgs, SimMethod method,
                             const GridOptions& opt = {});

}  // namespace glvm
