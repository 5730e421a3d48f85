#include "glvm/debias.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include <Eigen/Eigenvalues>

#include "glvm/errors.hpp"
#include "glvm/linalg.hpp"
#include "glvm/parallel.hpp"
#include "glvm/stats.hpp"
#include "masked_glm.hpp"

namespace glvm {

namespace {

/// Everything one item's targets share: the full design, fitted predictors,
/// per-cell score and curvature, and the curvature-weighted Gram matrix.
struct ItemSystem {
    MatrixXd zhat;      // n x (1 + p + K), columns (1, X, U)
    VectorXd score;     // dloglik at observed cells, 0 elsewhere
    VectorXd nu;        // -d2loglik at observed cells, 0 elsewhere
    MatrixXd gram;      // (1/n_j) sum nu z z^T
    double nj = 0.0;
    double lips = 0.0;  // margin-inflated largest eigenvalue of gram
};

ItemSystem build_system(const DataSet& data, const ParamSet& params, Eigen::Index j) {
    const Eigen::Index n = data.n(), p = data.p(), K = params.K();
    ItemSystem sys;
    sys.zhat.resize(n, 1 + p + K);
    sys.zhat.col(0).setOnes();
    if (p > 0) sys.zhat.middleCols(1, p) = data.X;
    if (K > 0) sys.zhat.rightCols(K) = params.U;

    VectorXd w = VectorXd::Constant(n, params.beta0[j]);
    if (p > 0) w.noalias() += data.X * params.B.row(j).transpose();
    if (K > 0) w.noalias() += params.U * params.Gamma.row(j).transpose();

    const Family& f = data.families[j];
    sys.score = VectorXd::Zero(n);
    sys.nu = VectorXd::Zero(n);
    sys.nj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (data.mask(i, j) <= 0.0) continue;
        sys.score[i] = f.dloglik(data.Y(i, j), w[i]);
        sys.nu[i] = -f.d2loglik(data.Y(i, j), w[i]);
        sys.nj += 1.0;
    }
    if (sys.nj <= 0.0) throw DataError("item " + std::to_string(j) + " has no observed responses");

    sys.gram.noalias() = sys.zhat.transpose() * sys.nu.asDiagonal() * sys.zhat / sys.nj;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(sys.gram, Eigen::EigenvaluesOnly);
    sys.lips = sigma_margin(eig.eigenvalues().maxCoeff());
    return sys;
}

void check_target(const DataSet& data, const ParamSet& params, const DebiasTarget& t) {
    if (t.item < 0 || t.item >= data.q()) throw UsageError("target item out of range");
    if (t.covariate < 0 || t.covariate >= data.p())
        throw UsageError("target covariate out of range");
    if (params.beta0.size() != data.q() || params.B.rows() != data.q() ||
        params.B.cols() != data.p() || params.U.rows() != data.n())
        throw DataError("fitted parameters disagree with the data dimensions");
}

int resolve_steps(int m1, double nj) {
    if (m1 > 0) return m1;
    return FitConfig{}.resolved_m1(static_cast<Eigen::Index>(nj));
}

/// Proximal gradient on 0.5 w^T A w - w^T h + lambda |w|_1 from zero.
VectorXd prox_quadratic(const MatrixXd& a, const VectorXd& h, double lips, double lambda,
                        int steps) {
    const Eigen::Index d = a.rows();
    VectorXd w = VectorXd::Zero(d);
    if (lips <= 0.0) return w;
    const double eta = 1.0 / lips;
    auto value = [&](const VectorXd& v) {
        return 0.5 * v.dot(a * v) - v.dot(h) + lambda * v.lpNorm<1>();
    };
    double objective = value(w);
    for (int s = 0; s < steps; ++s) {
        VectorXd g = a * w - h;
        for (Eigen::Index c = 0; c < d; ++c) w[c] = soft_threshold(w[c] - eta * g[c], eta * lambda);
        double next = value(w);
        if (!std::isfinite(next))
            throw NumericalError("non-finite decorrelation objective at step " +
                                 std::to_string(s));
        if (next > objective + 1e-10)
            throw NumericalError("decorrelation objective increased at step " +
                                 std::to_string(s));
        objective = next;
    }
    return w;
}

/// Quadratic of the decorrelation regression: the gram with the target
/// row and column removed, and the removed column as the linear term.
std::pair<MatrixXd, VectorXd> reduce_gram(const MatrixXd& gram, Eigen::Index theta_col) {
    const Eigen::Index d = gram.rows();
    MatrixXd a(d - 1, d - 1);
    VectorXd h(d - 1);
    Eigen::Index r = 0;
    for (Eigen::Index row = 0; row < d; ++row) {
        if (row == theta_col) continue;
        Eigen::Index c = 0;
        for (Eigen::Index col = 0; col < d; ++col) {
            if (col == theta_col) continue;
            a(r, c++) = gram(row, col);
        }
        h[r++] = gram(row, theta_col);
    }
    return {std::move(a), std::move(h)};
}

VectorXd decorrelate_from(const ItemSystem& sys, Eigen::Index theta_col, double lambda_prime,
                          int m1) {
    auto [a, h] = reduce_gram(sys.gram, theta_col);
    for (Eigen::Index c = 0; c < a.rows(); ++c)
        if (a(c, c) <= 0.0)
            throw DataError("degenerate design: a decorrelation column carries no curvature");
    return prox_quadratic(a, h, sys.lips, lambda_prime, m1);
}

std::pair<double, double> score_and_info_from(const ItemSystem& sys, Eigen::Index theta_col,
                                              const VectorXd& w_hat) {
    const Eigen::Index n = sys.zhat.rows(), d = sys.gram.rows();
    double s_hat = 0.0, f_hat = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (sys.nu[i] == 0.0 && sys.score[i] == 0.0) continue;
        double xk = sys.zhat(i, theta_col);
        double proj = 0.0;
        Eigen::Index c = 0;
        for (Eigen::Index col = 0; col < d; ++col) {
            if (col == theta_col) continue;
            proj += w_hat[c++] * sys.zhat(i, col);
        }
        double dir = xk - proj;
        s_hat += sys.score[i] * dir;
        f_hat += sys.nu[i] * xk * dir;
    }
    s_hat /= sys.nj;
    f_hat /= sys.nj;
    return {s_hat, f_hat};
}

double null_score(const DataSet& data, const ParamSet& params, const DebiasTarget& t,
                  const VectorXd& w_hat) {
    // score recomputed with the target coefficient removed from the predictor
    const Eigen::Index n = data.n(), p = data.p(), K = params.K();
    const Family& f = data.families[t.item];
    VectorXd w = VectorXd::Constant(n, params.beta0[t.item]);
    if (p > 0) w.noalias() += data.X * params.B.row(t.item).transpose();
    if (K > 0) w.noalias() += params.U * params.Gamma.row(t.item).transpose();
    w.noalias() -= params.B(t.item, t.covariate) * data.X.col(t.covariate);

    double s = 0.0, nj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (data.mask(i, t.item) <= 0.0) continue;
        double proj = w_hat[0];
        Eigen::Index c = 1;
        for (Eigen::Index col = 0; col < p; ++col) {
            if (col == t.covariate) continue;
            proj += w_hat[c++] * data.X(i, col);
        }
        for (Eigen::Index k = 0; k < K; ++k) proj += w_hat[c++] * params.U(i, k);
        s += f.dloglik(data.Y(i, t.item), w[i]) * (data.X(i, t.covariate) - proj);
        nj += 1.0;
    }
    return s / nj;
}

DebiasReport report_from(const DataSet& data, const FitResult& fit, const DebiasTarget& t,
                         const ItemSystem& sys, double lambda_prime, double alpha,
                         const DebiasOptions& opt) {
    const Eigen::Index theta_col = 1 + t.covariate;
    VectorXd w_hat = decorrelate_from(sys, theta_col, lambda_prime,
                                      resolve_steps(opt.m1, sys.nj));
    auto [s_hat, f_hat] = score_and_info_from(sys, theta_col, w_hat);
    if (f_hat <= 1e-10) throw NumericalError("degenerate partial information");

    DebiasReport rep;
    rep.beta_hat = fit.params.B(t.item, t.covariate);
    rep.beta_tilde = rep.beta_hat + s_hat / f_hat;
    rep.info_F = f_hat;
    rep.se = 1.0 / std::sqrt(sys.nj * f_hat);
    if (opt.score_at_null) {
        double s0 = null_score(data, fit.params, t, w_hat);
        rep.z = std::sqrt(sys.nj) * s0 / std::sqrt(f_hat);
    } else {
        rep.z = rep.beta_tilde / rep.se;
    }
    rep.p_value = normal_two_sided_p(rep.z);
    double half = normal_quantile(1.0 - alpha / 2.0) * rep.se;
    rep.ci_low = rep.beta_tilde - half;
    rep.ci_high = rep.beta_tilde + half;
    rep.w_hat_support = static_cast<int>((w_hat.array() != 0.0).count());
    rep.lambda_prime = lambda_prime;
    return rep;
}

void check_scalars(double lambda_prime, double alpha) {
    if (lambda_prime < 0.0) throw UsageError("decorrelation penalty must be nonnegative");
    if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
}

}  // namespace

double default_lambda_prime(double n_obs, Eigen::Index q, Eigen::Index p, Eigen::Index support) {
    double n = std::max(n_obs, 2.0);
    double item_term = std::sqrt(std::log(n) / static_cast<double>(std::max<Eigen::Index>(q, 1)));
    double cov_term = p > 1 ? std::sqrt(static_cast<double>(std::max<Eigen::Index>(support, 0))) *
                                  std::sqrt(std::log(static_cast<double>(p)) / n)
                            : 0.0;
    return 0.5 * (item_term + cov_term);
}

VectorXd decorrelate(const DataSet& data, const FitResult& fit, const DebiasTarget& target,
                     double lambda_prime, int m1) {
    check_target(data, fit.params, target);
    if (lambda_prime < 0.0) throw UsageError("decorrelation penalty must be nonnegative");
    ItemSystem sys = build_system(data, fit.params, target.item);
    return decorrelate_from(sys, 1 + target.covariate, lambda_prime,
                            resolve_steps(m1, sys.nj));
}

double cv_lambda_prime(const DataSet& data, const FitResult& fit,
                       const std::vector<DebiasTarget>& targets, const DebiasOptions& opt) {
    const int folds = opt.cv_folds;
    if (folds < 2) throw UsageError("penalty cross-validation needs at least two folds");
    if (targets.empty()) throw UsageError("penalty cross-validation needs at least one target");
    if (folds > data.n()) throw UsageError("more folds than subjects");
    for (const DebiasTarget& t : targets) check_target(data, fit.params, t);

    struct FoldGram {
        MatrixXd tr, te;
        double nj_tr = 0.0, nj_te = 0.0;
        double lips_tr = 0.0;
    };
    std::map<Eigen::Index, std::vector<FoldGram>> grams;
    double anchor = 0.0;
    for (const DebiasTarget& t : targets) {
        if (grams.count(t.item)) continue;
        ItemSystem sys = build_system(data, fit.params, t.item);
        anchor = std::max(anchor,
                          default_lambda_prime(sys.nj, data.q(), data.p(),
                                               (fit.params.B.row(t.item).array() != 0.0).count()));

        const Eigen::Index d = sys.zhat.cols();
        std::vector<FoldGram> fg(static_cast<std::size_t>(folds));
        for (FoldGram& g : fg) g.te = MatrixXd::Zero(d, d);
        MatrixXd total = MatrixXd::Zero(d, d);
        double nj_total = 0.0;
        for (Eigen::Index i = 0; i < data.n(); ++i) {
            if (data.mask(i, t.item) <= 0.0) continue;
            FoldGram& g = fg[static_cast<std::size_t>(i % folds)];
            MatrixXd zz = sys.nu[i] * (sys.zhat.row(i).transpose() * sys.zhat.row(i));
            g.te += zz;
            g.nj_te += 1.0;
            total += zz;
            nj_total += 1.0;
        }
        for (FoldGram& g : fg) {
            g.nj_tr = nj_total - g.nj_te;
            if (g.nj_tr > 0.0) {
                g.tr = (total - g.te) / g.nj_tr;
                Eigen::SelfAdjointEigenSolver<MatrixXd> eig(g.tr, Eigen::EigenvaluesOnly);
                g.lips_tr = sigma_margin(eig.eigenvalues().maxCoeff());
            }
            if (g.nj_te > 0.0) g.te /= g.nj_te;
        }
        grams.emplace(t.item, std::move(fg));
    }

    double best = 0.0, best_risk = std::numeric_limits<double>::infinity();
    bool any_fold = false;
    for (double mult : {1.0, 0.5, 0.25, 0.125, 0.0625, 0.0}) {
        const double cand = mult * anchor;
        double risk = 0.0;
        bool used = false;
        for (const DebiasTarget& t : targets) {
            const Eigen::Index theta_col = 1 + t.covariate;
            for (const FoldGram& g : grams.at(t.item)) {
                if (g.nj_tr <= 0.0 || g.nj_te <= 0.0) continue;
                auto [a_tr, h_tr] = reduce_gram(g.tr, theta_col);
                if ((a_tr.diagonal().array() <= 0.0).any()) continue;
                VectorXd w = prox_quadratic(a_tr, h_tr, g.lips_tr, cand,
                                            resolve_steps(opt.m1, g.nj_tr));
                auto [a_te, h_te] = reduce_gram(g.te, theta_col);
                risk += 0.5 * w.dot(a_te * w) - w.dot(h_te);
                used = true;
            }
        }
        if (!used) continue;
        any_fold = true;
        if (risk < best_risk) {
            best_risk = risk;
            best = cand;
        }
    }
    if (!any_fold) throw UsageError("every fold system was degenerate");
    return best;
}

std::pair<double, double> score_and_info(const DataSet& data, const FitResult& fit,
                                         const DebiasTarget& target, const VectorXd& w_hat) {
    check_target(data, fit.params, target);
    if (w_hat.size() != data.p() + fit.params.K())
        throw UsageError("decorrelation vector length disagrees with the design");
    if (!w_hat.allFinite()) throw UsageError("decorrelation vector is not finite");
    ItemSystem sys = build_system(data, fit.params, target.item);
    auto [s_hat, f_hat] = score_and_info_from(sys, 1 + target.covariate, w_hat);
    if (f_hat <= 1e-10) throw NumericalError("degenerate partial information");
    return {s_hat, f_hat};
}

DebiasReport debias_one(const DataSet& data, const FitResult& fit, const DebiasTarget& target,
                        double lambda_prime, double alpha, const DebiasOptions& opt) {
    check_target(data, fit.params, target);
    check_scalars(lambda_prime, alpha);
    ItemSystem sys = build_system(data, fit.params, target.item);
    return report_from(data, fit, target, sys, lambda_prime, alpha, opt);
}

ScreenResult screen(const DataSet& data, const FitResult& fit,
                    const std::vector<DebiasTarget>& targets, double lambda_prime, double alpha,
                    Correction correction, const DebiasOptions& opt, int threads) {
    if (targets.empty()) throw UsageError("no targets to screen");
    check_scalars(lambda_prime, alpha);
    for (const DebiasTarget& t : targets) check_target(data, fit.params, t);

    ScreenResult out;
    out.reports.resize(targets.size());
    out.errors.resize(targets.size());
    out.flagged.assign(targets.size(), false);
    out.biased_per_covariate.assign(data.p(), 0);

    // group by item so each curvature system is built once
    std::map<Eigen::Index, std::vector<std::size_t>> by_item;
    for (std::size_t t = 0; t < targets.size(); ++t) by_item[targets[t].item].push_back(t);
    std::vector<std::pair<Eigen::Index, std::vector<std::size_t>>> groups(by_item.begin(),
                                                                          by_item.end());

    parallel_for(static_cast<std::ptrdiff_t>(groups.size()), threads, [&](std::ptrdiff_t g) {
        const auto& [item, members] = groups[g];
        ItemSystem sys;
        try {
            sys = build_system(data, fit.params, item);
        } catch (const std::exception& e) {
            for (std::size_t t : members) out.errors[t] = e.what();
            return;
        }
        for (std::size_t t : members) {
            try {
                out.reports[t] =
                    report_from(data, fit, targets[t], sys, lambda_prime, alpha, opt);
            } catch (const std::exception& e) {
                out.errors[t] = e.what();
            }
        }
    });

    const double cutoff =
        correction == Correction::Bonferroni ? alpha / static_cast<double>(targets.size()) : alpha;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (!out.errors[t].empty()) continue;
        if (out.reports[t].p_value <= cutoff) {
            out.flagged[t] = true;
            ++out.biased_per_covariate[targets[t].covariate];
        }
    }
    return out;
}

}  // namespace glvm
