#include "glvm/fit.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "glvm/errors.hpp"
#include "glvm/init.hpp"
#include "glvm/linalg.hpp"
#include "glvm/parallel.hpp"
#include "glvm/rng.hpp"
#include "masked_glm.hpp"

namespace glvm {

namespace {

constexpr double kMeanClip = 0.01;  // matches InitConfig::eps_clip
constexpr double kSlack = 1e-10;

VectorXd item_predictor(const MatrixXd& X, const MatrixXd& U, const ItemParams& th) {
    VectorXd w = VectorXd::Constant(X.rows(), th.beta0);
    if (X.cols() > 0) w.noalias() += X * th.beta;
    if (U.cols() > 0) w.noalias() += U * th.gamma;
    return w;
}

ItemParams prox_step(const ItemParams& th, double g0, const VectorXd& gb, const VectorXd& gg,
                     double eta, double lambda) {
    ItemParams out;
    out.beta0 = th.beta0 - eta * g0;
    out.beta.resize(gb.size());
    for (Eigen::Index k = 0; k < gb.size(); ++k)
        out.beta[k] = soft_threshold(th.beta[k] - eta * gb[k], eta * lambda);
    out.gamma = th.gamma - eta * gg;
    return out;
}

double step_norm_sq(const ItemParams& a, const ItemParams& b) {
    double d0 = a.beta0 - b.beta0;
    return d0 * d0 + (a.beta - b.beta).squaredNorm() + (a.gamma - b.gamma).squaredNorm();
}

/// Mean per-item penalized objective, (1/q) sum_j [-(1/n_j) sum_obs loglik
/// + lambda |beta_j|_1]. This is the quantity each half-sweep of the
/// alternating loop descends, so the recorded trace is monotone under full
/// observation.
double mean_item_objective(const DataSet& data, const ParamSet& params, double lambda) {
    MatrixXd W = linear_predictor(data, params);
    const Eigen::Index q = data.q();
    double total = 0.0;
    for (Eigen::Index j = 0; j < q; ++j) {
        double nj = data.mask.col(j).sum();
        auto le = detail::item_loss(data.families[j], data.Y.col(j), data.mask.col(j), W.col(j));
        total += -le.loglik_sum / nj + lambda * params.B.row(j).template lpNorm<1>();
    }
    return total / static_cast<double>(q);
}

void check_config(const FitConfig& cfg) {
    if (cfg.max_outer < 1) throw UsageError("max_outer must be positive");
    if (cfg.tol_outer <= 0.0) throw UsageError("tol_outer must be positive");
    if (cfg.box_D <= 0.0) throw UsageError("box_D must be positive");
    if (cfg.lambda && *cfg.lambda < 0.0) throw UsageError("penalty must be nonnegative");
}

}  // namespace

int FitConfig::resolved_m1(Eigen::Index n) const {
    if (m1 > 0) return m1;
    double nn = static_cast<double>(std::max<Eigen::Index>(n, 2));
    return static_cast<int>(std::ceil(10.0 * std::log(nn)));
}

int FitConfig::resolved_m2(Eigen::Index n, Eigen::Index q) const {
    if (m2 > 0) return m2;
    double nn = static_cast<double>(std::max<Eigen::Index>(n, 2));
    double qq = static_cast<double>(std::max<Eigen::Index>(q, 2));
    return static_cast<int>(std::ceil(10.0 * (std::log(nn) + std::log(qq))));
}

double default_lambda(Eigen::Index n, Eigen::Index p) {
    if (p < 2 || n < 1) return 0.0;
    return 0.5 * std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n));
}

std::vector<double> default_lambda_grid(Eigen::Index n, Eigen::Index p) {
    double base = p < 2 || n < 1
                      ? 0.0
                      : std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n));
    return {0.1 * base, 0.25 * base, 0.5 * base, base, 2.0 * base, 4.0 * base};
}

ItemParams fit_item(const Eigen::Ref<const VectorXd>& y, const Eigen::Ref<const ArrayXd>& mask,
                    const MatrixXd& X, const MatrixXd& U, const Family& family, double lambda,
                    int m1, StepRule rule, const ItemParams* warm, SolveStats* stats) {
    const Eigen::Index n = y.size();
    const Eigen::Index p = X.cols();
    const Eigen::Index K = U.cols();
    if (mask.size() != n || X.rows() != n || U.rows() != n)
        throw DataError("item regression inputs disagree on the subject count");
    if (lambda < 0.0) throw UsageError("penalty must be nonnegative");
    if (m1 < 1) throw UsageError("item regression needs at least one step");
    if (warm && (warm->beta.size() != p || warm->gamma.size() != K))
        throw UsageError("warm start dimensions disagree with the design");
    const double nj = mask.sum();
    if (nj <= 0.0) throw DataError("item regression has no observed responses");

    ItemParams th;
    if (warm) {
        th = *warm;
    } else {
        th.beta0 = family.link(detail::clipped_item_mean(family, y, mask, kMeanClip));
        th.beta = VectorXd::Zero(p);
        th.gamma = VectorXd::Zero(K);
    }

    const double lips =
        sigma_margin(family.curvature_bound() / nj * design_sigma_max_sq(X, U, mask));

    auto evaluate = [&](const ItemParams& t, double* smooth_out) {
        VectorXd w = item_predictor(X, U, t);
        auto le = detail::item_loss(family, y, mask, w);
        *smooth_out = -le.loglik_sum / nj;
        return le;
    };

    double smooth = 0.0;
    auto le = evaluate(th, &smooth);
    long long clamps = le.clamps;
    double obj = smooth + lambda * th.beta.lpNorm<1>();
    if (!std::isfinite(obj))
        throw NumericalError("non-finite objective at the start of an item regression");

    for (int step = 1; step <= m1; ++step) {
        VectorXd w = item_predictor(X, U, th);
        VectorXd r = detail::item_residual(family, y, mask, w);
        double g0 = -r.sum() / nj;
        VectorXd gb = p > 0 ? VectorXd(-(X.transpose() * r) / nj) : VectorXd(0);
        VectorXd gg = K > 0 ? VectorXd(-(U.transpose() * r) / nj) : VectorXd(0);
        if (!std::isfinite(g0) || !gb.allFinite() || !gg.allFinite())
            throw NumericalError("non-finite gradient at inner step " + std::to_string(step));

        ItemParams next;
        double smooth_next = 0.0;
        detail::LossEval le_next;
        if (rule == StepRule::Lipschitz) {
            next = prox_step(th, g0, gb, gg, 1.0 / lips, lambda);
            le_next = evaluate(next, &smooth_next);
        } else {
            double eta = 4.0 / lips;
            for (int half = 0;; ++half) {
                next = prox_step(th, g0, gb, gg, eta, lambda);
                le_next = evaluate(next, &smooth_next);
                double inner = g0 * (next.beta0 - th.beta0) + gb.dot(next.beta - th.beta) +
                               gg.dot(next.gamma - th.gamma);
                double quad = smooth + inner + step_norm_sq(next, th) / (2.0 * eta);
                if (smooth_next <= quad + 1e-12 * (1.0 + std::abs(smooth))) break;
                if (half >= 60)
                    throw NumericalError("backtracking found no decreasing step at inner step " +
                                         std::to_string(step));
                eta *= 0.5;
            }
        }
        double obj_next = smooth_next + lambda * next.beta.lpNorm<1>();
        if (!std::isfinite(obj_next))
            throw NumericalError("non-finite objective at inner step " + std::to_string(step));
        if (obj_next > obj + kSlack)
            throw NumericalError("objective increased at inner step " + std::to_string(step));
        th = std::move(next);
        obj = obj_next;
        smooth = smooth_next;
        clamps += le_next.clamps;
    }

    if (stats) {
        stats->clamps = clamps;
        stats->objective = obj;
    }
    return th;
}

double item_objective(const Eigen::Ref<const VectorXd>& y, const Eigen::Ref<const ArrayXd>& mask,
                      const MatrixXd& X, const MatrixXd& U, const Family& family, double lambda,
                      const ItemParams& theta) {
    const double nj = mask.sum();
    if (nj <= 0.0) throw DataError("item regression has no observed responses");
    VectorXd w = item_predictor(X, U, theta);
    auto le = detail::item_loss(family, y, mask, w);
    return -le.loglik_sum / nj + lambda * theta.beta.lpNorm<1>();
}

VectorXd update_latent(const Eigen::Ref<const VectorXd>& y_row,
                       const Eigen::Ref<const ArrayXd>& mask_row,
                       const Eigen::Ref<const VectorXd>& offset, const MatrixXd& Gamma,
                       const std::vector<Family>& families,
                       const Eigen::Ref<const VectorXd>& u_init, int m2, double box_D,
                       SolveStats* stats) {
    const Eigen::Index q = y_row.size();
    const Eigen::Index K = Gamma.cols();
    if (mask_row.size() != q || offset.size() != q || Gamma.rows() != q ||
        static_cast<Eigen::Index>(families.size()) != q)
        throw DataError("score update inputs disagree on the item count");
    if (u_init.size() != K) throw DataError("score length != loading matrix cols");
    if (m2 < 1) throw UsageError("score update needs at least one step");
    if (box_D <= 0.0) throw UsageError("box_D must be positive");

    VectorXd u = u_init.cwiseMax(-box_D).cwiseMin(box_D);
    const double qi = mask_row.sum();

    auto evaluate = [&](const VectorXd& uu, double* obj_out) {
        VectorXd w = offset;
        if (K > 0) w.noalias() += Gamma * uu;
        auto le = detail::subject_loss(families, y_row, mask_row, w);
        *obj_out = qi > 0.0 ? -le.loglik_sum / qi : 0.0;
        return le;
    };

    if (K == 0 || qi <= 0.0) {
        if (stats) {
            double obj = 0.0;
            auto le = evaluate(u, &obj);
            stats->clamps = le.clamps;
            stats->objective = obj;
        }
        return u;
    }

    MatrixXd scaled = Gamma;
    for (Eigen::Index j = 0; j < q; ++j)
        scaled.row(j) *= std::sqrt(families[j].curvature_bound());
    const double lips = sigma_margin(masked_rows_sigma_max_sq(scaled, mask_row) / qi);

    double obj = 0.0;
    auto le = evaluate(u, &obj);
    long long clamps = le.clamps;
    if (!std::isfinite(obj))
        throw NumericalError("non-finite objective at the start of a score update");
    if (lips <= 0.0) {
        // every observed loading row is zero, so the gradient vanishes
        if (stats) {
            stats->clamps = clamps;
            stats->objective = obj;
        }
        return u;
    }

    for (int step = 1; step <= m2; ++step) {
        VectorXd w = offset;
        w.noalias() += Gamma * u;
        VectorXd r = detail::subject_residual(families, y_row, mask_row, w);
        VectorXd g = -(Gamma.transpose() * r) / qi;
        if (!g.allFinite())
            throw NumericalError("non-finite gradient at score step " + std::to_string(step));
        VectorXd next(K);
        for (Eigen::Index k = 0; k < K; ++k)
            next[k] = std::clamp(u[k] - g[k] / lips, -box_D, box_D);
        double obj_next = 0.0;
        auto le_next = evaluate(next, &obj_next);
        if (!std::isfinite(obj_next))
            throw NumericalError("non-finite objective at score step " + std::to_string(step));
        if (obj_next > obj + kSlack)
            throw NumericalError("objective increased at score step " + std::to_string(step));
        u = std::move(next);
        obj = obj_next;
        clamps += le_next.clamps;
    }

    if (stats) {
        stats->clamps = clamps;
        stats->objective = obj;
    }
    return u;
}

double latent_objective(const Eigen::Ref<const VectorXd>& y_row,
                        const Eigen::Ref<const ArrayXd>& mask_row,
                        const Eigen::Ref<const VectorXd>& offset, const MatrixXd& Gamma,
                        const std::vector<Family>& families,
                        const Eigen::Ref<const VectorXd>& u) {
    const double qi = mask_row.sum();
    if (qi <= 0.0) return 0.0;
    VectorXd w = offset;
    if (Gamma.cols() > 0) w.noalias() += Gamma * u;
    auto le = detail::subject_loss(families, y_row, mask_row, w);
    return -le.loglik_sum / qi;
}

FitResult alternate(const DataSet& data, int K, const FitConfig& cfg, const ParamSet& init) {
    check_config(cfg);
    if (!cfg.lambda)
        throw UsageError("alternate requires a fixed penalty; fit_model chooses one when unset");
    if (K < 0) throw UsageError("latent dimension must be nonnegative");
    const Eigen::Index n = data.n();
    const Eigen::Index q = data.q();
    const Eigen::Index p = data.p();
    if (init.beta0.size() != q || init.B.rows() != q || init.B.cols() != p ||
        init.Gamma.rows() != q || init.Gamma.cols() != K || init.U.rows() != n ||
        init.U.cols() != K)
        throw DataError("starting values disagree with the data dimensions");

    const double lambda = *cfg.lambda;
    const int m1 = cfg.resolved_m1(n);
    const int m2 = cfg.resolved_m2(n, q);

    FitResult out;
    out.lambda = lambda;
    if (cfg.m1 > 0) {
        FitConfig floors;
        int def1 = floors.resolved_m1(n);
        if (cfg.m1 < def1)
            out.warnings.push_back("m1 = " + std::to_string(cfg.m1) + " is below the default " +
                                   std::to_string(def1) + " for this sample size");
    }
    if (cfg.m2 > 0) {
        FitConfig floors;
        int def2 = floors.resolved_m2(n, q);
        if (cfg.m2 < def2)
            out.warnings.push_back("m2 = " + std::to_string(cfg.m2) + " is below the default " +
                                   std::to_string(def2) + " for this problem size");
    }

    ParamSet params = init;
    std::vector<ItemParams> warm(q);
    for (Eigen::Index j = 0; j < q; ++j)
        warm[j] = ItemParams{init.beta0[j], VectorXd::Zero(p), VectorXd::Zero(K)};

    for (int t = 0; t < cfg.max_outer; ++t) {
        ParamSet prev = params;

        VectorXd new_beta0(q);
        MatrixXd new_B(q, p);
        MatrixXd new_Gamma(q, K);
        std::vector<SolveStats> item_stats(q);
        parallel_for(q, cfg.threads, [&](std::ptrdiff_t j) {
            try {
                ItemParams fit = fit_item(data.Y.col(j), data.mask.col(j), data.X, params.U,
                                          data.families[j], lambda, m1, cfg.step_rule, &warm[j],
                                          &item_stats[j]);
                new_beta0[j] = fit.beta0;
                new_B.row(j) = fit.beta.transpose();
                new_Gamma.row(j) = fit.gamma.transpose();
                warm[j] = std::move(fit);
            } catch (const NumericalError& e) {
                throw NumericalError("item " + std::to_string(j) + ": " + e.what());
            } catch (const DataError& e) {
                throw DataError("item " + std::to_string(j) + ": " + e.what());
            }
        });
        params.beta0 = new_beta0;
        params.B = new_B;
        params.Gamma = new_Gamma;

        std::vector<SolveStats> subject_stats(n);
        if (K > 0) {
            MatrixXd offsets = data.X * params.B.transpose();
            offsets.rowwise() += params.beta0.transpose();
            MatrixXd new_U(n, K);
            parallel_for(n, cfg.threads, [&](std::ptrdiff_t i) {
                try {
                    VectorXd u = update_latent(data.Y.row(i).transpose(),
                                               data.mask.row(i).transpose(),
                                               offsets.row(i).transpose(), params.Gamma,
                                               data.families, params.U.row(i).transpose(), m2,
                                               cfg.box_D, &subject_stats[i]);
                    new_U.row(i) = u.transpose();
                } catch (const NumericalError& e) {
                    throw NumericalError("subject " + std::to_string(i) + ": " + e.what());
                } catch (const DataError& e) {
                    throw DataError("subject " + std::to_string(i) + ": " + e.what());
                }
            });
            params.U = new_U;
        }

        for (Eigen::Index j = 0; j < q; ++j) out.clamp_count += item_stats[j].clamps;
        for (Eigen::Index i = 0; i < n; ++i) out.clamp_count += subject_stats[i].clamps;

        OuterTrace tr;
        tr.objective = mean_item_objective(data, params, lambda);
        tr.max_block_change = std::max({(params.beta0 - prev.beta0).norm(),
                                        (params.B - prev.B).norm(),
                                        (params.Gamma - prev.Gamma).norm(),
                                        (params.U - prev.U).norm()});
        if (!std::isfinite(tr.objective))
            throw NumericalError("non-finite objective after outer iteration " +
                                 std::to_string(t + 1));
        out.trace.push_back(tr);
        if (tr.max_block_change < cfg.tol_outer) {
            out.converged = true;
            break;
        }
    }

    out.params = std::move(params);
    return out;
}

FitResult fit_baseline(const DataSet& data, double lambda, int m1, StepRule rule, int threads) {
    const Eigen::Index n = data.n();
    const Eigen::Index q = data.q();
    const Eigen::Index p = data.p();
    MatrixXd no_latent(n, 0);

    FitResult out;
    out.lambda = lambda;
    out.params = ParamSet::zeros(n, q, p, 0);
    std::vector<SolveStats> item_stats(q);
    VectorXd new_beta0(q);
    MatrixXd new_B(q, p);
    parallel_for(q, threads, [&](std::ptrdiff_t j) {
        try {
            ItemParams fit = fit_item(data.Y.col(j), data.mask.col(j), data.X, no_latent,
                                      data.families[j], lambda, m1, rule, nullptr,
                                      &item_stats[j]);
            new_beta0[j] = fit.beta0;
            new_B.row(j) = fit.beta.transpose();
        } catch (const NumericalError& e) {
            throw NumericalError("item " + std::to_string(j) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("item " + std::to_string(j) + ": " + e.what());
        }
    });
    out.params.beta0 = new_beta0;
    out.params.B = new_B;
    for (Eigen::Index j = 0; j < q; ++j) out.clamp_count += item_stats[j].clamps;

    OuterTrace tr;
    tr.objective = mean_item_objective(data, out.params, lambda);
    tr.max_block_change = 0.0;
    out.trace.push_back(tr);
    out.converged = true;
    return out;
}

namespace {

/// Draws a fold label per observed cell by shuffling the cell list and
/// splitting it into near-equal chunks. Returns false when some fold would
/// leave a subject or item with nothing to train on.
bool draw_folds(const DataSet& data, const std::vector<std::pair<int, int>>& cells, int folds,
                Rng& rng, std::vector<int>* label) {
    const std::size_t m = cells.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    for (std::size_t i = m; i > 1; --i) {
        auto k = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
        std::swap(order[i - 1], order[k]);
    }
    label->assign(m, 0);
    for (std::size_t pos = 0; pos < m; ++pos)
        (*label)[order[pos]] = static_cast<int>(pos * folds / m);

    const Eigen::Index n = data.n();
    const Eigen::Index q = data.q();
    MatrixXd fold_row = MatrixXd::Zero(folds, n);
    MatrixXd fold_col = MatrixXd::Zero(folds, q);
    for (std::size_t c = 0; c < m; ++c) {
        fold_row((*label)[c], cells[c].first) += 1.0;
        fold_col((*label)[c], cells[c].second) += 1.0;
    }
    VectorXd row_total = data.obs_per_subject();
    VectorXd col_total = data.obs_per_item();
    for (int f = 0; f < folds; ++f) {
        for (Eigen::Index i = 0; i < n; ++i)
            if (row_total[i] - fold_row(f, i) < 1.0) return false;
        for (Eigen::Index j = 0; j < q; ++j)
            if (col_total[j] - fold_col(f, j) < 1.0) return false;
    }
    return true;
}

}  // namespace

CvResult cross_validate(const DataSet& data, int K, const FitConfig& cfg) {
    check_config(cfg);
    if (cfg.cv_folds < 2) throw UsageError("cross-validation needs at least two folds");
    const Eigen::Index n = data.n();
    const Eigen::Index q = data.q();
    const Eigen::Index p = data.p();

    std::vector<double> grid = cfg.lambda_grid.empty() ? default_lambda_grid(n, p)
                                                       : cfg.lambda_grid;
    for (double g : grid)
        if (g < 0.0) throw UsageError("penalty grid contains a negative value");

    std::vector<std::pair<int, int>> cells;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < q; ++j)
            if (data.mask(i, j) != 0.0)
                cells.emplace_back(static_cast<int>(i), static_cast<int>(j));
    if (cells.size() < static_cast<std::size_t>(cfg.cv_folds))
        throw DataError("fewer observed cells than cross-validation folds");

    Rng rng = Rng::stream(cfg.seed, 0x6376);
    std::vector<int> label;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt)
        ok = draw_folds(data, cells, cfg.cv_folds, rng, &label);
    if (!ok)
        throw DataError(
            "no cell partition kept every subject and item observed in 100 attempts");

    InitConfig icfg;
    icfg.box_D = cfg.box_D;
    icfg.threads = cfg.threads;

    std::vector<double> err_sum(grid.size(), 0.0);
    for (int f = 0; f < cfg.cv_folds; ++f) {
        DataSet train = data;
        std::vector<std::pair<int, int>> held;
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (label[c] == f) {
                train.mask(cells[c].first, cells[c].second) = 0.0;
                held.push_back(cells[c]);
            }

        ParamSet start = K > 0 ? refine_covfree(train, spectral_init(train, K, icfg), icfg)
                               : ParamSet::zeros(n, q, p, 0);
        for (std::size_t g = 0; g < grid.size(); ++g) {
            FitConfig sub = cfg;
            sub.lambda = grid[g];
            FitResult fr = alternate(train, K, sub, start);
            MatrixXd W = linear_predictor(train, fr.params);
            double se = 0.0;
            for (auto [i, j] : held) {
                double mu = data.families[j].mean(W(i, j));
                double d = mu - data.Y(i, j);
                se += d * d;
            }
            err_sum[g] += se / static_cast<double>(held.size());
        }
    }

    CvResult out;
    out.grid = grid;
    out.cv_error.resize(grid.size());
    double best_err = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        out.cv_error[g] = err_sum[g] / cfg.cv_folds;
        bool better = g == 0 || out.cv_error[g] < best_err ||
                      (out.cv_error[g] == best_err && grid[g] > out.lambda_star);
        if (better) {
            best_err = out.cv_error[g];
            out.lambda_star = grid[g];
        }
    }
    return out;
}

FitResult fit_model(const DataSet& data, int K, const FitConfig& cfg) {
    data.validate();
    check_config(cfg);
    FitConfig use = cfg;
    if (!use.lambda) use.lambda = cross_validate(data, K, cfg).lambda_star;

    InitConfig icfg;
    icfg.box_D = cfg.box_D;
    icfg.threads = cfg.threads;
    ParamSet start = K > 0 ? refine_covfree(data, spectral_init(data, K, icfg), icfg)
                           : ParamSet::zeros(data.n(), data.q(), data.p(), 0);
    return alternate(data, K, use, start);
}

}  // namespace glvm
