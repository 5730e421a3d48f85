#include "glvm/init.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "glvm/errors.hpp"
#include "glvm/fit.hpp"
#include "glvm/linalg.hpp"
#include "glvm/parallel.hpp"
#include "masked_glm.hpp"

namespace glvm {

using detail::clipped_item_mean;

namespace {

void clip_inplace(MatrixXd& m, double box) {
    m = m.cwiseMax(-box).cwiseMin(box);
}

}  // namespace

ParamSet spectral_init(const DataSet& data, int K, const InitConfig& cfg) {
    const Eigen::Index n = data.n(), q = data.q();
    if (K < 1) throw DataError("latent dimension must be at least 1");
    if (K >= std::min(n, q))
        throw DataError("latent dimension " + std::to_string(K) +
                        " must be below min(subjects, items) = " +
                        std::to_string(std::min(n, q)));

    ParamSet out = ParamSet::zeros(n, q, data.p(), K);

    // Intercepts from clipped observed column means.
    VectorXd mu(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        mu[j] = clipped_item_mean(data.families[j], data.Y.col(j), data.mask.col(j), cfg.eps_clip);
        out.beta0[j] = data.families[j].link(mu[j]);
    }

    // Centered residuals, zero at unobserved cells, compensated by the
    // inverse observation rate so masked low-rank structure keeps its scale.
    double rate = data.mask.sum() / static_cast<double>(n * q);
    MatrixXd R = (data.Y - mu.transpose().replicate(n, 1)).cwiseProduct(data.mask.matrix()) / rate;

    auto svd = truncated_svd(R, K);
    out.U = std::sqrt(static_cast<double>(n)) * svd.U;

    // Average curvature at the intercepts maps residual scale back to
    // predictor scale (evaluated at clamped intercepts so it stays positive).
    double nu_bar = 0.0;
    for (Eigen::Index j = 0; j < q; ++j) {
        const Family& f = data.families[j];
        nu_bar += -f.d2loglik(0.0, f.clamp(out.beta0[j]));
    }
    nu_bar /= static_cast<double>(q);
    out.Gamma = svd.V * svd.S.asDiagonal() / (std::sqrt(static_cast<double>(n)) * nu_bar);

    out.beta0 = out.beta0.cwiseMax(-cfg.box_D).cwiseMin(cfg.box_D);
    clip_inplace(out.U, cfg.box_D);
    clip_inplace(out.Gamma, cfg.box_D);
    return out;
}

double covfree_objective(const DataSet& data, const ParamSet& params) {
    const Eigen::Index n = data.n(), q = data.q();
    MatrixXd W = params.beta0.transpose().replicate(n, 1);
    if (params.K() > 0) W.noalias() += params.U * params.Gamma.transpose();
    double total = 0.0;
    for (Eigen::Index j = 0; j < q; ++j)
        total += detail::item_loss(data.families[j], data.Y.col(j), data.mask.col(j), W.col(j))
                     .loglik_sum;
    return -total / static_cast<double>(n * q);
}

ParamSet refine_covfree(const DataSet& data, const ParamSet& start, const InitConfig& cfg) {
    const Eigen::Index n = data.n(), q = data.q();
    const Eigen::Index K = start.K();
    ParamSet params = start;
    const MatrixXd no_covariates(n, 0);

    // Projected steps only guarantee descent from a feasible point.
    params.beta0 = params.beta0.cwiseMax(-cfg.box_D).cwiseMin(cfg.box_D);
    clip_inplace(params.Gamma, cfg.box_D);
    clip_inplace(params.U, cfg.box_D);

    double objective = covfree_objective(data, params);
    for (int round = 0; round < cfg.refine_steps; ++round) {
        // Item block: one projected gradient step of (beta0_j, Gamma_j) per
        // item at fixed scores.
        MatrixXd new_beta0_gamma(q, 1 + K);
        parallel_for(q, cfg.threads, [&](std::ptrdiff_t j) {
            const Family& f = data.families[j];
            double l = sigma_margin(f.curvature_bound() / data.mask.col(j).sum() *
                                    design_sigma_max_sq(no_covariates, params.U, data.mask.col(j)));
            VectorXd w = VectorXd::Constant(n, params.beta0[j]);
            w.noalias() += params.U * params.Gamma.row(j).transpose();
            VectorXd r = detail::item_residual(f, data.Y.col(j), data.mask.col(j), w);
            double inv_nj = 1.0 / data.mask.col(j).sum();
            double g0 = -r.sum() * inv_nj;
            VectorXd gg = -(params.U.transpose() * r) * inv_nj;
            new_beta0_gamma(j, 0) =
                std::clamp(params.beta0[j] - g0 / l, -cfg.box_D, cfg.box_D);
            for (Eigen::Index k = 0; k < K; ++k)
                new_beta0_gamma(j, 1 + k) =
                    std::clamp(params.Gamma(j, k) - gg[k] / l, -cfg.box_D, cfg.box_D);
        });
        params.beta0 = new_beta0_gamma.col(0);
        params.Gamma = new_beta0_gamma.rightCols(K);

        // Subject block: one projected gradient step of U_i per subject at
        // fixed intercepts and loadings.
        MatrixXd gamma_scaled = params.Gamma;
        for (Eigen::Index j = 0; j < q; ++j)
            gamma_scaled.row(j) *= std::sqrt(data.families[j].curvature_bound());
        MatrixXd new_u(n, K);
        parallel_for(n, cfg.threads, [&](std::ptrdiff_t i) {
            ArrayXd row_mask = data.mask.row(i).transpose();
            double qi = row_mask.sum();
            double l = sigma_margin(masked_rows_sigma_max_sq(gamma_scaled, row_mask) / qi);
            if (l <= 0.0) {
                new_u.row(i) = params.U.row(i).cwiseMax(-cfg.box_D).cwiseMin(cfg.box_D);
                return;
            }
            VectorXd w = params.beta0;
            w.noalias() += params.Gamma * params.U.row(i).transpose();
            VectorXd r = detail::subject_residual(data.families, data.Y.row(i).transpose(),
                                                  row_mask, w);
            VectorXd g = -(params.Gamma.transpose() * r) / qi;
            for (Eigen::Index k = 0; k < K; ++k)
                new_u(i, k) = std::clamp(params.U(i, k) - g[k] / l, -cfg.box_D, cfg.box_D);
        });
        params.U = new_u;

        double next = covfree_objective(data, params);
        if (next > objective + 1e-10)
            throw NumericalError("covariate-free refinement objective increased at round " +
                                 std::to_string(round));
        objective = next;
    }
    return params;
}

ParamSet anchor_init(const DataSet& data, int K, const std::vector<int>& anchor_items,
                     double lambda, const InitConfig& cfg) {
    const Eigen::Index n = data.n(), q = data.q();
    if (anchor_items.empty()) throw DataError("anchor set is empty");
    std::set<int> anchors(anchor_items.begin(), anchor_items.end());
    if (anchors.size() != anchor_items.size()) throw DataError("anchor set has repeated items");
    for (int a : anchors)
        if (a < 0 || a >= q) throw DataError("anchor item " + std::to_string(a) + " out of range");
    if (static_cast<int>(anchors.size()) < K)
        throw DataError("anchor set smaller than the latent dimension");
    if (static_cast<int>(anchors.size()) == K)
        throw DataError("anchor set must exceed the latent dimension");

    // Covariate-free pipeline on the anchor columns.
    DataSet sub;
    sub.Y.resize(n, anchors.size());
    sub.mask.resize(n, anchors.size());
    sub.X = data.X;
    Eigen::Index c = 0;
    for (int a : anchors) {
        sub.Y.col(c) = data.Y.col(a);
        sub.mask.col(c) = data.mask.col(a);
        sub.families.push_back(data.families[a]);
        ++c;
    }
    ParamSet anchor_fit = refine_covfree(sub, spectral_init(sub, K, cfg), cfg);

    ParamSet out = ParamSet::zeros(n, q, data.p(), K);
    out.U = anchor_fit.U;
    c = 0;
    for (int a : anchors) {
        out.beta0[a] = anchor_fit.beta0[c];
        out.Gamma.row(a) = anchor_fit.Gamma.row(c);
        ++c;
    }

    // Every non-anchor item gets a penalized regression at the anchor scores.
    std::vector<Eigen::Index> rest;
    for (Eigen::Index j = 0; j < q; ++j)
        if (!anchors.count(static_cast<int>(j))) rest.push_back(j);
    FitConfig fc;
    int m1 = fc.resolved_m1(n);
    parallel_for(static_cast<std::ptrdiff_t>(rest.size()), cfg.threads, [&](std::ptrdiff_t t) {
        Eigen::Index j = rest[t];
        ItemParams theta = fit_item(data.Y.col(j), data.mask.col(j), data.X, out.U,
                                    data.families[j], lambda, m1, StepRule::Lipschitz);
        out.beta0[j] = theta.beta0;
        out.B.row(j) = theta.beta.transpose();
        out.Gamma.row(j) = theta.gamma.transpose();
    });
    return out;
}

}  // namespace glvm
