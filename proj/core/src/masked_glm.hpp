#pragma once

// Internal helpers shared by the initialization and fitting translation
// units: masked log-likelihood sums, their gradients, and clamp counting.

#include <Eigen/Dense>
#include <vector>

#include "glvm/family.hpp"

namespace glvm::detail {

using Eigen::ArrayXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LossEval {
    double loglik_sum = 0.0;
    long long clamps = 0;
};

/// Sum of observed log-likelihoods of one item at predictor values w.
inline LossEval item_loss(const Family& f, const Eigen::Ref<const VectorXd>& y,
                          const Eigen::Ref<const ArrayXd>& mask,
                          const Eigen::Ref<const VectorXd>& w) {
    LossEval out;
    const Eigen::Index n = y.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (mask[i] == 0.0) continue;
        out.loglik_sum += f.loglik(y[i], w[i]);
        if (!f.in_domain(w[i])) ++out.clamps;
    }
    return out;
}

/// Masked score residuals r_i = mask_i * dloglik(y_i, w_i) for one item.
inline VectorXd item_residual(const Family& f, const Eigen::Ref<const VectorXd>& y,
                              const Eigen::Ref<const ArrayXd>& mask,
                              const Eigen::Ref<const VectorXd>& w) {
    const Eigen::Index n = y.size();
    VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r[i] = mask[i] == 0.0 ? 0.0 : f.dloglik(y[i], w[i]);
    return r;
}

/// Sum of observed log-likelihoods of one subject at predictor values w,
/// with per-item families.
inline LossEval subject_loss(const std::vector<Family>& families,
                             const Eigen::Ref<const VectorXd>& y_row,
                             const Eigen::Ref<const ArrayXd>& mask_row,
                             const Eigen::Ref<const VectorXd>& w) {
    LossEval out;
    const Eigen::Index q = y_row.size();
    for (Eigen::Index j = 0; j < q; ++j) {
        if (mask_row[j] == 0.0) continue;
        out.loglik_sum += families[j].loglik(y_row[j], w[j]);
        if (!families[j].in_domain(w[j])) ++out.clamps;
    }
    return out;
}

inline VectorXd subject_residual(const std::vector<Family>& families,
                                 const Eigen::Ref<const VectorXd>& y_row,
                                 const Eigen::Ref<const ArrayXd>& mask_row,
                                 const Eigen::Ref<const VectorXd>& w) {
    const Eigen::Index q = y_row.size();
    VectorXd r(q);
    for (Eigen::Index j = 0; j < q; ++j)
        r[j] = mask_row[j] == 0.0 ? 0.0 : families[j].dloglik(y_row[j], w[j]);
    return r;
}

/// Observed mean of one item, clipped into the mean domain of the family so
/// the link is finite: [eps, 1 - eps] for bernoulli, [eps, exp(hi)] for
/// poisson, untouched for gaussian.
inline double clipped_item_mean(const Family& f, const Eigen::Ref<const VectorXd>& y,
                                const Eigen::Ref<const ArrayXd>& mask, double eps) {
    double count = mask.sum();
    double mean = (y.array() * mask).sum() / count;
    switch (f.kind) {
        case FamilyKind::BernoulliLogit:
            return std::min(std::max(mean, eps), 1.0 - eps);
        case FamilyKind::PoissonLog:
            return std::min(std::max(mean, eps), std::exp(f.domain_hi));
        case FamilyKind::GaussianIdentity:
            return mean;
    }
    return mean;
}

}  // namespace glvm::detail
