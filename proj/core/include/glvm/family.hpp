#pragma once

#include <string>

#include "glvm/rng.hpp"

namespace glvm {

enum class FamilyKind { BernoulliLogit, GaussianIdentity, PoissonLog };

/// Exponential-family response model for one item: log-likelihood of a
/// response given the linear predictor, its first three derivatives in the
/// predictor, the mean/link pair, and the curvature bound used for step
/// sizes. Constant terms that do not depend on the predictor are dropped.
///
/// Evaluations outside [domain_lo, domain_hi] use the tangent-line extension
/// at the nearest endpoint: the loss stays concave and C^1, derivatives are
/// evaluated at the clamped point, and curvature is zero outside. Callers
/// that track clamping count entries via in_domain().
struct Family {
    FamilyKind kind = FamilyKind::BernoulliLogit;
    double dispersion = 1.0;  // gaussian only, held fixed
    double domain_lo = -30.0;
    double domain_hi = 30.0;

    static Family bernoulli_logit();
    static Family gaussian_identity(double dispersion = 1.0);
    static Family poisson_log();

    /// Lookup by config key: "bernoulli-logit", "gaussian-identity",
    /// "poisson-log". Throws UsageError for anything else.
    static Family from_key(const std::string& key);
    const char* key() const;

    /// b_U: upper bound on -d2loglik over the domain.
    double curvature_bound() const;

    /// Range of -d2loglik over [lo, hi] (diagnostic).
    std::pair<double, double> curvature_range(double lo, double hi) const;

    bool in_domain(double w) const { return w >= domain_lo && w <= domain_hi; }
    double clamp(double w) const;

    /// Throws DataError when y is not a legal response for this family.
    void validate_response(double y) const;

    double loglik(double y, double w) const;
    double dloglik(double y, double w) const;
    double d2loglik(double y, double w) const;
    double d3loglik(double w) const;

    double mean(double w) const;
    /// Inverse of mean(); throws DataError outside the mean range.
    double link(double mu) const;

    /// Draw a response at linear predictor w.
    double draw(double w, Rng& rng) const;
};

}  // namespace glvm
