#include "glvm/family.hpp"

#include <cmath>

#include "glvm/errors.hpp"

namespace glvm {

namespace {

// log(1 + exp(x)) without overflow or catastrophic cancellation.
double softplus(double x) {
    if (x < -37.0) return std::exp(x);
    if (x < 18.0) return std::log1p(std::exp(x));
    if (x < 33.3) return x + std::exp(-x);
    return x;
}

double sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Value and slope of the in-domain log-likelihood at w.
struct Point {
    double value;
    double slope;
};

}  // namespace

Family Family::bernoulli_logit() {
    Family f;
    f.kind = FamilyKind::BernoulliLogit;
    return f;
}

Family Family::gaussian_identity(double dispersion) {
    if (!(dispersion > 0.0)) throw DataError("gaussian-identity: dispersion must be positive");
    Family f;
    f.kind = FamilyKind::GaussianIdentity;
    f.dispersion = dispersion;
    return f;
}

Family Family::poisson_log() {
    Family f;
    f.kind = FamilyKind::PoissonLog;
    f.domain_hi = 10.0;
    return f;
}

Family Family::from_key(const std::string& key) {
    if (key == "bernoulli-logit") return bernoulli_logit();
    if (key == "gaussian-identity") return gaussian_identity();
    if (key == "poisson-log") return poisson_log();
    throw UsageError("unknown family key '" + key +
                     "' (expected bernoulli-logit, gaussian-identity, or poisson-log)");
}

const char* Family::key() const {
    switch (kind) {
        case FamilyKind::BernoulliLogit: return "bernoulli-logit";
        case FamilyKind::GaussianIdentity: return "gaussian-identity";
        case FamilyKind::PoissonLog: return "poisson-log";
    }
    return "?";
}

double Family::curvature_bound() const {
    switch (kind) {
        case FamilyKind::BernoulliLogit: return 0.25;
        case FamilyKind::GaussianIdentity: return 1.0 / dispersion;
        case FamilyKind::PoissonLog: return std::exp(domain_hi);
    }
    return 0.0;
}

std::pair<double, double> Family::curvature_range(double lo, double hi) const {
    switch (kind) {
        case FamilyKind::BernoulliLogit: {
            auto nu = [](double w) { double s = sigmoid(w); return s * (1.0 - s); };
            // nu peaks at 0 and decays monotonically in |w|.
            double top = (lo <= 0.0 && hi >= 0.0) ? 0.25 : std::max(nu(lo), nu(hi));
            return {std::min(nu(lo), nu(hi)), top};
        }
        case FamilyKind::GaussianIdentity: return {1.0 / dispersion, 1.0 / dispersion};
        case FamilyKind::PoissonLog: return {std::exp(lo), std::exp(hi)};
    }
    return {0.0, 0.0};
}

double Family::clamp(double w) const {
    if (w < domain_lo) return domain_lo;
    if (w > domain_hi) return domain_hi;
    return w;
}

void Family::validate_response(double y) const {
    if (!std::isfinite(y)) throw DataError("response is not finite");
    switch (kind) {
        case FamilyKind::BernoulliLogit:
            if (y != 0.0 && y != 1.0) throw DataError("bernoulli-logit: response must be 0 or 1");
            break;
        case FamilyKind::GaussianIdentity:
            break;
        case FamilyKind::PoissonLog:
            if (y < 0.0 || y != std::floor(y))
                throw DataError("poisson-log: response must be a nonnegative integer");
            break;
    }
}

double Family::loglik(double y, double w) const {
    double wc = clamp(w);
    Point pt{};
    switch (kind) {
        case FamilyKind::BernoulliLogit:
            pt = {y * wc - softplus(wc), y - sigmoid(wc)};
            break;
        case FamilyKind::GaussianIdentity: {
            double r = y - wc;
            pt = {-0.5 * r * r / dispersion, r / dispersion};
            break;
        }
        case FamilyKind::PoissonLog: {
            double mu = std::exp(wc);
            pt = {y * wc - mu, y - mu};
            break;
        }
    }
    return pt.value + pt.slope * (w - wc);
}

double Family::dloglik(double y, double w) const {
    double wc = clamp(w);
    switch (kind) {
        case FamilyKind::BernoulliLogit: return y - sigmoid(wc);
        case FamilyKind::GaussianIdentity: return (y - wc) / dispersion;
        case FamilyKind::PoissonLog: return y - std::exp(wc);
    }
    return 0.0;
}

double Family::d2loglik(double /*y*/, double w) const {
    if (w < domain_lo || w > domain_hi) return 0.0;
    switch (kind) {
        case FamilyKind::BernoulliLogit: {
            double s = sigmoid(w);
            return -s * (1.0 - s);
        }
        case FamilyKind::GaussianIdentity: return -1.0 / dispersion;
        case FamilyKind::PoissonLog: return -std::exp(w);
    }
    return 0.0;
}

double Family::d3loglik(double w) const {
    if (w < domain_lo || w > domain_hi) return 0.0;
    switch (kind) {
        case FamilyKind::BernoulliLogit: {
            double s = sigmoid(w);
            return -s * (1.0 - s) * (1.0 - 2.0 * s);
        }
        case FamilyKind::GaussianIdentity: return 0.0;
        case FamilyKind::PoissonLog: return -std::exp(w);
    }
    return 0.0;
}

double Family::mean(double w) const {
    double wc = clamp(w);
    switch (kind) {
        case FamilyKind::BernoulliLogit: return sigmoid(wc);
        case FamilyKind::GaussianIdentity: return wc;
        case FamilyKind::PoissonLog: return std::exp(wc);
    }
    return 0.0;
}

double Family::link(double mu) const {
    switch (kind) {
        case FamilyKind::BernoulliLogit:
            if (!(mu > 0.0 && mu < 1.0)) throw DataError("logit link: mean must be in (0,1)");
            return std::log(mu / (1.0 - mu));
        case FamilyKind::GaussianIdentity:
            if (!std::isfinite(mu)) throw DataError("identity link: mean must be finite");
            return mu;
        case FamilyKind::PoissonLog:
            if (!(mu > 0.0)) throw DataError("log link: mean must be positive");
            return std::log(mu);
    }
    return 0.0;
}

double Family::draw(double w, Rng& rng) const {
    switch (kind) {
        case FamilyKind::BernoulliLogit: return rng.bernoulli(mean(w)) ? 1.0 : 0.0;
        case FamilyKind::GaussianIdentity: return w + std::sqrt(dispersion) * rng.normal();
        case FamilyKind::PoissonLog: return static_cast<double>(rng.poisson(mean(w)));
    }
    return 0.0;
}

}  // namespace glvm
