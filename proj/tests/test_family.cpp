#include <doctest.h>

#include <cmath>
#include <vector>

#include "glvm/errors.hpp"
#include "glvm/family.hpp"
#include "glvm/rng.hpp"

using glvm::DataError;
using glvm::Family;
using glvm::Rng;

namespace {

const std::vector<double> interior_grid = {-8.0, -3.0, -1.0, -0.4, 0.0, 0.3, 1.0, 2.5, 6.0};

std::vector<double> responses_for(const Family& f) {
    switch (f.kind) {
        case glvm::FamilyKind::BernoulliLogit: return {0.0, 1.0};
        case glvm::FamilyKind::GaussianIdentity: return {-1.3, 0.0, 2.7};
        case glvm::FamilyKind::PoissonLog: return {0.0, 1.0, 4.0};
    }
    return {};
}

std::vector<Family> all_families() {
    return {Family::bernoulli_logit(), Family::gaussian_identity(), Family::poisson_log()};
}

}  // namespace

TEST_CASE("log-likelihood values at pinned points") {
    Family bern = Family::bernoulli_logit();
    CHECK(bern.loglik(1.0, 0.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK(bern.loglik(0.0, 0.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK(bern.dloglik(1.0, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(bern.d2loglik(1.0, 0.0) == doctest::Approx(-0.25).epsilon(1e-12));

    Family gauss = Family::gaussian_identity(1.0);
    CHECK(gauss.loglik(0.0, 0.0) == doctest::Approx(0.0));
    CHECK(gauss.loglik(2.0, 1.0) == doctest::Approx(-0.5).epsilon(1e-12));

    Family pois = Family::poisson_log();
    CHECK(pois.loglik(2.0, 0.0) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("derivatives match central finite differences") {
    const double h = 1e-5;
    for (const Family& f : all_families()) {
        for (double y : responses_for(f)) {
            for (double w : interior_grid) {
                if (!f.in_domain(w - 2 * h) || !f.in_domain(w + 2 * h)) continue;
                double d1_fd = (f.loglik(y, w + h) - f.loglik(y, w - h)) / (2 * h);
                double d2_fd = (f.dloglik(y, w + h) - f.dloglik(y, w - h)) / (2 * h);
                double d3_fd = (f.d2loglik(y, w + h) - f.d2loglik(y, w - h)) / (2 * h);
                CAPTURE(f.key());
                CAPTURE(y);
                CAPTURE(w);
                CHECK(f.dloglik(y, w) == doctest::Approx(d1_fd).epsilon(1e-6));
                CHECK(f.d2loglik(y, w) == doctest::Approx(d2_fd).epsilon(1e-6));
                CHECK(f.d3loglik(w) == doctest::Approx(d3_fd).epsilon(2e-5));
            }
        }
    }
}

TEST_CASE("concavity and curvature bounds on the domain") {
    for (const Family& f : all_families()) {
        double b_u = f.curvature_bound();
        for (double t = 0.0; t <= 1.0; t += 0.01) {
            double w = f.domain_lo + t * (f.domain_hi - f.domain_lo);
            double nu = -f.d2loglik(0.0, w);
            CAPTURE(f.key());
            CAPTURE(w);
            CHECK(nu > 0.0);
            CHECK(nu <= b_u * (1.0 + 1e-12));
        }
    }
    CHECK(Family::bernoulli_logit().curvature_bound() == doctest::Approx(0.25));
    CHECK(Family::gaussian_identity(2.0).curvature_bound() == doctest::Approx(0.5));
    CHECK(Family::poisson_log().curvature_bound() == doctest::Approx(std::exp(10.0)));

    auto [lo, hi] = Family::bernoulli_logit().curvature_range(-2.0, 1.0);
    CHECK(hi == doctest::Approx(0.25));
    CHECK(lo == doctest::Approx(0.104993585403506).epsilon(1e-9));  // sigmoid'(-2)
}

TEST_CASE("score has mean zero at the true predictor (Monte Carlo)") {
    struct Case {
        Family f;
        double w;
        double score_sd;
    };
    std::vector<Case> cases = {
        {Family::bernoulli_logit(), 0.7, 0.466},
        {Family::gaussian_identity(1.0), 0.7, 1.0},
        {Family::poisson_log(), 1.2, std::sqrt(std::exp(1.2))},
    };
    const int draws = 100000;
    for (auto& c : cases) {
        Rng rng(1234);
        double sum = 0.0;
        for (int t = 0; t < draws; ++t) sum += c.f.dloglik(c.f.draw(c.w, rng), c.w);
        double mean = sum / draws;
        double tol = 4.0 * c.score_sd / std::sqrt(static_cast<double>(draws));
        CAPTURE(c.f.key());
        CHECK(std::abs(mean) < tol);
    }
}

TEST_CASE("out-of-domain evaluations use the tangent extension") {
    for (const Family& f : all_families()) {
        double hi = f.domain_hi;
        double y = responses_for(f).back();
        CHECK_FALSE(f.in_domain(hi + 1.0));
        CHECK(f.clamp(hi + 1.0) == hi);
        CHECK(f.loglik(y, hi + 3.0) ==
              doctest::Approx(f.loglik(y, hi) + 3.0 * f.dloglik(y, hi)).epsilon(1e-12));
        CHECK(f.dloglik(y, hi + 3.0) == doctest::Approx(f.dloglik(y, hi)));
        CHECK(f.d2loglik(y, hi + 3.0) == 0.0);
        double lo = f.domain_lo;
        CHECK(f.loglik(y, lo - 2.0) ==
              doctest::Approx(f.loglik(y, lo) - 2.0 * f.dloglik(y, lo)).epsilon(1e-12));
        // Concavity across the boundary: the chord from inside to outside
        // lies below the tangent at the midpoint.
        double a = hi - 0.5, b = hi + 0.5, m = 0.5 * (a + b);
        CHECK(0.5 * (f.loglik(y, a) + f.loglik(y, b)) <= f.loglik(y, m) + 1e-12);
    }
}

TEST_CASE("mean and link are inverse on the interior") {
    for (const Family& f : all_families()) {
        for (double w : interior_grid) {
            if (!f.in_domain(w)) continue;
            CHECK(f.link(f.mean(w)) == doctest::Approx(w).epsilon(1e-9));
        }
    }
    CHECK_THROWS_AS(Family::bernoulli_logit().link(0.0), DataError);
    CHECK_THROWS_AS(Family::bernoulli_logit().link(1.0), DataError);
    CHECK_THROWS_AS(Family::poisson_log().link(0.0), DataError);
}

TEST_CASE("response validation rejects out-of-family values") {
    CHECK_THROWS_AS(Family::bernoulli_logit().validate_response(0.5), DataError);
    CHECK_NOTHROW(Family::bernoulli_logit().validate_response(1.0));
    CHECK_THROWS_AS(Family::poisson_log().validate_response(-1.0), DataError);
    CHECK_THROWS_AS(Family::poisson_log().validate_response(1.5), DataError);
    CHECK_NOTHROW(Family::poisson_log().validate_response(7.0));
    CHECK_THROWS_AS(Family::gaussian_identity().validate_response(
                        std::numeric_limits<double>::quiet_NaN()),
                    DataError);
}

TEST_CASE("family keys round-trip and bad keys throw") {
    for (const Family& f : all_families()) {
        Family g = Family::from_key(f.key());
        CHECK(g.kind == f.kind);
    }
    CHECK_THROWS_AS(Family::from_key("probit"), glvm::UsageError);
    CHECK(Family::poisson_log().domain_hi == doctest::Approx(10.0));
    CHECK(Family::bernoulli_logit().domain_hi == doctest::Approx(30.0));
    CHECK(Family::bernoulli_logit().domain_lo == doctest::Approx(-30.0));
}
