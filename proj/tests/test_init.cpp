#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "glvm/errors.hpp"
#include "glvm/init.hpp"
#include "glvm/rng.hpp"

using glvm::ArrayXXd;
using glvm::DataSet;
using glvm::Family;
using glvm::MatrixXd;
using glvm::ParamSet;
using glvm::Rng;
using glvm::VectorXd;

namespace {

DataSet gaussian_data(const MatrixXd& y) {
    DataSet d;
    d.Y = y;
    d.mask = ArrayXXd::Ones(y.rows(), y.cols());
    d.X = MatrixXd::Zero(y.rows(), 1);
    for (Eigen::Index i = 0; i < y.rows(); ++i) d.X(i, 0) = i % 2 == 0 ? 1.0 : -1.0;
    d.families.assign(y.cols(), Family::gaussian_identity());
    return d;
}

/// Least-squares alignment error min_G |U_hat G^T - U_star|_F / sqrt(n).
double align_error(const MatrixXd& u_hat, const MatrixXd& u_star) {
    MatrixXd gt = u_hat.colPivHouseholderQr().solve(u_star);
    return (u_hat * gt - u_star).norm() / std::sqrt(static_cast<double>(u_hat.rows()));
}

double golden_min(const std::function<double(double)>& f, double lo, double hi, double tol) {
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    return 0.5 * (a + b);
}

/// Exact box-constrained 2-parameter bernoulli fit of one item at fixed
/// scores: cyclic golden-section over intercept and loading. The loss is
/// jointly concave, so coordinate optima inside the box are global.
double boxed_item_min(const VectorXd& y, const VectorXd& u, double box) {
    Family fam = Family::bernoulli_logit();
    auto neg = [&](double b, double g) {
        double v = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) v -= fam.loglik(y[i], b + g * u[i]);
        return v;
    };
    double b = 0.0, g = 0.0;
    for (int round = 0; round < 30; ++round) {
        double nb = golden_min([&](double t) { return neg(t, g); }, -box, box, 1e-7);
        double ng = golden_min([&](double t) { return neg(nb, t); }, -box, box, 1e-7);
        double moved = std::abs(nb - b) + std::abs(ng - g);
        b = nb;
        g = ng;
        if (moved < 1e-8) break;
    }
    return neg(b, g);
}

/// Covariate-free objective with items profiled out exactly at fixed scores.
double profiled_objective(const DataSet& data, const VectorXd& u, double box) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < data.q(); ++j) total += boxed_item_min(data.Y.col(j), u, box);
    return total / static_cast<double>(data.n() * data.q());
}

/// Global optimum of the K=1 box-constrained covariate-free problem by a
/// dense score grid with exact alternating polish from the best grid points.
double grid_polish_optimum(const DataSet& data, double box) {
    const Eigen::Index n = data.n();
    REQUIRE(n == 4);
    const std::vector<double> pts = {-box, -0.6 * box, -0.25 * box, 0.0, 0.25 * box, 0.6 * box, box};
    std::vector<std::pair<double, VectorXd>> ranked;
    VectorXd u(4);
    for (double a : pts)
        for (double b : pts)
            for (double c : pts)
                for (double e : pts) {
                    u << a, b, c, e;
                    ranked.emplace_back(profiled_objective(data, u, box), u);
                }
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });

    double best = ranked.front().first;
    for (int s = 0; s < 4; ++s) {
        VectorXd cur = ranked[s].second;
        for (int round = 0; round < 40; ++round) {
            double moved = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                double next = golden_min(
                    [&](double t) {
                        VectorXd v = cur;
                        v[i] = t;
                        return profiled_objective(data, v, box);
                    },
                    -box, box, 1e-6);
                moved = std::max(moved, std::abs(next - cur[i]));
                cur[i] = next;
            }
            if (moved < 1e-7) break;
        }
        best = std::min(best, profiled_objective(data, cur, box));
    }
    return best;
}

}  // namespace

TEST_CASE("spectral start reproduces noiseless rank-1 gaussian data") {
    Rng rng(21);
    const int n = 40, q = 15;
    VectorXd u(n), g(q);
    for (int i = 0; i < n; ++i) u[i] = rng.normal();
    u.array() -= u.mean();
    for (int j = 0; j < q; ++j) g[j] = 0.5 * rng.normal();
    VectorXd intercepts(q);
    for (int j = 0; j < q; ++j) intercepts[j] = 0.3 * rng.normal();
    MatrixXd y = u * g.transpose();
    y.rowwise() += intercepts.transpose();

    DataSet d = gaussian_data(y);
    ParamSet s = glvm::spectral_init(d, 1);
    CHECK((s.beta0 - intercepts).lpNorm<Eigen::Infinity>() < 1e-10);
    MatrixXd rec = s.U * s.Gamma.transpose();
    MatrixXd truth = u * g.transpose();
    CHECK((rec - truth).norm() / truth.norm() < 1e-8);
    CHECK(s.B.isZero(0.0));
}

TEST_CASE("constant columns yield zero loadings and intercept-only reconstruction") {
    MatrixXd y = MatrixXd::Zero(12, 5);
    y.col(0).setConstant(1.5);
    y.col(1).setConstant(-0.25);
    DataSet d = gaussian_data(y);
    ParamSet s = glvm::spectral_init(d, 2);
    CHECK(s.Gamma.isZero(1e-12));
    CHECK(s.beta0[0] == doctest::Approx(1.5));
    CHECK(s.beta0[2] == doctest::Approx(0.0));

    SUBCASE("a single constant column after centering gets a zero row") {
        Rng rng(22);
        MatrixXd y2(30, 4);
        for (int i = 0; i < 30; ++i)
            for (int j = 0; j < 4; ++j) y2(i, j) = rng.normal();
        y2.col(2).setConstant(0.75);
        DataSet d2 = gaussian_data(y2);
        ParamSet s2 = glvm::spectral_init(d2, 2);
        CHECK(s2.Gamma.row(2).isZero(1e-12));
        CHECK(!s2.Gamma.row(0).isZero(1e-6));
    }
}

TEST_CASE("spectral start rejects out-of-range ranks") {
    MatrixXd y = MatrixXd::Zero(6, 4);
    DataSet d = gaussian_data(y);
    CHECK_THROWS_AS(glvm::spectral_init(d, 0), glvm::DataError);
    CHECK_THROWS_AS(glvm::spectral_init(d, 4), glvm::DataError);
    CHECK_THROWS_AS(glvm::spectral_init(d, 9), glvm::DataError);
}

TEST_CASE("covariate-free refinement descends and respects the box") {
    Rng rng(23);
    const int n = 25, q = 8;
    MatrixXd y(n, q);
    VectorXd u(n);
    for (int i = 0; i < n; ++i) u[i] = rng.normal();
    for (int j = 0; j < q; ++j) {
        double g = rng.normal();
        for (int i = 0; i < n; ++i) y(i, j) = rng.bernoulli(1.0 / (1.0 + std::exp(-g * u[i])));
    }
    DataSet d = gaussian_data(y);
    d.families.assign(q, Family::bernoulli_logit());

    glvm::InitConfig cfg;
    cfg.threads = 1;
    ParamSet start = glvm::spectral_init(d, 1, cfg);
    ParamSet refined = glvm::refine_covfree(d, start, cfg);
    CHECK(glvm::covfree_objective(d, refined) <= glvm::covfree_objective(d, start) + 1e-10);
    CHECK(refined.U.cwiseAbs().maxCoeff() <= cfg.box_D + 1e-12);
    CHECK(refined.Gamma.cwiseAbs().maxCoeff() <= cfg.box_D + 1e-12);
    CHECK(refined.beta0.cwiseAbs().maxCoeff() <= cfg.box_D + 1e-12);

    SUBCASE("zero rounds return the start unchanged") {
        glvm::InitConfig none = cfg;
        none.refine_steps = 0;
        ParamSet same = glvm::refine_covfree(d, start, none);
        CHECK(same.beta0 == start.beta0);
        CHECK(same.Gamma == start.Gamma);
        CHECK(same.U == start.U);
    }
}

TEST_CASE("refinement reaches the global optimum of a tiny bernoulli problem") {
    // item response patterns chosen to conflict, so no score ordering
    // separates the data and the optimum stays interior
    MatrixXd y(4, 4);
    y << 1, 0, 1, 0,  //
        0, 1, 1, 0,   //
        1, 1, 0, 0,   //
        0, 0, 1, 1;
    DataSet d = gaussian_data(y);
    d.families.assign(4, Family::bernoulli_logit());

    const double box = 2.0;
    double oracle = grid_polish_optimum(d, box);

    glvm::InitConfig cfg;
    cfg.threads = 1;
    cfg.box_D = box;
    cfg.refine_steps = 200;
    ParamSet refined = glvm::refine_covfree(d, glvm::spectral_init(d, 1, cfg), cfg);
    double reached = glvm::covfree_objective(d, refined);
    CHECK(reached <= oracle + 1e-4);
    CHECK(reached >= oracle - 1e-4);
}

TEST_CASE("anchor start with every item as anchor matches the default pipeline") {
    Rng rng(24);
    const int n = 30, q = 8;
    MatrixXd y(n, q);
    VectorXd u(n);
    for (int i = 0; i < n; ++i) u[i] = rng.normal();
    for (int j = 0; j < q; ++j) {
        double g = 0.8 * rng.normal();
        for (int i = 0; i < n; ++i) y(i, j) = rng.bernoulli(1.0 / (1.0 + std::exp(-g * u[i])));
    }
    DataSet d = gaussian_data(y);
    d.families.assign(q, Family::bernoulli_logit());
    d.X = MatrixXd::Zero(n, 2);
    for (int i = 0; i < n; ++i) {
        d.X(i, 0) = rng.normal();
        d.X(i, 1) = rng.normal();
    }

    glvm::InitConfig cfg;
    cfg.threads = 1;
    std::vector<int> all(q);
    for (int j = 0; j < q; ++j) all[j] = j;
    ParamSet anchored = glvm::anchor_init(d, 1, all, 0.1, cfg);
    ParamSet direct = glvm::refine_covfree(d, glvm::spectral_init(d, 1, cfg), cfg);
    CHECK((anchored.U - direct.U).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((anchored.beta0 - direct.beta0).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((anchored.Gamma - direct.Gamma).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(anchored.B.isZero(0.0));
}

TEST_CASE("anchor start validation") {
    DataSet d = gaussian_data(MatrixXd::Zero(10, 5));
    CHECK_THROWS_WITH_AS(glvm::anchor_init(d, 2, {}, 0.1), "anchor set is empty",
                         glvm::DataError);
    CHECK_THROWS_AS(glvm::anchor_init(d, 2, {1, 1, 2}, 0.1), glvm::DataError);
    CHECK_THROWS_AS(glvm::anchor_init(d, 2, {1, 7}, 0.1), glvm::DataError);
    CHECK_THROWS_WITH_AS(glvm::anchor_init(d, 3, {0, 1}, 0.1),
                         "anchor set smaller than the latent dimension", glvm::DataError);
    CHECK_THROWS_WITH_AS(glvm::anchor_init(d, 2, {0, 1}, 0.1),
                         "anchor set must exceed the latent dimension", glvm::DataError);
}

TEST_CASE("anchor start ignores covariate contamination of non-anchor items") {
    // items 0..3 carry covariate effects; items 4..9 do not and serve as
    // anchors. Scores recovered from anchors alone should align at least as
    // well as scores recovered from all items, median over replications.
    const int n = 60, q = 10;
    std::vector<double> full_err, anchor_err;
    for (int rep = 0; rep < 5; ++rep) {
        Rng rng(100 + rep);
        MatrixXd u(n, 1), x(n, 1);
        for (int i = 0; i < n; ++i) {
            u(i, 0) = rng.normal();
            x(i, 0) = rng.normal();
        }
        DataSet d;
        d.X = x;
        d.mask = ArrayXXd::Ones(n, q);
        d.families.assign(q, Family::bernoulli_logit());
        d.Y.resize(n, q);
        for (int j = 0; j < q; ++j) {
            double g = j % 2 == 0 ? 1.0 : -1.0;
            double b = j < 4 ? 2.5 : 0.0;
            for (int i = 0; i < n; ++i) {
                double w = g * u(i, 0) + b * x(i, 0);
                d.Y(i, j) = rng.bernoulli(1.0 / (1.0 + std::exp(-w)));
            }
        }
        glvm::InitConfig cfg;
        cfg.threads = 1;
        std::vector<int> anchors = {4, 5, 6, 7, 8, 9};
        ParamSet a = glvm::anchor_init(d, 1, anchors, 0.2, cfg);
        ParamSet f = glvm::refine_covfree(d, glvm::spectral_init(d, 1, cfg), cfg);
        anchor_err.push_back(align_error(a.U, u));
        full_err.push_back(align_error(f.U, u));
    }
    std::sort(anchor_err.begin(), anchor_err.end());
    std::sort(full_err.begin(), full_err.end());
    CHECK(anchor_err[2] <= full_err[2] + 0.05);
}

TEST_CASE("score recovery improves with scale") {
    auto run = [](int n, int q, std::uint64_t seed) {
        Rng rng(seed);
        MatrixXd u(n, 1);
        for (int i = 0; i < n; ++i) u(i, 0) = rng.normal();
        DataSet d;
        d.X = MatrixXd::Zero(n, 1);
        for (int i = 0; i < n; ++i) d.X(i, 0) = rng.normal();
        d.mask = ArrayXXd::Ones(n, q);
        d.families.assign(q, Family::bernoulli_logit());
        d.Y.resize(n, q);
        for (int j = 0; j < q; ++j) {
            double g = j % 2 == 0 ? 1.2 : -0.8;
            for (int i = 0; i < n; ++i)
                d.Y(i, j) = rng.bernoulli(1.0 / (1.0 + std::exp(-g * u(i, 0))));
        }
        glvm::InitConfig cfg;
        cfg.threads = 1;
        ParamSet s = glvm::refine_covfree(d, glvm::spectral_init(d, 1, cfg), cfg);
        return align_error(s.U, u);
    };
    std::vector<double> small, large;
    for (int rep = 0; rep < 5; ++rep) {
        small.push_back(run(60, 60, 300 + rep));
        large.push_back(run(150, 150, 400 + rep));
    }
    std::sort(small.begin(), small.end());
    std::sort(large.begin(), large.end());
    CHECK(large[2] < small[2]);
}

TEST_CASE("poisson columns initialize to finite clipped values") {
    Rng rng(25);
    const int n = 30, q = 6;
    MatrixXd y(n, q);
    for (int j = 0; j < q; ++j)
        for (int i = 0; i < n; ++i) y(i, j) = rng.poisson(2.0);
    y.col(3).setZero();  // all-zero counts exercise the mean clip
    DataSet d = gaussian_data(y);
    d.families.assign(q, Family::poisson_log());
    ParamSet s = glvm::spectral_init(d, 2);
    CHECK(s.beta0.allFinite());
    CHECK(s.beta0[3] == doctest::Approx(std::log(0.01)));
    CHECK(s.Gamma.allFinite());
    CHECK(s.U.allFinite());
}
