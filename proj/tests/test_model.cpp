#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "glvm/data.hpp"
#include "glvm/errors.hpp"
#include "glvm/rng.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using glvm::DataError;
using glvm::DataSet;
using glvm::Family;
using glvm::ParamSet;
using glvm::Rng;

namespace {

DataSet tiny_mixed_dataset() {
    // 3 subjects x 2 items: item 0 bernoulli, item 1 gaussian; one missing cell.
    DataSet d;
    d.Y.resize(3, 2);
    d.Y << 1, 0.4,
           0, -1.1,
           1, 0.0;
    d.mask.resize(3, 2);
    d.mask << 1, 1,
              1, 1,
              1, 0;
    d.Y(2, 1) = 0.0;
    d.X.resize(3, 2);
    d.X << 0.3, -1.0,
           -0.6, 0.2,
           0.3, 0.8;
    d.families = {Family::bernoulli_logit(), Family::gaussian_identity(1.0)};
    return d;
}

ParamSet tiny_params() {
    ParamSet p;
    p.beta0 = VectorXd(2);
    p.beta0 << 0.2, -0.5;
    p.B = MatrixXd(2, 2);
    p.B << 0.7, 0.0,
           -0.3, 1.1;
    p.Gamma = MatrixXd(2, 1);
    p.Gamma << 0.9, -0.4;
    p.U = MatrixXd(3, 1);
    p.U << 0.5, -1.0, 0.25;
    return p;
}

DataSet random_gaussian_dataset(int n, int q, int p, int k, Rng& rng) {
    DataSet d;
    d.X = MatrixXd::NullaryExpr(n, p, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    d.Y = MatrixXd::NullaryExpr(n, q, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    d.mask = Eigen::ArrayXXd::Ones(n, q);
    d.families.assign(q, Family::gaussian_identity(1.0));
    (void)k;
    return d;
}

}  // namespace

TEST_CASE("joint objective equals log 2 for all-zero parameters on bernoulli data") {
    DataSet d;
    d.Y.resize(2, 2);
    d.Y << 1, 0, 0, 1;
    d.mask = Eigen::ArrayXXd::Ones(2, 2);
    d.X = MatrixXd::Zero(2, 0);
    d.families = {Family::bernoulli_logit(), Family::bernoulli_logit()};
    ParamSet p = ParamSet::zeros(2, 2, 0, 1);
    CHECK(glvm::joint_objective(d, p, 0.7) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("joint objective matches a hand-summed oracle on a mixed tiny instance") {
    DataSet d = tiny_mixed_dataset();
    ParamSet p = tiny_params();

    // Independent recomputation from scalar formulas.
    auto pred = [&](int i, int j) {
        return p.beta0[j] + p.Gamma.row(j).dot(p.U.row(i)) + p.B.row(j).dot(d.X.row(i));
    };
    double total = 0.0;
    for (int i = 0; i < 3; ++i) {
        double w0 = pred(i, 0);
        total += d.Y(i, 0) * w0 - std::log(1.0 + std::exp(w0));
    }
    for (int i = 0; i < 2; ++i) {
        double w1 = pred(i, 1);
        double r = d.Y(i, 1) - w1;
        total += -0.5 * r * r;
    }
    const double lambda = 0.3;
    double expected = -total / 6.0 + lambda * (0.7 + 0.0 + 0.3 + 1.1);

    CHECK(glvm::joint_objective(d, p, lambda) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("unobserved cells do not contribute to the objective") {
    DataSet d = tiny_mixed_dataset();
    ParamSet p = tiny_params();
    double before = glvm::joint_objective(d, p, 0.3);
    d.Y(2, 1) = 123.0;  // masked cell
    CHECK(glvm::joint_objective(d, p, 0.3) == before);
}

TEST_CASE("linear predictor is linear in each parameter block") {
    DataSet d = tiny_mixed_dataset();
    ParamSet p = tiny_params();
    MatrixXd base = glvm::linear_predictor(d, p);

    ParamSet p2 = p;
    p2.beta0[1] += 0.75;
    MatrixXd shifted = glvm::linear_predictor(d, p2);
    CHECK((shifted.col(1).array() - base.col(1).array() - 0.75).abs().maxCoeff() < 1e-14);
    CHECK((shifted.col(0) - base.col(0)).norm() == 0.0);

    ParamSet p3 = p;
    p3.B(0, 1) += 2.0;
    MatrixXd shifted3 = glvm::linear_predictor(d, p3);
    for (int i = 0; i < 3; ++i)
        CHECK(shifted3(i, 0) - base(i, 0) == doctest::Approx(2.0 * d.X(i, 1)).epsilon(1e-14));
}

TEST_CASE("latent rescaling Gamma -> a Gamma, U -> U / a leaves the objective unchanged") {
    DataSet d = tiny_mixed_dataset();
    ParamSet p = tiny_params();
    double base = glvm::joint_objective(d, p, 0.3);
    for (double a : {2.0, -0.5, 7.3}) {
        ParamSet p2 = p;
        p2.Gamma *= a;
        p2.U /= a;
        CHECK(glvm::joint_objective(d, p2, 0.3) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("replacing one block by its exact minimizer never increases the objective") {
    Rng rng(77);
    DataSet d = random_gaussian_dataset(12, 5, 3, 2, rng);
    ParamSet p;
    p.beta0 = VectorXd::NullaryExpr(5, [&](Eigen::Index) { return 0.3 * rng.normal(); });
    p.B = MatrixXd::NullaryExpr(5, 3, [&](Eigen::Index, Eigen::Index) { return 0.3 * rng.normal(); });
    p.Gamma = MatrixXd::NullaryExpr(5, 2, [&](Eigen::Index, Eigen::Index) { return 0.3 * rng.normal(); });
    p.U = MatrixXd::NullaryExpr(12, 2, [&](Eigen::Index, Eigen::Index) { return 0.3 * rng.normal(); });
    double base = glvm::joint_objective(d, p, 0.0);

    // Gaussian with identity link and no penalty: each block minimizer is a
    // least-squares solve against the residual of the other blocks.
    SUBCASE("latent scores") {
        ParamSet p2 = p;
        MatrixXd resid = d.Y - p.beta0.transpose().replicate(12, 1) - d.X * p.B.transpose();
        for (int i = 0; i < 12; ++i)
            p2.U.row(i) =
                p.Gamma.colPivHouseholderQr().solve(resid.row(i).transpose()).transpose();
        CHECK(glvm::joint_objective(d, p2, 0.0) <= base + 1e-12);
    }
    SUBCASE("one item's effects") {
        ParamSet p2 = p;
        MatrixXd resid = d.Y - p.beta0.transpose().replicate(12, 1) - p.U * p.Gamma.transpose();
        p2.B.row(1) = d.X.colPivHouseholderQr().solve(resid.col(1)).transpose();
        CHECK(glvm::joint_objective(d, p2, 0.0) <= base + 1e-12);
    }
    SUBCASE("intercepts") {
        ParamSet p2 = p;
        MatrixXd resid = d.Y - d.X * p.B.transpose() - p.U * p.Gamma.transpose();
        p2.beta0 = resid.colwise().mean().transpose();
        CHECK(glvm::joint_objective(d, p2, 0.0) <= base + 1e-12);
    }
}

TEST_CASE("dimension mismatches are reported by axis") {
    DataSet d = tiny_mixed_dataset();
    ParamSet p = tiny_params();
    SUBCASE("intercepts") {
        p.beta0 = VectorXd::Zero(3);
        CHECK_THROWS_WITH_AS(glvm::linear_predictor(d, p), "intercept length != item count",
                             DataError);
    }
    SUBCASE("effects") {
        p.B = MatrixXd::Zero(2, 5);
        CHECK_THROWS_WITH_AS(glvm::linear_predictor(d, p),
                             "effect matrix cols != covariate count", DataError);
    }
    SUBCASE("scores") {
        p.U = MatrixXd::Zero(4, 1);
        CHECK_THROWS_WITH_AS(glvm::linear_predictor(d, p), "score matrix rows != subject count",
                             DataError);
    }
}

TEST_CASE("dataset validation catches structural problems") {
    DataSet d = tiny_mixed_dataset();
    CHECK_NOTHROW(d.validate());
    SUBCASE("empty item") {
        d.mask.col(1) = 0.0;
        CHECK_THROWS_AS(d.validate(), DataError);
    }
    SUBCASE("empty subject") {
        d.mask.row(0) = 0.0;
        CHECK_THROWS_AS(d.validate(), DataError);
    }
    SUBCASE("fractional mask") {
        d.mask(0, 0) = 0.5;
        CHECK_THROWS_AS(d.validate(), DataError);
    }
    SUBCASE("invalid response for family") {
        d.Y(0, 0) = 0.25;
        CHECK_THROWS_AS(d.validate(), DataError);
    }
    SUBCASE("constant covariate") {
        d.X.col(0).setConstant(1.0);
        CHECK_THROWS_AS(d.validate(), DataError);
    }
    SUBCASE("non-finite covariate") {
        d.X(1, 1) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(d.validate(), DataError);
    }
}
