#include <benchmark/benchmark.h>

#include "glvm/family.hpp"
#include "glvm/fit.hpp"
#include "glvm/rng.hpp"

namespace {

struct ItemInstance {
    glvm::VectorXd y;
    glvm::ArrayXd mask;
    glvm::MatrixXd X;
    glvm::MatrixXd U;
    glvm::Family family = glvm::Family::bernoulli_logit();
};

ItemInstance make_item(Eigen::Index n, Eigen::Index p, Eigen::Index k) {
    glvm::Rng rng(42);
    ItemInstance inst;
    inst.X.resize(n, p);
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < n; ++i) inst.X(i, j) = rng.normal();
    inst.U.resize(n, k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < n; ++i) inst.U(i, j) = rng.normal();
    inst.mask = glvm::ArrayXd::Ones(n);
    inst.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double w = 0.3 * inst.X(i, 0) + 0.5 * inst.U(i, 0);
        inst.y[i] = inst.family.draw(w, rng);
    }
    return inst;
}

void bm_fit_item(benchmark::State& state) {
    auto n = static_cast<Eigen::Index>(state.range(0));
    ItemInstance inst = make_item(n, 80, 3);
    glvm::FitConfig cfg;
    int m1 = cfg.resolved_m1(n);
    for (auto _ : state) {
        auto fit = glvm::fit_item(inst.y, inst.mask, inst.X, inst.U, inst.family, 0.05, m1,
                                  glvm::StepRule::Lipschitz);
        benchmark::DoNotOptimize(fit.beta);
    }
}
BENCHMARK(bm_fit_item)->Arg(200)->Arg(1000);

void bm_update_latent(benchmark::State& state) {
    auto q = static_cast<Eigen::Index>(state.range(0));
    glvm::Rng rng(9);
    glvm::MatrixXd gamma(q, 3);
    for (Eigen::Index j = 0; j < q; ++j)
        for (Eigen::Index k = 0; k < 3; ++k) gamma(j, k) = rng.normal();
    glvm::VectorXd offset = glvm::VectorXd::Zero(q);
    std::vector<glvm::Family> families(q, glvm::Family::bernoulli_logit());
    glvm::VectorXd u_true(3);
    u_true << 0.5, -0.3, 0.8;
    glvm::VectorXd y(q);
    for (Eigen::Index j = 0; j < q; ++j) y[j] = families[j].draw(gamma.row(j).dot(u_true), rng);
    glvm::ArrayXd mask = glvm::ArrayXd::Ones(q);
    glvm::VectorXd u0 = glvm::VectorXd::Zero(3);
    glvm::FitConfig cfg;
    int m2 = cfg.resolved_m2(300, q);
    for (auto _ : state) {
        auto u = glvm::update_latent(y, mask, offset, gamma, families, u0, m2, 10.0);
        benchmark::DoNotOptimize(u);
    }
}
BENCHMARK(bm_update_latent)->Arg(60)->Arg(500);

}  // namespace
