#include <benchmark/benchmark.h>

#include "glvm/linalg.hpp"
#include "glvm/rng.hpp"

namespace {

glvm::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    glvm::Rng rng(seed);
    glvm::MatrixXd a(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) a(i, j) = rng.normal();
    return a;
}

void bm_truncated_svd(benchmark::State& state) {
    auto n = static_cast<Eigen::Index>(state.range(0));
    glvm::MatrixXd a = random_matrix(n, n / 2, 7);
    for (auto _ : state) {
        auto svd = glvm::truncated_svd(a, 3);
        benchmark::DoNotOptimize(svd.S);
    }
}
BENCHMARK(bm_truncated_svd)->Arg(200)->Arg(600);

void bm_design_sigma(benchmark::State& state) {
    auto n = static_cast<Eigen::Index>(state.range(0));
    glvm::MatrixXd x = random_matrix(n, 80, 11);
    glvm::MatrixXd u = random_matrix(n, 3, 13);
    glvm::ArrayXd mask = glvm::ArrayXd::Ones(n);
    for (auto _ : state) {
        double s = glvm::design_sigma_max_sq(x, u, mask);
        benchmark::DoNotOptimize(s);
    }
}
BENCHMARK(bm_design_sigma)->Arg(300)->Arg(1000);

}  // namespace
