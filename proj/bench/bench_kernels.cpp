#include "fairflow/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace fairflow;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    Matrix m(rows, cols);
    for (auto& x : m.data()) x = unit(rng);
    return m;
}

template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&, bool)>
void bm_gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_matrix(n, n, 1);
    const auto b = random_matrix(n, n, 2);
    Matrix c(n, n);
    for (auto _ : state) {
        Gemm(a, b, c, false);
        benchmark::DoNotOptimize(c.data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <std::size_t (*Argmax)(const Matrix&, std::span<const double>, std::span<const double>)>
void bm_cosine_argmax(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const std::size_t dim = 64;
    const auto table = random_matrix(rows, dim, 3);
    std::vector<double> norms(rows);
    for (std::size_t i = 0; i < rows; ++i) norms[i] = kernels::norm(table.row(i));
    const auto query = random_matrix(1, dim, 4);
    for (auto _ : state) benchmark::DoNotOptimize(Argmax(table, norms, query.row(0)));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}

}  // namespace

BENCHMARK(bm_gemm<kernels::serial::gemm>)->Name("gemm/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<kernels::omp::gemm>)->Name("gemm/omp")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_gemm<kernels::serial::gemm_nt>)->Name("gemm_nt/serial")->Arg(128);
BENCHMARK(bm_gemm<kernels::omp::gemm_nt>)->Name("gemm_nt/omp")->Arg(128);
BENCHMARK(bm_cosine_argmax<kernels::serial::cosine_argmax>)->Name("cosine_argmax/serial")->Arg(1000)->Arg(20000);
BENCHMARK(bm_cosine_argmax<kernels::omp::cosine_argmax>)->Name("cosine_argmax/omp")->Arg(1000)->Arg(20000);

BENCHMARK_MAIN();
