// Serial reference vs OpenMP kernels at shapes the model actually runs.

#include <benchmark/benchmark.h>

#include <vector>

#include "ddvqa/kernels.hpp"
#include "ddvqa/rng.hpp"

namespace k = ddvqa::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  ddvqa::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = ddvqa::uniform01(rng) - 0.5;
  return v;
}

template <auto Kernel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const k::MatDims d{n, n, n};
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> out(n * n);
  for (auto _ : state) {
    Kernel(a, b, out, d);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <auto Kernel>
void BM_softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), cols = rows;
  const auto x = random_vec(rows * cols, 3);
  std::vector<double> out(rows * cols);
  for (auto _ : state) {
    Kernel(x, out, rows, cols);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void BM_layer_norm(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), cols = 128;
  const auto x = random_vec(rows * cols, 4);
  const std::vector<double> gain(cols, 1.0), bias(cols, 0.0);
  std::vector<double> out(rows * cols), mean(rows), rstd(rows);
  for (auto _ : state) {
    Kernel(x, gain, bias, 1e-5, out, mean, rstd, rows, cols);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_matmul<k::serial::matmul_acc>)->Name("matmul/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul<k::omp::matmul_acc>)->Name("matmul/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul<k::serial::matmul_nt_acc>)->Name("matmul_nt/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul<k::omp::matmul_nt_acc>)->Name("matmul_nt/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul<k::serial::matmul_tn_acc>)->Name("matmul_tn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_matmul<k::omp::matmul_tn_acc>)->Name("matmul_tn/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_softmax<k::serial::softmax_rows>)->Name("softmax/serial")->Range(64, 512);
BENCHMARK(BM_softmax<k::omp::softmax_rows>)->Name("softmax/omp")->Range(64, 512);
BENCHMARK(BM_layer_norm<k::serial::layer_norm_rows>)->Name("layer_norm/serial")->Range(64, 4096);
BENCHMARK(BM_layer_norm<k::omp::layer_norm_rows>)->Name("layer_norm/omp")->Range(64, 4096);

BENCHMARK_MAIN();
