// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels against their OpenMP counterparts. Thread count
// follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "peftmix/kernels.hpp"

namespace {

using namespace peftmix;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

std::vector<double> random_rows(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += v[r * cols + c] = u(rng);
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] /= s;
  }
  return v;
}

template <auto Kernel>
void gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n, 0.0);
  for (auto _ : state) {
    Kernel(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <auto Kernel>
void tv_cost(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const std::size_t classes = 32;
  const auto a = random_rows(t, classes, 3), b = random_rows(t, classes, 4);
  std::vector<double> out(t * t);
  for (auto _ : state) {
    Kernel(a, b, out, t, t, classes);
    benchmark::DoNotOptimize(out.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * t * t * classes));
}

BENCHMARK(gemm<kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<kernels::gemm_nn>)->Name("gemm_nn/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<kernels::serial::gemm_tn_acc>)->Name("gemm_tn_acc/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<kernels::gemm_tn_acc>)->Name("gemm_tn_acc/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<kernels::serial::gemm_nt_acc>)->Name("gemm_nt_acc/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(gemm<kernels::gemm_nt_acc>)->Name("gemm_nt_acc/openmp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(tv_cost<kernels::serial::tv_cost_matrix>)->Name("tv_cost/serial")->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK(tv_cost<kernels::tv_cost_matrix>)->Name("tv_cost/openmp")->RangeMultiplier(4)->Range(64, 1024);

}  // namespace

BENCHMARK_MAIN();
