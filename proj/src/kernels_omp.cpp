// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/kernels.hpp"

#include <cmath>
#include <cstdint>

#include <omp.h>

// Loop bodies mirror kernels_serial.cpp exactly; only the row loop is shared
// out. Signed induction variables keep older OpenMP runtimes happy.

namespace peftmix::kernels {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = cp + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ap[i * k + p];
      const double* brow = bp + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = cp + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double api = ap[p * m + i];
      const double* brow = bp + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = ap + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = bp + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      cp[i * n + j] += acc;
    }
  }
}

void tv_cost_matrix(std::span<const double> a, std::span<const double> b, std::span<double> out,
                    std::size_t rows_a, std::size_t rows_b, std::size_t classes) {
  const auto rows = static_cast<std::int64_t>(rows_a);
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
#pragma omp parallel for schedule(static) if (rows_a * rows_b * classes >= kParallelThreshold)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = ap + i * classes;
    for (std::size_t j = 0; j < rows_b; ++j) {
      const double* brow = bp + j * classes;
      double acc = 0.0;
      for (std::size_t c = 0; c < classes; ++c) acc += std::fabs(arow[c] - brow[c]);
      op[i * rows_b + j] = 0.5 * acc;
    }
  }
}

}  // namespace peftmix::kernels
