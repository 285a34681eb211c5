// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

// Dense inner loops used by the autodiff core and the alignment code.
//
// Every kernel exists twice: a plain serial version in `kernels::serial`, kept
// as the reference, and an OpenMP version in `kernels`. The parallel versions
// split work over output rows only and keep the per-element accumulation order
// of the serial loops, so both produce bit-identical results. Tests rely on
// that; do not introduce parallel reductions here.

namespace peftmix::kernels {

namespace serial {

// c[m×n] = a[m×k] · b[k×n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

// c[m×n] += a[k×m]ᵀ · b[k×n]
void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);

// c[m×n] += a[m×k] · b[n×k]ᵀ
void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);

// out[i×j] = ½ Σ_c |a[i,c] − b[j,c]|   (total variation between frame distributions)
void tv_cost_matrix(std::span<const double> a, std::span<const double> b, std::span<double> out,
                    std::size_t rows_a, std::size_t rows_b, std::size_t classes);

}  // namespace serial

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);

void gemm_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n);

void tv_cost_matrix(std::span<const double> a, std::span<const double> b, std::span<double> out,
                    std::size_t rows_a, std::size_t rows_b, std::size_t classes);

/// Work (multiply-adds) below which the OpenMP kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

}  // namespace peftmix::kernels
