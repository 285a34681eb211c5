// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "peftmix/tensor.hpp"

// Differentiable primitives. Each op records a backward closure on the active
// tape when any input requires a gradient, and raises NumericError if it would
// produce a non-finite value. Broadcasting is limited to the row-bias pattern.

namespace peftmix {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// x[m×n] + bias[n], bias added to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// x · weights[index]; differentiable in both arguments.
Tensor scale_by(const Tensor& x, const Tensor& weights, std::size_t index);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x);  // over the last axis

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean_rows(const Tensor& x);  // [m×n] -> [1×n]

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);

/// Mean over rows of −log_probs[r, labels[r]].
Tensor nll_loss(const Tensor& log_probs, std::span<const int> labels);

}  // namespace peftmix
