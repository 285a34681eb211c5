// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "peftmix/tensor.hpp"

namespace peftmix {

/// Fewest frames that can emit `target`: one per token plus one blank between
/// each pair of equal neighbours.
std::size_t ctc_min_frames(std::span<const int> target);

/// Negative log-likelihood of `target` under frame log-probabilities
/// log_probs[T×C], summed over every alignment that collapses to it.
///
/// The forward and backward recursions run in the log domain. The gradient is
/// taken with respect to log_probs as free inputs, so the op composes with
/// log_softmax upstream. Throws InfeasibleTargetError when T is too short.
Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target, int blank);

}  // namespace peftmix
