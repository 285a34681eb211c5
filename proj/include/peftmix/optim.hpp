// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "peftmix/tensor.hpp"

namespace peftmix {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over a fixed parameter list. Parameters with no
/// accumulated gradient are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  void zero_grad();
  void step();

  std::size_t steps() const noexcept { return steps_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

}  // namespace peftmix
