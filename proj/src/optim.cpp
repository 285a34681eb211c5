// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/optim.hpp"

#include <cmath>

#include "peftmix/errors.hpp"

namespace peftmix {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0) || !std::isfinite(config_.lr)) throw ConfigError("learning rate must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const bool has_grad = p.has_grad();
    const auto g = p.grad();
    auto values = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double gj = has_grad ? g[j] : 0.0;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      const double update = config_.lr * (m[j] / bias1) / (std::sqrt(v[j] / bias2) + config_.eps);
      values[j] -= update;
      if (!std::isfinite(values[j])) throw NumericError("optimizer step produced a non-finite parameter");
    }
  }
}

}  // namespace peftmix
