// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "peftmix/errors.hpp"

namespace peftmix {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t frames = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++frames;
  return frames;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target, int blank) {
  if (log_probs.dim() != 2) throw DimensionError("ctc_loss expects log_probs[T×C]");
  const std::size_t frames = log_probs.rows();
  const std::size_t classes = log_probs.cols();
  if (blank < 0 || static_cast<std::size_t>(blank) >= classes) {
    throw ContractError("ctc_loss: blank index " + std::to_string(blank) + " outside class range");
  }
  for (int tok : target) {
    if (tok == blank) throw ContractError("ctc_loss: target contains the blank token");
    if (tok < 0 || static_cast<std::size_t>(tok) >= classes) {
      throw DataError("ctc_loss: target token " + std::to_string(tok) + " outside class range");
    }
  }
  if (frames < ctc_min_frames(target)) {
    throw InfeasibleTargetError("ctc_loss: target of length " + std::to_string(target.size()) + " needs " +
                                std::to_string(ctc_min_frames(target)) + " frames, got " +
                                std::to_string(frames));
  }

  // Blank-augmented label sequence: blank, y1, blank, y2, ..., blank.
  const std::size_t states = 2 * target.size() + 1;
  std::vector<int> ext(states, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];

  const auto lp = log_probs.values();
  auto emit = [&](std::size_t t, std::size_t s) { return lp[t * classes + static_cast<std::size_t>(ext[s])]; };
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(frames * states, kNegInf);
  alpha[0] = emit(0, 0);
  if (states > 1) alpha[1] = emit(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      double acc = alpha[(t - 1) * states + s];
      if (s >= 1) acc = log_add(acc, alpha[(t - 1) * states + s - 1]);
      if (can_skip(s)) acc = log_add(acc, alpha[(t - 1) * states + s - 2]);
      if (acc != kNegInf) alpha[t * states + s] = acc + emit(t, s);
    }
  }
  double log_likelihood = alpha[(frames - 1) * states + states - 1];
  if (states > 1) log_likelihood = log_add(log_likelihood, alpha[(frames - 1) * states + states - 2]);
  if (!std::isfinite(log_likelihood)) throw NumericError("ctc_loss: target has zero probability");

  Tensor result({1}, {-log_likelihood});
  const bool track = Tape::active() && log_probs.requires_grad();
  if (!track) return result;
  result.node()->requires_grad = true;
  result.node()->leaf = false;

  std::vector<double> beta(frames * states, kNegInf);
  beta[(frames - 1) * states + states - 1] = emit(frames - 1, states - 1);
  if (states > 1) beta[(frames - 1) * states + states - 2] = emit(frames - 1, states - 2);
  for (std::size_t t = frames - 1; t-- > 0;) {
    for (std::size_t s = 0; s < states; ++s) {
      double acc = beta[(t + 1) * states + s];
      if (s + 1 < states) acc = log_add(acc, beta[(t + 1) * states + s + 1]);
      if (s + 2 < states && can_skip(s + 2)) acc = log_add(acc, beta[(t + 1) * states + s + 2]);
      if (acc != kNegInf) beta[t * states + s] = acc + emit(t, s);
    }
  }

  // d(−log p)/d lp[t,k] = −Σ_{s: ext[s]=k} exp(α_t(s) + β_t(s) − lp[t,k] − log p)
  std::vector<double> dlp(frames * classes, 0.0);
  std::vector<double> occupancy(classes);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kNegInf);
    for (std::size_t s = 0; s < states; ++s) {
      const double ab = alpha[t * states + s] + beta[t * states + s];
      if (ab == kNegInf) continue;
      auto& slot = occupancy[static_cast<std::size_t>(ext[s])];
      slot = log_add(slot, ab);
    }
    for (std::size_t k = 0; k < classes; ++k) {
      if (occupancy[k] == kNegInf) continue;
      dlp[t * classes + k] = -std::exp(occupancy[k] - lp[t * classes + k] - log_likelihood);
    }
  }

  Tape::active()->record([on = result.node(), ln = log_probs.node(), dlp = std::move(dlp)] {
    if (on->grad.empty()) return;
    auto g = ln->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[0] * dlp[i];
  });
  return result;
}

}  // namespace peftmix
