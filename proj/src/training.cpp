// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include <omp.h>

#include "peftmix/ctc.hpp"
#include "peftmix/errors.hpp"
#include "peftmix/ops.hpp"

namespace peftmix {

Tensor TaskModel::log_probs(const Tensor& features) const { return head_.forward(body_.forward_all_layers(features)); }

std::vector<NamedTensor> TaskModel::trainable_parameters() const {
  std::vector<NamedTensor> out = body_.trainable_parameters();
  for (auto& p : head_.named_parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

Tensor utterance_loss(const Tensor& log_probs, const Utterance& utt, TaskKind kind, int blank) {
  if (kind == TaskKind::classification) {
    const int label = utt.label;
    return nll_loss(log_probs, std::span<const int>(&label, 1));
  }
  return ctc_loss(log_probs, utt.target, blank);
}

BatchSampler::BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size, std::uint64_t seed)
    : pool_(std::move(pool)), batch_size_(batch_size), cursor_(0), rng_(seed) {
  if (pool_.empty()) throw DataError("batch sampler needs a non-empty pool");
  if (batch_size_ == 0) throw ConfigError("batch size must be positive");
  cursor_ = pool_.size();  // forces a shuffle on the first draw
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  while (batch.size() < batch_size_) {
    if (cursor_ == pool_.size()) {
      std::shuffle(pool_.begin(), pool_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(pool_[cursor_++]);
    if (batch.size() == pool_.size()) break;  // never repeat an item inside one batch
  }
  return batch;
}

double batch_backward(const Trainable& model, std::span<const Utterance> data, std::span<const std::size_t> batch,
                      TaskKind kind, int blank) {
  if (batch.empty()) throw DataError("empty batch");
  Tape tape;
  Tensor total;
  for (std::size_t idx : batch) {
    const Utterance& u = data[idx];
    const Tensor loss = utterance_loss(model.log_probs(u.features), u, kind, blank);
    total = total.defined() ? add(total, loss) : loss;
  }
  const Tensor mean = scale(total, 1.0 / static_cast<double>(batch.size()));
  tape.backward(mean);
  return mean.item();
}

double batch_loss(const Trainable& model, std::span<const Utterance> data, std::span<const std::size_t> batch,
                  TaskKind kind, int blank) {
  double total = 0.0;
  for (std::size_t idx : batch) {
    const Utterance& u = data[idx];
    total += utterance_loss(model.log_probs(u.features), u, kind, blank).item();
  }
  return total / static_cast<double>(batch.size());
}

std::vector<double> train_steps(const Trainable& model, Adam& optimizer, BatchSampler& sampler,
                                std::span<const Utterance> data, std::size_t steps, TaskKind kind, int blank,
                                std::size_t step_offset) {
  std::vector<double> losses;
  losses.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto batch = sampler.next();
    optimizer.zero_grad();
    double loss = 0.0;
    try {
      loss = batch_backward(model, data, batch, kind, blank);
      optimizer.step();
    } catch (const NumericError& e) {
      throw SearchFailure(step_offset + s, "training diverged at step " + std::to_string(step_offset + s) + ": " +
                                               e.what());
    }
    losses.push_back(loss);
  }
  optimizer.zero_grad();
  return losses;
}

std::vector<Tensor> predict_distributions(const Trainable& model, std::span<const Utterance> data) {
  if (Tape::active() != nullptr) throw ContractError("predict_distributions must run without an active tape");
  std::vector<Tensor> out(data.size());
  const auto n = static_cast<std::int64_t>(data.size());
  // Inference records no tape, so utterances are independent and each slot is
  // written by exactly one thread.
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      const Tensor lp = model.log_probs(data[static_cast<std::size_t>(i)].features);
      std::vector<double> probs(lp.numel());
      const auto v = lp.values();
      std::transform(v.begin(), v.end(), probs.begin(), [](double x) { return std::exp(x); });
      out[static_cast<std::size_t>(i)] = Tensor(lp.shape(), std::move(probs));
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (!failure.empty()) throw NumericError("prediction failed: " + failure);
  return out;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace peftmix
