// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "peftmix/backbone.hpp"
#include "peftmix/data.hpp"
#include "peftmix/optim.hpp"
#include "peftmix/peft.hpp"

namespace peftmix {

/// Anything that maps utterance features to log-probabilities and owns a set
/// of trainable tensors.
class Trainable {
 public:
  virtual ~Trainable() = default;
  virtual Tensor log_probs(const Tensor& features) const = 0;
  virtual std::vector<NamedTensor> trainable_parameters() const = 0;
};

/// PEFT-equipped backbone plus downstream head.
class TaskModel final : public Trainable {
 public:
  TaskModel(PeftModel body, TaskHead head) : body_(std::move(body)), head_(std::move(head)) {}

  Tensor log_probs(const Tensor& features) const override;
  std::vector<NamedTensor> trainable_parameters() const override;

  const PeftModel& body() const noexcept { return body_; }
  PeftModel& mutable_body() noexcept { return body_; }
  const TaskHead& head() const noexcept { return head_; }

 private:
  PeftModel body_;
  TaskHead head_;
};

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named);

Tensor utterance_loss(const Tensor& log_probs, const Utterance& utt, TaskKind kind, int blank);

/// Draws batches from a pool of indices: the pool is reshuffled with a seeded
/// generator at the start of every pass and consumed in order.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();

 private:
  std::vector<std::size_t> pool_;
  std::size_t batch_size_;
  std::size_t cursor_;
  std::mt19937_64 rng_;
};

/// Forward + backward for one batch on a fresh tape. Gradients accumulate into
/// whatever leaves require them; the caller decides which optimizer steps.
/// Returns the mean loss. Non-finite losses raise NumericError.
double batch_backward(const Trainable& model, std::span<const Utterance> data, std::span<const std::size_t> batch,
                      TaskKind kind, int blank);

/// Mean loss over a batch without recording a tape.
double batch_loss(const Trainable& model, std::span<const Utterance> data, std::span<const std::size_t> batch,
                  TaskKind kind, int blank);

/// Plain training: `steps` optimizer steps on batches from `sampler`. Returns
/// the per-step losses. Divergence raises SearchFailure with the step index
/// (offset by `step_offset`).
std::vector<double> train_steps(const Trainable& model, Adam& optimizer, BatchSampler& sampler,
                                std::span<const Utterance> data, std::size_t steps, TaskKind kind, int blank,
                                std::size_t step_offset = 0);

/// Per-utterance output distributions (exp of the model's log-probabilities),
/// evaluated in parallel over utterances.
std::vector<Tensor> predict_distributions(const Trainable& model, std::span<const Utterance> data);

std::vector<std::size_t> iota_indices(std::size_t n);

}  // namespace peftmix
