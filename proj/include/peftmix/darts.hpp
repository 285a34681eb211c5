// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "peftmix/backbone.hpp"
#include "peftmix/data.hpp"
#include "peftmix/peft.hpp"
#include "peftmix/training.hpp"

namespace peftmix {

enum class RetrainMode { remaining_steps, full_steps };

std::string_view retrain_mode_name(RetrainMode mode);
RetrainMode parse_retrain_mode(std::string_view name);

struct DartsConfig {
  double stage1_fraction = 0.25;
  bool first_order = true;
  std::size_t total_steps = 1000;
  RetrainMode retrain_mode = RetrainMode::remaining_steps;
  double arch_lr = 3e-3;
  double weight_lr = 1e-3;
  std::size_t batch_size = 8;
  std::uint64_t split_seed = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;
  std::vector<PeftKind> candidates{PeftKind::sequential, PeftKind::parallel, PeftKind::lora};
  AdapterConfig adapter;
  LoraConfig lora;

  void validate(const BackboneConfig& backbone) const;
  std::size_t stage1_steps() const;
  std::size_t stage2_steps() const;  // steps stage 2 will run under retrain_mode
};

/// Sampler seeds derived from the training seed. Exposed so a plain training
/// run can reproduce the exact batch order of a search.
std::uint64_t arch_sampler_seed(std::uint64_t train_seed);
std::uint64_t stage2_sampler_seed(std::uint64_t train_seed);

/// h = sum_n softmax(alpha_row)_n * outputs[n].
Tensor mixture_forward(std::span<const Tensor> outputs, const Tensor& alpha_row);

struct TrainingSplit {
  std::vector<std::size_t> weights_half;
  std::vector<std::size_t> arch_half;
};

/// Seeded shuffle of [0, n) cut into two disjoint halves; the first gets the
/// extra item when n is odd.
TrainingSplit split_training_set(std::size_t n, std::uint64_t seed);

/// Frozen backbone where every layer output is a softmax mixture over
/// candidate PEFT attachments, followed by the task head.
class MixtureModel final : public Trainable {
 public:
  static MixtureModel init(const BackboneModel& backbone, const DartsConfig& config, TaskKind kind,
                           std::size_t n_classes);

  Tensor log_probs(const Tensor& features) const override;
  /// Candidate PEFT parameters and head; alpha is excluded.
  std::vector<NamedTensor> trainable_parameters() const override;

  const Tensor& alpha() const noexcept { return alpha_; }
  std::vector<double> mixture_coefficients(std::size_t layer) const;

  const BackboneModel& backbone() const noexcept { return backbone_; }
  const TaskHead& head() const noexcept { return head_; }
  const std::vector<PeftKind>& candidates() const noexcept { return kinds_; }
  const LayerPeft& candidate(std::size_t layer, std::size_t index) const;
  std::size_t n_layers() const noexcept { return layers_.size(); }

  /// Replaces candidate `index`'s output in every layer with Gaussian noise of
  /// the given scale, redrawn on every forward pass so that nothing can fit
  /// it. Draws follow a per-model counter: reproducible for single-threaded
  /// use, which is all the search does.
  void sabotage(std::size_t index, double noise_scale, std::uint64_t seed);

 private:
  struct Sabotage {
    double scale;
    std::uint64_t seed;
    std::shared_ptr<std::atomic<std::uint64_t>> draws;
  };

  Tensor candidate_output(std::size_t layer, std::size_t index, const Tensor& x) const;

  BackboneModel backbone_;
  std::vector<PeftKind> kinds_;
  std::vector<std::vector<LayerPeft>> layers_;  // [layer][candidate]
  Tensor alpha_;                                // [n_layers×N]
  TaskHead head_;
  std::vector<std::optional<Sabotage>> sabotaged_;
};

enum class UpdateTarget { weights, alpha };
enum class BatchSource { weights_half, arch_half, full };

std::string_view update_target_name(UpdateTarget t);
std::string_view batch_source_name(BatchSource s);

struct StepRecord {
  int stage = 1;
  std::size_t step = 0;
  UpdateTarget target = UpdateTarget::weights;
  BatchSource source = BatchSource::weights_half;
  double loss = 0.0;
};

struct Stage1Result {
  Tensor alpha;  // snapshot of the final alpha
  std::vector<StepRecord> log;
};

/// First-order search: strict 1:1 alternation of a weight step on a batch
/// from the weights half and an alpha step on a batch from the arch half,
/// each with its own Adam optimizer. Non-finite losses raise SearchFailure.
Stage1Result darts_stage1(MixtureModel& model, std::span<const Utterance> train, const TrainingSplit& split,
                          const DartsConfig& config, TaskKind kind, int blank);

struct DerivedArchitecture {
  std::vector<PeftKind> candidates;
  std::vector<std::size_t> choice;             // per layer, index into candidates
  std::vector<std::vector<double>> alpha;      // final alpha rows
  std::vector<std::vector<double>> weights;    // softmax of each row

  std::vector<PeftKind> kinds() const;
};

/// Per-layer argmax; ties go to the lowest candidate index.
DerivedArchitecture derive_architecture(const Tensor& alpha, std::span<const PeftKind> candidates);

struct Stage2Result {
  TaskModel model;
  std::vector<StepRecord> log;
};

/// remaining_steps: keeps the chosen candidates' stage-1 weights and the head
/// (shared with `mixture`) and trains total - stage1 steps with a fresh
/// optimizer. full_steps: re-initialises the derived architecture from
/// init_seed and trains total_steps.
Stage2Result darts_stage2(const MixtureModel& mixture, const DerivedArchitecture& derived,
                          std::span<const Utterance> train, const DartsConfig& config, TaskKind kind,
                          std::size_t n_classes, int blank);

/// Plain single-architecture model initialised exactly as full_steps retraining does.
TaskModel init_task_model(const BackboneModel& backbone, const PeftSpec& spec, TaskKind kind, std::size_t n_classes,
                          std::uint64_t init_seed);

struct DartsResult {
  Stage1Result stage1;
  DerivedArchitecture derived;
  Stage2Result stage2;
};

DartsResult run_darts(const BackboneModel& backbone, std::span<const Utterance> train, const DartsConfig& config,
                      TaskKind kind, std::size_t n_classes, int blank);

nlohmann::json search_report(const DartsConfig& config, const DerivedArchitecture& derived,
                             std::span<const StepRecord> log);

}  // namespace peftmix
