// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "peftmix/tensor.hpp"

namespace peftmix {

struct LayerPeft;
class PeftAttachment;

struct BackboneConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t input_dim = 16;
  std::uint64_t seed = 0;

  void validate() const;

  /// HuBERT-base sized configuration, used to reconcile parameter counts.
  static BackboneConfig hubert_base();
};

enum class Projection { query, key, value, output };

std::string_view projection_name(Projection p);
Projection parse_projection(std::string_view name);

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct TransformerLayerWeights {
  Tensor ln1_gamma, ln1_beta;
  AttentionWeights attn;
  Tensor ln2_gamma, ln2_beta;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

/// Hidden states h(0)..h(L); h(0) is the projected input.
struct LayerStack {
  std::vector<Tensor> states;
};

/// Pre-norm transformer encoder standing in for a pretrained upstream model.
///
/// Weights are plain row-major [in×out] matrices (y = x·W + b). Copies share
/// weight storage; clone() gives an independent model.
class BackboneModel {
 public:
  static BackboneModel build(const BackboneConfig& config);

  const BackboneConfig& config() const noexcept { return config_; }

  Tensor embed(const Tensor& input) const;
  Tensor layer_forward(std::size_t layer, const Tensor& x, const LayerPeft* peft) const;
  LayerStack forward_all_layers(const Tensor& input, const PeftAttachment* peft = nullptr) const;

  /// Deterministic order; names are prefixed "backbone.".
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> trainable_parameters() const;
  std::size_t parameter_count() const;

  bool frozen() const noexcept { return frozen_; }
  void set_frozen(bool frozen);

  BackboneModel clone() const;

  const TransformerLayerWeights& layer(std::size_t i) const { return layers_.at(i); }

 private:
  BackboneConfig config_;
  Tensor in_w_, in_b_;
  std::vector<TransformerLayerWeights> layers_;
  bool frozen_ = true;
};

/// Trainable softmax-normalised combination of all hidden states.
struct WeightedSumHead {
  Tensor layer_weights;

  static WeightedSumHead uniform(std::size_t n_states);
};

Tensor weighted_sum(const LayerStack& stack, const WeightedSumHead& head);

enum class TaskKind { classification, ctc };

std::string_view task_kind_name(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

/// Weighted sum followed by the downstream projection. Classification pools
/// over time and emits log-probabilities [1×C]; CTC emits frame
/// log-probabilities [T×C].
struct TaskHead {
  TaskKind kind = TaskKind::classification;
  WeightedSumHead mix;
  Tensor w, b;

  static TaskHead init(TaskKind kind, std::size_t d_model, std::size_t n_states, std::size_t n_classes,
                       std::mt19937_64& rng);

  Tensor forward(const LayerStack& stack) const;
  std::vector<NamedTensor> named_parameters() const;  // "head.*"
};

}  // namespace peftmix
