// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peftmix/backbone.hpp"
#include "peftmix/tensor.hpp"

namespace peftmix {

enum class PeftKind { sequential, parallel, lora };

std::string_view peft_kind_name(PeftKind kind);
PeftKind parse_peft_kind(std::string_view name);

struct AdapterConfig {
  std::size_t bottleneck_dim = 32;

  void validate(std::size_t d_model) const;
};

struct LoraConfig {
  std::size_t rank = 8;
  double scaling = 2.0;
  std::vector<Projection> targets{Projection::query, Projection::value};

  void validate(std::size_t d_model) const;
};

struct MethodDescriptor {
  PeftKind kind = PeftKind::sequential;
  AdapterConfig adapter;
  LoraConfig lora;

  bool operator==(const MethodDescriptor& other) const;
};

/// Per-layer list of PEFT methods to attach.
struct PeftSpec {
  std::vector<std::vector<MethodDescriptor>> layers;

  static PeftSpec empty(std::size_t n_layers);
  static PeftSpec uniform(std::size_t n_layers, const MethodDescriptor& method);
  static PeftSpec hybrid(std::size_t n_layers, const AdapterConfig& adapter, const LoraConfig& lora);
  static PeftSpec from_kinds(std::span<const PeftKind> kinds, const AdapterConfig& adapter, const LoraConfig& lora);

  void validate(const BackboneConfig& backbone) const;
};

struct AdapterParams {
  Tensor down_w, down_b, up_w, up_b;
};

struct LoraParams {
  Tensor a;  // [d_in×rank]
  Tensor b;  // [rank×d_out]
  double scaling = 1.0;
};

/// PEFT parameters attached to one transformer layer.
struct LayerPeft {
  std::optional<AdapterParams> sequential;
  std::optional<AdapterParams> parallel;
  std::array<std::optional<LoraParams>, 4> lora;  // indexed by Projection

  const LoraParams* lora_for(Projection p) const;
  bool empty() const;
};

AdapterParams init_adapter(std::size_t d_model, const AdapterConfig& config, std::mt19937_64& rng);
LoraParams init_lora(std::size_t d_in, std::size_t d_out, const LoraConfig& config, std::mt19937_64& rng);

/// Initialises the listed methods for one layer, drawing from `rng` in list order.
LayerPeft init_layer_peft(std::span<const MethodDescriptor> methods, std::size_t d_model, std::mt19937_64& rng);

/// up(act(down(h))): the adapter's residual branch.
Tensor adapter_branch(const Tensor& h, const AdapterParams& adapter);

/// h + adapter_branch(h).
Tensor houlsby_forward(const Tensor& h, const AdapterParams& adapter);

/// x·W + bias + scaling·(x·A)·B. bias may be undefined.
Tensor lora_forward(const Tensor& x, const Tensor& w, const Tensor& bias, const LoraParams& lora);

class PeftAttachment {
 public:
  PeftAttachment() = default;

  static PeftAttachment init(const PeftSpec& spec, const BackboneConfig& backbone, std::mt19937_64& rng);

  const LayerPeft* layer(std::size_t i) const { return i < layers_.size() ? &layers_[i] : nullptr; }
  LayerPeft& mutable_layer(std::size_t i) { return layers_.at(i); }
  std::size_t n_layers() const noexcept { return layers_.size(); }

  std::vector<NamedTensor> named_parameters() const;  // "peft.*"
  std::size_t parameter_count() const;

  static PeftAttachment from_layers(std::vector<LayerPeft> layers);

 private:
  std::vector<LayerPeft> layers_;
};

std::vector<NamedTensor> layer_peft_parameters(const LayerPeft& layer, const std::string& prefix);

/// Backbone plus attached PEFT modules. Only PEFT parameters train unless the
/// backbone has been unfrozen.
class PeftModel {
 public:
  PeftModel(BackboneModel backbone, PeftSpec spec, PeftAttachment peft);

  LayerStack forward_all_layers(const Tensor& input) const;

  const BackboneModel& backbone() const noexcept { return backbone_; }
  BackboneModel& mutable_backbone() noexcept { return backbone_; }
  const PeftSpec& spec() const noexcept { return spec_; }
  const PeftAttachment& peft() const noexcept { return peft_; }

  std::vector<NamedTensor> trainable_parameters() const;

 private:
  BackboneModel backbone_;
  PeftSpec spec_;
  PeftAttachment peft_;
};

PeftModel attach_peft(const BackboneModel& backbone, const PeftSpec& spec, std::mt19937_64& rng);

std::size_t adapter_parameter_count(std::size_t d_model, std::size_t bottleneck_dim);
std::size_t lora_parameter_count(std::size_t d_model, std::size_t rank, std::size_t n_targets);

enum class WeightedSumSpan {
  layer_outputs,         // n_layers weights
  layer_outputs_and_input  // n_layers + 1 weights
};

struct ParamCount {
  std::size_t peft = 0;
  std::size_t weighted_sum = 0;
};

/// Trainable upstream-side parameters added by `spec` (head excluded).
ParamCount param_count(const PeftSpec& spec, const BackboneConfig& backbone,
                       WeightedSumSpan span = WeightedSumSpan::layer_outputs_and_input);

/// Strict one-third budget rule: reduced < original / 3 for every kind.
struct BudgetCheck {
  std::size_t adapter_original = 0, adapter_reduced = 0;
  std::size_t lora_original = 0, lora_reduced = 0;
  bool adapter_ok = false, lora_ok = false;

  bool ok() const { return adapter_ok && lora_ok; }
};

BudgetCheck check_reduced_budget(const BackboneConfig& backbone, const AdapterConfig& adapter_original,
                                 const AdapterConfig& adapter_reduced, const LoraConfig& lora_original,
                                 const LoraConfig& lora_reduced);

}  // namespace peftmix
