// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/peft.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "peftmix/errors.hpp"
#include "peftmix/ops.hpp"

namespace peftmix {

std::string_view peft_kind_name(PeftKind kind) {
  switch (kind) {
    case PeftKind::sequential: return "sequential";
    case PeftKind::parallel: return "parallel";
    case PeftKind::lora: return "lora";
  }
  return "?";
}

PeftKind parse_peft_kind(std::string_view name) {
  if (name == "sequential" || name == "seq") return PeftKind::sequential;
  if (name == "parallel" || name == "par") return PeftKind::parallel;
  if (name == "lora" || name == "LoRA") return PeftKind::lora;
  throw ConfigError("unknown PEFT kind '" + std::string(name) + "'");
}

void AdapterConfig::validate(std::size_t d_model) const {
  if (bottleneck_dim < 1 || bottleneck_dim >= d_model) {
    throw ConfigError("adapter bottleneck " + std::to_string(bottleneck_dim) + " must lie in [1, " +
                      std::to_string(d_model) + ")");
  }
}

void LoraConfig::validate(std::size_t d_model) const {
  if (rank < 1 || rank >= d_model) {
    throw ConfigError("LoRA rank " + std::to_string(rank) + " must lie in [1, " + std::to_string(d_model) + ")");
  }
  if (!(scaling > 0.0) || !std::isfinite(scaling)) throw ConfigError("LoRA scaling must be positive");
  if (targets.empty()) throw ConfigError("LoRA needs at least one target projection");
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t j = i + 1; j < targets.size(); ++j)
      if (targets[i] == targets[j]) throw ConfigError("LoRA target listed twice");
}

bool MethodDescriptor::operator==(const MethodDescriptor& other) const {
  if (kind != other.kind) return false;
  if (kind == PeftKind::lora) {
    return lora.rank == other.lora.rank && lora.scaling == other.lora.scaling && lora.targets == other.lora.targets;
  }
  return adapter.bottleneck_dim == other.adapter.bottleneck_dim;
}

PeftSpec PeftSpec::empty(std::size_t n_layers) { return PeftSpec{std::vector<std::vector<MethodDescriptor>>(n_layers)}; }

PeftSpec PeftSpec::uniform(std::size_t n_layers, const MethodDescriptor& method) {
  return PeftSpec{std::vector<std::vector<MethodDescriptor>>(n_layers, {method})};
}

PeftSpec PeftSpec::hybrid(std::size_t n_layers, const AdapterConfig& adapter, const LoraConfig& lora) {
  const std::vector<MethodDescriptor> all = {{PeftKind::sequential, adapter, lora},
                                             {PeftKind::parallel, adapter, lora},
                                             {PeftKind::lora, adapter, lora}};
  return PeftSpec{std::vector<std::vector<MethodDescriptor>>(n_layers, all)};
}

PeftSpec PeftSpec::from_kinds(std::span<const PeftKind> kinds, const AdapterConfig& adapter, const LoraConfig& lora) {
  PeftSpec spec;
  for (PeftKind k : kinds) spec.layers.push_back({MethodDescriptor{k, adapter, lora}});
  return spec;
}

void PeftSpec::validate(const BackboneConfig& backbone) const {
  if (layers.size() != backbone.n_layers) {
    throw ConfigError("PEFT spec lists " + std::to_string(layers.size()) + " layers, backbone has " +
                      std::to_string(backbone.n_layers));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& methods = layers[i];
    for (std::size_t a = 0; a < methods.size(); ++a) {
      if (methods[a].kind == PeftKind::lora) {
        methods[a].lora.validate(backbone.d_model);
      } else {
        methods[a].adapter.validate(backbone.d_model);
      }
      for (std::size_t b = a + 1; b < methods.size(); ++b) {
        if (methods[a] == methods[b]) {
          throw ConfigError("layer " + std::to_string(i) + " lists the same " +
                            std::string(peft_kind_name(methods[a].kind)) + " method twice");
        }
        if (methods[a].kind == methods[b].kind) {
          throw ConfigError("layer " + std::to_string(i) + " has two " +
                            std::string(peft_kind_name(methods[a].kind)) + " slots");
        }
      }
    }
  }
}

const LoraParams* LayerPeft::lora_for(Projection p) const {
  const auto& slot = lora[static_cast<std::size_t>(p)];
  return slot ? &*slot : nullptr;
}

bool LayerPeft::empty() const {
  return !sequential && !parallel && std::none_of(lora.begin(), lora.end(), [](const auto& l) { return l.has_value(); });
}

AdapterParams init_adapter(std::size_t d_model, const AdapterConfig& config, std::mt19937_64& rng) {
  const std::size_t b = config.bottleneck_dim;
  AdapterParams p;
  p.down_w = Tensor::randn({d_model, b}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  p.down_b = Tensor::zeros({b});
  p.up_w = Tensor::zeros({b, d_model});
  p.up_b = Tensor::zeros({d_model});
  for (Tensor* t : {&p.down_w, &p.down_b, &p.up_w, &p.up_b}) t->set_requires_grad(true);
  return p;
}

LoraParams init_lora(std::size_t d_in, std::size_t d_out, const LoraConfig& config, std::mt19937_64& rng) {
  LoraParams p;
  p.a = Tensor::randn({d_in, config.rank}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
  p.b = Tensor::zeros({config.rank, d_out});
  p.scaling = config.scaling;
  p.a.set_requires_grad(true);
  p.b.set_requires_grad(true);
  return p;
}

Tensor adapter_branch(const Tensor& h, const AdapterParams& adapter) {
  const Tensor down = gelu(add_bias(matmul(h, adapter.down_w), adapter.down_b));
  return add_bias(matmul(down, adapter.up_w), adapter.up_b);
}

Tensor houlsby_forward(const Tensor& h, const AdapterParams& adapter) { return add(h, adapter_branch(h, adapter)); }

Tensor lora_forward(const Tensor& x, const Tensor& w, const Tensor& bias, const LoraParams& lora) {
  if (lora.a.rows() != w.rows() || lora.b.cols() != w.cols() || lora.a.cols() != lora.b.rows()) {
    throw DimensionError("lora_forward: low-rank factors " + shape_string(lora.a.shape()) + ", " +
                         shape_string(lora.b.shape()) + " do not fit weight " + shape_string(w.shape()));
  }
  if (lora.a.cols() >= w.rows()) {
    throw ConfigError("LoRA rank " + std::to_string(lora.a.cols()) + " must be below the input width " +
                      std::to_string(w.rows()));
  }
  Tensor base = matmul(x, w);
  if (bias.defined()) base = add_bias(base, bias);
  const Tensor update = scale(matmul(matmul(x, lora.a), lora.b), lora.scaling);
  return add(base, update);
}

LayerPeft init_layer_peft(std::span<const MethodDescriptor> methods, std::size_t d_model, std::mt19937_64& rng) {
  LayerPeft layer;
  for (const MethodDescriptor& m : methods) {
    switch (m.kind) {
      case PeftKind::sequential: layer.sequential = init_adapter(d_model, m.adapter, rng); break;
      case PeftKind::parallel: layer.parallel = init_adapter(d_model, m.adapter, rng); break;
      case PeftKind::lora:
        for (Projection p : m.lora.targets) {
          layer.lora[static_cast<std::size_t>(p)] = init_lora(d_model, d_model, m.lora, rng);
        }
        break;
    }
  }
  return layer;
}

PeftAttachment PeftAttachment::init(const PeftSpec& spec, const BackboneConfig& backbone, std::mt19937_64& rng) {
  spec.validate(backbone);
  PeftAttachment out;
  out.layers_.reserve(backbone.n_layers);
  for (std::size_t i = 0; i < backbone.n_layers; ++i) {
    out.layers_.push_back(init_layer_peft(spec.layers[i], backbone.d_model, rng));
  }
  return out;
}

PeftAttachment PeftAttachment::from_layers(std::vector<LayerPeft> layers) {
  PeftAttachment out;
  out.layers_ = std::move(layers);
  return out;
}

std::vector<NamedTensor> layer_peft_parameters(const LayerPeft& layer, const std::string& prefix) {
  std::vector<NamedTensor> out;
  auto add_adapter = [&](const AdapterParams& a, const std::string& p) {
    out.push_back({p + "down_w", a.down_w});
    out.push_back({p + "down_b", a.down_b});
    out.push_back({p + "up_w", a.up_w});
    out.push_back({p + "up_b", a.up_b});
  };
  if (layer.sequential) add_adapter(*layer.sequential, prefix + "sequential.");
  if (layer.parallel) add_adapter(*layer.parallel, prefix + "parallel.");
  for (std::size_t p = 0; p < layer.lora.size(); ++p) {
    if (!layer.lora[p]) continue;
    const std::string name = prefix + "lora." + std::string(projection_name(static_cast<Projection>(p))) + ".";
    out.push_back({name + "a", layer.lora[p]->a});
    out.push_back({name + "b", layer.lora[p]->b});
  }
  return out;
}

std::vector<NamedTensor> PeftAttachment::named_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto part = layer_peft_parameters(layers_[i], "peft.layers." + std::to_string(i) + ".");
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::size_t PeftAttachment::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

PeftModel::PeftModel(BackboneModel backbone, PeftSpec spec, PeftAttachment peft)
    : backbone_(std::move(backbone)), spec_(std::move(spec)), peft_(std::move(peft)) {}

LayerStack PeftModel::forward_all_layers(const Tensor& input) const {
  return backbone_.forward_all_layers(input, &peft_);
}

std::vector<NamedTensor> PeftModel::trainable_parameters() const {
  std::vector<NamedTensor> out;
  if (!backbone_.frozen()) out = backbone_.named_parameters();
  for (auto& p : peft_.named_parameters()) out.push_back(std::move(p));
  return out;
}

PeftModel attach_peft(const BackboneModel& backbone, const PeftSpec& spec, std::mt19937_64& rng) {
  PeftAttachment peft = PeftAttachment::init(spec, backbone.config(), rng);
  return PeftModel(backbone, spec, std::move(peft));
}

std::size_t adapter_parameter_count(std::size_t d_model, std::size_t bottleneck_dim) {
  return 2 * d_model * bottleneck_dim + bottleneck_dim + d_model;
}

std::size_t lora_parameter_count(std::size_t d_model, std::size_t rank, std::size_t n_targets) {
  return n_targets * 2 * d_model * rank;
}

ParamCount param_count(const PeftSpec& spec, const BackboneConfig& backbone, WeightedSumSpan span) {
  spec.validate(backbone);
  ParamCount count;
  for (const auto& methods : spec.layers) {
    for (const MethodDescriptor& m : methods) {
      count.peft += m.kind == PeftKind::lora
                        ? lora_parameter_count(backbone.d_model, m.lora.rank, m.lora.targets.size())
                        : adapter_parameter_count(backbone.d_model, m.adapter.bottleneck_dim);
    }
  }
  count.weighted_sum = backbone.n_layers + (span == WeightedSumSpan::layer_outputs_and_input ? 1 : 0);
  return count;
}

BudgetCheck check_reduced_budget(const BackboneConfig& backbone, const AdapterConfig& adapter_original,
                                 const AdapterConfig& adapter_reduced, const LoraConfig& lora_original,
                                 const LoraConfig& lora_reduced) {
  BudgetCheck c;
  const std::size_t layers = backbone.n_layers;
  c.adapter_original = layers * adapter_parameter_count(backbone.d_model, adapter_original.bottleneck_dim);
  c.adapter_reduced = layers * adapter_parameter_count(backbone.d_model, adapter_reduced.bottleneck_dim);
  c.lora_original = layers * lora_parameter_count(backbone.d_model, lora_original.rank, lora_original.targets.size());
  c.lora_reduced = layers * lora_parameter_count(backbone.d_model, lora_reduced.rank, lora_reduced.targets.size());
  // reduced < original / 3, kept in integers
  c.adapter_ok = 3 * c.adapter_reduced < c.adapter_original;
  c.lora_ok = 3 * c.lora_reduced < c.lora_original;
  return c;
}

}  // namespace peftmix
