// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/backbone.hpp"

#include <cmath>
#include <string>

#include "peftmix/errors.hpp"
#include "peftmix/ops.hpp"
#include "peftmix/peft.hpp"

namespace peftmix {

namespace {

constexpr double kInitStd = 0.02;

Tensor projection(const Tensor& x, const Tensor& w, const Tensor& b, const LayerPeft* peft, Projection p) {
  if (peft) {
    if (const LoraParams* lora = peft->lora_for(p)) return lora_forward(x, w, b, *lora);
  }
  return add_bias(matmul(x, w), b);
}

}  // namespace

void BackboneConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || input_dim == 0) {
    throw ConfigError("backbone counts must all be at least 1");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
}

BackboneConfig BackboneConfig::hubert_base() {
  BackboneConfig c;
  c.n_layers = 12;
  c.d_model = 768;
  c.n_heads = 12;
  c.d_ff = 3072;
  c.input_dim = 512;
  return c;
}

std::string_view projection_name(Projection p) {
  switch (p) {
    case Projection::query: return "q";
    case Projection::key: return "k";
    case Projection::value: return "v";
    case Projection::output: return "o";
  }
  return "?";
}

Projection parse_projection(std::string_view name) {
  if (name == "q" || name == "query") return Projection::query;
  if (name == "k" || name == "key") return Projection::key;
  if (name == "v" || name == "value") return Projection::value;
  if (name == "o" || name == "output") return Projection::output;
  throw ConfigError("unknown attention projection '" + std::string(name) + "'");
}

BackboneModel BackboneModel::build(const BackboneConfig& config) {
  config.validate();
  BackboneModel model;
  model.config_ = config;
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.d_model;
  model.in_w_ = Tensor::randn({config.input_dim, d}, kInitStd, rng);
  model.in_b_ = Tensor::zeros({d});
  model.layers_.reserve(config.n_layers);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    TransformerLayerWeights l;
    l.ln1_gamma = Tensor::filled({d}, 1.0);
    l.ln1_beta = Tensor::zeros({d});
    l.attn.wq = Tensor::randn({d, d}, kInitStd, rng);
    l.attn.bq = Tensor::zeros({d});
    l.attn.wk = Tensor::randn({d, d}, kInitStd, rng);
    l.attn.bk = Tensor::zeros({d});
    l.attn.wv = Tensor::randn({d, d}, kInitStd, rng);
    l.attn.bv = Tensor::zeros({d});
    l.attn.wo = Tensor::randn({d, d}, kInitStd, rng);
    l.attn.bo = Tensor::zeros({d});
    l.ln2_gamma = Tensor::filled({d}, 1.0);
    l.ln2_beta = Tensor::zeros({d});
    l.ff_w1 = Tensor::randn({d, config.d_ff}, kInitStd, rng);
    l.ff_b1 = Tensor::zeros({config.d_ff});
    l.ff_w2 = Tensor::randn({config.d_ff, d}, kInitStd, rng);
    l.ff_b2 = Tensor::zeros({d});
    model.layers_.push_back(std::move(l));
  }
  return model;
}

Tensor BackboneModel::embed(const Tensor& input) const {
  if (input.dim() != 2 || input.cols() != config_.input_dim) {
    throw DimensionError("backbone input must be [T×" + std::to_string(config_.input_dim) + "], got " +
                         shape_string(input.shape()));
  }
  return add_bias(matmul(input, in_w_), in_b_);
}

Tensor BackboneModel::layer_forward(std::size_t index, const Tensor& x, const LayerPeft* peft) const {
  const TransformerLayerWeights& l = layers_.at(index);
  const std::size_t heads = config_.n_heads;
  const std::size_t head_dim = config_.d_model / heads;

  // Self-attention sublayer.
  const Tensor a = layer_norm(x, l.ln1_gamma, l.ln1_beta);
  const Tensor q = projection(a, l.attn.wq, l.attn.bq, peft, Projection::query);
  const Tensor k = projection(a, l.attn.wk, l.attn.bk, peft, Projection::key);
  const Tensor v = projection(a, l.attn.wv, l.attn.bv, peft, Projection::value);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * head_dim, head_dim);
    const Tensor kh = slice_cols(k, h * head_dim, head_dim);
    const Tensor vh = slice_cols(v, h * head_dim, head_dim);
    const Tensor attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    head_out.push_back(matmul(attn, vh));
  }
  const Tensor merged = heads == 1 ? head_out.front() : concat_cols(head_out);
  const Tensor attn_out = projection(merged, l.attn.wo, l.attn.bo, peft, Projection::output);
  const Tensor x1 = add(x, attn_out);

  // Feed-forward sublayer; adapters attach here.
  const Tensor u = layer_norm(x1, l.ln2_gamma, l.ln2_beta);
  Tensor ffn = add_bias(matmul(gelu(add_bias(matmul(u, l.ff_w1), l.ff_b1)), l.ff_w2), l.ff_b2);
  if (peft) {
    Tensor delta;
    if (peft->sequential) delta = adapter_branch(ffn, *peft->sequential);
    if (peft->parallel) {
      const Tensor par = adapter_branch(u, *peft->parallel);
      delta = delta.defined() ? add(delta, par) : par;
    }
    if (delta.defined()) ffn = add(ffn, delta);
  }
  return add(x1, ffn);
}

LayerStack BackboneModel::forward_all_layers(const Tensor& input, const PeftAttachment* peft) const {
  if (peft && peft->n_layers() != 0 && peft->n_layers() != config_.n_layers) {
    throw DimensionError("PEFT attachment covers " + std::to_string(peft->n_layers()) + " layers, backbone has " +
                         std::to_string(config_.n_layers));
  }
  LayerStack stack;
  stack.states.reserve(config_.n_layers + 1);
  stack.states.push_back(embed(input));
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    const LayerPeft* lp = peft ? peft->layer(i) : nullptr;
    stack.states.push_back(layer_forward(i, stack.states.back(), lp));
  }
  return stack;
}

std::vector<NamedTensor> BackboneModel::named_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"backbone.input.w", in_w_});
  out.push_back({"backbone.input.b", in_b_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = "backbone.layers." + std::to_string(i) + ".";
    const TransformerLayerWeights& l = layers_[i];
    out.push_back({p + "ln1.gamma", l.ln1_gamma});
    out.push_back({p + "ln1.beta", l.ln1_beta});
    out.push_back({p + "attn.wq", l.attn.wq});
    out.push_back({p + "attn.bq", l.attn.bq});
    out.push_back({p + "attn.wk", l.attn.wk});
    out.push_back({p + "attn.bk", l.attn.bk});
    out.push_back({p + "attn.wv", l.attn.wv});
    out.push_back({p + "attn.bv", l.attn.bv});
    out.push_back({p + "attn.wo", l.attn.wo});
    out.push_back({p + "attn.bo", l.attn.bo});
    out.push_back({p + "ln2.gamma", l.ln2_gamma});
    out.push_back({p + "ln2.beta", l.ln2_beta});
    out.push_back({p + "ffn.w1", l.ff_w1});
    out.push_back({p + "ffn.b1", l.ff_b1});
    out.push_back({p + "ffn.w2", l.ff_w2});
    out.push_back({p + "ffn.b2", l.ff_b2});
  }
  return out;
}

std::vector<Tensor> BackboneModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_parameters())
    if (t.requires_grad()) out.push_back(t);
  return out;
}

std::size_t BackboneModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void BackboneModel::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& [name, t] : named_parameters()) {
    Tensor handle = t;
    handle.set_requires_grad(!frozen);
  }
}

BackboneModel BackboneModel::clone() const {
  BackboneModel copy;
  copy.config_ = config_;
  copy.frozen_ = frozen_;
  copy.in_w_ = in_w_.clone();
  copy.in_b_ = in_b_.clone();
  for (const TransformerLayerWeights& l : layers_) {
    TransformerLayerWeights c;
    c.ln1_gamma = l.ln1_gamma.clone();
    c.ln1_beta = l.ln1_beta.clone();
    c.attn = {l.attn.wq.clone(), l.attn.bq.clone(), l.attn.wk.clone(), l.attn.bk.clone(),
              l.attn.wv.clone(), l.attn.bv.clone(), l.attn.wo.clone(), l.attn.bo.clone()};
    c.ln2_gamma = l.ln2_gamma.clone();
    c.ln2_beta = l.ln2_beta.clone();
    c.ff_w1 = l.ff_w1.clone();
    c.ff_b1 = l.ff_b1.clone();
    c.ff_w2 = l.ff_w2.clone();
    c.ff_b2 = l.ff_b2.clone();
    copy.layers_.push_back(std::move(c));
  }
  return copy;
}

WeightedSumHead WeightedSumHead::uniform(std::size_t n_states) {
  WeightedSumHead head{Tensor::zeros({n_states})};
  head.layer_weights.set_requires_grad(true);
  return head;
}

Tensor weighted_sum(const LayerStack& stack, const WeightedSumHead& head) {
  if (stack.states.empty()) throw DimensionError("weighted_sum: empty layer stack");
  if (stack.states.size() != head.layer_weights.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(stack.states.size()) + " states but " +
                         std::to_string(head.layer_weights.numel()) + " layer weights");
  }
  const Tensor coeffs = softmax(head.layer_weights, 0);
  Tensor out = scale_by(stack.states[0], coeffs, 0);
  for (std::size_t i = 1; i < stack.states.size(); ++i) out = add(out, scale_by(stack.states[i], coeffs, i));
  return out;
}

std::string_view task_kind_name(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "ctc";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "classification" || name == "seq_classification") return TaskKind::classification;
  if (name == "ctc" || name == "ctc_tagging") return TaskKind::ctc;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

TaskHead TaskHead::init(TaskKind kind, std::size_t d_model, std::size_t n_states, std::size_t n_classes,
                        std::mt19937_64& rng) {
  TaskHead head;
  head.kind = kind;
  head.mix = WeightedSumHead::uniform(n_states);
  head.w = Tensor::randn({d_model, n_classes}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  head.b = Tensor::zeros({n_classes});
  head.w.set_requires_grad(true);
  head.b.set_requires_grad(true);
  return head;
}

Tensor TaskHead::forward(const LayerStack& stack) const {
  Tensor features = weighted_sum(stack, mix);
  if (kind == TaskKind::classification) features = mean_rows(features);
  return log_softmax(add_bias(matmul(features, w), b));
}

std::vector<NamedTensor> TaskHead::named_parameters() const {
  return {{"head.layer_weights", mix.layer_weights}, {"head.w", w}, {"head.b", b}};
}

}  // namespace peftmix
