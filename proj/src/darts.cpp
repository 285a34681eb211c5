// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/darts.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "peftmix/errors.hpp"
#include "peftmix/ops.hpp"

namespace peftmix {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<double> row_softmax(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  std::vector<double> out(row.size());
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) z += out[i] = std::exp(row[i] - mx);
  for (double& v : out) v /= z;
  return out;
}

PeftSpec derived_spec(const DerivedArchitecture& derived, const DartsConfig& config) {
  const auto kinds = derived.kinds();
  return PeftSpec::from_kinds(kinds, config.adapter, config.lora);
}

}  // namespace

std::string_view retrain_mode_name(RetrainMode mode) {
  return mode == RetrainMode::remaining_steps ? "remaining_steps" : "full_steps";
}

RetrainMode parse_retrain_mode(std::string_view name) {
  if (name == "remaining_steps" || name == "remaining") return RetrainMode::remaining_steps;
  if (name == "full_steps" || name == "full" || name == "retrain") return RetrainMode::full_steps;
  throw ConfigError("unknown retrain mode '" + std::string(name) + "'");
}

void DartsConfig::validate(const BackboneConfig& backbone) const {
  if (!(stage1_fraction > 0.0 && stage1_fraction < 1.0)) throw ConfigError("stage1_fraction must lie in (0, 1)");
  if (!first_order) throw ConfigError("only the first-order search is implemented");
  if (total_steps < 2) throw ConfigError("DARTS needs total_steps >= 2");
  const std::size_t s1 = stage1_steps();
  if (s1 == 0 || s1 >= total_steps) {
    throw ConfigError("stage1_fraction " + std::to_string(stage1_fraction) + " of " + std::to_string(total_steps) +
                      " steps leaves an empty stage");
  }
  if (!(arch_lr > 0.0) || !(weight_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (candidates.empty()) throw ConfigError("DARTS needs at least one candidate");
  for (std::size_t i = 0; i < candidates.size(); ++i)
    for (std::size_t j = i + 1; j < candidates.size(); ++j)
      if (candidates[i] == candidates[j]) throw ConfigError("candidate kinds must be distinct");
  for (PeftKind k : candidates) {
    if (k == PeftKind::lora) {
      lora.validate(backbone.d_model);
    } else {
      adapter.validate(backbone.d_model);
    }
  }
}

std::size_t DartsConfig::stage1_steps() const {
  return static_cast<std::size_t>(std::llround(stage1_fraction * static_cast<double>(total_steps)));
}

std::size_t DartsConfig::stage2_steps() const {
  return retrain_mode == RetrainMode::remaining_steps ? total_steps - stage1_steps() : total_steps;
}

std::uint64_t arch_sampler_seed(std::uint64_t train_seed) { return mix64(train_seed ^ 0xa1fa5eedULL); }
std::uint64_t stage2_sampler_seed(std::uint64_t train_seed) { return mix64(train_seed ^ 0x57a9e2ULL); }

Tensor mixture_forward(std::span<const Tensor> outputs, const Tensor& alpha_row) {
  if (outputs.empty()) throw DimensionError("mixture_forward: no candidate outputs");
  if (alpha_row.numel() != outputs.size()) {
    throw DimensionError("mixture_forward: " + std::to_string(outputs.size()) + " candidates but alpha has " +
                         std::to_string(alpha_row.numel()) + " entries");
  }
  for (const Tensor& o : outputs) {
    if (o.shape() != outputs[0].shape()) throw DimensionError("mixture_forward: candidate output shapes differ");
  }
  const Tensor coeffs = softmax(alpha_row, alpha_row.dim() - 1);
  Tensor out = scale_by(outputs[0], coeffs, 0);
  for (std::size_t n = 1; n < outputs.size(); ++n) out = add(out, scale_by(outputs[n], coeffs, n));
  return out;
}

TrainingSplit split_training_set(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DataError("cannot split an empty training set");
  if (n < 2) throw DataError("splitting needs at least two training items");
  std::vector<std::size_t> order = iota_indices(n);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t first = (n + 1) / 2;
  TrainingSplit split;
  split.weights_half.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first));
  split.arch_half.assign(order.begin() + static_cast<std::ptrdiff_t>(first), order.end());
  return split;
}

MixtureModel MixtureModel::init(const BackboneModel& backbone, const DartsConfig& config, TaskKind kind,
                                std::size_t n_classes) {
  const BackboneConfig& bc = backbone.config();
  config.validate(bc);
  MixtureModel m;
  m.backbone_ = backbone;
  m.kinds_ = config.candidates;
  // Same draw order as PeftAttachment::init followed by TaskHead::init, so a
  // single-candidate mixture starts from the plain model's weights.
  std::mt19937_64 rng(config.init_seed);
  m.layers_.resize(bc.n_layers);
  for (std::size_t i = 0; i < bc.n_layers; ++i) {
    for (PeftKind k : m.kinds_) {
      const MethodDescriptor method{k, config.adapter, config.lora};
      m.layers_[i].push_back(init_layer_peft(std::span(&method, 1), bc.d_model, rng));
    }
  }
  m.head_ = TaskHead::init(kind, bc.d_model, bc.n_layers + 1, n_classes, rng);
  m.alpha_ = Tensor::zeros({bc.n_layers, m.kinds_.size()});
  m.alpha_.set_requires_grad(true);
  m.sabotaged_.assign(m.kinds_.size(), std::nullopt);
  return m;
}

const LayerPeft& MixtureModel::candidate(std::size_t layer, std::size_t index) const {
  return layers_.at(layer).at(index);
}

void MixtureModel::sabotage(std::size_t index, double noise_scale, std::uint64_t seed) {
  if (index >= kinds_.size()) throw ContractError("sabotage: candidate index out of range");
  if (!(noise_scale > 0.0)) throw ConfigError("sabotage noise scale must be positive");
  sabotaged_[index] = Sabotage{noise_scale, seed, std::make_shared<std::atomic<std::uint64_t>>(0)};
}

Tensor MixtureModel::candidate_output(std::size_t layer, std::size_t index, const Tensor& x) const {
  if (const auto& sab = sabotaged_[index]) {
    const std::uint64_t draw = sab->draws->fetch_add(1);
    std::mt19937_64 rng(mix64(mix64(sab->seed ^ (layer << 20) ^ (index << 40)) ^ draw));
    return Tensor::randn(x.shape(), sab->scale, rng);
  }
  return backbone_.layer_forward(layer, x, &layers_[layer][index]);
}

Tensor MixtureModel::log_probs(const Tensor& features) const {
  LayerStack stack;
  stack.states.reserve(layers_.size() + 1);
  stack.states.push_back(backbone_.embed(features));
  std::vector<Tensor> outs(kinds_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (std::size_t n = 0; n < kinds_.size(); ++n) outs[n] = candidate_output(i, n, stack.states.back());
    stack.states.push_back(mixture_forward(outs, slice_rows(alpha_, i, 1)));
  }
  return head_.forward(stack);
}

std::vector<NamedTensor> MixtureModel::trainable_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (std::size_t n = 0; n < kinds_.size(); ++n) {
      const std::string prefix = "peft.layers." + std::to_string(i) + ".candidates." + std::to_string(n) + ".";
      for (auto& p : layer_peft_parameters(layers_[i][n], prefix)) out.push_back(std::move(p));
    }
  }
  for (auto& p : head_.named_parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<double> MixtureModel::mixture_coefficients(std::size_t layer) const {
  const std::size_t n = kinds_.size();
  return row_softmax(alpha_.values().subspan(layer * n, n));
}

std::string_view update_target_name(UpdateTarget t) { return t == UpdateTarget::weights ? "weights" : "alpha"; }

std::string_view batch_source_name(BatchSource s) {
  switch (s) {
    case BatchSource::weights_half: return "weights_half";
    case BatchSource::arch_half: return "arch_half";
    case BatchSource::full: return "full";
  }
  return "?";
}

Stage1Result darts_stage1(MixtureModel& model, std::span<const Utterance> train, const TrainingSplit& split,
                          const DartsConfig& config, TaskKind kind, int blank) {
  config.validate(model.backbone().config());
  if (split.weights_half.empty() || split.arch_half.empty()) throw DataError("both training halves must be non-empty");

  Adam weight_opt(tensors_of(model.trainable_parameters()), AdamConfig{.lr = config.weight_lr});
  Adam arch_opt({model.alpha()}, AdamConfig{.lr = config.arch_lr});
  BatchSampler weight_batches(split.weights_half, config.batch_size, config.train_seed);
  BatchSampler arch_batches(split.arch_half, config.batch_size, arch_sampler_seed(config.train_seed));

  auto clear = [&] {
    weight_opt.zero_grad();
    arch_opt.zero_grad();
  };

  Stage1Result result;
  const std::size_t steps = config.stage1_steps();
  result.log.reserve(2 * steps);
  for (std::size_t s = 0; s < steps; ++s) {
    try {
      clear();
      const double wl = batch_backward(model, train, weight_batches.next(), kind, blank);
      weight_opt.step();
      result.log.push_back({1, s, UpdateTarget::weights, BatchSource::weights_half, wl});

      // First order: the weights just updated are constants for this step.
      clear();
      const double al = batch_backward(model, train, arch_batches.next(), kind, blank);
      arch_opt.step();
      result.log.push_back({1, s, UpdateTarget::alpha, BatchSource::arch_half, al});
    } catch (const NumericError& e) {
      clear();
      throw SearchFailure(s, "architecture search diverged at stage-1 step " + std::to_string(s) + ": " + e.what());
    }
  }
  clear();
  result.alpha = model.alpha().clone();
  return result;
}

std::vector<PeftKind> DerivedArchitecture::kinds() const {
  std::vector<PeftKind> out;
  out.reserve(choice.size());
  for (std::size_t c : choice) out.push_back(candidates.at(c));
  return out;
}

DerivedArchitecture derive_architecture(const Tensor& alpha, std::span<const PeftKind> candidates) {
  if (alpha.dim() != 2 || alpha.cols() != candidates.size()) {
    throw DimensionError("derive_architecture: alpha " + shape_string(alpha.shape()) + " does not match " +
                         std::to_string(candidates.size()) + " candidates");
  }
  DerivedArchitecture d;
  d.candidates.assign(candidates.begin(), candidates.end());
  const std::size_t n = candidates.size();
  for (std::size_t i = 0; i < alpha.rows(); ++i) {
    const auto row = alpha.values().subspan(i * n, n);
    // max_element returns the first maximum, which is the tie rule.
    d.choice.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    d.alpha.emplace_back(row.begin(), row.end());
    d.weights.push_back(row_softmax(row));
  }
  return d;
}

TaskModel init_task_model(const BackboneModel& backbone, const PeftSpec& spec, TaskKind kind, std::size_t n_classes,
                          std::uint64_t init_seed) {
  std::mt19937_64 rng(init_seed);
  PeftModel body = attach_peft(backbone, spec, rng);
  const BackboneConfig& bc = backbone.config();
  TaskHead head = TaskHead::init(kind, bc.d_model, bc.n_layers + 1, n_classes, rng);
  return TaskModel(std::move(body), std::move(head));
}

Stage2Result darts_stage2(const MixtureModel& mixture, const DerivedArchitecture& derived,
                          std::span<const Utterance> train, const DartsConfig& config, TaskKind kind,
                          std::size_t n_classes, int blank) {
  const BackboneModel& backbone = mixture.backbone();
  config.validate(backbone.config());
  if (derived.choice.size() != backbone.config().n_layers) {
    throw DimensionError("derived architecture covers " + std::to_string(derived.choice.size()) + " layers");
  }
  if (derived.candidates != mixture.candidates()) throw ContractError("derived architecture uses other candidates");

  const PeftSpec spec = derived_spec(derived, config);
  std::optional<TaskModel> model;
  if (config.retrain_mode == RetrainMode::remaining_steps) {
    std::vector<LayerPeft> layers;
    for (std::size_t i = 0; i < derived.choice.size(); ++i) layers.push_back(mixture.candidate(i, derived.choice[i]));
    model.emplace(PeftModel(backbone, spec, PeftAttachment::from_layers(std::move(layers))), mixture.head());
  } else {
    model.emplace(init_task_model(backbone, spec, kind, n_classes, config.init_seed));
  }

  Adam opt(tensors_of(model->trainable_parameters()), AdamConfig{.lr = config.weight_lr});
  BatchSampler sampler(iota_indices(train.size()), config.batch_size, stage2_sampler_seed(config.train_seed));
  const std::vector<double> losses = train_steps(*model, opt, sampler, train, config.stage2_steps(), kind, blank);

  Stage2Result result{std::move(*model), {}};
  result.log.reserve(losses.size());
  for (std::size_t s = 0; s < losses.size(); ++s) {
    result.log.push_back({2, s, UpdateTarget::weights, BatchSource::full, losses[s]});
  }
  return result;
}

DartsResult run_darts(const BackboneModel& backbone, std::span<const Utterance> train, const DartsConfig& config,
                      TaskKind kind, std::size_t n_classes, int blank) {
  MixtureModel mixture = MixtureModel::init(backbone, config, kind, n_classes);
  const TrainingSplit split = split_training_set(train.size(), config.split_seed);
  Stage1Result stage1 = darts_stage1(mixture, train, split, config, kind, blank);
  DerivedArchitecture derived = derive_architecture(stage1.alpha, config.candidates);
  Stage2Result stage2 = darts_stage2(mixture, derived, train, config, kind, n_classes, blank);
  return DartsResult{std::move(stage1), std::move(derived), std::move(stage2)};
}

nlohmann::json search_report(const DartsConfig& config, const DerivedArchitecture& derived,
                             std::span<const StepRecord> log) {
  using nlohmann::json;
  json candidates = json::array();
  for (PeftKind k : derived.candidates) candidates.push_back(peft_kind_name(k));
  json layers = json::array();
  for (std::size_t i = 0; i < derived.choice.size(); ++i) {
    layers.push_back({{"layer", i},
                      {"alpha", derived.alpha[i]},
                      {"weights", derived.weights[i]},
                      {"chosen", peft_kind_name(derived.candidates[derived.choice[i]])}});
  }
  std::size_t s1 = 0, s2 = 0;
  for (const StepRecord& r : log) {
    if (r.stage == 1 && r.target == UpdateTarget::weights) ++s1;
    if (r.stage == 2) ++s2;
  }
  return json{{"schema_version", 1},
              {"candidates", candidates},
              {"stage1_fraction", config.stage1_fraction},
              {"total_steps", config.total_steps},
              {"retrain_mode", retrain_mode_name(config.retrain_mode)},
              {"stage1_steps", s1},
              {"stage2_steps", s2},
              {"layers", layers}};
}

}  // namespace peftmix
