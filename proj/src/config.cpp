// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/config.hpp"

#include <cmath>
#include <fstream>

#include "peftmix/checkpoint.hpp"
#include "peftmix/errors.hpp"

namespace peftmix {

namespace {

using nlohmann::json;

json lora_to_json(const LoraConfig& l) {
  json targets = json::array();
  for (Projection p : l.targets) targets.push_back(projection_name(p));
  return {{"rank", l.rank}, {"scaling", l.scaling}, {"targets", targets}};
}

void lora_from_json(const json& j, LoraConfig& l) {
  l.rank = j.value("rank", l.rank);
  l.scaling = j.value("scaling", l.scaling);
  if (j.contains("targets")) {
    l.targets.clear();
    for (const auto& t : j.at("targets")) l.targets.push_back(parse_projection(t.get<std::string>()));
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

}  // namespace

std::string_view method_mode_name(MethodMode mode) {
  switch (mode) {
    case MethodMode::finetune: return "finetune";
    case MethodMode::wsum: return "wsum";
    case MethodMode::peft: return "peft";
    case MethodMode::hybrid: return "hybrid";
    case MethodMode::darts: return "darts";
  }
  return "?";
}

MethodMode parse_method_mode(std::string_view name) {
  if (name == "finetune") return MethodMode::finetune;
  if (name == "wsum" || name == "weighted_sum") return MethodMode::wsum;
  if (name == "peft") return MethodMode::peft;
  if (name == "hybrid") return MethodMode::hybrid;
  if (name == "darts") return MethodMode::darts;
  throw ConfigError("unknown method mode '" + std::string(name) + "'");
}

AdapterConfig MethodConfig::active_adapter() const {
  return budget == BudgetLevel::reduced || mode == MethodMode::hybrid ? reduced_adapter : adapter;
}

LoraConfig MethodConfig::active_lora() const {
  return budget == BudgetLevel::reduced || mode == MethodMode::hybrid ? reduced_lora : lora;
}

std::vector<double> LrSearchConfig::grid() const {
  if (points == 1) return {min_lr};
  std::vector<double> out;
  const double lo = std::log10(min_lr), hi = std::log10(max_lr);
  for (std::size_t i = 0; i < points; ++i) {
    out.push_back(std::pow(10.0, lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1)));
  }
  out.front() = min_lr;
  out.back() = max_lr;
  return out;
}

void ExperimentConfig::validate() const {
  backbone.validate();
  if (data_dir.empty()) throw ConfigError("task.data_dir is required");
  if (output_dir.empty()) throw ConfigError("output_dir is required");
  if (!(optim.lr > 0.0) || !std::isfinite(optim.lr)) throw ConfigError("optim.lr must be positive");
  if (optim.batch_size == 0) throw ConfigError("optim.batch_size must be positive");
  if (!(lr_search.min_lr > 0.0) || lr_search.max_lr < lr_search.min_lr) {
    throw ConfigError("lr_search needs 0 < min <= max");
  }
  if (lr_search.points == 0) throw ConfigError("lr_search.points must be positive");
  if (!(lr_search.budget_fraction > 0.0 && lr_search.budget_fraction <= 1.0)) {
    throw ConfigError("lr_search.budget_fraction must lie in (0, 1]");
  }
  if (method.mode == MethodMode::darts) {
    make_darts_config(*this).validate(backbone);
  } else if (method.mode == MethodMode::peft || method.mode == MethodMode::hybrid) {
    build_peft_spec(*this);
  }
}

std::string ExperimentConfig::display_name() const {
  if (!name.empty()) return name;
  if (method.mode == MethodMode::peft) return std::string(peft_kind_name(method.kind));
  return std::string(method_mode_name(method.mode));
}

json to_json(const ExperimentConfig& c) {
  json task = {{"name", c.task_name}, {"data_dir", c.data_dir.string()}};
  if (c.metric) task["metric"] = metric_kind_name(*c.metric);
  return json{
      {"schema_version", kSchemaVersion},
      {"name", c.name},
      {"backbone", to_json(c.backbone)},
      {"task", task},
      {"method",
       {{"mode", method_mode_name(c.method.mode)},
        {"kind", peft_kind_name(c.method.kind)},
        {"budget", c.method.budget == BudgetLevel::original ? "original" : "reduced"},
        {"adapter", {{"bottleneck", c.method.adapter.bottleneck_dim}}},
        {"lora", lora_to_json(c.method.lora)},
        {"reduced", {{"bottleneck", c.method.reduced_adapter.bottleneck_dim}, {"rank", c.method.reduced_lora.rank}}}}},
      {"optim", {{"lr", c.optim.lr}, {"steps", c.optim.steps}, {"batch_size", c.optim.batch_size}}},
      {"lr_search",
       {{"min", c.lr_search.min_lr},
        {"max", c.lr_search.max_lr},
        {"points", c.lr_search.points},
        {"budget_fraction", c.lr_search.budget_fraction}}},
      {"darts",
       {{"stage1_fraction", c.darts.stage1_fraction},
        {"retrain", retrain_mode_name(c.darts.retrain)},
        {"arch_lr", c.darts.arch_lr}}},
      {"seeds", {{"data", c.seeds.data}, {"init", c.seeds.init}, {"train", c.seeds.train}}},
      {"output_dir", c.output_dir.string()},
  };
}

ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  try {
    if (j.value("schema_version", kSchemaVersion) != kSchemaVersion) {
      throw ConfigError("unsupported config schema_version");
    }
    ExperimentConfig c;
    c.name = j.value("name", std::string{});
    if (!j.contains("backbone")) throw ConfigError("config needs a backbone section");
    c.backbone = backbone_config_from_json(j.at("backbone"));

    const json& task = j.at("task");
    c.task_name = task.value("name", std::string("task"));
    c.data_dir = resolve(base_dir, task.at("data_dir").get<std::string>());
    if (task.contains("metric")) c.metric = parse_metric_kind(task.at("metric").get<std::string>());

    if (j.contains("method")) {
      const json& m = j.at("method");
      c.method.mode = parse_method_mode(m.value("mode", std::string("peft")));
      if (m.contains("kind")) c.method.kind = parse_peft_kind(m.at("kind").get<std::string>());
      const std::string budget = m.value("budget", std::string("original"));
      if (budget == "original") {
        c.method.budget = BudgetLevel::original;
      } else if (budget == "reduced") {
        c.method.budget = BudgetLevel::reduced;
      } else {
        throw ConfigError("method.budget must be 'original' or 'reduced'");
      }
      if (m.contains("adapter")) {
        c.method.adapter.bottleneck_dim = m.at("adapter").value("bottleneck", c.method.adapter.bottleneck_dim);
      }
      if (m.contains("lora")) lora_from_json(m.at("lora"), c.method.lora);
      c.method.reduced_lora = c.method.lora;
      c.method.reduced_lora.rank = 1;
      if (m.contains("reduced")) {
        const json& r = m.at("reduced");
        c.method.reduced_adapter.bottleneck_dim = r.value("bottleneck", c.method.reduced_adapter.bottleneck_dim);
        c.method.reduced_lora.rank = r.value("rank", c.method.reduced_lora.rank);
      }
    }
    if (j.contains("optim")) {
      const json& o = j.at("optim");
      c.optim.lr = o.value("lr", c.optim.lr);
      c.optim.steps = o.value("steps", c.optim.steps);
      c.optim.batch_size = o.value("batch_size", c.optim.batch_size);
    }
    if (j.contains("lr_search")) {
      const json& l = j.at("lr_search");
      c.lr_search.min_lr = l.value("min", c.lr_search.min_lr);
      c.lr_search.max_lr = l.value("max", c.lr_search.max_lr);
      c.lr_search.points = l.value("points", c.lr_search.points);
      c.lr_search.budget_fraction = l.value("budget_fraction", c.lr_search.budget_fraction);
    }
    if (j.contains("darts")) {
      const json& d = j.at("darts");
      c.darts.stage1_fraction = d.value("stage1_fraction", c.darts.stage1_fraction);
      if (d.contains("retrain")) c.darts.retrain = parse_retrain_mode(d.at("retrain").get<std::string>());
      c.darts.arch_lr = d.value("arch_lr", c.darts.arch_lr);
    }
    if (!j.contains("seeds")) throw ConfigError("config needs explicit seeds {data, init, train}");
    const json& s = j.at("seeds");
    for (const char* key : {"data", "init", "train"}) {
      if (!s.contains(key)) throw ConfigError(std::string("seeds.") + key + " is required");
    }
    c.seeds = {s.at("data").get<std::uint64_t>(), s.at("init").get<std::uint64_t>(),
               s.at("train").get<std::uint64_t>()};
    c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
  return experiment_config_from_json(read_json_file(file), std::filesystem::absolute(file).parent_path());
}

BudgetCheck preflight_budget(const ExperimentConfig& c) {
  return check_reduced_budget(c.backbone, c.method.adapter, c.method.reduced_adapter, c.method.lora,
                              c.method.reduced_lora);
}

PeftSpec build_peft_spec(const ExperimentConfig& c) {
  const std::size_t n = c.backbone.n_layers;
  PeftSpec spec;
  switch (c.method.mode) {
    case MethodMode::finetune:
    case MethodMode::wsum:
      spec = PeftSpec::empty(n);
      break;
    case MethodMode::peft:
      spec = PeftSpec::uniform(n, MethodDescriptor{c.method.kind, c.method.active_adapter(), c.method.active_lora()});
      break;
    case MethodMode::hybrid:
      spec = PeftSpec::hybrid(n, c.method.reduced_adapter, c.method.reduced_lora);
      break;
    case MethodMode::darts:
      throw ContractError("search runs derive their PEFT layout");
  }
  const bool reduced = c.method.mode == MethodMode::hybrid ||
                       (c.method.mode == MethodMode::peft && c.method.budget == BudgetLevel::reduced);
  if (reduced) {
    const BudgetCheck b = preflight_budget(c);
    if (!b.ok()) {
      throw ConfigError("reduced budget violates the one-third rule: adapter " + std::to_string(b.adapter_reduced) +
                        " vs " + std::to_string(b.adapter_original) + ", LoRA " + std::to_string(b.lora_reduced) +
                        " vs " + std::to_string(b.lora_original));
    }
  }
  spec.validate(c.backbone);
  return spec;
}

DartsConfig make_darts_config(const ExperimentConfig& c) {
  DartsConfig d;
  d.stage1_fraction = c.darts.stage1_fraction;
  d.total_steps = c.optim.steps;
  d.retrain_mode = c.darts.retrain;
  d.arch_lr = c.darts.arch_lr;
  d.weight_lr = c.optim.lr;
  d.batch_size = c.optim.batch_size;
  d.split_seed = c.seeds.data;
  d.init_seed = c.seeds.init;
  d.train_seed = c.seeds.train;
  d.adapter = c.method.adapter;
  d.lora = c.method.lora;
  return d;
}

json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& file, const json& j) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace peftmix
