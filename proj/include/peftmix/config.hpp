// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "peftmix/backbone.hpp"
#include "peftmix/darts.hpp"
#include "peftmix/metrics.hpp"
#include "peftmix/peft.hpp"

namespace peftmix {

inline constexpr int kSchemaVersion = 1;

enum class MethodMode {
  finetune,  // backbone unfrozen, no PEFT
  wsum,      // weighted sum and head only
  peft,      // one PEFT kind in every layer
  hybrid,    // all three kinds in every layer at the reduced budget
  darts,     // per-layer search over the three kinds
};

std::string_view method_mode_name(MethodMode mode);
MethodMode parse_method_mode(std::string_view name);

enum class BudgetLevel { original, reduced };

struct MethodConfig {
  MethodMode mode = MethodMode::peft;
  PeftKind kind = PeftKind::sequential;
  BudgetLevel budget = BudgetLevel::original;
  AdapterConfig adapter{8};
  LoraConfig lora{4, 2.0, {Projection::query, Projection::value}};
  AdapterConfig reduced_adapter{2};
  LoraConfig reduced_lora{1, 2.0, {Projection::query, Projection::value}};

  /// Adapter and LoRA settings for the selected budget.
  AdapterConfig active_adapter() const;
  LoraConfig active_lora() const;
};

struct OptimConfig {
  double lr = 1e-2;
  std::size_t steps = 300;
  std::size_t batch_size = 8;
};

struct LrSearchConfig {
  double min_lr = 1e-6;
  double max_lr = 1e-2;
  std::size_t points = 5;
  double budget_fraction = 0.25;

  /// Log-spaced grid from min_lr to max_lr inclusive.
  std::vector<double> grid() const;
};

struct DartsSettings {
  double stage1_fraction = 0.25;
  RetrainMode retrain = RetrainMode::remaining_steps;
  double arch_lr = 3e-3;
};

struct Seeds {
  std::uint64_t data = 0;  // training-set halving for the search
  std::uint64_t init = 0;  // PEFT and head initialisation
  std::uint64_t train = 0; // batch order
};

struct ExperimentConfig {
  std::string name;
  BackboneConfig backbone;
  std::string task_name;
  std::filesystem::path data_dir;
  std::optional<MetricKind> metric;
  MethodConfig method;
  OptimConfig optim;
  LrSearchConfig lr_search;
  DartsSettings darts;
  Seeds seeds;
  std::filesystem::path output_dir;

  void validate() const;
  /// `name` if set, otherwise a label derived from the method.
  std::string display_name() const;
};

nlohmann::json to_json(const ExperimentConfig& config);

/// Relative paths are resolved against `base_dir`. Seeds are mandatory.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);

/// PEFT layout for non-search modes. Reduced and hybrid layouts must pass the
/// one-third preflight check or ConfigError is raised.
PeftSpec build_peft_spec(const ExperimentConfig& config);

BudgetCheck preflight_budget(const ExperimentConfig& config);

DartsConfig make_darts_config(const ExperimentConfig& config);

nlohmann::json read_json_file(const std::filesystem::path& file);
void write_json_file(const std::filesystem::path& file, const nlohmann::json& j);

}  // namespace peftmix
