// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "peftmix/config.hpp"
#include "peftmix/data.hpp"
#include "peftmix/ensemble.hpp"
#include "peftmix/metrics.hpp"
#include "peftmix/training.hpp"

namespace peftmix {

/// One model's output for one test utterance: [1×C] for classification,
/// [T×C] frame distributions for CTC.
struct PredictionRecord {
  std::string model;
  std::string utt;
  TaskKind kind = TaskKind::classification;
  Tensor probs;
  int blank = 0;
  int label = -1;
  std::vector<int> target;
};

nlohmann::json to_json(const PredictionRecord& p);
PredictionRecord prediction_from_json(const nlohmann::json& j);
void write_predictions(const std::filesystem::path& file, std::span<const PredictionRecord> preds);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& file);

std::vector<PredictionRecord> make_predictions(const Trainable& model, std::span<const Utterance> data,
                                               const std::string& model_name, TaskKind kind, int blank);

MetricKind default_metric(TaskKind kind);

/// Accuracy counts argmax hits; WER/PER count greedy-decode edits against the target.
TaskMetric score_predictions(const std::string& task, MetricKind metric, std::span<const PredictionRecord> preds);

struct RunRecord {
  std::string name;
  std::string status = "ok";
  nlohmann::json error;  // null unless status == "failed"
  nlohmann::json config;
  std::string task;
  TaskKind kind = TaskKind::classification;
  MetricKind metric = MetricKind::accuracy;
  std::vector<double> losses;
  std::size_t steps = 0;
  nlohmann::json param_counts = nlohmann::json::object();
  MetricReport train_metrics;
  MetricReport test_metrics;
  std::optional<MetricReport> unaligned_metrics;  // CTC ensembles only
  std::string frozen_audit = "skipped";
  double wall_clock_seconds = 0.0;
  std::string predictions_file;
  std::string checkpoint_file;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);
/// Accepts a run directory or a run.json path.
RunRecord load_run_record(const std::filesystem::path& path);
std::filesystem::path run_directory(const std::filesystem::path& path);

struct FitResult {
  TaskModel model;
  PeftSpec spec;
  std::vector<double> losses;
};

/// Trains a non-search configuration in memory. Non-fine-tune modes verify
/// afterwards that the backbone is bit-identical to its initial state.
FitResult fit_model(const ExperimentConfig& config, const Dataset& data);

Dataset load_task_data(const ExperimentConfig& config);

/// Full run: training, test predictions, metrics, checkpoint and run.json
/// under output_dir. Divergence writes a failed run.json, then rethrows.
RunRecord train_experiment(const ExperimentConfig& config);

/// Two-stage search run; also writes search_report.json.
RunRecord darts_experiment(const ExperimentConfig& config);

struct LrSearchEntry {
  double lr = 0.0;
  std::string status;
  double dev_value = 0.0;
};

struct LrSearchResult {
  std::vector<LrSearchEntry> entries;
  double best_lr = 0.0;
  std::size_t steps_per_point = 0;
};

/// One reduced-budget run per grid point, best dev metric wins, ties go to the
/// lower learning rate. Writes lr_search.json under output_dir.
LrSearchResult lr_search(const ExperimentConfig& config, std::optional<std::vector<double>> grid = std::nullopt);

/// Combines test predictions of >= 2 runs. CTC tasks get both aligned and
/// unaligned results; `apply_alignment` picks which one is primary.
RunRecord run_ensemble(std::span<const std::filesystem::path> run_dirs, EnsembleMode mode, bool apply_alignment,
                       const std::filesystem::path& out_dir);

struct AuditResult {
  bool ok = true;
  std::vector<std::string> problems;
};

/// Recomputes the test metrics of a run from its stored predictions.
AuditResult audit_run(const std::filesystem::path& run_dir);

/// Table with one row per run: name, trainable upstream parameters, and the
/// test metric of each task ("aligned / unaligned" for CTC ensembles).
std::string format_results_table(std::span<const RunRecord> runs);

}  // namespace peftmix
