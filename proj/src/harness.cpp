// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "peftmix/checkpoint.hpp"
#include "peftmix/darts.hpp"
#include "peftmix/errors.hpp"

namespace peftmix {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr const char* kRunFile = "run.json";
constexpr const char* kPredictionsFile = "predictions.jsonl";
constexpr const char* kCheckpointFile = "checkpoint.bin";
constexpr const char* kDecisionsFile = "decisions.jsonl";

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::vector<double>> snapshot(const std::vector<NamedTensor>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

bool bit_identical(const std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& before) {
  if (params.size() != before.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto v = params[i].tensor.values();
    if (v.size() != before[i].size() || std::memcmp(v.data(), before[i].data(), v.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

std::size_t numel_of(const std::vector<NamedTensor>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

MetricKind task_metric(const ExperimentConfig& config, const Dataset& data) {
  return config.metric.value_or(default_metric(data.spec.kind));
}

TaskMetric evaluate(const Trainable& model, std::span<const Utterance> split, const std::string& task,
                    MetricKind metric, const DatasetSpec& spec, const std::string& name) {
  const auto preds = make_predictions(model, split, name, spec.kind, spec.blank());
  return score_predictions(task, metric, preds);
}

MetricReport single_task_report(TaskMetric m) {
  MetricReport r;
  r.tasks.push_back(std::move(m));
  return r;
}

RunRecord base_record(const ExperimentConfig& config, const Dataset& data) {
  RunRecord rec;
  rec.name = config.display_name();
  rec.config = to_json(config);
  rec.task = config.task_name;
  rec.kind = data.spec.kind;
  rec.metric = task_metric(config, data);
  return rec;
}

void write_failure(RunRecord rec, const ExperimentConfig& config, const Error& e, std::size_t step,
                   Clock::time_point t0) {
  rec.status = "failed";
  rec.error = {{"category", category_name(e.category())}, {"message", e.what()}, {"step", step}};
  rec.wall_clock_seconds = seconds_since(t0);
  write_json_file(config.output_dir / kRunFile, to_json(rec));
}

json param_count_json(const PeftSpec& spec, const BackboneConfig& backbone, const TaskModel& model) {
  const ParamCount pc = param_count(spec, backbone, WeightedSumSpan::layer_outputs_and_input);
  const TaskHead& head = model.head();
  return {{"peft", pc.peft},
          {"weighted_sum", pc.weighted_sum},
          {"head", head.w.numel() + head.b.numel()},
          {"backbone_trainable", model.body().backbone().frozen() ? 0 : model.body().backbone().parameter_count()},
          {"trainable_total", numel_of(model.trainable_parameters())}};
}

void finish_run(RunRecord& rec, const TaskModel& model, const PeftSpec& spec, const ExperimentConfig& config,
                const Dataset& data) {
  const std::string name = rec.name;
  rec.train_metrics = single_task_report(evaluate(model, data.train, rec.task, rec.metric, data.spec, name));
  const auto preds = make_predictions(model, data.test, name, data.spec.kind, data.spec.blank());
  rec.test_metrics = single_task_report(score_predictions(rec.task, rec.metric, preds));
  rec.param_counts = param_count_json(spec, config.backbone, model);

  std::filesystem::create_directories(config.output_dir);
  write_predictions(config.output_dir / kPredictionsFile, preds);
  rec.predictions_file = kPredictionsFile;

  std::vector<NamedTensor> params = model.body().backbone().named_parameters();
  for (auto& p : model.body().peft().named_parameters()) params.push_back(std::move(p));
  for (auto& p : model.head().named_parameters()) params.push_back(std::move(p));
  json meta = {{"name", name}, {"mode", method_mode_name(config.method.mode)}, {"task", rec.task}};
  save_checkpoint(make_checkpoint(config.backbone, params, meta), config.output_dir / kCheckpointFile);
  rec.checkpoint_file = kCheckpointFile;
}

void check_input_width(const ExperimentConfig& config, const Dataset& data) {
  if (data.spec.input_dim != config.backbone.input_dim) {
    throw ConfigError("dataset frames have " + std::to_string(data.spec.input_dim) + " features, backbone expects " +
                      std::to_string(config.backbone.input_dim));
  }
}

std::vector<double> row_values(const Tensor& t, std::size_t r) {
  const auto v = t.values().subspan(r * t.cols(), t.cols());
  return {v.begin(), v.end()};
}

double direction(MetricKind k) { return higher_is_better(k) ? 1.0 : -1.0; }

}  // namespace

json to_json(const PredictionRecord& p) {
  json j = {{"model", p.model}, {"utt", p.utt}, {"kind", task_kind_name(p.kind)}};
  if (p.kind == TaskKind::classification) {
    j["probs"] = row_values(p.probs, 0);
    j["label"] = p.label;
  } else {
    json frames = json::array();
    for (std::size_t t = 0; t < p.probs.rows(); ++t) frames.push_back(row_values(p.probs, t));
    j["frames"] = std::move(frames);
    j["blank"] = p.blank;
    j["target"] = p.target;
  }
  return j;
}

PredictionRecord prediction_from_json(const json& j) {
  try {
    PredictionRecord p;
    p.model = j.at("model").get<std::string>();
    p.utt = j.at("utt").get<std::string>();
    p.kind = parse_task_kind(j.at("kind").get<std::string>());
    if (p.kind == TaskKind::classification) {
      auto probs = j.at("probs").get<std::vector<double>>();
      const std::size_t c = probs.size();
      p.probs = Tensor({1, c}, std::move(probs));
      p.label = j.at("label").get<int>();
    } else {
      std::vector<double> flat;
      std::size_t rows = 0, cols = 0;
      for (const auto& f : j.at("frames")) {
        auto row = f.get<std::vector<double>>();
        if (rows == 0) cols = row.size();
        if (row.size() != cols) throw DataError("ragged frame matrix for " + p.utt);
        flat.insert(flat.end(), row.begin(), row.end());
        ++rows;
      }
      p.probs = Tensor({rows, cols}, std::move(flat));
      p.blank = j.at("blank").get<int>();
      p.target = j.at("target").get<std::vector<int>>();
    }
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed prediction record: ") + e.what());
  }
}

void write_predictions(const std::filesystem::path& file, std::span<const PredictionRecord> preds) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  for (const auto& p : preds) out << to_json(p).dump() << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::vector<PredictionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(prediction_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw DataError("malformed line in " + file.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<PredictionRecord> make_predictions(const Trainable& model, std::span<const Utterance> data,
                                               const std::string& model_name, TaskKind kind, int blank) {
  const std::vector<Tensor> dists = predict_distributions(model, data);
  std::vector<PredictionRecord> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    PredictionRecord p;
    p.model = model_name;
    p.utt = data[i].id;
    p.kind = kind;
    p.probs = dists[i];
    p.blank = blank;
    p.label = data[i].label;
    p.target = data[i].target;
    out.push_back(std::move(p));
  }
  return out;
}

MetricKind default_metric(TaskKind kind) {
  return kind == TaskKind::classification ? MetricKind::accuracy : MetricKind::per;
}

TaskMetric score_predictions(const std::string& task, MetricKind metric, std::span<const PredictionRecord> preds) {
  TaskMetric m;
  m.task = task;
  m.kind = metric;
  for (const auto& p : preds) {
    if (p.kind == TaskKind::classification) {
      if (metric != MetricKind::accuracy) throw ConfigError("classification predictions are scored by accuracy");
      const std::size_t hyp = argmax(p.probs.values());
      m.utterances.push_back({p.utt, static_cast<double>(static_cast<int>(hyp) == p.label), 1.0});
    } else {
      if (metric != MetricKind::per && metric != MetricKind::wer) {
        throw ConfigError("CTC predictions are scored by PER or WER");
      }
      if (p.target.empty()) throw MetricError("utterance " + p.utt + " has an empty reference");
      const auto hyp = greedy_ctc_decode(p.probs, p.blank);
      m.utterances.push_back({p.utt, static_cast<double>(edit_counts(p.target, hyp).total()),
                              static_cast<double>(p.target.size())});
    }
  }
  if (m.utterances.empty()) throw MetricError("no predictions to score");
  return m;
}

json to_json(const RunRecord& r) {
  json metrics = {{"train", to_json(r.train_metrics)}, {"test", to_json(r.test_metrics)}};
  if (r.unaligned_metrics) metrics["unaligned"] = to_json(*r.unaligned_metrics);
  return {{"schema_version", kSchemaVersion},
          {"name", r.name},
          {"status", r.status},
          {"error", r.error},
          {"config", r.config},
          {"task", {{"name", r.task}, {"kind", task_kind_name(r.kind)}, {"metric", metric_kind_name(r.metric)}}},
          {"losses", r.losses},
          {"steps", r.steps},
          {"param_counts", r.param_counts},
          {"metrics", metrics},
          {"frozen_audit", r.frozen_audit},
          {"wall_clock_seconds", r.wall_clock_seconds},
          {"predictions", r.predictions_file},
          {"checkpoint", r.checkpoint_file},
          {"extra", r.extra}};
}

RunRecord run_record_from_json(const json& j) {
  try {
    if (j.value("schema_version", 0) != kSchemaVersion) throw DataError("unsupported run record schema_version");
    RunRecord r;
    r.name = j.at("name").get<std::string>();
    r.status = j.at("status").get<std::string>();
    r.error = j.value("error", json());
    r.config = j.value("config", json::object());
    const json& task = j.at("task");
    r.task = task.at("name").get<std::string>();
    r.kind = parse_task_kind(task.at("kind").get<std::string>());
    r.metric = parse_metric_kind(task.at("metric").get<std::string>());
    r.losses = j.value("losses", std::vector<double>{});
    r.steps = j.value("steps", std::size_t{0});
    r.param_counts = j.value("param_counts", json::object());
    if (j.contains("metrics")) {
      const json& m = j.at("metrics");
      if (m.contains("train")) r.train_metrics = metric_report_from_json(m.at("train"));
      if (m.contains("test")) r.test_metrics = metric_report_from_json(m.at("test"));
      if (m.contains("unaligned")) r.unaligned_metrics = metric_report_from_json(m.at("unaligned"));
    }
    r.frozen_audit = j.value("frozen_audit", std::string("skipped"));
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    r.predictions_file = j.value("predictions", std::string{});
    r.checkpoint_file = j.value("checkpoint", std::string{});
    r.extra = j.value("extra", json::object());
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run record: ") + e.what());
  }
}

std::filesystem::path run_directory(const std::filesystem::path& path) {
  return std::filesystem::is_directory(path) ? path : path.parent_path();
}

RunRecord load_run_record(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / kRunFile : path;
  return run_record_from_json(read_json_file(file));
}

Dataset load_task_data(const ExperimentConfig& config) {
  if (!std::filesystem::exists(config.data_dir / "dataset.json")) {
    throw DataError("no dataset at " + config.data_dir.string() + " (run gen-data first)");
  }
  Dataset data = load_dataset(config.data_dir);
  check_input_width(config, data);
  return data;
}

FitResult fit_model(const ExperimentConfig& config, const Dataset& data) {
  if (config.method.mode == MethodMode::darts) throw ContractError("search runs go through darts_experiment");
  check_input_width(config, data);
  BackboneModel backbone = BackboneModel::build(config.backbone);
  const bool finetune = config.method.mode == MethodMode::finetune;
  if (finetune) backbone.set_frozen(false);
  PeftSpec spec = build_peft_spec(config);
  TaskModel model = init_task_model(backbone, spec, data.spec.kind, data.spec.output_classes(), config.seeds.init);

  const auto frozen_params = model.body().backbone().named_parameters();
  const auto before = snapshot(frozen_params);

  Adam opt(tensors_of(model.trainable_parameters()), AdamConfig{.lr = config.optim.lr});
  BatchSampler sampler(iota_indices(data.train.size()), config.optim.batch_size, config.seeds.train);
  std::vector<double> losses =
      train_steps(model, opt, sampler, data.train, config.optim.steps, data.spec.kind, data.spec.blank());

  if (!finetune && !bit_identical(frozen_params, before)) {
    throw ContractError("frozen backbone parameters changed during training");
  }
  return FitResult{std::move(model), std::move(spec), std::move(losses)};
}

RunRecord train_experiment(const ExperimentConfig& config) {
  if (config.method.mode == MethodMode::darts) return darts_experiment(config);
  const auto t0 = Clock::now();
  const Dataset data = load_task_data(config);
  RunRecord rec = base_record(config, data);
  std::filesystem::create_directories(config.output_dir);

  std::optional<FitResult> fit;
  try {
    fit.emplace(fit_model(config, data));
  } catch (const SearchFailure& e) {
    write_failure(rec, config, e, e.step(), t0);
    throw;
  }
  rec.losses = fit->losses;
  rec.steps = fit->losses.size();
  rec.frozen_audit = config.method.mode == MethodMode::finetune ? "skipped" : "passed";
  finish_run(rec, fit->model, fit->spec, config, data);
  rec.wall_clock_seconds = seconds_since(t0);
  write_json_file(config.output_dir / kRunFile, to_json(rec));
  return rec;
}

RunRecord darts_experiment(const ExperimentConfig& config) {
  const auto t0 = Clock::now();
  const Dataset data = load_task_data(config);
  RunRecord rec = base_record(config, data);
  std::filesystem::create_directories(config.output_dir);
  const DartsConfig dc = make_darts_config(config);

  const BackboneModel backbone = BackboneModel::build(config.backbone);
  const auto frozen_params = backbone.named_parameters();
  const auto before = snapshot(frozen_params);

  std::optional<DartsResult> result;
  try {
    result.emplace(run_darts(backbone, data.train, dc, data.spec.kind, data.spec.output_classes(), data.spec.blank()));
  } catch (const SearchFailure& e) {
    write_failure(rec, config, e, e.step(), t0);
    throw;
  }
  if (!bit_identical(frozen_params, before)) throw ContractError("frozen backbone parameters changed during search");
  rec.frozen_audit = "passed";

  std::vector<StepRecord> log = result->stage1.log;
  log.insert(log.end(), result->stage2.log.begin(), result->stage2.log.end());
  const json report = search_report(dc, result->derived, log);
  write_json_file(config.output_dir / "search_report.json", report);

  for (const auto& s : log) rec.losses.push_back(s.loss);
  rec.steps = report.at("stage1_steps").get<std::size_t>() + report.at("stage2_steps").get<std::size_t>();
  rec.extra["search"] = report;
  const TaskModel& model = result->stage2.model;
  finish_run(rec, model, model.body().spec(), config, data);
  rec.wall_clock_seconds = seconds_since(t0);
  write_json_file(config.output_dir / kRunFile, to_json(rec));
  return rec;
}

LrSearchResult lr_search(const ExperimentConfig& config, std::optional<std::vector<double>> grid) {
  if (config.method.mode == MethodMode::darts) throw ConfigError("lr_search supports non-search modes only");
  const std::vector<double> points = grid ? *grid : config.lr_search.grid();
  if (points.empty()) throw ConfigError("empty learning-rate grid");
  for (double lr : points) {
    if (lr < config.lr_search.min_lr || lr > config.lr_search.max_lr) {
      throw ConfigError(fmt::format("learning rate {} lies outside [{}, {}]", lr, config.lr_search.min_lr,
                                    config.lr_search.max_lr));
    }
  }
  const Dataset data = load_task_data(config);
  const MetricKind metric = task_metric(config, data);

  LrSearchResult result;
  result.steps_per_point = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.lr_search.budget_fraction * static_cast<double>(config.optim.steps))));
  std::vector<double> sorted = points;
  std::sort(sorted.begin(), sorted.end());
  std::optional<double> best_value;
  for (double lr : sorted) {
    ExperimentConfig point = config;
    point.optim.lr = lr;
    point.optim.steps = result.steps_per_point;
    LrSearchEntry entry{lr, "ok", 0.0};
    try {
      const FitResult fit = fit_model(point, data);
      entry.dev_value = evaluate(fit.model, data.dev, config.task_name, metric, data.spec, "lr_search").value();
      // strict improvement only, so ties keep the lower rate
      if (!best_value || direction(metric) * (entry.dev_value - *best_value) > 0.0) {
        best_value = entry.dev_value;
        result.best_lr = lr;
      }
    } catch (const SearchFailure&) {
      entry.status = "diverged";
    }
    result.entries.push_back(entry);
  }
  if (!best_value) throw SearchFailure(0, "every learning rate in the grid diverged");

  json entries = json::array();
  for (const auto& e : result.entries) {
    entries.push_back({{"lr", e.lr}, {"status", e.status}, {"dev_value", e.dev_value}});
  }
  write_json_file(config.output_dir / "lr_search.json",
                  {{"schema_version", kSchemaVersion},
                   {"metric", metric_kind_name(metric)},
                   {"budget_fraction", config.lr_search.budget_fraction},
                   {"steps_per_point", result.steps_per_point},
                   {"entries", entries},
                   {"best_lr", result.best_lr}});
  return result;
}

RunRecord run_ensemble(std::span<const std::filesystem::path> run_dirs, EnsembleMode mode, bool apply_alignment,
                       const std::filesystem::path& out_dir) {
  if (run_dirs.size() < 2) throw ContractError("an ensemble needs at least two runs");
  std::vector<RunRecord> members;
  std::vector<std::vector<PredictionRecord>> preds;
  for (const auto& path : run_dirs) {
    RunRecord r = load_run_record(path);
    if (r.status != "ok") throw DataError("run " + path.string() + " did not finish");
    const ExperimentConfig cfg = experiment_config_from_json(r.config, run_directory(path));
    if (cfg.method.mode != MethodMode::peft || cfg.method.budget != BudgetLevel::reduced) {
      throw ConfigError("ensemble member " + r.name + " must be a single-PEFT run at the reduced budget");
    }
    if (!preflight_budget(cfg).ok()) throw ConfigError("ensemble member " + r.name + " violates the one-third rule");
    preds.push_back(read_predictions(run_directory(path) / r.predictions_file));
    members.push_back(std::move(r));
  }

  const RunRecord& first = members.front();
  const auto& ref = preds.front();
  for (std::size_t m = 1; m < members.size(); ++m) {
    if (members[m].task != first.task || members[m].kind != first.kind) {
      throw DataError("ensemble members were trained on different tasks");
    }
    if (preds[m].size() != ref.size()) throw DataError("ensemble members scored different test sets");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const auto& a = ref[i];
      const auto& b = preds[m][i];
      if (a.utt != b.utt || a.label != b.label || a.target != b.target) {
        throw DataError("ensemble members disagree on test utterance " + a.utt);
      }
    }
  }

  RunRecord rec;
  rec.name = fmt::format("ensemble-{}", ensemble_mode_name(mode));
  rec.task = first.task;
  rec.kind = first.kind;
  rec.metric = first.metric;
  json member_names = json::array();
  std::size_t total_peft = 0;
  for (const auto& m : members) {
    member_names.push_back(m.name);
    total_peft += m.param_counts.value("peft", std::size_t{0});
  }
  rec.param_counts = {{"peft", total_peft}};
  rec.extra["ensemble"] = {{"mode", ensemble_mode_name(mode)}, {"members", member_names}, {"aligned", apply_alignment}};
  rec.config = {{"members", member_names}};

  std::filesystem::create_directories(out_dir);
  std::ofstream decisions(out_dir / kDecisionsFile, std::ios::binary);
  if (!decisions) throw IoError("cannot write " + (out_dir / kDecisionsFile).string());

  TaskMetric primary{rec.task, rec.metric, {}, 0.0};
  if (first.kind == TaskKind::classification) {
    for (std::size_t i = 0; i < ref.size(); ++i) {
      std::vector<ProbOutput> outs;
      for (const auto& p : preds) outs.push_back(row_values(p[i].probs, 0));
      const std::size_t decision = mode == EnsembleMode::vote ? majority_vote(outs) : average_probs(outs).decision;
      primary.utterances.push_back({ref[i].utt, static_cast<double>(static_cast<int>(decision) == ref[i].label), 1.0});
      decisions << json{{"utt", ref[i].utt}, {"decision", decision}, {"label", ref[i].label}}.dump() << '\n';
    }
    rec.test_metrics = single_task_report(std::move(primary));
  } else {
    TaskMetric aligned = primary, unaligned = primary;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      std::vector<ProbSequence> seqs;
      for (const auto& p : preds) seqs.push_back({p[i].probs, p[i].blank});
      const auto with = ensemble_ctc(seqs, mode, true);
      const auto without = ensemble_ctc(seqs, mode, false);
      const double len = static_cast<double>(ref[i].target.size());
      aligned.utterances.push_back({ref[i].utt, static_cast<double>(edit_counts(ref[i].target, with).total()), len});
      unaligned.utterances.push_back(
          {ref[i].utt, static_cast<double>(edit_counts(ref[i].target, without).total()), len});
      decisions << json{{"utt", ref[i].utt}, {"aligned", with}, {"unaligned", without}, {"target", ref[i].target}}.dump()
                << '\n';
    }
    rec.test_metrics = single_task_report(apply_alignment ? aligned : unaligned);
    rec.unaligned_metrics = single_task_report(unaligned);
    rec.extra["ensemble"]["aligned_value"] = aligned.value();
    rec.extra["ensemble"]["unaligned_value"] = unaligned.value();
  }
  if (!decisions) throw IoError("write failed for " + (out_dir / kDecisionsFile).string());
  rec.predictions_file = kDecisionsFile;
  write_json_file(out_dir / kRunFile, to_json(rec));
  return rec;
}

AuditResult audit_run(const std::filesystem::path& run_dir) {
  AuditResult audit;
  const RunRecord rec = load_run_record(run_dir);
  const auto dir = run_directory(run_dir);
  if (rec.status != "ok") {
    audit.ok = false;
    audit.problems.push_back("run status is " + rec.status);
    return audit;
  }
  const TaskMetric* stored = rec.test_metrics.find(rec.task);
  if (!stored) {
    audit.ok = false;
    audit.problems.push_back("run has no test metric for task " + rec.task);
    return audit;
  }

  TaskMetric recomputed{rec.task, rec.metric, {}, 0.0};
  if (rec.extra.contains("ensemble")) {
    const bool aligned = rec.extra["ensemble"].value("aligned", false);
    std::ifstream in(dir / rec.predictions_file);
    if (!in) throw IoError("cannot read " + (dir / rec.predictions_file).string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json d = json::parse(line);
      const std::string utt = d.at("utt").get<std::string>();
      if (rec.kind == TaskKind::classification) {
        recomputed.utterances.push_back({utt, static_cast<double>(d.at("decision").get<int>() == d.at("label").get<int>()), 1.0});
      } else {
        const auto target = d.at("target").get<std::vector<int>>();
        const auto hyp = d.at(aligned ? "aligned" : "unaligned").get<std::vector<int>>();
        recomputed.utterances.push_back(
            {utt, static_cast<double>(edit_counts(target, hyp).total()), static_cast<double>(target.size())});
      }
    }
  } else {
    recomputed = score_predictions(rec.task, rec.metric, read_predictions(dir / rec.predictions_file));
  }

  if (recomputed.utterances.size() != stored->utterances.size()) {
    audit.problems.push_back("utterance count differs from the stored breakdown");
  } else {
    for (std::size_t i = 0; i < recomputed.utterances.size(); ++i) {
      const auto& a = recomputed.utterances[i];
      const auto& b = stored->utterances[i];
      if (a.id != b.id || a.numerator != b.numerator || a.denominator != b.denominator) {
        audit.problems.push_back("utterance " + b.id + " does not match its stored score");
      }
    }
  }
  if (recomputed.value() != stored->value()) {
    audit.problems.push_back(fmt::format("aggregate {} recomputes to {}", stored->value(), recomputed.value()));
  }
  if (!rec.checkpoint_file.empty()) {
    try {
      load_checkpoint(dir / rec.checkpoint_file);
    } catch (const Error& e) {
      audit.problems.push_back(std::string("checkpoint unreadable: ") + e.what());
    }
  }
  audit.ok = audit.problems.empty();
  return audit;
}

std::string format_results_table(std::span<const RunRecord> runs) {
  std::vector<std::string> tasks, names;
  std::map<std::pair<std::string, std::string>, std::string> cells;
  std::map<std::string, std::string> params;
  for (const auto& r : runs) {
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    if (std::find(names.begin(), names.end(), r.name) == names.end()) names.push_back(r.name);
    params[r.name] = fmt::format("{}", r.param_counts.value("peft", std::size_t{0}) +
                                           r.param_counts.value("weighted_sum", std::size_t{0}));
    if (r.status != "ok") {
      cells[{r.name, r.task}] = "failed";
      continue;
    }
    const TaskMetric* m = r.test_metrics.find(r.task);
    std::string cell = m ? fmt::format("{:.2f}", 100.0 * m->value()) : "-";
    if (r.unaligned_metrics && r.extra.contains("ensemble")) {
      const double a = r.extra["ensemble"].value("aligned_value", 0.0);
      const double u = r.extra["ensemble"].value("unaligned_value", 0.0);
      cell = fmt::format("{:.2f} / {:.2f}", 100.0 * a, 100.0 * u);
    }
    cells[{r.name, r.task}] = cell;
  }
  std::vector<std::string> headers;
  for (const auto& t : tasks) {
    const auto it = std::find_if(runs.begin(), runs.end(), [&](const RunRecord& r) { return r.task == t; });
    headers.push_back(fmt::format("{} {} {}", t, metric_kind_name(it->metric), higher_is_better(it->metric) ? "↑" : "↓"));
  }
  std::size_t name_w = 6;
  for (const auto& n : names) name_w = std::max(name_w, n.size());
  std::string out = fmt::format("{:<{}}  {:>10}", "Method", name_w, "# Params");
  for (const auto& h : headers) out += fmt::format("  {:>18}", h);
  out += '\n';
  for (const auto& n : names) {
    out += fmt::format("{:<{}}  {:>10}", n, name_w, params[n]);
    for (const auto& t : tasks) {
      const auto it = cells.find({n, t});
      out += fmt::format("  {:>18}", it == cells.end() ? "-" : it->second);
    }
    out += '\n';
  }
  return out;
}

}  // namespace peftmix
