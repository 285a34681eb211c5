// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "desk_fixture.hpp"
#include "grad_suite.hpp"
#include "oracles.hpp"
#include "peftmix/checkpoint.hpp"
#include "peftmix/ctc.hpp"
#include "peftmix/darts.hpp"
#include "peftmix/errors.hpp"
#include "peftmix/harness.hpp"
#include "shift_case.hpp"

using namespace peftmix;
using oracle::TempDir;
namespace fs = std::filesystem;

namespace {

/// Writes the small classification dataset under `dir/data` and returns the
/// loaded config for a run under `dir/<run>`.
ExperimentConfig setup_run(const TempDir& dir, const std::string& run, const oracle::RunOptions& o) {
  if (!fs::exists(dir / "data" / "dataset.json")) {
    write_dataset(generate_dataset(oracle::small_classification_spec()), dir / "data");
  }
  const fs::path file = dir / (run + ".json");
  write_json_file(file, oracle::experiment_json(oracle::small_backbone(), "sid", "data", run, o));
  return load_experiment_config(file);
}

/// Run directory holding hand-made test predictions, shaped like the output of
/// a reduced-budget single-PEFT run.
fs::path mock_run(const TempDir& tmp, const std::string& name, TaskKind kind, std::vector<PredictionRecord> preds) {
  const fs::path dir = tmp / name;
  fs::create_directories(dir);
  oracle::RunOptions o;
  o.budget = "reduced";
  const ExperimentConfig cfg =
      experiment_config_from_json(oracle::experiment_json(oracle::small_backbone(), "task", "data", ".", o), dir);
  RunRecord r;
  r.name = name;
  r.config = to_json(cfg);
  r.task = "task";
  r.kind = kind;
  r.metric = default_metric(kind);
  for (auto& p : preds) p.model = name;
  r.test_metrics.tasks.push_back(score_predictions(r.task, r.metric, preds));
  r.predictions_file = "predictions.jsonl";
  write_predictions(dir / r.predictions_file, preds);
  write_json_file(dir / "run.json", to_json(r));
  return dir;
}

PredictionRecord classification_pred(const std::string& utt, std::vector<double> probs, int label) {
  PredictionRecord p;
  p.utt = utt;
  p.kind = TaskKind::classification;
  const std::size_t c = probs.size();
  p.probs = Tensor({1, c}, std::move(probs));
  p.label = label;
  return p;
}

PredictionRecord ctc_pred(const std::string& utt, const Tensor& frames, std::vector<int> target) {
  PredictionRecord p;
  p.utt = utt;
  p.kind = TaskKind::ctc;
  p.probs = frames;
  p.blank = 0;
  p.target = std::move(target);
  return p;
}

std::size_t nearest_prototype(const Tensor& features, std::size_t row, const std::vector<std::vector<double>>& protos) {
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t k = 0; k < protos.size(); ++k) {
    double d = 0.0;
    for (std::size_t c = 0; c < features.cols(); ++c) d += std::pow(features.at(row, c) - protos[k][c], 2);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("dataset generation is deterministic and splits are disjoint") {
  TempDir tmp("gen");
  const DatasetSpec spec = oracle::small_classification_spec();
  write_dataset(generate_dataset(spec), tmp / "a");
  write_dataset(generate_dataset(spec), tmp / "b");
  for (const char* f : {"dataset.json", "train.jsonl", "dev.jsonl", "test.jsonl"}) {
    CHECK(oracle::read_bytes(tmp / "a" / f) == oracle::read_bytes(tmp / "b" / f));
    CHECK_FALSE(oracle::read_bytes(tmp / "a" / f).empty());
  }

  const Dataset d = load_dataset(tmp / "a");
  CHECK(d.train.size() == spec.train_size);
  CHECK(d.dev.size() == spec.dev_size);
  CHECK(d.test.size() == spec.test_size);
  std::set<std::string> ids;
  for (const auto* split : {&d.train, &d.dev, &d.test})
    for (const auto& u : *split) ids.insert(u.id);
  CHECK(ids.size() == spec.train_size + spec.dev_size + spec.test_size);

  // split contents differ too, not only the ids
  for (const auto& t : d.test)
    for (const auto& u : d.train)
      CHECK_FALSE(oracle::bitwise_equal(t.features.values(), u.features.values()));

  DatasetSpec other = spec;
  other.seed = spec.seed + 1;
  CHECK_FALSE(oracle::bitwise_equal(generate_dataset(other).train[0].features.values(), d.train[0].features.values()));

  const DatasetSpec back = dataset_spec_from_json(to_json(spec));
  CHECK(to_json(back) == to_json(spec));
}

TEST_CASE("noise-free classification is solved by the nearest prototype") {
  DatasetSpec spec = oracle::small_classification_spec();
  spec.noise = 0.0;
  const auto protos = make_prototypes(spec);
  const Dataset d = generate_dataset(spec);
  std::size_t correct = 0, total = 0;
  for (const auto* split : {&d.train, &d.test}) {
    for (const auto& u : *split) {
      std::vector<std::size_t> votes(spec.n_classes, 0);
      for (std::size_t t = 0; t < u.features.rows(); ++t) ++votes[nearest_prototype(u.features, t, protos)];
      correct += static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin()) == u.label;
      ++total;
    }
  }
  CHECK(correct == total);

  // prototypes are orthonormal up to the amplitude
  for (std::size_t i = 0; i < protos.size(); ++i)
    for (std::size_t j = 0; j < protos.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < spec.input_dim; ++c) dot += protos[i][c] * protos[j][c];
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("noise-free CTC frames carry their frame labels") {
  DatasetSpec spec = oracle::small_ctc_spec();
  spec.noise = 0.0;
  const auto protos = make_prototypes(spec);
  REQUIRE(protos.size() == spec.vocab_size + 1);
  const Dataset d = generate_dataset(spec);
  for (const auto& u : d.train) {
    REQUIRE(u.frame_labels.size() == u.features.rows());
    CHECK(u.target.size() >= spec.min_tokens);
    CHECK(u.target.size() <= spec.max_tokens);
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      const std::size_t k = nearest_prototype(u.features, t, protos);
      const int want = k == spec.vocab_size ? 0 : static_cast<int>(k) + 1;
      CHECK(u.frame_labels[t] == want);
    }
    CHECK(ctc_min_frames(u.target) <= u.features.rows());
  }
}

TEST_CASE("dataset spec validation") {
  DatasetSpec s = oracle::small_classification_spec();
  s.n_classes = 9;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  DatasetSpec c = oracle::small_ctc_spec();
  c.vocab_size = 8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  nlohmann::json j = to_json(oracle::small_classification_spec());
  j.erase("seed");
  CHECK_THROWS_AS(dataset_spec_from_json(j), ConfigError);
}

TEST_CASE("experiment configs need seeds and resolve paths against the config file") {
  TempDir tmp("cfg");
  const nlohmann::json j =
      oracle::experiment_json(oracle::small_backbone(), "sid", "data", "runs/seq", oracle::RunOptions{});
  const ExperimentConfig c = experiment_config_from_json(j, tmp.path());
  CHECK(c.data_dir == tmp / "data");
  CHECK(c.output_dir == tmp / "runs/seq");
  CHECK(c.seeds.data == 1);
  CHECK(c.seeds.init == 2);
  CHECK(c.seeds.train == 3);

  nlohmann::json no_seeds = j;
  no_seeds.erase("seeds");
  CHECK_THROWS_AS(experiment_config_from_json(no_seeds, tmp.path()), ConfigError);
  nlohmann::json partial = j;
  partial["seeds"].erase("train");
  CHECK_THROWS_AS(experiment_config_from_json(partial, tmp.path()), ConfigError);
  nlohmann::json no_backbone_seed = j;
  no_backbone_seed["backbone"].erase("seed");
  CHECK_THROWS_AS(experiment_config_from_json(no_backbone_seed, tmp.path()), ConfigError);
  nlohmann::json future = j;
  future["schema_version"] = 99;
  CHECK_THROWS_AS(experiment_config_from_json(future, tmp.path()), ConfigError);

  // round trip through the snapshot stored in run records
  const ExperimentConfig again = experiment_config_from_json(to_json(c), fs::path("/elsewhere"));
  CHECK(to_json(again) == to_json(c));

  // a reduced budget that is not below one third is refused before training
  nlohmann::json loose = j;
  loose["method"]["budget"] = "reduced";
  loose["method"]["reduced"] = {{"bottleneck", 4}};
  CHECK_THROWS_AS(experiment_config_from_json(loose, tmp.path()), ConfigError);
  nlohmann::json hybrid = j;
  hybrid["method"] = {{"mode", "hybrid"}, {"reduced", {{"rank", 3}}}};
  CHECK_THROWS_AS(experiment_config_from_json(hybrid, tmp.path()), ConfigError);
}

TEST_CASE("log-spaced learning-rate grid") {
  LrSearchConfig l;
  const auto g = l.grid();
  REQUIRE(g.size() == 5);
  CHECK(g.front() == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(g.back() == doctest::Approx(1e-2).epsilon(1e-12));
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] / g[i - 1] == doctest::Approx(10.0).epsilon(1e-9));
  l.points = 1;
  CHECK(l.grid() == std::vector<double>{1e-6});
}

TEST_CASE("checkpoints round-trip bit for bit") {
  TempDir tmp("ckpt");
  const BackboneConfig bc = oracle::small_backbone();
  const BackboneModel backbone = BackboneModel::build(bc);
  const PeftSpec spec = PeftSpec::hybrid(bc.n_layers, {2}, {1, 2.0, {Projection::query, Projection::value}});
  const TaskModel model = init_task_model(backbone, spec, TaskKind::classification, 4, 9);
  std::vector<NamedTensor> params = backbone.named_parameters();
  for (auto& p : model.trainable_parameters()) params.push_back(p);
  oracle::perturb(model.trainable_parameters(), 5);

  const Checkpoint ckpt = make_checkpoint(bc, params, {{"name", "hybrid"}});
  save_checkpoint(ckpt, tmp / "a.bin");
  const Checkpoint back = load_checkpoint(tmp / "a.bin");
  CHECK(to_json(back.backbone) == to_json(bc));
  CHECK(back.metadata["name"] == "hybrid");
  REQUIRE(back.arrays.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(back.arrays[i].name == params[i].name);
    CHECK(back.arrays[i].shape == params[i].tensor.shape());
    CHECK(oracle::bitwise_equal(back.arrays[i].values, params[i].tensor.values()));
  }
  save_checkpoint(back, tmp / "b.bin");
  CHECK(oracle::read_bytes(tmp / "a.bin") == oracle::read_bytes(tmp / "b.bin"));

  // restoring only the PEFT tensors leaves everything else alone
  const TaskModel fresh = init_task_model(backbone.clone(), spec, TaskKind::classification, 4, 9);
  const auto fresh_params = fresh.trainable_parameters();
  const auto head_before = std::vector<double>(fresh.head().w.values().begin(), fresh.head().w.values().end());
  const std::size_t restored = restore_parameters(back, fresh_params, "peft.");
  CHECK(restored == fresh.body().peft().named_parameters().size());
  for (const auto& p : fresh.body().peft().named_parameters()) {
    CHECK(oracle::bitwise_equal(p.tensor.values(), back.find(p.name)->values));
  }
  CHECK(oracle::bitwise_equal(fresh.head().w.values(), head_before));

  // errors
  const std::vector<NamedTensor> stranger{{"peft.layers.9.lora.q.a", Tensor::zeros({2, 2})}};
  CHECK_THROWS_AS(restore_parameters(back, stranger), DataError);
  const std::vector<NamedTensor> misshapen{{"head.w", Tensor::zeros({3, 3})}};
  CHECK_THROWS_AS(restore_parameters(back, misshapen), DimensionError);
  auto bytes = serialize_checkpoint(back);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 8);
  CHECK_THROWS_AS(deserialize_checkpoint(truncated), DataError);
  auto corrupt = bytes;
  corrupt[0] ^= 0xff;
  CHECK_THROWS_AS(deserialize_checkpoint(corrupt), DataError);
  bytes.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), DataError);
}

TEST_CASE("zero training steps reproduce the initial model's predictions") {
  TempDir tmp("zero");
  oracle::RunOptions o;
  o.steps = 0;
  const ExperimentConfig cfg = setup_run(tmp, "seq", o);
  const RunRecord r = train_experiment(cfg);
  CHECK(r.steps == 0);
  CHECK(r.losses.empty());

  const Dataset data = load_task_data(cfg);
  const TaskModel init = init_task_model(BackboneModel::build(cfg.backbone), build_peft_spec(cfg),
                                         TaskKind::classification, data.spec.output_classes(), cfg.seeds.init);
  const auto want = make_predictions(init, data.test, r.name, TaskKind::classification, 0);
  const auto got = read_predictions(cfg.output_dir / r.predictions_file);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].utt == want[i].utt);
    CHECK(oracle::bitwise_equal(got[i].probs.values(), want[i].probs.values()));
  }
}

TEST_CASE("training runs are reproducible byte for byte") {
  TempDir tmp("rerun");
  oracle::RunOptions o;
  o.kind = "lora";
  const ExperimentConfig a = setup_run(tmp, "a", o);
  const ExperimentConfig b = setup_run(tmp, "b", o);
  const RunRecord ra = train_experiment(a);
  const RunRecord rb = train_experiment(b);
  CHECK(ra.losses == rb.losses);
  CHECK(oracle::read_bytes(a.output_dir / "predictions.jsonl") == oracle::read_bytes(b.output_dir / "predictions.jsonl"));
  CHECK(oracle::read_bytes(a.output_dir / "checkpoint.bin") == oracle::read_bytes(b.output_dir / "checkpoint.bin"));
  CHECK(ra.frozen_audit == "passed");
  CHECK(ra.steps == o.steps);
  CHECK(ra.param_counts["backbone_trainable"] == 0);

  // a different training seed changes the batch order and so the losses
  oracle::RunOptions other = o;
  other.seed = 7;
  const RunRecord rc = train_experiment(setup_run(tmp, "c", other));
  CHECK(rc.losses != ra.losses);

  // the stored run record loads back with the same metrics
  const RunRecord loaded = load_run_record(a.output_dir);
  CHECK(loaded.test_metrics.find("sid")->value() == ra.test_metrics.find("sid")->value());
  CHECK(loaded.losses == ra.losses);
  CHECK(load_run_record(a.output_dir / "run.json").name == ra.name);
}

TEST_CASE("frozen-backbone audit and fine-tuning") {
  TempDir tmp("modes");
  for (const char* kind : {"sequential", "parallel", "lora"}) {
    oracle::RunOptions o;
    o.kind = kind;
    o.steps = 5;
    const ExperimentConfig cfg = setup_run(tmp, kind, o);
    const Dataset data = load_task_data(cfg);
    const FitResult fit = fit_model(cfg, data);
    const BackboneModel reference = BackboneModel::build(cfg.backbone);
    const auto trained = fit.model.body().backbone().named_parameters();
    const auto init = reference.named_parameters();
    for (std::size_t i = 0; i < init.size(); ++i) {
      CHECK(oracle::bitwise_equal(trained[i].tensor.values(), init[i].tensor.values()));
    }
  }

  oracle::RunOptions ft;
  ft.mode = "finetune";
  ft.steps = 5;
  const ExperimentConfig cfg = setup_run(tmp, "ft", ft);
  const RunRecord r = train_experiment(cfg);
  CHECK(r.frozen_audit == "skipped");
  CHECK(r.param_counts["backbone_trainable"].get<std::size_t>() > 0);
  CHECK(r.param_counts["peft"] == 0);

  oracle::RunOptions ws;
  ws.mode = "wsum";
  ws.steps = 5;
  const RunRecord w = train_experiment(setup_run(tmp, "ws", ws));
  CHECK(w.param_counts["peft"] == 0);
  CHECK(w.param_counts["weighted_sum"] == oracle::small_backbone().n_layers + 1);
  CHECK(w.frozen_audit == "passed");
}

TEST_CASE("each PEFT method fits the separable training set") {
  TempDir tmp("fit");
  for (const char* kind : {"sequential", "parallel", "lora"}) {
    oracle::RunOptions o;
    o.kind = kind;
    o.steps = 150;
    const RunRecord r = train_experiment(setup_run(tmp, kind, o));
    INFO(kind);
    CHECK(r.train_metrics.find("sid")->value() >= 0.9);
    CHECK(r.losses.back() < r.losses.front());
  }
}

TEST_CASE("divergence leaves a failed run record") {
  TempDir tmp("diverge");
  oracle::RunOptions o;
  o.lr = 1e200;
  const ExperimentConfig cfg = setup_run(tmp, "boom", o);
  CHECK_THROWS_AS(train_experiment(cfg), SearchFailure);
  const RunRecord r = load_run_record(cfg.output_dir);
  CHECK(r.status == "failed");
  CHECK(r.error["category"] == "search_failure");
  // step 0 is finite; its update moves the weights to ~1e200 and step 1 overflows
  CHECK(r.error["step"] == 1);
  CHECK_FALSE(audit_run(cfg.output_dir).ok);
}

TEST_CASE("learning-rate search") {
  TempDir tmp("lr");
  oracle::RunOptions o;
  o.steps = 40;
  const ExperimentConfig cfg = setup_run(tmp, "lr", o);

  const LrSearchResult one = lr_search(cfg, std::vector<double>{1e-3});
  CHECK(one.best_lr == 1e-3);
  CHECK(one.entries.size() == 1);
  CHECK(one.steps_per_point == 10);

  const LrSearchResult two = lr_search(cfg, std::vector<double>{1e-3, 1e-6});
  REQUIRE(two.entries.size() == 2);
  const auto& chosen = two.entries[0].lr == two.best_lr ? two.entries[0] : two.entries[1];
  const auto& other = two.entries[0].lr == two.best_lr ? two.entries[1] : two.entries[0];
  CHECK(chosen.dev_value >= other.dev_value);

  const nlohmann::json report = read_json_file(cfg.output_dir / "lr_search.json");
  CHECK(report["entries"].size() == 2);
  CHECK(report["steps_per_point"] == 10);
  CHECK(report["best_lr"] == two.best_lr);

  // the default grid spans the configured range
  const LrSearchResult full = lr_search(cfg);
  CHECK(full.entries.size() == cfg.lr_search.points);

  CHECK_THROWS_AS(lr_search(cfg, std::vector<double>{0.5}), ConfigError);
  CHECK_THROWS_AS(lr_search(cfg, std::vector<double>{}), ConfigError);
}

TEST_CASE("ensembles of one run repeated are that run") {
  TempDir tmp("ens-same");
  oracle::RunOptions o;
  o.budget = "reduced";
  const ExperimentConfig cfg = setup_run(tmp, "seq", o);
  const RunRecord single = train_experiment(cfg);
  const std::vector<fs::path> dirs(3, cfg.output_dir);
  for (EnsembleMode mode : {EnsembleMode::vote, EnsembleMode::average}) {
    const RunRecord e = run_ensemble(dirs, mode, false, tmp / ("out-" + std::string(ensemble_mode_name(mode))));
    const TaskMetric& a = *e.test_metrics.find("sid");
    const TaskMetric& b = *single.test_metrics.find("sid");
    CHECK(a.value() == b.value());
    REQUIRE(a.utterances.size() == b.utterances.size());
    for (std::size_t i = 0; i < a.utterances.size(); ++i) CHECK(a.utterances[i].numerator == b.utterances[i].numerator);
    CHECK(audit_run(tmp / ("out-" + std::string(ensemble_mode_name(mode)))).ok);
  }

  // members must be reduced-budget single-PEFT runs
  const ExperimentConfig full = setup_run(tmp, "full", oracle::RunOptions{});
  train_experiment(full);
  const std::vector<fs::path> mixed{cfg.output_dir, full.output_dir};
  CHECK_THROWS_AS(run_ensemble(mixed, EnsembleMode::vote, false, tmp / "bad"), ConfigError);
  CHECK_THROWS_AS(run_ensemble(std::vector<fs::path>{cfg.output_dir}, EnsembleMode::vote, false, tmp / "bad"),
                  ContractError);
}

TEST_CASE("classification ensemble matches a hand tally") {
  TempDir tmp("ens-vote");
  std::mt19937_64 rng(12);
  const std::size_t n_utts = 8, n_classes = 3, n_models = 3;
  std::vector<int> labels(n_utts);
  for (auto& l : labels) l = std::uniform_int_distribution<int>(0, 2)(rng);
  std::vector<std::vector<std::vector<double>>> tables(n_models);
  std::vector<fs::path> dirs;
  for (std::size_t m = 0; m < n_models; ++m) {
    const auto rows = oracle::rows_of(oracle::random_distributions(n_utts, n_classes, rng));
    tables[m] = rows;
    std::vector<PredictionRecord> preds;
    for (std::size_t i = 0; i < n_utts; ++i)
      preds.push_back(classification_pred("u" + std::to_string(i), rows[i], labels[i]));
    dirs.push_back(mock_run(tmp, "m" + std::to_string(m), TaskKind::classification, preds));
  }

  std::size_t vote_hits = 0, avg_hits = 0;
  for (std::size_t i = 0; i < n_utts; ++i) {
    std::vector<int> votes(n_classes, 0);
    std::vector<double> mass(n_classes, 0.0);
    for (std::size_t m = 0; m < n_models; ++m) {
      const auto& row = tables[m][i];
      ++votes[static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())];
      for (std::size_t c = 0; c < n_classes; ++c) mass[c] += row[c];
    }
    std::size_t vote = 0;
    for (std::size_t c = 1; c < n_classes; ++c) {
      if (votes[c] > votes[vote] || (votes[c] == votes[vote] && mass[c] > mass[vote])) vote = c;
    }
    const std::size_t avg = static_cast<std::size_t>(std::max_element(mass.begin(), mass.end()) - mass.begin());
    vote_hits += static_cast<int>(vote) == labels[i];
    avg_hits += static_cast<int>(avg) == labels[i];
  }
  const RunRecord v = run_ensemble(dirs, EnsembleMode::vote, false, tmp / "vote");
  const RunRecord a = run_ensemble(dirs, EnsembleMode::average, false, tmp / "avg");
  CHECK(v.test_metrics.find("task")->value() == doctest::Approx(static_cast<double>(vote_hits) / n_utts).epsilon(1e-15));
  CHECK(a.test_metrics.find("task")->value() == doctest::Approx(static_cast<double>(avg_hits) / n_utts).epsilon(1e-15));
  CHECK_FALSE(v.unaligned_metrics.has_value());

  // a member scored on other utterances is rejected
  std::vector<PredictionRecord> stray;
  for (std::size_t i = 0; i < n_utts; ++i)
    stray.push_back(classification_pred("x" + std::to_string(i), tables[0][i], labels[i]));
  const std::vector<fs::path> mismatched{dirs[0], mock_run(tmp, "stray", TaskKind::classification, stray)};
  CHECK_THROWS_AS(run_ensemble(mismatched, EnsembleMode::vote, false, tmp / "bad"), DataError);
}

TEST_CASE("aligned CTC ensemble beats the unaligned one on the shifted pair") {
  TempDir tmp("ens-ctc");
  const std::vector<fs::path> dirs{
      mock_run(tmp, "a", TaskKind::ctc, {ctc_pred("u0", oracle::shift_case_a(), oracle::kShiftCaseTruth)}),
      mock_run(tmp, "b", TaskKind::ctc, {ctc_pred("u0", oracle::shift_case_b(), oracle::kShiftCaseTruth)})};
  for (EnsembleMode mode : {EnsembleMode::vote, EnsembleMode::average}) {
    const RunRecord aligned = run_ensemble(dirs, mode, true, tmp / "aligned");
    const RunRecord plain = run_ensemble(dirs, mode, false, tmp / "plain");
    const double a = aligned.test_metrics.find("task")->value();
    const double u = aligned.unaligned_metrics->find("task")->value();
    CHECK(a == 0.0);
    CHECK(u == 0.5);
    CHECK(a <= u);
    CHECK(aligned.extra["ensemble"]["aligned_value"] == a);
    CHECK(plain.test_metrics.find("task")->value() == u);
    CHECK(audit_run(tmp / "aligned").ok);
    CHECK(audit_run(tmp / "plain").ok);
    const std::vector<RunRecord> rows{aligned};
    CHECK(format_results_table(rows).find("0.00 / 50.00") != std::string::npos);
  }
}

TEST_CASE("audit recomputes stored metrics and catches tampering") {
  TempDir tmp("audit");
  oracle::RunOptions o;
  o.steps = 5;
  const ExperimentConfig cfg = setup_run(tmp, "seq", o);
  train_experiment(cfg);
  CHECK(audit_run(cfg.output_dir).ok);

  auto preds = read_predictions(cfg.output_dir / "predictions.jsonl");
  // move every prediction onto a wrong class
  for (auto& p : preds) {
    const std::size_t classes = p.probs.cols();
    std::vector<double> v(classes, 0.0);
    v[static_cast<std::size_t>(p.label + 1) % classes] = 1.0;
    p.probs = Tensor({1, classes}, std::move(v));
  }
  write_predictions(cfg.output_dir / "predictions.jsonl", preds);
  const AuditResult bad = audit_run(cfg.output_dir);
  CHECK_FALSE(bad.ok);
  CHECK_FALSE(bad.problems.empty());
}

TEST_CASE("search runs from a config") {
  TempDir tmp("darts");
  oracle::RunOptions o;
  o.mode = "darts";
  o.steps = 12;
  const ExperimentConfig cfg = setup_run(tmp, "search", o);
  const RunRecord r = train_experiment(cfg);
  const nlohmann::json report = read_json_file(cfg.output_dir / "search_report.json");
  CHECK(report["stage1_steps"] == 3);
  CHECK(report["stage2_steps"] == 9);
  CHECK(r.steps == 12);
  CHECK(r.frozen_audit == "passed");
  CHECK(report["layers"].size() == oracle::small_backbone().n_layers);
  CHECK(audit_run(cfg.output_dir).ok);
  CHECK_THROWS_AS(lr_search(cfg), ConfigError);
}
