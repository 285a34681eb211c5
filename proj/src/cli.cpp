// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/cli.hpp"

#include <filesystem>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "peftmix/config.hpp"
#include "peftmix/data.hpp"
#include "peftmix/harness.hpp"
#include "peftmix/metrics.hpp"
#include "peftmix/stats.hpp"

namespace peftmix {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorCategory category) { return 3 + static_cast<int>(category); }

namespace {

struct ConfigOverrides {
  std::string config;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::optional<std::string> output_dir;
  std::optional<std::string> name;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--steps", steps, "override optim.steps");
    cmd->add_option("--lr", lr, "override optim.lr");
    cmd->add_option("--output-dir", output_dir, "override output_dir");
    cmd->add_option("--name", name, "override the run name");
  }

  ExperimentConfig load() const {
    ExperimentConfig c = load_experiment_config(config);
    if (steps) c.optim.steps = *steps;
    if (lr) c.optim.lr = *lr;
    if (output_dir) c.output_dir = fs::absolute(*output_dir).lexically_normal();
    if (name) c.name = *name;
    c.validate();
    return c;
  }
};

MetricReport report_from_file(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "run.json" : path;
  const json j = read_json_file(file);
  if (j.contains("metrics")) return load_run_record(file).test_metrics;
  return metric_report_from_json(j);
}

void print_run_summary(std::ostream& out, const RunRecord& r, const fs::path& dir) {
  const TaskMetric* m = r.test_metrics.find(r.task);
  out << fmt::format("{}: {} {} = {:.4f} ({} steps) -> {}\n", r.name, r.task, metric_kind_name(r.metric),
                     m ? m->value() : 0.0, r.steps, dir.string());
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PEFT selection and ensembling on a small frozen transformer"};
  app.require_subcommand(1);

  // gen-data
  std::string spec_file, data_out;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset from a spec");
  gen->add_option("--spec", spec_file, "dataset spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", data_out, "output directory (default: next to the spec, named after the task)");

  ConfigOverrides train_opts, lr_opts, darts_opts;
  auto* train = app.add_subcommand("train", "train one configuration");
  train_opts.add_to(train);

  auto* lrs = app.add_subcommand("lr-search", "grid search over learning rates");
  lr_opts.add_to(lrs);
  std::vector<double> grid;
  lrs->add_option("--grid", grid, "explicit learning rates (default: log grid from the config)")->delimiter(',');

  auto* darts = app.add_subcommand("darts", "layer-wise PEFT search followed by retraining");
  darts_opts.add_to(darts);
  std::optional<double> stage1_fraction;
  std::optional<std::size_t> total_steps;
  bool retrain = false;
  darts->add_option("--stage1-fraction", stage1_fraction, "share of steps spent searching");
  darts->add_option("--total-steps", total_steps, "total step budget");
  darts->add_flag("--retrain", retrain, "re-initialise the derived model and train for the full budget");

  std::vector<std::string> ens_runs;
  std::string ens_mode = "vote", ens_out;
  bool ens_align = false;
  auto* ens = app.add_subcommand("ensemble", "combine the test predictions of several runs");
  ens->add_option("--runs", ens_runs, "run directories")->required()->expected(2, -1);
  ens->add_option("--mode", ens_mode, "vote or avg")->check(CLI::IsMember({"vote", "avg"}));
  ens->add_flag("--align", ens_align, "align CTC outputs before combining");
  ens->add_option("--out", ens_out, "output directory")->required();

  std::vector<std::string> sig_runs;
  std::string sig_out;
  auto* sig = app.add_subcommand("significance", "pairwise significance tests between runs");
  sig->add_option("--runs", sig_runs, "run directories")->required()->expected(2, -1);
  sig->add_option("--out", sig_out, "write the table as JSON");

  std::string anchors_file;
  std::vector<std::string> score_reports;
  auto* score = app.add_subcommand("score", "aggregate score from anchors");
  score->add_option("--anchors", anchors_file, "base/topline anchors (JSON)")->required()->check(CLI::ExistingFile);
  score->add_option("--report", score_reports, "metric reports or run directories")->required()->expected(1, -1);

  std::vector<std::string> report_runs;
  auto* report = app.add_subcommand("report", "results table over runs");
  report->add_option("--runs", report_runs, "run directories")->required()->expected(1, -1);

  std::string audit_dir;
  auto* audit = app.add_subcommand("audit", "recompute a run's metrics from its stored predictions");
  audit->add_option("--run", audit_dir, "run directory")->required();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      const DatasetSpec spec = dataset_spec_from_json(read_json_file(spec_file));
      const fs::path dir = data_out.empty() ? fs::path(spec_file).parent_path() / spec.name : fs::path(data_out);
      const Dataset data = generate_dataset(spec);
      write_dataset(data, dir);
      out << fmt::format("wrote {} train / {} dev / {} test utterances to {}\n", data.train.size(), data.dev.size(),
                         data.test.size(), dir.string());
    } else if (*train) {
      const ExperimentConfig cfg = train_opts.load();
      const RunRecord r = train_experiment(cfg);
      print_run_summary(out, r, cfg.output_dir);
    } else if (*lrs) {
      const ExperimentConfig cfg = lr_opts.load();
      const LrSearchResult r = lr_search(cfg, grid.empty() ? std::nullopt : std::optional(grid));
      for (const auto& e : r.entries) out << fmt::format("lr {:.3e}  {:8}  dev {:.4f}\n", e.lr, e.status, e.dev_value);
      out << fmt::format("best lr {:.3e} ({} steps per point)\n", r.best_lr, r.steps_per_point);
    } else if (*darts) {
      ExperimentConfig cfg = darts_opts.load();
      cfg.method.mode = MethodMode::darts;
      if (stage1_fraction) cfg.darts.stage1_fraction = *stage1_fraction;
      if (total_steps) cfg.optim.steps = *total_steps;
      if (retrain) cfg.darts.retrain = RetrainMode::full_steps;
      cfg.validate();
      const DartsConfig dc = make_darts_config(cfg);
      out << fmt::format("stage 1: {} steps, stage 2: {} steps ({})\n", dc.stage1_steps(), dc.stage2_steps(),
                         retrain_mode_name(dc.retrain_mode));
      const RunRecord r = train_experiment(cfg);
      for (const auto& layer : r.extra["search"]["layers"]) {
        out << fmt::format("layer {}: {}\n", layer["layer"].get<std::size_t>(), layer["chosen"].get<std::string>());
      }
      print_run_summary(out, r, cfg.output_dir);
    } else if (*ens) {
      std::vector<fs::path> dirs(ens_runs.begin(), ens_runs.end());
      const RunRecord r = run_ensemble(dirs, parse_ensemble_mode(ens_mode), ens_align, ens_out);
      if (r.unaligned_metrics) {
        out << fmt::format("{}: {} {} aligned {:.4f} / unaligned {:.4f}\n", r.name, r.task, metric_kind_name(r.metric),
                           r.extra["ensemble"]["aligned_value"].get<double>(),
                           r.extra["ensemble"]["unaligned_value"].get<double>());
      } else {
        print_run_summary(out, r, ens_out);
      }
    } else if (*sig) {
      std::vector<SystemMetrics> systems;
      for (const auto& d : sig_runs) {
        const RunRecord r = load_run_record(d);
        systems.push_back({r.name, r.test_metrics});
      }
      const SignificanceTable table = significance_matrix(systems);
      out << format_significance_table(table);
      if (!sig_out.empty()) write_json_file(sig_out, to_json(table));
    } else if (*score) {
      const ScoreAnchors anchors = score_anchors_from_json(read_json_file(anchors_file));
      MetricReport merged;
      for (const auto& f : score_reports) {
        for (auto& t : report_from_file(f).tasks) merged.tasks.push_back(std::move(t));
      }
      out << fmt::format("{}\n", superb_score(merged, anchors));
    } else if (*report) {
      std::vector<RunRecord> runs;
      for (const auto& d : report_runs) runs.push_back(load_run_record(d));
      out << format_results_table(runs);
    } else if (*audit) {
      const AuditResult a = audit_run(audit_dir);
      if (!a.ok) {
        for (const auto& p : a.problems) out << "mismatch: " << p << '\n';
        throw MetricError("audit failed for " + audit_dir);
      }
      out << "audit passed: " << audit_dir << '\n';
    }
  } catch (const SearchFailure& e) {
    err << json{{"error", {{"category", category_name(e.category())}, {"message", e.what()}, {"step", e.step()}}}}.dump()
        << '\n';
    return exit_code(e.category());
  } catch (const Error& e) {
    err << json{{"error", {{"category", category_name(e.category())}, {"message", e.what()}}}}.dump() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << json{{"error", {{"category", "internal"}, {"message", e.what()}}}}.dump() << '\n';
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace peftmix
