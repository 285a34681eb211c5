// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "peftmix/errors.hpp"

namespace peftmix {

EditCounts edit_counts(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // cost and the S/D/I split that reaches it; ties prefer substitution, then deletion
  struct Cell {
    std::size_t cost;
    EditCounts e;
  };
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, {0, 0, j}};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, {0, i, 0}};
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = ref[i - 1] == hyp[j - 1];
      Cell diag = prev[j - 1];
      if (!same) {
        ++diag.cost;
        ++diag.e.substitutions;
      }
      Cell del = prev[j];
      ++del.cost;
      ++del.e.deletions;
      Cell ins = cur[j - 1];
      ++ins.cost;
      ++ins.e.insertions;
      Cell best = diag;
      if (del.cost < best.cost) best = del;
      if (ins.cost < best.cost) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  return prev[m].e;
}

double edit_distance_rate(std::span<const int> ref, std::span<const int> hyp) {
  if (ref.empty()) throw MetricError("edit distance rate needs a non-empty reference");
  return static_cast<double>(edit_counts(ref, hyp).total()) / static_cast<double>(ref.size());
}

double accuracy(std::span<const int> refs, std::span<const int> hyps) {
  if (refs.size() != hyps.size()) throw MetricError("accuracy: reference and hypothesis counts differ");
  if (refs.empty()) throw MetricError("accuracy of an empty set");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) ok += refs[i] == hyps[i];
  return static_cast<double>(ok) / static_cast<double>(refs.size());
}

double frame_error_rate(std::span<const int> ref_frames, std::span<const int> hyp_frames) {
  if (ref_frames.size() != hyp_frames.size()) throw MetricError("frame error: frame counts differ");
  if (ref_frames.empty()) throw MetricError("frame error of an empty sequence");
  return 1.0 - accuracy(ref_frames, hyp_frames);
}

SpanCounts span_counts(std::span<const LabeledSpan> ref, std::span<const LabeledSpan> hyp) {
  std::vector<LabeledSpan> r(ref.begin(), ref.end()), h(hyp.begin(), hyp.end());
  std::sort(r.begin(), r.end());
  std::sort(h.begin(), h.end());
  std::vector<LabeledSpan> common;
  std::set_intersection(r.begin(), r.end(), h.begin(), h.end(), std::back_inserter(common));
  return {common.size(), ref.size(), hyp.size()};
}

double span_f1(std::span<const LabeledSpan> ref, std::span<const LabeledSpan> hyp) {
  const SpanCounts c = span_counts(ref, hyp);
  if (c.ref + c.hyp == 0) return 1.0;
  // 2PR/(P+R) reduces to 2·matched/(|ref|+|hyp|), which is 0 when P = R = 0
  return 2.0 * static_cast<double>(c.matched) / static_cast<double>(c.ref + c.hyp);
}

std::vector<LabeledSpan> frame_spans(std::span<const int> frame_labels, int blank) {
  std::vector<LabeledSpan> out;
  std::size_t t = 0;
  while (t < frame_labels.size()) {
    std::size_t end = t + 1;
    while (end < frame_labels.size() && frame_labels[end] == frame_labels[t]) ++end;
    if (frame_labels[t] != blank) out.push_back({frame_labels[t], t, end});
    t = end;
  }
  return out;
}

std::string metric_kind_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::wer: return "wer";
    case MetricKind::per: return "per";
    case MetricKind::frame_error: return "frame_error";
    case MetricKind::f1: return "f1";
  }
  return "?";
}

MetricKind parse_metric_kind(const std::string& name) {
  if (name == "accuracy" || name == "acc") return MetricKind::accuracy;
  if (name == "wer") return MetricKind::wer;
  if (name == "per") return MetricKind::per;
  if (name == "frame_error" || name == "der") return MetricKind::frame_error;
  if (name == "f1") return MetricKind::f1;
  throw ConfigError("unknown metric '" + name + "'");
}

bool higher_is_better(MetricKind kind) { return kind == MetricKind::accuracy || kind == MetricKind::f1; }

double TaskMetric::value() const {
  if (utterances.empty()) return stored_value;
  double num = 0.0, den = 0.0;
  for (const auto& u : utterances) {
    num += u.numerator;
    den += u.denominator;
  }
  if (den == 0.0) {
    if (kind == MetricKind::f1) return 1.0;
    throw MetricError("task " + task + ": metric denominator is zero");
  }
  return num / den;
}

std::vector<double> TaskMetric::per_utterance() const {
  std::vector<double> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) {
    if (u.denominator == 0.0) {
      if (kind != MetricKind::f1) throw MetricError("utterance " + u.id + " has a zero denominator");
      out.push_back(1.0);
    } else {
      out.push_back(u.numerator / u.denominator);
    }
  }
  return out;
}

const TaskMetric* MetricReport::find(const std::string& task) const {
  for (const auto& t : tasks)
    if (t.task == task) return &t;
  return nullptr;
}

double superb_score(const MetricReport& report, const ScoreAnchors& anchors) {
  if (report.tasks.empty()) throw ConfigError("score needs at least one task");
  double total = 0.0;
  for (const TaskMetric& t : report.tasks) {
    const auto it = anchors.find(t.task);
    if (it == anchors.end()) throw ConfigError("no score anchors for task '" + t.task + "'");
    const Anchor& a = it->second;
    if (a.topline == a.base) throw ConfigError("task '" + t.task + "': base and topline anchors coincide");
    total += (t.value() - a.base) / (a.topline - a.base);
  }
  return 1000.0 * total / static_cast<double>(report.tasks.size());
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const TaskMetric& t : report.tasks) {
    nlohmann::json utts = nlohmann::json::array();
    for (const auto& u : t.utterances) {
      utts.push_back({{"id", u.id}, {"numerator", u.numerator}, {"denominator", u.denominator}});
    }
    tasks.push_back({{"task", t.task},
                     {"metric", metric_kind_name(t.kind)},
                     {"higher_better", higher_is_better(t.kind)},
                     {"value", t.value()},
                     {"utterances", std::move(utts)}});
  }
  return {{"schema_version", 1}, {"tasks", std::move(tasks)}};
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    for (const auto& jt : j.at("tasks")) {
      TaskMetric t;
      t.task = jt.at("task").get<std::string>();
      t.kind = parse_metric_kind(jt.at("metric").get<std::string>());
      if (jt.contains("utterances")) {
        for (const auto& ju : jt.at("utterances")) {
          t.utterances.push_back(
              {ju.at("id").get<std::string>(), ju.at("numerator").get<double>(), ju.at("denominator").get<double>()});
        }
      }
      if (t.utterances.empty()) {
        t.stored_value = jt.at("value").get<double>();
      } else if (jt.contains("value") && std::abs(jt.at("value").get<double>() - t.value()) > 1e-12) {
        throw MetricError("task " + t.task + ": stored value disagrees with its per-utterance breakdown");
      }
      r.tasks.push_back(std::move(t));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed metric report: ") + e.what());
  }
}

nlohmann::json to_json(const ScoreAnchors& anchors) {
  nlohmann::json a = nlohmann::json::object();
  for (const auto& [task, anchor] : anchors) a[task] = {{"base", anchor.base}, {"topline", anchor.topline}};
  return {{"schema_version", 1}, {"anchors", std::move(a)}};
}

ScoreAnchors score_anchors_from_json(const nlohmann::json& j) {
  try {
    ScoreAnchors out;
    for (const auto& [task, a] : j.at("anchors").items()) {
      out[task] = Anchor{a.at("base").get<double>(), a.at("topline").get<double>()};
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed score anchors: ") + e.what());
  }
}

}  // namespace peftmix
