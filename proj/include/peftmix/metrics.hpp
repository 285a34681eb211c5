// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace peftmix {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;

  std::size_t total() const { return substitutions + deletions + insertions; }
};

/// Minimal Levenshtein alignment of hyp against ref.
EditCounts edit_counts(std::span<const int> ref, std::span<const int> hyp);

/// (S + D + I) / |ref|. Empty ref raises MetricError.
double edit_distance_rate(std::span<const int> ref, std::span<const int> hyp);

double accuracy(std::span<const int> refs, std::span<const int> hyps);
double frame_error_rate(std::span<const int> ref_frames, std::span<const int> hyp_frames);

struct LabeledSpan {
  int label = 0;
  std::size_t begin = 0, end = 0;  // [begin, end)

  auto operator<=>(const LabeledSpan&) const = default;
};

struct SpanCounts {
  std::size_t matched = 0, ref = 0, hyp = 0;
};

/// Exact-match span counting (multiset intersection).
SpanCounts span_counts(std::span<const LabeledSpan> ref, std::span<const LabeledSpan> hyp);

/// 2PR/(P+R) with exact-match spans; 0 when nothing matches, 1 when both
/// sides are empty.
double span_f1(std::span<const LabeledSpan> ref, std::span<const LabeledSpan> hyp);

/// Runs of identical non-blank frame labels.
std::vector<LabeledSpan> frame_spans(std::span<const int> frame_labels, int blank);

/// Per-utterance contribution to a ratio metric. The aggregate of a task is
/// sum(numerator) / sum(denominator), so it can always be recomputed from
/// the breakdown.
struct UtteranceScore {
  std::string id;
  double numerator = 0.0;
  double denominator = 1.0;
};

enum class MetricKind { accuracy, wer, per, frame_error, f1 };

std::string metric_kind_name(MetricKind kind);
MetricKind parse_metric_kind(const std::string& name);
bool higher_is_better(MetricKind kind);

struct TaskMetric {
  std::string task;
  MetricKind kind = MetricKind::accuracy;
  std::vector<UtteranceScore> utterances;
  double stored_value = 0.0;  // used only when there is no breakdown

  double value() const;
  /// Per-utterance score numerator/denominator (F1 with nothing on either side scores 1).
  std::vector<double> per_utterance() const;
};

struct MetricReport {
  std::vector<TaskMetric> tasks;

  const TaskMetric* find(const std::string& task) const;
};

struct Anchor {
  double base = 0.0;
  double topline = 0.0;
};

using ScoreAnchors = std::map<std::string, Anchor>;

/// (1000/|T|) Σ (s − base)/(topline − base) over the report's tasks.
double superb_score(const MetricReport& report, const ScoreAnchors& anchors);

nlohmann::json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScoreAnchors& anchors);
ScoreAnchors score_anchors_from_json(const nlohmann::json& j);

}  // namespace peftmix
