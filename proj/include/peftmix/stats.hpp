// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "peftmix/metrics.hpp"

namespace peftmix {

inline constexpr double kSignificanceLevel = 0.05;

/// Differences with p > 0.05 are reported as insignificant.
inline bool is_significant(double p_value) { return p_value <= kSignificanceLevel; }

double normal_cdf(double x);

/// Two-sided tail 2(1 − Φ(|z|)).
double normal_two_sided_p(double z);

/// I_x(a, b), evaluated with a modified Lentz continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

/// Two-sided tail of Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct ContingencyTable {
  std::size_t both_correct = 0;  // a
  std::size_t only_a = 0;        // b: system A right, B wrong
  std::size_t only_b = 0;        // c: system A wrong, B right
  std::size_t both_wrong = 0;    // d
};

ContingencyTable contingency(std::span<const bool> a_correct, std::span<const bool> b_correct);

struct TestResult {
  std::string test;
  double p_value = 1.0;
  double statistic = 0.0;
  bool degenerate = false;
};

inline constexpr std::size_t kMcNemarExactLimit = 25;

/// Exact binomial test when b + c <= 25, continuity-corrected chi-square
/// otherwise. b + c = 0 raises MetricError.
TestResult mcnemar_test(const ContingencyTable& t);

/// Normal approximation on per-segment error differences (segment =
/// utterance). Zero variance gives a degenerate result with p = 1 for zero
/// mean and p = 0 otherwise.
TestResult mapsswe_test(std::span<const double> diffs);

/// Paired Student's t on x − y, same degenerate handling as mapsswe_test.
TestResult paired_t_test(std::span<const double> x, std::span<const double> y);

struct SystemMetrics {
  std::string name;
  MetricReport report;
};

struct SignificanceCell {
  TestResult result;
  bool significant = false;
};

/// Rows are system pairs (i < j in input order), columns are tasks.
struct SignificanceTable {
  std::vector<std::string> tasks;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::vector<SignificanceCell>> cells;  // [pair][task]
};

/// McNemar for accuracy tasks, MAPSSWE for WER/PER, paired t otherwise.
SignificanceCell compare_systems(const TaskMetric& a, const TaskMetric& b);

SignificanceTable significance_matrix(std::span<const SystemMetrics> systems);

nlohmann::json to_json(const SignificanceTable& table);
std::string format_significance_table(const SignificanceTable& table);

}  // namespace peftmix
