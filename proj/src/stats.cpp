// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <numbers>

#include <fmt/format.h>

#include "peftmix/errors.hpp"

namespace peftmix {

namespace {

double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 1000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

MeanSd sample_moments(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

TestResult degenerate_result(std::string name, double mean) {
  return TestResult{std::move(name), mean == 0.0 ? 1.0 : 0.0, 0.0, true};
}

std::vector<std::size_t> match_utterances(const TaskMetric& a, const TaskMetric& b) {
  if (a.utterances.size() != b.utterances.size()) {
    throw DataError("task " + a.task + ": systems scored different numbers of utterances");
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < b.utterances.size(); ++i) index[b.utterances[i].id] = i;
  std::vector<std::size_t> out;
  out.reserve(a.utterances.size());
  for (const auto& u : a.utterances) {
    const auto it = index.find(u.id);
    if (it == index.end()) throw DataError("task " + a.task + ": utterance " + u.id + " missing from one system");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::numbers::sqrt2); }

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ContractError("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ContractError("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw ContractError("t distribution needs df > 0");
  return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

ContingencyTable contingency(std::span<const bool> a_correct, std::span<const bool> b_correct) {
  if (a_correct.size() != b_correct.size()) throw DataError("contingency: systems scored different item counts");
  ContingencyTable t;
  for (std::size_t i = 0; i < a_correct.size(); ++i) {
    if (a_correct[i] && b_correct[i]) ++t.both_correct;
    else if (a_correct[i]) ++t.only_a;
    else if (b_correct[i]) ++t.only_b;
    else ++t.both_wrong;
  }
  return t;
}

TestResult mcnemar_test(const ContingencyTable& t) {
  const std::size_t n = t.only_a + t.only_b;
  if (n == 0) throw MetricError("McNemar test is undefined without discordant pairs");
  if (n <= kMcNemarExactLimit) {
    const std::size_t k_max = std::min(t.only_a, t.only_b);
    // C(n, k) for n <= 25 is exact in 64-bit integers
    std::uint64_t tail = 0, binom = 1;
    for (std::size_t k = 0; k <= k_max; ++k) {
      tail += binom;
      binom = binom * (n - k) / (k + 1);
    }
    const double p = 2.0 * static_cast<double>(tail) / std::ldexp(1.0, static_cast<int>(n));
    return {"mcnemar_exact", std::min(1.0, p), static_cast<double>(k_max), false};
  }
  const double diff = std::max(0.0, std::abs(static_cast<double>(t.only_a) - static_cast<double>(t.only_b)) - 1.0);
  const double chi2 = diff * diff / static_cast<double>(n);
  return {"mcnemar_chi2", std::min(1.0, std::erfc(std::sqrt(chi2 / 2.0))), chi2, false};
}

TestResult mapsswe_test(std::span<const double> diffs) {
  if (diffs.size() < 2) throw ContractError("MAPSSWE needs at least two segments");
  const MeanSd m = sample_moments(diffs);
  if (m.sd == 0.0) return degenerate_result("mapsswe", m.mean);
  const double w = m.mean / (m.sd / std::sqrt(static_cast<double>(diffs.size())));
  return {"mapsswe", normal_two_sided_p(w), w, false};
}

TestResult paired_t_test(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("paired t-test needs equal-length samples");
  if (x.size() < 2) throw ContractError("paired t-test needs at least two pairs");
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = x[i] - y[i];
  const MeanSd m = sample_moments(d);
  if (m.sd == 0.0) return degenerate_result("paired_t", m.mean);
  const double t = m.mean / (m.sd / std::sqrt(static_cast<double>(d.size())));
  return {"paired_t", student_t_two_sided_p(t, static_cast<double>(d.size() - 1)), t, false};
}

SignificanceCell compare_systems(const TaskMetric& a, const TaskMetric& b) {
  if (a.kind != b.kind) throw DataError("task " + a.task + ": systems report different metrics");
  const std::vector<std::size_t> match = match_utterances(a, b);
  TestResult r;
  switch (a.kind) {
    case MetricKind::accuracy: {
      const std::size_t n = match.size();
      std::unique_ptr<bool[]> ca(new bool[n]), cb(new bool[n]);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& ua = a.utterances[i];
        const auto& ub = b.utterances[match[i]];
        ca[i] = ua.numerator >= ua.denominator;
        cb[i] = ub.numerator >= ub.denominator;
      }
      const ContingencyTable t = contingency({ca.get(), n}, {cb.get(), n});
      if (t.only_a + t.only_b == 0) {
        r = {"mcnemar_exact", 1.0, 0.0, true};
      } else {
        r = mcnemar_test(t);
      }
      break;
    }
    case MetricKind::wer:
    case MetricKind::per: {
      std::vector<double> diffs;
      for (std::size_t i = 0; i < match.size(); ++i) {
        diffs.push_back(a.utterances[i].numerator - b.utterances[match[i]].numerator);
      }
      r = mapsswe_test(diffs);
      break;
    }
    case MetricKind::frame_error:
    case MetricKind::f1: {
      const std::vector<double> sa = a.per_utterance(), sb_raw = b.per_utterance();
      std::vector<double> sb;
      for (std::size_t i = 0; i < match.size(); ++i) sb.push_back(sb_raw[match[i]]);
      r = paired_t_test(sa, sb);
      break;
    }
  }
  return {r, is_significant(r.p_value)};
}

SignificanceTable significance_matrix(std::span<const SystemMetrics> systems) {
  if (systems.size() < 2) throw ContractError("significance matrix needs at least two systems");
  SignificanceTable table;
  for (const TaskMetric& t : systems.front().report.tasks) {
    bool everywhere = true;
    for (const auto& s : systems) everywhere = everywhere && s.report.find(t.task) != nullptr;
    if (!everywhere) throw DataError("task " + t.task + " is not reported by every system");
    table.tasks.push_back(t.task);
  }
  for (std::size_t i = 0; i < systems.size(); ++i) {
    for (std::size_t j = i + 1; j < systems.size(); ++j) {
      table.pairs.emplace_back(systems[i].name, systems[j].name);
      std::vector<SignificanceCell> row;
      for (const std::string& task : table.tasks) {
        row.push_back(compare_systems(*systems[i].report.find(task), *systems[j].report.find(task)));
      }
      table.cells.push_back(std::move(row));
    }
  }
  return table;
}

nlohmann::json to_json(const SignificanceTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t p = 0; p < table.pairs.size(); ++p) {
    nlohmann::json cells = nlohmann::json::object();
    for (std::size_t t = 0; t < table.tasks.size(); ++t) {
      const SignificanceCell& c = table.cells[p][t];
      cells[table.tasks[t]] = {{"test", c.result.test},
                               {"p_value", c.result.p_value},
                               {"statistic", c.result.statistic},
                               {"degenerate", c.result.degenerate},
                               {"significant", c.significant}};
    }
    rows.push_back({{"a", table.pairs[p].first}, {"b", table.pairs[p].second}, {"cells", std::move(cells)}});
  }
  return {{"schema_version", 1}, {"threshold", kSignificanceLevel}, {"tasks", table.tasks}, {"rows", std::move(rows)}};
}

std::string format_significance_table(const SignificanceTable& table) {
  std::size_t label_width = 4;
  std::vector<std::string> labels;
  for (const auto& [a, b] : table.pairs) {
    labels.push_back(a + " vs " + b);
    label_width = std::max(label_width, labels.back().size());
  }
  std::string out = fmt::format("{:<{}}", "pair", label_width);
  for (const auto& t : table.tasks) out += fmt::format("  {:>12}", t);
  out += '\n';
  for (std::size_t p = 0; p < table.pairs.size(); ++p) {
    out += fmt::format("{:<{}}", labels[p], label_width);
    for (const auto& c : table.cells[p]) {
      // '*' marks p <= 0.05
      out += fmt::format("  {:>11.4f}{}", c.result.p_value, c.significant ? '*' : ' ');
    }
    out += '\n';
  }
  return out;
}

}  // namespace peftmix
