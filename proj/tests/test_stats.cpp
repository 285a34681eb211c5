// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "peftmix/errors.hpp"
#include "peftmix/stats.hpp"

using namespace peftmix;
using HighPrecision = boost::multiprecision::cpp_bin_float_50;

namespace {

double exact_mcnemar_oracle(std::size_t b, std::size_t c) {
  const boost::math::binomial_distribution<double> dist(static_cast<double>(b + c), 0.5);
  return std::min(1.0, 2.0 * boost::math::cdf(dist, static_cast<double>(std::min(b, c))));
}

double chi2_mcnemar_oracle(std::size_t b, std::size_t c) {
  const double diff = std::max(0.0, std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0);
  const double stat = diff * diff / static_cast<double>(b + c);
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(1.0), stat));
}

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

TaskMetric per_utterance_task(std::string task, MetricKind kind, const std::vector<double>& numerators,
                              const std::vector<double>& denominators) {
  TaskMetric t;
  t.task = std::move(task);
  t.kind = kind;
  for (std::size_t i = 0; i < numerators.size(); ++i) {
    t.utterances.push_back({"utt" + std::to_string(i), numerators[i], denominators[i]});
  }
  return t;
}

}  // namespace

TEST_CASE("McNemar examples") {
  const TestResult tie = mcnemar_test({10, 7, 7, 3});
  CHECK(tie.p_value == 1.0);
  CHECK(tie.test == "mcnemar_exact");

  const TestResult small = mcnemar_test({0, 5, 15, 0});
  CHECK(small.test == "mcnemar_exact");
  CHECK(small.p_value == doctest::Approx(2.0 * 21700.0 / 1048576.0).epsilon(1e-14));
  CHECK(small.p_value == doctest::Approx(0.04138946533203125).epsilon(1e-14));

  const TestResult large = mcnemar_test({0, 50, 80, 0});
  CHECK(large.test == "mcnemar_chi2");
  CHECK(large.statistic == doctest::Approx(29.0 * 29.0 / 130.0).epsilon(1e-14));
  CHECK(large.statistic == doctest::Approx(6.469230769230769).epsilon(1e-12));
  CHECK(large.p_value == doctest::Approx(0.010975802958107647).epsilon(1e-10));

  CHECK_THROWS_AS(mcnemar_test({4, 0, 0, 2}), MetricError);
}

TEST_CASE("McNemar against binomial and chi-square distributions") {
  for (std::size_t n = 1; n <= 60; ++n) {
    for (std::size_t b = 0; b <= n; ++b) {
      const TestResult r = mcnemar_test({0, b, n - b, 0});
      const double want = n <= kMcNemarExactLimit ? exact_mcnemar_oracle(b, n - b) : chi2_mcnemar_oracle(b, n - b);
      REQUIRE(std::abs(r.p_value - want) < 1e-12);
      REQUIRE(r.p_value >= 0.0);
      REQUIRE(r.p_value <= 1.0);
      REQUIRE(mcnemar_test({0, n - b, b, 0}).p_value == r.p_value);
    }
  }
}

TEST_CASE("McNemar exact and chi-square branches agree near the switch") {
  std::mt19937_64 rng(25);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(20, 30)(rng);
    const std::size_t b = std::uniform_int_distribution<std::size_t>(0, n)(rng);
    const TestResult ours = mcnemar_test({0, b, n - b, 0});
    const double other = ours.test == "mcnemar_exact" ? chi2_mcnemar_oracle(b, n - b) : exact_mcnemar_oracle(b, n - b);
    worst = std::max(worst, std::abs(ours.p_value - other));
  }
  CHECK(worst < 0.01);
}

TEST_CASE("MAPSSWE examples") {
  const std::vector<double> zeros(5, 0.0);
  const TestResult same = mapsswe_test(zeros);
  CHECK(same.degenerate);
  CHECK(same.p_value == 1.0);

  const std::vector<double> constant(4, 2.0);
  const TestResult shifted = mapsswe_test(constant);
  CHECK(shifted.degenerate);
  CHECK(shifted.p_value == 0.0);

  const std::vector<double> d{1, -1, 2, 0, 2, 2};
  const auto [mean, sd] = mean_sd(d);
  CHECK(mean == 1.0);
  CHECK(sd == doctest::Approx(1.2649110640673518).epsilon(1e-14));
  const TestResult r = mapsswe_test(d);
  CHECK_FALSE(r.degenerate);
  CHECK(r.statistic == doctest::Approx(1.9364916731037083).epsilon(1e-13));
  CHECK(r.p_value == doctest::Approx(0.05280751141611363).epsilon(1e-10));
  const double normal_oracle =
      2.0 * boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), r.statistic));
  CHECK(std::abs(r.p_value - normal_oracle) < 1e-12);

  std::vector<double> negated;
  for (double x : d) negated.push_back(-x);
  const TestResult n = mapsswe_test(negated);
  CHECK(n.statistic == -r.statistic);
  CHECK(n.p_value == r.p_value);

  CHECK_THROWS_AS(mapsswe_test(std::vector<double>{1.0}), ContractError);
}

TEST_CASE("paired t examples") {
  const std::vector<double> x{0.3, 0.5, 0.9};
  const TestResult same = paired_t_test(x, x);
  CHECK(same.degenerate);
  CHECK(same.p_value == 1.0);

  const std::vector<double> a{1, 2, 3, 4}, zero(4, 0.0);
  const TestResult r = paired_t_test(a, zero);
  CHECK(r.statistic == doctest::Approx(3.872983346207417).epsilon(1e-13));
  CHECK(r.p_value == doctest::Approx(0.030466291662170977).epsilon(1e-10));
  const double t_oracle = 2.0 * boost::math::cdf(boost::math::complement(
                                    boost::math::students_t_distribution<double>(3.0), r.statistic));
  CHECK(std::abs(r.p_value - t_oracle) < 1e-12);

  for (double k : {0.5, 2.0, 37.0}) {
    std::vector<double> scaled;
    for (double v : a) scaled.push_back(k * v);
    const TestResult s = paired_t_test(scaled, zero);
    CHECK(s.statistic == doctest::Approx(r.statistic).epsilon(1e-13));
    CHECK(s.p_value == doctest::Approx(r.p_value).epsilon(1e-12));
  }

  const TestResult swapped = paired_t_test(zero, a);
  CHECK(swapped.statistic == -r.statistic);
  CHECK(swapped.p_value == r.p_value);

  CHECK_THROWS_AS(paired_t_test(a, x), DataError);
  CHECK_THROWS_AS(paired_t_test(std::vector<double>{1}, std::vector<double>{2}), ContractError);
}

TEST_CASE("normal CDF and incomplete beta against 50-digit oracles") {
  double worst_cdf = 0.0;
  for (double x = -8.0; x <= 8.0; x += 0.25) {
    const HighPrecision hp = 0.5 * boost::math::erfc(-HighPrecision(x) / boost::multiprecision::sqrt(HighPrecision(2)));
    worst_cdf = std::max(worst_cdf, std::abs(normal_cdf(x) - hp.convert_to<double>()));
    const HighPrecision tail = boost::math::erfc(HighPrecision(std::abs(x)) / boost::multiprecision::sqrt(HighPrecision(2)));
    worst_cdf = std::max(worst_cdf, std::abs(normal_two_sided_p(x) - tail.convert_to<double>()));
  }
  CHECK(worst_cdf < 1e-10);

  double worst_beta = 0.0;
  for (double a : {0.5, 1.0, 1.5, 2.5, 5.0, 12.0, 40.0}) {
    for (double b : {0.5, 1.0, 3.0, 7.5, 20.0}) {
      for (double x : {0.001, 0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95, 0.999}) {
        const HighPrecision hp = boost::math::ibeta(HighPrecision(a), HighPrecision(b), HighPrecision(x));
        worst_beta = std::max(worst_beta, std::abs(regularized_incomplete_beta(a, b, x) - hp.convert_to<double>()));
      }
    }
  }
  CHECK(worst_beta < 1e-10);

  CHECK(regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  CHECK_THROWS_AS(regularized_incomplete_beta(0.0, 1.0, 0.5), ContractError);
  CHECK_THROWS_AS(regularized_incomplete_beta(1.0, 1.0, 1.5), ContractError);

  double worst_t = 0.0;
  for (double df : {1.0, 2.0, 5.0, 30.0}) {
    for (double t : {-4.0, -1.0, 0.0, 0.5, 2.0, 6.0}) {
      const HighPrecision hp = 2 * boost::math::cdf(boost::math::complement(
                                       boost::math::students_t_distribution<HighPrecision>(df), HighPrecision(std::abs(t))));
      worst_t = std::max(worst_t, std::abs(student_t_two_sided_p(t, df) - hp.convert_to<double>()));
    }
  }
  CHECK(worst_t < 1e-10);
}

TEST_CASE("significance flag threshold") {
  CHECK_FALSE(is_significant(0.3230));
  CHECK(is_significant(0.0442));
  CHECK(is_significant(0.05));
  CHECK_FALSE(is_significant(0.0500001));
}

TEST_CASE("contingency counts") {
  const bool a[] = {true, true, false, false, true};
  const bool b[] = {true, false, true, false, false};
  const ContingencyTable t = contingency(a, b);
  CHECK(t.both_correct == 1);
  CHECK(t.only_a == 2);
  CHECK(t.only_b == 1);
  CHECK(t.both_wrong == 1);
  CHECK_THROWS_AS(contingency(std::span<const bool>(a, 2), std::span<const bool>(b, 3)), DataError);
}

TEST_CASE("three mock systems match per-test oracles") {
  // accuracy: per-utterance 1/0 correctness, 30 utterances
  std::mt19937_64 rng(3);
  std::bernoulli_distribution p_a(0.8), p_b(0.6), p_c(0.5);
  const std::size_t n = 30;
  std::vector<double> acc_a(n), acc_b(n), acc_c(n), ones(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    acc_a[i] = p_a(rng);
    acc_b[i] = p_b(rng);
    acc_c[i] = p_c(rng);
  }
  // WER: per-utterance error counts over 10-token references
  std::uniform_int_distribution<int> errs(0, 4);
  std::vector<double> wer_a(n), wer_b(n), wer_c(n), tens(n, 10.0);
  for (std::size_t i = 0; i < n; ++i) {
    wer_a[i] = errs(rng);
    wer_b[i] = errs(rng) + 1;
    wer_c[i] = errs(rng);
  }
  // F1: per-utterance scores in [0, 1]
  std::uniform_real_distribution<double> f(0.3, 1.0);
  std::vector<double> f1_a(n), f1_b(n), f1_c(n);
  for (std::size_t i = 0; i < n; ++i) {
    f1_a[i] = f(rng);
    f1_b[i] = f(rng) * 0.9;
    f1_c[i] = f(rng);
  }
  auto system = [&](std::string name, const std::vector<double>& acc, const std::vector<double>& wer,
                    const std::vector<double>& f1) {
    SystemMetrics s;
    s.name = std::move(name);
    s.report.tasks = {per_utterance_task("sid", MetricKind::accuracy, acc, ones),
                      per_utterance_task("asr", MetricKind::wer, wer, tens),
                      per_utterance_task("sf", MetricKind::f1, f1, ones)};
    return s;
  };
  const std::vector<SystemMetrics> systems{system("seq", acc_a, wer_a, f1_a), system("par", acc_b, wer_b, f1_b),
                                           system("lora", acc_c, wer_c, f1_c)};
  const SignificanceTable table = significance_matrix(systems);
  REQUIRE(table.pairs.size() == 3);
  CHECK(table.pairs[0] == std::pair<std::string, std::string>{"seq", "par"});
  CHECK(table.pairs[1] == std::pair<std::string, std::string>{"seq", "lora"});
  CHECK(table.pairs[2] == std::pair<std::string, std::string>{"par", "lora"});
  REQUIRE(table.tasks == std::vector<std::string>{"sid", "asr", "sf"});

  const std::vector<const std::vector<double>*> acc{&acc_a, &acc_b, &acc_c}, wer{&wer_a, &wer_b, &wer_c},
      f1{&f1_a, &f1_b, &f1_c};
  const std::pair<int, int> pair_index[] = {{0, 1}, {0, 2}, {1, 2}};
  for (std::size_t p = 0; p < 3; ++p) {
    const auto [i, j] = pair_index[p];
    std::size_t b = 0, c = 0;
    for (std::size_t u = 0; u < n; ++u) {
      b += (*acc[i])[u] == 1.0 && (*acc[j])[u] == 0.0;
      c += (*acc[i])[u] == 0.0 && (*acc[j])[u] == 1.0;
    }
    const double mcnemar = b + c <= kMcNemarExactLimit ? exact_mcnemar_oracle(b, c) : chi2_mcnemar_oracle(b, c);
    CHECK(std::abs(table.cells[p][0].result.p_value - mcnemar) < 1e-12);
    CHECK(table.cells[p][0].result.test.rfind("mcnemar", 0) == 0);

    std::vector<double> z(n), d(n);
    for (std::size_t u = 0; u < n; ++u) {
      z[u] = (*wer[i])[u] - (*wer[j])[u];
      d[u] = (*f1[i])[u] - (*f1[j])[u];
    }
    const auto [zm, zs] = mean_sd(z);
    const double w = zm / (zs / std::sqrt(static_cast<double>(n)));
    const double mapsswe =
        2.0 * boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), std::abs(w)));
    CHECK(table.cells[p][1].result.test == "mapsswe");
    CHECK(std::abs(table.cells[p][1].result.p_value - mapsswe) < 1e-12);

    const auto [dm, ds] = mean_sd(d);
    const double t = dm / (ds / std::sqrt(static_cast<double>(n)));
    const double ttest = 2.0 * boost::math::cdf(boost::math::complement(
                                   boost::math::students_t_distribution<double>(static_cast<double>(n - 1)), std::abs(t)));
    CHECK(table.cells[p][2].result.test == "paired_t");
    CHECK(std::abs(table.cells[p][2].result.p_value - ttest) < 1e-12);

    for (const auto& cell : table.cells[p]) {
      CHECK(cell.significant == (cell.result.p_value <= 0.05));
      CHECK(cell.result.p_value >= 0.0);
      CHECK(cell.result.p_value <= 1.0);
    }
  }

  // swapping systems leaves every p unchanged
  const std::vector<SystemMetrics> reversed{systems[2], systems[1], systems[0]};
  const SignificanceTable back = significance_matrix(reversed);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(back.cells[2][t].result.p_value == table.cells[0][t].result.p_value);
    CHECK(back.cells[1][t].result.p_value == table.cells[1][t].result.p_value);
    CHECK(back.cells[0][t].result.p_value == table.cells[2][t].result.p_value);
  }

  const nlohmann::json j = to_json(table);
  CHECK(j["rows"].size() == 3);
  CHECK(j["rows"][0]["cells"]["asr"]["test"] == "mapsswe");
  const std::string text = format_significance_table(table);
  CHECK(text.find("seq vs par") != std::string::npos);
}

TEST_CASE("a system compared with itself scores p = 1 everywhere") {
  SystemMetrics s;
  s.name = "seq";
  s.report.tasks = {per_utterance_task("sid", MetricKind::accuracy, {1, 0, 1}, {1, 1, 1}),
                    per_utterance_task("pr", MetricKind::per, {2, 0, 1}, {8, 9, 7}),
                    per_utterance_task("sd", MetricKind::frame_error, {3, 1, 0}, {20, 20, 20})};
  const std::vector<SystemMetrics> systems{s, s};
  const SignificanceTable table = significance_matrix(systems);
  for (const auto& cell : table.cells[0]) {
    CHECK(cell.result.p_value == 1.0);
    CHECK_FALSE(cell.significant);
  }
}

TEST_CASE("misaligned utterance sets are rejected") {
  const TaskMetric a = per_utterance_task("sid", MetricKind::accuracy, {1, 0, 1}, {1, 1, 1});
  TaskMetric renamed = a;
  renamed.utterances[1].id = "other";
  CHECK_THROWS_AS(compare_systems(a, renamed), DataError);
  TaskMetric shorter = a;
  shorter.utterances.pop_back();
  CHECK_THROWS_AS(compare_systems(a, shorter), DataError);
  TaskMetric other_kind = a;
  other_kind.kind = MetricKind::f1;
  CHECK_THROWS_AS(compare_systems(a, other_kind), DataError);

  // matching is by id, not position
  TaskMetric shuffled = a;
  std::swap(shuffled.utterances[0], shuffled.utterances[2]);
  CHECK(compare_systems(a, shuffled).result.p_value == 1.0);

  SystemMetrics x{"x", {}}, y{"y", {}};
  x.report.tasks = {a};
  y.report.tasks = {per_utterance_task("er", MetricKind::accuracy, {1}, {1})};
  CHECK_THROWS_AS(significance_matrix(std::vector<SystemMetrics>{x, y}), DataError);
  CHECK_THROWS_AS(significance_matrix(std::vector<SystemMetrics>{x}), ContractError);
}
