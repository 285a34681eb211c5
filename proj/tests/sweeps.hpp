// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

// Exhaustive comparisons against the brute-force oracles, shared by the unit
// tests and the acceptance binary.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "peftmix/ctc.hpp"
#include "peftmix/ensemble.hpp"
#include "peftmix/errors.hpp"
#include "peftmix/ops.hpp"

namespace peftmix::oracle {

struct SweepResult {
  std::size_t cases = 0;
  std::size_t failures = 0;  // wrong error behaviour or a mismatch beyond tolerance
  double max_abs_error = 0.0;
};

/// Every target of length <= 2 over every class count C <= 3 and every
/// T <= 4, `draws` random log-probability matrices each. Infeasible targets
/// must raise InfeasibleTargetError.
inline SweepResult ctc_sweep(std::size_t draws = 3, double tolerance = 1e-10) {
  SweepResult r;
  std::mt19937_64 rng(424242);
  for (std::size_t C = 2; C <= 3; ++C) {
    std::vector<std::vector<int>> targets{{}};
    for (int a = 1; a < static_cast<int>(C); ++a) {
      targets.push_back({a});
      for (int b = 1; b < static_cast<int>(C); ++b) targets.push_back({a, b});
    }
    for (std::size_t T = 1; T <= 4; ++T) {
      for (const auto& target : targets) {
        for (std::size_t d = 0; d < draws; ++d) {
          const Tensor lp = log_softmax(Tensor::randn({T, C}, 1.5, rng));
          ++r.cases;
          if (ctc_min_frames(target) > T) {
            try {
              ctc_loss(lp, target, 0);
              ++r.failures;
            } catch (const InfeasibleTargetError&) {
            }
            continue;
          }
          const double got = ctc_loss(lp, target, 0).item();
          const double want = ctc_brute_force(rows_of(lp), target, 0);
          const double err = std::abs(got - want);
          r.max_abs_error = std::max(r.max_abs_error, err);
          if (!(err < tolerance)) ++r.failures;
        }
      }
    }
  }
  return r;
}

/// dtw_align cost against every monotone path, for all length pairs up to
/// `max_len`. The returned path must also be valid and sum to its cost.
inline SweepResult dtw_sweep(std::size_t max_len = 6, std::size_t draws = 2, double tolerance = 1e-12) {
  SweepResult r;
  std::mt19937_64 rng(77);
  for (std::size_t n = 1; n <= max_len; ++n) {
    for (std::size_t m = 1; m <= max_len; ++m) {
      for (std::size_t d = 0; d < draws; ++d) {
        const Tensor a = random_distributions(n, 3, rng);
        const Tensor b = random_distributions(m, 3, rng);
        std::vector<std::vector<double>> cost(n, std::vector<double>(m));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < 3; ++c) s += std::abs(a.at(i, c) - b.at(j, c));
            cost[i][j] = 0.5 * s;
          }
        const AlignmentPath path = dtw_align(a, b);
        ++r.cases;
        const double want = dtw_exhaustive(cost);
        const double err = std::abs(path.cost - want);
        r.max_abs_error = std::max(r.max_abs_error, err);

        bool valid = !path.steps.empty() && path.steps.front() == std::pair<std::size_t, std::size_t>{0, 0} &&
                     path.steps.back() == std::pair<std::size_t, std::size_t>{n - 1, m - 1};
        double along = 0.0;
        for (std::size_t s = 0; s < path.steps.size(); ++s) {
          const auto [i, j] = path.steps[s];
          along += cost[i][j];
          if (s > 0) {
            const auto [pi, pj] = path.steps[s - 1];
            const std::size_t di = i - pi, dj = j - pj;
            valid = valid && i >= pi && j >= pj && di <= 1 && dj <= 1 && di + dj >= 1;
          }
        }
        valid = valid && std::abs(along - path.cost) < tolerance;
        if (!valid || !(err < tolerance)) ++r.failures;
      }
    }
  }
  return r;
}

}  // namespace peftmix::oracle
