// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "oracles.hpp"
#include "peftmix/ctc.hpp"
#include "peftmix/errors.hpp"
#include "peftmix/ops.hpp"
#include "sweeps.hpp"

using namespace peftmix;

TEST_CASE("ctc loss equals brute-force path enumeration") {
  const auto r = oracle::ctc_sweep();
  CHECK(r.cases > 100);
  CHECK(r.failures == 0);
  CHECK(r.max_abs_error < 1e-10);
}

TEST_CASE("minimum frame counts") {
  CHECK(ctc_min_frames(std::vector<int>{}) == 0);
  CHECK(ctc_min_frames(std::vector<int>{1, 2}) == 2);
  CHECK(ctc_min_frames(std::vector<int>{1, 1}) == 3);
  CHECK(ctc_min_frames(std::vector<int>{2, 2, 2, 1}) == 6);
}

TEST_CASE("empty target scores the all-blank path") {
  std::mt19937_64 rng(3);
  const Tensor lp = log_softmax(Tensor::randn({4, 3}, 1.0, rng));
  double want = 0.0;
  for (std::size_t t = 0; t < 4; ++t) want -= lp.at(t, 0);
  CHECK(ctc_loss(lp, std::vector<int>{}, 0).item() == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("blank index other than zero") {
  std::mt19937_64 rng(4);
  const Tensor lp = log_softmax(Tensor::randn({4, 3}, 1.0, rng));
  const std::vector<int> target{0, 1};
  const double want = oracle::ctc_brute_force(oracle::rows_of(lp), target, 2);
  CHECK(ctc_loss(lp, target, 2).item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("gradient with respect to free log-probabilities") {
  std::mt19937_64 rng(5);
  Tensor lp = oracle::random_tensor({5, 3}, rng);
  const std::vector<int> target{1, 2, 2};
  const auto r = oracle::check_gradients([&] { return ctc_loss(lp, target, 0); }, {{"log_probs", lp}});
  CAPTURE(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("invalid targets") {
  const Tensor lp = log_softmax(Tensor::zeros({3, 3}));
  CHECK_THROWS_AS(ctc_loss(lp, std::vector<int>{1, 1, 1}, 0), InfeasibleTargetError);
  CHECK_THROWS_AS(ctc_loss(lp, std::vector<int>{0}, 0), ContractError);
  CHECK_THROWS_AS(ctc_loss(lp, std::vector<int>{5}, 0), DataError);
  CHECK_THROWS_AS(ctc_loss(lp, std::vector<int>{1}, 3), ContractError);
}
