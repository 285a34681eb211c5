// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "peftmix/errors.hpp"
#include "peftmix/kernels.hpp"

namespace peftmix {

namespace {

constexpr double kSumTolerance = 1e-9;

std::size_t shared_classes(std::span<const ProbOutput> outputs) {
  if (outputs.empty()) throw ContractError("ensemble needs at least one output");
  const std::size_t c = outputs.front().size();
  if (c == 0) throw DimensionError("empty probability vector");
  for (const auto& o : outputs) {
    if (o.size() != c) {
      throw DimensionError("ensemble members disagree on class count (" + std::to_string(c) + " vs " +
                           std::to_string(o.size()) + ")");
    }
    check_distribution(o);
  }
  return c;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const auto v = t.values().subspan(r * t.cols(), t.cols());
  return {v.begin(), v.end()};
}

Tensor running_mean(std::span<const Tensor> members) {
  std::vector<double> mean(members.front().values().begin(), members.front().values().end());
  for (std::size_t k = 1; k < members.size(); ++k) {
    const auto v = members[k].values();
    const double inv = 1.0 / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (v[i] - mean[i]) * inv;
  }
  return Tensor(members.front().shape(), std::move(mean));
}

}  // namespace

void check_distribution(std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ContractError("probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    throw ContractError("probabilities sum to " + std::to_string(total) + ", not 1");
  }
}

void check_sequence(const ProbSequence& seq) {
  if (!seq.frames.defined() || seq.frames.dim() != 2 || seq.frames.rows() == 0) {
    throw DataError("probability sequence must be a non-empty [T×C] matrix");
  }
  if (seq.blank < 0 || static_cast<std::size_t>(seq.blank) >= seq.classes()) {
    throw ContractError("blank index outside the class range");
  }
  for (std::size_t t = 0; t < seq.length(); ++t) check_distribution(seq.frames.values().subspan(t * seq.classes(), seq.classes()));
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t majority_vote(std::span<const ProbOutput> outputs) {
  const std::size_t c = shared_classes(outputs);
  std::vector<std::size_t> votes(c, 0);
  std::vector<double> mass(c, 0.0);
  for (const auto& o : outputs) {
    ++votes[argmax(o)];
    for (std::size_t j = 0; j < c; ++j) mass[j] += o[j];
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j) {
    if (votes[j] > votes[best] || (votes[j] == votes[best] && mass[j] > mass[best])) best = j;
  }
  return best;
}

AveragedOutput average_probs(std::span<const ProbOutput> outputs, AverageDomain domain) {
  const std::size_t c = shared_classes(outputs);
  AveragedOutput out;
  if (domain == AverageDomain::probability) {
    out.probs = outputs.front();
    for (std::size_t k = 1; k < outputs.size(); ++k) {
      const double inv = 1.0 / static_cast<double>(k + 1);
      for (std::size_t j = 0; j < c; ++j) out.probs[j] += (outputs[k][j] - out.probs[j]) * inv;
    }
  } else {
    std::vector<double> logmean(c, 0.0);
    for (const auto& o : outputs)
      for (std::size_t j = 0; j < c; ++j) logmean[j] += std::log(o[j]) / static_cast<double>(outputs.size());
    const double mx = *std::max_element(logmean.begin(), logmean.end());
    if (!std::isfinite(mx)) throw NumericError("log-domain average: every class has zero probability somewhere");
    out.probs.resize(c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += out.probs[j] = std::exp(logmean[j] - mx);
    for (double& p : out.probs) p /= z;
  }
  out.decision = argmax(out.probs);
  return out;
}

AlignmentPath dtw_align(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined() || a.dim() != 2 || b.dim() != 2 || a.rows() == 0 || b.rows() == 0) {
    throw DataError("dtw_align needs two non-empty [T×C] sequences");
  }
  if (a.cols() != b.cols()) throw DimensionError("dtw_align: class counts differ");
  const std::size_t ta = a.rows(), tb = b.rows();
  std::vector<double> cost(ta * tb);
  kernels::tv_cost_matrix(a.values(), b.values(), cost, ta, tb, a.cols());

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(ta * tb, inf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * tb + j]; };
  for (std::size_t i = 0; i < ta; ++i) {
    for (std::size_t j = 0; j < tb; ++j) {
      double best = (i == 0 && j == 0) ? 0.0 : inf;
      if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
      if (j > 0) best = std::min(best, at(i, j - 1));
      if (i > 0) best = std::min(best, at(i - 1, j));
      at(i, j) = best + cost[i * tb + j];
    }
  }

  AlignmentPath path;
  path.cost = at(ta - 1, tb - 1);
  std::size_t i = ta - 1, j = tb - 1;
  path.steps.emplace_back(i, j);
  while (i > 0 || j > 0) {
    const double diag = (i > 0 && j > 0) ? at(i - 1, j - 1) : inf;
    const double hold_a = j > 0 ? at(i, j - 1) : inf;
    const double hold_b = i > 0 ? at(i - 1, j) : inf;
    if (diag <= hold_a && diag <= hold_b) {
      --i;
      --j;
    } else if (hold_a <= hold_b) {
      --j;
    } else {
      --i;
    }
    path.steps.emplace_back(i, j);
  }
  std::reverse(path.steps.begin(), path.steps.end());
  return path;
}

Tensor expand_along(const Tensor& seq, const AlignmentPath& path, bool first_side) {
  const std::size_t c = seq.cols();
  std::vector<double> out;
  out.reserve(path.steps.size() * c);
  for (const auto& [ia, ib] : path.steps) {
    const std::size_t r = first_side ? ia : ib;
    if (r >= seq.rows()) throw ContractError("alignment path indexes past the sequence end");
    const auto v = seq.values().subspan(r * c, c);
    out.insert(out.end(), v.begin(), v.end());
  }
  return Tensor({path.steps.size(), c}, std::move(out));
}

AlignedSet progressive_msa(std::span<const Tensor> seqs) {
  if (seqs.size() < 2) throw ContractError("progressive alignment needs at least two sequences");
  for (const Tensor& s : seqs) {
    if (!s.defined() || s.dim() != 2 || s.rows() == 0) throw DataError("empty sequence in alignment");
    if (s.cols() != seqs.front().cols()) throw DimensionError("sequences disagree on class count");
  }
  AlignedSet set;
  set.sequences.push_back(seqs.front());
  Tensor profile = seqs.front();
  for (std::size_t k = 1; k < seqs.size(); ++k) {
    const AlignmentPath path = dtw_align(profile, seqs[k]);
    for (Tensor& member : set.sequences) member = expand_along(member, path, true);
    set.sequences.push_back(expand_along(seqs[k], path, false));
    profile = running_mean(set.sequences);
  }
  return set;
}

std::vector<int> collapse_ctc_labels(std::span<const std::size_t> labels, int blank) {
  std::vector<int> out;
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (std::size_t l : labels) {
    if (l != prev && static_cast<int>(l) != blank) out.push_back(static_cast<int>(l));
    prev = l;
  }
  return out;
}

std::vector<int> greedy_ctc_decode(const Tensor& frames, int blank) {
  std::vector<std::size_t> labels(frames.rows());
  for (std::size_t t = 0; t < frames.rows(); ++t) labels[t] = argmax(frames.values().subspan(t * frames.cols(), frames.cols()));
  return collapse_ctc_labels(labels, blank);
}

std::string_view ensemble_mode_name(EnsembleMode mode) { return mode == EnsembleMode::vote ? "vote" : "avg"; }

EnsembleMode parse_ensemble_mode(std::string_view name) {
  if (name == "vote" || name == "voting") return EnsembleMode::vote;
  if (name == "avg" || name == "average") return EnsembleMode::average;
  throw ConfigError("unknown ensemble mode '" + std::string(name) + "'");
}

std::vector<int> ensemble_ctc(std::span<const ProbSequence> seqs, EnsembleMode mode, bool apply_alignment,
                              AverageDomain domain) {
  if (seqs.empty()) throw ContractError("ensemble needs at least one sequence");
  for (const ProbSequence& s : seqs) {
    check_sequence(s);
    if (s.blank != seqs.front().blank) throw ContractError("ensemble members use different blank indices");
    if (s.classes() != seqs.front().classes()) throw DimensionError("ensemble members disagree on class count");
  }
  const int blank = seqs.front().blank;

  std::vector<Tensor> frames;
  for (const ProbSequence& s : seqs) frames.push_back(s.frames);
  if (apply_alignment) {
    if (seqs.size() < 2) throw ContractError("alignment needs at least two sequences");
    frames = progressive_msa(frames).sequences;
  } else {
    for (const Tensor& f : frames) {
      if (f.rows() != frames.front().rows()) {
        throw DimensionError("unaligned ensembling needs sequences of equal length");
      }
    }
  }

  const std::size_t t_len = frames.front().rows();
  std::vector<std::size_t> labels(t_len);
  std::vector<ProbOutput> column(frames.size());
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t n = 0; n < frames.size(); ++n) column[n] = row(frames[n], t);
    labels[t] = mode == EnsembleMode::vote ? majority_vote(column) : average_probs(column, domain).decision;
  }
  return collapse_ctc_labels(labels, blank);
}

}  // namespace peftmix
