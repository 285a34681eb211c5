// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "peftmix/tensor.hpp"

namespace peftmix {

/// Probability vector over C classes for one instance.
using ProbOutput = std::vector<double>;

/// Frame distributions [T×C] from one CTC model.
struct ProbSequence {
  Tensor frames;
  int blank = 0;

  std::size_t length() const { return frames.rows(); }
  std::size_t classes() const { return frames.cols(); }
};

/// Throws ContractError unless every entry is >= 0 and each distribution sums
/// to 1 within 1e-9.
void check_distribution(std::span<const double> probs);
void check_sequence(const ProbSequence& seq);

/// Votes per class; ties go to the highest summed probability, then the
/// lowest class index.
std::size_t majority_vote(std::span<const ProbOutput> outputs);

enum class AverageDomain {
  probability,  // arithmetic mean of probabilities
  log,          // renormalised geometric mean, for comparison only
};

struct AveragedOutput {
  ProbOutput probs;
  std::size_t decision = 0;
};

AveragedOutput average_probs(std::span<const ProbOutput> outputs, AverageDomain domain = AverageDomain::probability);

/// Index of the first maximum.
std::size_t argmax(std::span<const double> v);

struct AlignmentPath {
  std::vector<std::pair<std::size_t, std::size_t>> steps;
  double cost = 0.0;
};

/// Minimum-cost monotone alignment of two frame sequences under total
/// variation distance. Moves: diagonal, hold a (b advances), hold b (a
/// advances); backtracking prefers them in that order.
AlignmentPath dtw_align(const Tensor& a, const Tensor& b);

/// Rows of `seq` picked by one side of an alignment path.
Tensor expand_along(const Tensor& seq, const AlignmentPath& path, bool first_side);

struct AlignedSet {
  std::vector<Tensor> sequences;  // common length

  std::size_t length() const { return sequences.empty() ? 0 : sequences.front().rows(); }
};

/// Progressive alignment in model order against the running-mean profile of
/// the already aligned members. Held indices repeat their frame.
AlignedSet progressive_msa(std::span<const Tensor> seqs);

/// Frame argmax, merge adjacent repeats, drop blanks.
std::vector<int> greedy_ctc_decode(const Tensor& frames, int blank);
std::vector<int> collapse_ctc_labels(std::span<const std::size_t> labels, int blank);

enum class EnsembleMode { vote, average };

std::string_view ensemble_mode_name(EnsembleMode mode);
EnsembleMode parse_ensemble_mode(std::string_view name);

/// Optional progressive alignment, per-frame vote or average, greedy decode.
std::vector<int> ensemble_ctc(std::span<const ProbSequence> seqs, EnsembleMode mode, bool apply_alignment,
                              AverageDomain domain = AverageDomain::probability);

}  // namespace peftmix
