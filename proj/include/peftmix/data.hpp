// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "peftmix/backbone.hpp"
#include "peftmix/tensor.hpp"

namespace peftmix {

/// Synthetic stand-in for a speech task.
///
/// Classification: every frame is the class prototype plus Gaussian noise.
/// CTC: a random token string where each token emits 2-4 noisy prototype
/// frames, with optional silence frames around tokens. Token ids start at 1;
/// class 0 is the CTC blank and the frame label of silence.
struct DatasetSpec {
  TaskKind kind = TaskKind::classification;
  std::string name = "task";
  std::size_t n_classes = 4;   // classification
  std::size_t vocab_size = 4;  // CTC tokens, blank excluded
  std::size_t input_dim = 16;
  std::size_t train_size = 500;
  std::size_t dev_size = 100;
  std::size_t test_size = 100;
  std::size_t min_len = 8;     // classification frames
  std::size_t max_len = 16;
  std::size_t min_tokens = 2;  // CTC
  std::size_t max_tokens = 5;
  double noise = 0.5;
  double silence_prob = 0.3;
  double amplitude = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  /// Width of the model output: n_classes, or vocab_size + 1 for CTC.
  std::size_t output_classes() const;
  int blank() const { return 0; }
};

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

struct Utterance {
  std::string id;
  Tensor features;                // [T×input_dim]
  int label = -1;                 // classification
  std::vector<int> target;        // CTC token string
  std::vector<int> frame_labels;  // CTC: emitting token per frame, 0 = silence
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Utterance> train, dev, test;
};

/// Orthonormal prototypes scaled by the spec amplitude; CTC appends the
/// silence prototype after the vocabulary (row vocab_size).
std::vector<std::vector<double>> make_prototypes(const DatasetSpec& spec);

Dataset generate_dataset(const DatasetSpec& spec);

/// Writes dataset.json plus train/dev/test.jsonl, one utterance per line.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace peftmix
