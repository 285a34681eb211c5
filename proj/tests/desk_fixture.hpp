// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

// Small on-disk experiments for the harness, CLI and acceptance tests.

#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "json.hpp"
#include "peftmix/checkpoint.hpp"
#include "peftmix/config.hpp"
#include "peftmix/data.hpp"

namespace peftmix::oracle {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& label)
      : path_(std::filesystem::temp_directory_path() / ("peftmix-" + label + "-" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
}

/// Small backbone for fast unit runs: 2 layers, width 16, 8 input features.
inline BackboneConfig small_backbone() {
  BackboneConfig b;
  b.n_layers = 2;
  b.d_model = 16;
  b.n_heads = 2;
  b.d_ff = 32;
  b.input_dim = 8;
  b.seed = 11;
  return b;
}

inline DatasetSpec small_classification_spec(std::uint64_t seed = 3) {
  DatasetSpec s;
  s.kind = TaskKind::classification;
  s.name = "sid";
  s.n_classes = 4;
  s.input_dim = 8;
  s.train_size = 40;
  s.dev_size = 10;
  s.test_size = 12;
  s.min_len = 4;
  s.max_len = 6;
  s.noise = 0.4;
  s.seed = seed;
  return s;
}

inline DatasetSpec small_ctc_spec(std::uint64_t seed = 4) {
  DatasetSpec s;
  s.kind = TaskKind::ctc;
  s.name = "pr";
  s.vocab_size = 3;
  s.input_dim = 8;
  s.train_size = 30;
  s.dev_size = 6;
  s.test_size = 8;
  s.min_tokens = 2;
  s.max_tokens = 3;
  s.noise = 0.3;
  s.seed = seed;
  return s;
}

struct RunOptions {
  std::string mode = "peft";
  std::string kind = "sequential";
  std::string budget = "original";
  std::size_t steps = 20;
  double lr = 1e-2;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
};

/// Experiment config JSON with paths relative to the config file.
inline nlohmann::json experiment_json(const BackboneConfig& backbone, const std::string& task,
                                      const std::string& data_dir, const std::string& output_dir,
                                      const RunOptions& o) {
  return {{"schema_version", kSchemaVersion},
          {"backbone", to_json(backbone)},
          {"task", {{"name", task}, {"data_dir", data_dir}}},
          {"method", {{"mode", o.mode}, {"kind", o.kind}, {"budget", o.budget}}},
          {"optim", {{"lr", o.lr}, {"steps", o.steps}, {"batch_size", o.batch_size}}},
          {"seeds", {{"data", o.seed}, {"init", o.seed + 1}, {"train", o.seed + 2}}},
          {"output_dir", output_dir}};
}

}  // namespace peftmix::oracle
