// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "peftmix/errors.hpp"

namespace peftmix {

namespace {

using nlohmann::json;

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::string utterance_id(const char* split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06zu", split, index);
  return buf;
}

class Generator {
 public:
  explicit Generator(const DatasetSpec& spec)
      : spec_(spec), prototypes_(make_prototypes(spec)), rng_(spec.seed ^ 0x5eedda7aULL), noise_(0.0, 1.0) {}

  std::vector<Utterance> split(const char* name, std::size_t count) {
    std::vector<Utterance> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Utterance u = spec_.kind == TaskKind::classification ? classification() : ctc();
      u.id = utterance_id(name, i);
      out.push_back(std::move(u));
    }
    return out;
  }

 private:
  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  void emit(std::vector<double>& frames, std::size_t prototype) {
    for (double p : prototypes_[prototype]) frames.push_back(p + spec_.noise * noise_(rng_));
  }

  Utterance classification() {
    Utterance u;
    u.label = static_cast<int>(uniform(0, spec_.n_classes - 1));
    const std::size_t len = uniform(spec_.min_len, spec_.max_len);
    std::vector<double> frames;
    frames.reserve(len * spec_.input_dim);
    for (std::size_t t = 0; t < len; ++t) emit(frames, static_cast<std::size_t>(u.label));
    u.features = Tensor({len, spec_.input_dim}, std::move(frames));
    return u;
  }

  Utterance ctc() {
    Utterance u;
    const std::size_t n_tokens = uniform(spec_.min_tokens, spec_.max_tokens);
    const std::size_t silence = spec_.vocab_size;
    std::bernoulli_distribution pause(spec_.silence_prob);
    std::vector<double> frames;
    auto silence_frame = [&] {
      emit(frames, silence);
      u.frame_labels.push_back(0);
    };
    if (pause(rng_)) silence_frame();
    for (std::size_t i = 0; i < n_tokens; ++i) {
      const int token = static_cast<int>(uniform(1, spec_.vocab_size));
      u.target.push_back(token);
      const std::size_t repeat = uniform(2, 4);
      for (std::size_t r = 0; r < repeat; ++r) {
        emit(frames, static_cast<std::size_t>(token - 1));
        u.frame_labels.push_back(token);
      }
      if (pause(rng_)) silence_frame();
    }
    const std::size_t len = u.frame_labels.size();
    u.features = Tensor({len, spec_.input_dim}, std::move(frames));
    return u;
  }

  const DatasetSpec& spec_;
  std::vector<std::vector<double>> prototypes_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> noise_;
};

json utterance_to_json(const Utterance& u, TaskKind kind) {
  json j;
  j["id"] = u.id;
  const std::size_t t = u.features.rows(), d = u.features.cols();
  const auto v = u.features.values();
  json frames = json::array();
  for (std::size_t i = 0; i < t; ++i) frames.push_back(std::vector<double>(v.begin() + i * d, v.begin() + (i + 1) * d));
  j["frames"] = std::move(frames);
  if (kind == TaskKind::classification) {
    j["label"] = u.label;
  } else {
    j["target"] = u.target;
    j["frame_labels"] = u.frame_labels;
  }
  return j;
}

Utterance utterance_from_json(const json& j, const DatasetSpec& spec) {
  Utterance u;
  u.id = j.at("id").get<std::string>();
  std::vector<double> values;
  std::size_t rows = 0;
  for (const auto& frame : j.at("frames")) {
    if (frame.size() != spec.input_dim) throw DataError("utterance " + u.id + ": frame width mismatch");
    for (const auto& x : frame) values.push_back(x.get<double>());
    ++rows;
  }
  if (rows == 0) throw DataError("utterance " + u.id + " has no frames");
  u.features = Tensor({rows, spec.input_dim}, std::move(values));
  if (spec.kind == TaskKind::classification) {
    u.label = j.at("label").get<int>();
  } else {
    u.target = j.at("target").get<std::vector<int>>();
    u.frame_labels = get_or<std::vector<int>>(j, "frame_labels", {});
  }
  return u;
}

void write_split(const std::vector<Utterance>& split, TaskKind kind, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  for (const Utterance& u : split) out << utterance_to_json(u, kind).dump() << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

std::vector<Utterance> read_split(const std::filesystem::path& file, const DatasetSpec& spec) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::vector<Utterance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(utterance_from_json(json::parse(line), spec));
    } catch (const json::exception& e) {
      throw DataError("malformed utterance in " + file.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

void DatasetSpec::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (train_size == 0) throw ConfigError("train_size must be positive");
  if (!(noise >= 0.0) || !(amplitude > 0.0)) throw ConfigError("noise must be >= 0 and amplitude > 0");
  if (kind == TaskKind::classification) {
    if (n_classes < 2) throw ConfigError("classification needs at least two classes");
    if (n_classes > input_dim) {
      throw ConfigError(std::to_string(n_classes) + " classes cannot have orthogonal prototypes in " +
                        std::to_string(input_dim) + " dimensions");
    }
    if (min_len == 0 || min_len > max_len) throw ConfigError("need 1 <= min_len <= max_len");
  } else {
    if (vocab_size < 1) throw ConfigError("CTC vocabulary must be non-empty");
    if (vocab_size + 1 > input_dim) {
      throw ConfigError("vocabulary of " + std::to_string(vocab_size) + " plus silence needs input_dim >= " +
                        std::to_string(vocab_size + 1));
    }
    if (min_tokens == 0 || min_tokens > max_tokens) throw ConfigError("need 1 <= min_tokens <= max_tokens");
    if (silence_prob < 0.0 || silence_prob > 1.0) throw ConfigError("silence_prob must lie in [0, 1]");
  }
}

std::size_t DatasetSpec::output_classes() const {
  return kind == TaskKind::classification ? n_classes : vocab_size + 1;
}

nlohmann::json to_json(const DatasetSpec& s) {
  return json{{"schema_version", 1},
              {"kind", s.kind == TaskKind::classification ? "seq_classification" : "ctc_tagging"},
              {"name", s.name},
              {"n_classes", s.n_classes},
              {"vocab_size", s.vocab_size},
              {"input_dim", s.input_dim},
              {"train_size", s.train_size},
              {"dev_size", s.dev_size},
              {"test_size", s.test_size},
              {"min_len", s.min_len},
              {"max_len", s.max_len},
              {"min_tokens", s.min_tokens},
              {"max_tokens", s.max_tokens},
              {"noise", s.noise},
              {"silence_prob", s.silence_prob},
              {"amplitude", s.amplitude},
              {"seed", s.seed}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  try {
    DatasetSpec s;
    s.kind = parse_task_kind(j.at("kind").get<std::string>());
    if (!j.contains("seed")) throw ConfigError("dataset spec needs an explicit seed");
    s.seed = j.at("seed").get<std::uint64_t>();
    s.name = get_or<std::string>(j, "name", s.name);
    s.n_classes = get_or(j, "n_classes", s.n_classes);
    s.vocab_size = get_or(j, "vocab_size", s.vocab_size);
    s.input_dim = get_or(j, "input_dim", s.input_dim);
    s.train_size = get_or(j, "train_size", s.train_size);
    s.dev_size = get_or(j, "dev_size", s.dev_size);
    s.test_size = get_or(j, "test_size", s.test_size);
    s.min_len = get_or(j, "min_len", s.min_len);
    s.max_len = get_or(j, "max_len", s.max_len);
    s.min_tokens = get_or(j, "min_tokens", s.min_tokens);
    s.max_tokens = get_or(j, "max_tokens", s.max_tokens);
    s.noise = get_or(j, "noise", s.noise);
    s.silence_prob = get_or(j, "silence_prob", s.silence_prob);
    s.amplitude = get_or(j, "amplitude", s.amplitude);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid dataset spec: ") + e.what());
  }
}

std::vector<std::vector<double>> make_prototypes(const DatasetSpec& spec) {
  spec.validate();
  const std::size_t count = spec.kind == TaskKind::classification ? spec.n_classes : spec.vocab_size + 1;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> protos;
  while (protos.size() < count) {
    std::vector<double> v(spec.input_dim);
    for (double& x : v) x = gauss(rng);
    // Gram-Schmidt against the accepted prototypes
    for (const auto& p : protos) {
      double dot = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * p[i];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * p[i] / (spec.amplitude * spec.amplitude);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (double& x : v) x *= spec.amplitude / norm;
    protos.push_back(std::move(v));
  }
  return protos;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  Generator gen(spec);
  data.train = gen.split("train", spec.train_size);
  data.dev = gen.split("dev", spec.dev_size);
  data.test = gen.split("test", spec.test_size);
  return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "dataset.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "dataset.json").string());
    out << to_json(data.spec).dump(2) << '\n';
  }
  write_split(data.train, data.spec.kind, dir / "train.jsonl");
  write_split(data.dev, data.spec.kind, dir / "dev.jsonl");
  write_split(data.test, data.spec.kind, dir / "test.jsonl");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto spec_file = dir / "dataset.json";
  std::ifstream in(spec_file);
  if (!in) throw DataError("dataset directory " + dir.string() + " has no dataset.json");
  Dataset data;
  try {
    data.spec = dataset_spec_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed " + spec_file.string() + ": " + e.what());
  }
  data.train = read_split(dir / "train.jsonl", data.spec);
  data.dev = read_split(dir / "dev.jsonl", data.spec);
  data.test = read_split(dir / "test.jsonl", data.spec);
  return data;
}

}  // namespace peftmix
