// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#include "peftmix/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "peftmix/errors.hpp"

namespace peftmix {

namespace {

constexpr char kMagic[8] = {'P', 'E', 'F', 'T', 'M', 'I', 'X', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError("checkpoint is truncated");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json to_json(const BackboneConfig& c) {
  return {{"n_layers", c.n_layers}, {"d_model", c.d_model}, {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},         {"input_dim", c.input_dim}, {"seed", c.seed}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  try {
    BackboneConfig c;
    c.n_layers = j.value("n_layers", c.n_layers);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.input_dim = j.value("input_dim", c.input_dim);
    if (!j.contains("seed")) throw ConfigError("backbone config needs an explicit seed");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid backbone config: ") + e.what());
  }
}

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

Checkpoint make_checkpoint(const BackboneConfig& backbone, std::span<const NamedTensor> params,
                           nlohmann::json metadata) {
  Checkpoint c;
  c.backbone = backbone;
  c.metadata = std::move(metadata);
  for (const auto& p : params) {
    if (c.find(p.name)) throw ContractError("duplicate parameter name " + p.name);
    const auto v = p.tensor.values();
    c.arrays.push_back({p.name, p.tensor.shape(), {v.begin(), v.end()}});
  }
  return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& a : ckpt.arrays) {
    if (shape_numel(a.shape) != a.values.size()) throw DimensionError("array " + a.name + " does not match its shape");
    arrays.push_back({{"name", a.name}, {"shape", a.shape}});
  }
  const std::string header =
      nlohmann::json{{"backbone", to_json(ckpt.backbone)}, {"metadata", ckpt.metadata}, {"arrays", arrays}}.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put(out, Checkpoint::kFormatVersion);
  put(out, static_cast<std::uint64_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& a : ckpt.arrays)
    for (double v : a.values) put(out, v);
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof kMagic).data(), kMagic, sizeof kMagic) != 0) throw DataError("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kFormatVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = r.get<std::uint64_t>();
  const auto header_bytes = r.take(header_len);
  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
    c.backbone = backbone_config_from_json(header.at("backbone"));
    c.metadata = header.at("metadata");
    for (const auto& ja : header.at("arrays")) {
      NamedArray a{ja.at("name").get<std::string>(), ja.at("shape").get<Shape>(), {}};
      a.values.resize(shape_numel(a.shape));
      c.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  for (auto& a : c.arrays)
    for (double& v : a.values) v = r.get<double>();
  if (!r.done()) throw DataError("trailing bytes after checkpoint arrays");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

std::size_t restore_parameters(const Checkpoint& ckpt, std::span<const NamedTensor> targets, std::string_view prefix) {
  std::size_t restored = 0;
  for (const auto& t : targets) {
    if (!t.name.starts_with(prefix)) continue;
    const NamedArray* a = ckpt.find(t.name);
    if (!a) throw DataError("checkpoint has no array named " + t.name);
    if (a->shape != t.tensor.shape()) {
      throw DimensionError("array " + t.name + " has shape " + shape_string(a->shape) + ", expected " +
                           shape_string(t.tensor.shape()));
    }
    // NamedTensor holds a shallow handle, so writing through a copy updates the model
    Tensor handle = t.tensor;
    auto dst = handle.mutable_values();
    std::copy(a->values.begin(), a->values.end(), dst.begin());
    ++restored;
  }
  return restored;
}

}  // namespace peftmix
