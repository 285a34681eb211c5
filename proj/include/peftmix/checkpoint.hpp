// Copyright 2026 The peftmix Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "peftmix/backbone.hpp"
#include "peftmix/tensor.hpp"

namespace peftmix {

nlohmann::json to_json(const BackboneConfig& config);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Layout: 8-byte magic, u32 format version, u64 header length, JSON header
/// (backbone config, metadata, array names and shapes), then each array's
/// values as little-endian IEEE doubles in header order.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  BackboneConfig backbone;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
};

Checkpoint make_checkpoint(const BackboneConfig& backbone, std::span<const NamedTensor> params,
                           nlohmann::json metadata = nlohmann::json::object());

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

/// Copies stored values into every target whose name starts with `prefix`
/// (empty prefix: all targets). A missing array raises DataError; a shape
/// mismatch raises DimensionError. Returns the number of tensors restored.
std::size_t restore_parameters(const Checkpoint& ckpt, std::span<const NamedTensor> targets,
                               std::string_view prefix = {});

}  // namespace peftmix
