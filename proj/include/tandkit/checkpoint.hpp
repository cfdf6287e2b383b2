// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tandkit/nn.hpp"

namespace tand {

// Container layout:
//   8 bytes   magic "TANDCKPT"
//   8 bytes   manifest length L, little-endian u64
//   L bytes   JSON manifest {format_version, config, params:[{name, shape, offset, count, fnv1a64}]}
//   payload   float32 little-endian, params concatenated in manifest order
inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
  std::uint64_t hash = 0;
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  nlohmann::json config;  // model config block; null when absent
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

std::uint64_t fnv1a64(std::span<const float> values);
std::string hash_hex(std::uint64_t h);

std::vector<std::uint8_t> encode_checkpoint(std::span<const Param> params, const nlohmann::json& config);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const Param> params,
                     const nlohmann::json& config);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies values into `params`; names and shapes must match one-to-one.
void load_params(const Checkpoint& ckpt, std::span<const Param> params);

}  // namespace tand
