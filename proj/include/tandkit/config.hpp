// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "tandkit/datagen.hpp"
#include "tandkit/evaluation.hpp"
#include "tandkit/heatmap.hpp"
#include "tandkit/losses.hpp"
#include "tandkit/model.hpp"

namespace tand {

/// Parses flat `section.key = value` text. Blank lines and lines starting
/// with '#' are skipped. Throws ParseError (1-based line) on malformed lines
/// or repeated keys.
std::map<std::string, std::string> parse_key_values(const std::string& text);

struct OptimConfig {
  float lr = 0.05f;
  float momentum = 0.9f;
  float lr_film_scale = 0.1f;
  float grad_clip = 5.0f;  // max joint grad L2 norm per step, 0 = off
  int batch_size = 4;
  int epochs_stage1 = 10;
  int epochs_stage2 = 20;
  int epochs_stage3 = 10;
  bool finetune_backbone = false;  // stage 3 (and ablation) also update det.*
  bool augment = true;             // random dihedral view per training item
};

struct EvalConfig {
  float radius = kDefaultMatchRadius;
  DecodeParams decode;
};

/// Every tunable of a run. `experiment.seed` is the only required key.
struct TrainConfig {
  std::uint64_t seed = 0;
  int data_count = 60;
  int tissue_scenes = 0;  // extra mask-only scenes for stage 1
  std::string affinity = "reference";  // reference | identity | uniform
  SceneConfig scene;
  ModelConfig model;
  OptimConfig optim;
  LossWeights weights;
  FocalParams focal;
  int bce_radius = 1;
  EvalConfig eval;

  /// Every key with its current value, in `section.key` form.
  std::map<std::string, std::string> key_values() const;
  nlohmann::json to_json() const;
  void validate() const;

  /// Unknown keys and a missing `experiment.seed` raise ConfigError naming the key.
  static TrainConfig from_key_values(const std::map<std::string, std::string>& kv);
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

/// Serializes `cfg` back to key-value text accepted by TrainConfig::parse.
std::string format_config(const TrainConfig& cfg);

/// The seed after applying the TANDKIT_SEED environment override, if set.
std::uint64_t apply_seed_override(std::uint64_t seed);

}  // namespace tand
