// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tandkit/heatmap.hpp"
#include "tandkit/label_map.hpp"
#include "tandkit/tensor.hpp"

namespace tand {

struct SceneConfig {
  int width = 128;
  int height = 128;
  int tissue_classes = 4;   // T
  int nucleus_classes = 3;  // K
  int nuclei_min = 20;
  int nuclei_max = 40;
  float tissue_blob_scale = 40.0f;  // px between control points of the tissue fields
  float min_distance = 6.0f;
  // Scales each tissue tint's offset from the mean tint; 0 leaves only texture.
  float tint_contrast = 0.012f;
  float texture_noise = 0.006f;  // half-width of the shared per-pixel grain
  float cytoplasm_radius = 0.0f;  // px; tissue-neutral disc under each nucleus, 0 = none
  // T x K, row t is the class distribution of nuclei lying on tissue t.
  std::vector<std::vector<double>> affinity;
  // Per nucleus class, which rendered look it gets. Classes sharing a group
  // are indistinguishable in the image.
  std::vector<int> appearance;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SceneConfig from_json(const nlohmann::json& j);
};

/// T = 4, K = 3; classes 0 and 1 look identical and are told apart by the
/// tissue they sit on (tissue 0 -> class 0, tissue 1 -> class 1).
SceneConfig reference_scene_config(std::uint64_t seed);

/// Row-stochastic affinity helpers.
std::vector<std::vector<double>> identity_affinity(int classes);
std::vector<std::vector<double>> uniform_affinity(int tissue_classes, int nucleus_classes);

struct Scene {
  Tensor image;  // [3, H, W], multiples of 1/255
  LabelMap tissue_mask;
  std::vector<PointAnnotation> points;
  std::vector<std::uint8_t> point_tissue;  // tissue label under each point
};

/// Pure function of (cfg, index). Throws std::runtime_error when the nuclei
/// cannot be placed at the minimum distance after repeated attempts.
Scene generate_scene(const SceneConfig& cfg, std::uint64_t index);

/// Dihedral view of a scene: bit 0 mirrors x, bit 1 mirrors y, bit 2
/// transposes first (square scenes only). Image, mask and points move
/// together; pixel centres sit at integer coordinates.
Scene transform_scene(const Scene& scene, int op);
inline constexpr int kDihedralOps = 8;

struct SceneFiles {
  std::string image;   // 8-bit RGB PNG
  std::string mask;    // 8-bit gray PNG, labels 0..T-1
  std::string points;  // x,y,class_id CSV
};

SceneFiles write_scene(const std::filesystem::path& dir, const std::string& stem, const Scene& scene);
/// `num_classes` / `tissue_classes` bound the label ranges (<= 0 skips the check).
Scene read_scene(const std::filesystem::path& dir, const SceneFiles& files, int num_classes = 0,
                 int tissue_classes = 0);

struct Dataset {
  SceneConfig config;
  std::vector<Scene> train;
  std::vector<Scene> test;
  // Extra scenes whose masks only feed the tissue branch (stage 1).
  std::vector<Scene> tissue;
};

/// count scenes, the first round(0.8 * count) for training, then
/// `tissue_count` mask-only scenes at indices count, count + 1, ...
Dataset generate_dataset(const SceneConfig& cfg, int count, int tissue_count = 0);
int train_count_for(int count);

/// Writes scenes plus manifest.json listing the train/test/tissue triples and seed.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// Image tensor [3,H,W] <-> interleaved 8-bit RGB.
Image8 image_to_rgb8(const Tensor& image);
Tensor rgb8_to_image(const Image8& rgb);

}  // namespace tand
