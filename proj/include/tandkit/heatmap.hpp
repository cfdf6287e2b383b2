// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tandkit/io.hpp"
#include "tandkit/tensor.hpp"

namespace tand {

/// A nucleus centre in image pixels with its class label.
struct PointAnnotation {
  float x = 0.0f;
  float y = 0.0f;
  int class_id = 0;
};

/// Gaussian centre-map target, values [1, H_m, W_m] in [0, 1].
struct CenterMap {
  Tensor values;
  float sigma = 2.0f;
  int stride = 4;
};

struct Detection {
  float x = 0.0f;  // image pixels
  float y = 0.0f;
  float score = 0.0f;
  std::optional<int> class_id;
  int map_x = 0;  // source peak on the heatmap grid
  int map_y = 0;
};

struct DecodeParams {
  float threshold = 0.3f;
  int window = 3;
  int stride = 4;
  int max_dets = 2000;
};

/// Heatmap cell owning image coordinate `coord`: the cell whose centre
/// (u + 0.5) * stride - 0.5 is nearest, clamped to [0, extent).
int map_cell(float coord, int stride, int extent);

/// Image-space centre of a heatmap cell.
inline float cell_center(int cell, int stride) { return (cell + 0.5f) * stride - 0.5f; }

/// Splats exp(-d^2 / (2 sigma^2)) around each point's cell, max-combined,
/// truncated to exactly zero beyond 3 sigma. Points must lie inside the
/// image of extent (map_w * stride, map_h * stride).
CenterMap encode_center_map(std::span<const PointAnnotation> points, int map_h, int map_w, int stride, float sigma);

/// Local-maximum suppression. A cell is kept when it is strictly greater than
/// every other cell of its window and at least `threshold`. Output is sorted
/// by descending score, ties in (row, col) order, then truncated to max_dets.
/// `heat` is [1, H_m, W_m] or [1, 1, H_m, W_m] of probabilities.
std::vector<Detection> decode_peaks(const Tensor& heat, const DecodeParams& params);

/// Argmax over the K logits at each detection's source cell, ties toward the
/// smallest class index. `logits` is [K, H_m, W_m] or [1, K, H_m, W_m].
std::vector<Detection> assign_classes(std::vector<Detection> dets, const Tensor& logits);

// Points CSV: header `x,y,class_id`, up to three decimals.
std::string format_points_csv(std::span<const PointAnnotation> points);
/// Rejects malformed rows and class ids outside [0, num_classes) with the
/// 1-based line number; num_classes <= 0 skips the class check.
std::vector<PointAnnotation> parse_points_csv(const std::string& text, int num_classes = 0);
void write_points_csv(const std::filesystem::path& path, std::span<const PointAnnotation> points);
std::vector<PointAnnotation> read_points_csv(const std::filesystem::path& path, int num_classes = 0);

// Predictions CSV: header `x,y,score,class_id`.
std::string format_detections_csv(std::span<const Detection> dets);

/// round(255 * p) grayscale rendering of a [1, H, W] probability map.
Image8 heatmap_to_image(const Tensor& heat);

}  // namespace tand
