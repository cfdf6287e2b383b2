// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "tandkit/film.hpp"
#include "tandkit/nn.hpp"

namespace tand {

struct ModelConfig {
  int image_size = 128;
  int nucleus_classes = 3;  // K
  int tissue_classes = 4;   // T
  std::array<int, 4> encoder_widths{16, 32, 64, 96};
  std::array<int, 4> tissue_widths{8, 16, 32, 32};
  float temperature = 1.0f;
  float eta = 0.5f;
  float sigma = 2.0f;
  int film_hidden = 32;
  std::uint64_t init_seed = 0;
  // Per-channel input standardization; 0.5/0.5 maps [0,1] onto [-1,1].
  std::array<float, 3> input_mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> input_std{0.5f, 0.5f, 0.5f};

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Tissue probabilities Q at full image resolution, [N, T, H, W]: the head
/// logits bilinearly resized, then the temperature softmax.
struct TissueProbMap {
  Tensor probs;
  float temperature = 1.0f;
};

struct TissueOutput {
  Tensor logits;  // [N, T, H/16, W/16]
  TissueProbMap probs;
};

/// Encoder of four stride-2 conv blocks to 1/16 and a 1x1 head to T logits.
class TissueBranch {
 public:
  TissueBranch() = default;
  TissueBranch(const ModelConfig& cfg, Rng& rng);

  TissueOutput forward(const Tensor& image) const;
  void collect(std::vector<Param>& out) const;

  // Clears requires_grad on every tissue param and marks the branch frozen.
  void freeze();
  bool frozen() const { return frozen_; }
  float temperature() const { return temperature_; }
  Conv2d& head() { return head_; }

 private:
  std::array<Conv2d, 4> encoder_;
  Conv2d head_;
  float temperature_ = 1.0f;
  std::array<float, 3> mean_{}, std_{};
  bool frozen_ = false;
};

struct BackboneOutput {
  ScaleFeatures features;  // decoder outputs; features.s4 is x_{1/4}
  Tensor heat_logits;      // det_head(x_{1/4}), [N, 1, H/4, W/4]
};

/// Strided encoder to 1/16 and a decoder emitting 1/16, 1/8 and 1/4 features
/// (nearest upsample + conv, U-Net skips). Detection reads x_{1/4} only.
class DetClsBackbone {
 public:
  DetClsBackbone() = default;
  DetClsBackbone(const ModelConfig& cfg, Rng& rng);

  BackboneOutput forward(const Tensor& image) const;
  Tensor classify(const Tensor& x_cls) const { return cls_head_.forward(x_cls); }
  void collect(std::vector<Param>& out) const;

  std::array<int, 3> decoder_widths() const;
  Conv2d& det_head() { return det_head_; }
  Conv2d& cls_head() { return cls_head_; }

 private:
  std::array<Conv2d, 4> encoder_;
  Conv2d dec16_, dec8_, dec4_;
  Conv2d det_head_, cls_head_;
  std::array<float, 3> mean_{}, std_{};
};

struct DetClsOutput {
  Tensor heat;        // sigmoid probabilities, [N, 1, H/4, W/4]
  Tensor cls_logits;  // [N, K, H/4, W/4]
  ScaleFeatures features;
};

class TandModel {
 public:
  explicit TandModel(const ModelConfig& cfg);

  TissueOutput tissue_forward(const Tensor& image) const;
  /// The heatmap path never reads `q`; with film disabled, cls_logits is
  /// cls_head(x_{1/4}), otherwise cls_head(film.apply(q, features, x_{1/4})).
  DetClsOutput detcls_forward(const Tensor& image, const TissueProbMap& q, bool film_enabled) const;

  std::vector<Param> params() const;

  const ModelConfig& config() const { return cfg_; }
  TissueBranch& tissue() { return tissue_; }
  const TissueBranch& tissue() const { return tissue_; }
  DetClsBackbone& backbone() { return backbone_; }
  FilmStack& film() { return film_; }
  const FilmStack& film() const { return film_; }

 private:
  ModelConfig cfg_;
  TissueBranch tissue_;
  DetClsBackbone backbone_;
  FilmStack film_;
};

/// Both branches apply this to their input: (x - mean_c) / std_c per channel of [N,3,H,W]. Off the tape: images are data.
Tensor normalize_image(const Tensor& image, const std::array<float, 3>& mean, const std::array<float, 3>& std);

// Throws ShapeError unless image is [N,3,H,W] with H and W divisible by 16.
void check_image_tensor(const Tensor& image);

}  // namespace tand
