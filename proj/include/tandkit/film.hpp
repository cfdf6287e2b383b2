// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "tandkit/nn.hpp"

// Spatial feature-wise linear modulation of the classification stream by
// tissue probabilities, applied at 1/16, 1/8 and 1/4 of the input size.
namespace tand {

enum class Scale { S16 = 0, S8 = 1, S4 = 2 };

inline constexpr std::array<Scale, 3> kFilmScales{Scale::S16, Scale::S8, Scale::S4};

int scale_divisor(Scale s);
std::string scale_tag(Scale s);  // "s16", "s8", "s4"

/// Decoder features at the three modulated scales, each [N, C_s, H_s, W_s].
struct ScaleFeatures {
  Tensor s16;
  Tensor s8;
  Tensor s4;

  const Tensor& at(Scale s) const;
};

struct BoundedFilmParams {
  Tensor gamma;  // tanh(raw_gamma) * eta
  Tensor beta;   // tanh(raw_beta) * eta / 2
};

struct ModulationResidual {
  Scale scale = Scale::S4;
  Tensor delta;  // modulated - input
};

struct FilmOutput {
  Tensor modulated;
  ModulationResidual residual;
};

/// Per-scale adapter: conv1 (T -> hidden, 3x3) -> ReLU -> conv2 (hidden -> 2*C_s, 3x3),
/// split into gamma/beta halves and bounded by tanh. `proj` is the 1x1 map
/// C_s -> C_cls applied to the upsampled residual; it starts at exactly zero.
class FilmAdapter {
 public:
  FilmAdapter(Scale scale, int tissue_classes, int feature_channels, int cls_channels, int hidden, float eta,
              Rng& rng);

  BoundedFilmParams params(const Tensor& q_s) const;
  void collect(std::vector<Param>& out) const;

  Scale scale() const { return scale_; }
  float eta() const { return eta_; }
  int tissue_classes() const { return conv1_.in_channels(); }
  int feature_channels() const { return conv2_.out_channels() / 2; }

  Conv2d& conv1() { return conv1_; }
  Conv2d& conv2() { return conv2_; }
  Conv2d& proj() { return proj_; }
  const Conv2d& proj() const { return proj_; }

 private:
  Scale scale_;
  float eta_;
  Conv2d conv1_;
  Conv2d conv2_;
  Conv2d proj_;
};

/// x * (1 + gamma) + beta, with delta = x * gamma + beta.
FilmOutput film_modulate(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scale scale);

/// x_quarter + sum over scales of proj_s(bilinear_up(delta_s)). Exactly one
/// residual per scale is required; adapters are looked up by scale.
Tensor aggregate_residuals(const Tensor& x_quarter, std::span<const ModulationResidual> residuals,
                           std::span<const FilmAdapter> adapters);

class FilmStack {
 public:
  FilmStack() = default;
  FilmStack(int tissue_classes, std::array<int, 3> feature_channels, int cls_channels, int hidden, float eta,
            Rng& rng);

  /// Resizes full-resolution tissue probabilities to each scale, modulates
  /// the matching features and aggregates onto x_quarter.
  Tensor apply(const Tensor& q_full, const ScaleFeatures& features, const Tensor& x_quarter) const;

  void collect(std::vector<Param>& out) const;
  std::vector<FilmAdapter>& adapters() { return adapters_; }
  const std::vector<FilmAdapter>& adapters() const { return adapters_; }

 private:
  std::vector<FilmAdapter> adapters_;
};

}  // namespace tand
