// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "tandkit/heatmap.hpp"
#include "tandkit/label_map.hpp"
#include "tandkit/tensor.hpp"

// Supervision terms. All reductions accumulate in double and return a
// float32 scalar tensor wired into the graph.
namespace tand {

struct FocalParams {
  float alpha = 0.25f;
  float gamma = 2.0f;
};

struct LossWeights {
  float det = 1.0f;
  float cls = 1.0f;
  float bce = 0.5f;

  void validate() const;
};

using BatchPoints = std::vector<std::vector<PointAnnotation>>;

/// Penalty-reduced sigmoid focal loss on a centre-map target. Positives
/// (target == 1) contribute -alpha (1-p)^gamma log p; all other pixels
/// -(1-alpha) (1-t)^4 p^gamma log(1-p). Normalized by max(1, #positives).
/// `pred` and `target` share a shape ([1,H,W] or [N,1,H,W]).
Tensor focal_loss(const Tensor& pred, const Tensor& target, const FocalParams& params);

/// Mean over all points of -log softmax(logits at the point's cell)[class].
/// `logits` is [N,K,H_m,W_m]; points[n] belong to batch item n. Zero when
/// there are no points.
Tensor point_ce(const Tensor& logits, const BatchPoints& points, int stride);

/// Per-channel BCE on the disks of `radius` cells around each centre (target
/// 1 on the true class, 0 elsewhere), averaged over evaluated entries. A cell
/// covered by several disks takes the class of the nearest centre.
Tensor local_bce(const Tensor& probs, const BatchPoints& points, int radius, int stride);

/// 1 - mean over classes of (2 sum(p t) + 1) / (sum p + sum t + 1).
/// probs and target are [N,T,H,W] (or [T,H,W]); sums run over batch and space.
Tensor soft_dice_loss(const Tensor& probs, const Tensor& target_onehot);

/// Mean over pixels of -log probs[label].
Tensor pixel_nll(const Tensor& probs, std::span<const LabelMap> labels);

/// Mean over pixels of -log softmax(logits / temperature)[label], computed
/// from the logits so the gradient stays bounded when probabilities saturate.
Tensor pixel_ce_logits(const Tensor& logits, std::span<const LabelMap> labels, float temperature = 1.0f);

/// Mean binary cross-entropy between probabilities and {0,1} targets.
Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets);

Tensor onehot(std::span<const LabelMap> labels, int classes);

/// Soft-Dice and per-channel BCE on the full-resolution probabilities plus
/// pixel CE on the logits bilinearly resized to full resolution, equally
/// weighted. `probs` must be derived from `logits` at `temperature`.
struct TissueLossTerms {
  Tensor dice;
  Tensor ce;
  Tensor bce;
  Tensor total;
};
TissueLossTerms tissue_loss(const Tensor& logits, const Tensor& probs, std::span<const LabelMap> labels,
                            float temperature = 1.0f);

Tensor total_loss(const Tensor& det, const Tensor& cls, const Tensor& bce, const LossWeights& weights);

}  // namespace tand
