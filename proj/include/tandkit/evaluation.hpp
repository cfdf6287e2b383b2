// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tandkit/heatmap.hpp"
#include "tandkit/label_map.hpp"

namespace tand {

inline constexpr float kDefaultMatchRadius = 15.0f;

struct Match {
  int gt_index = 0;
  int pred_index = 0;
  float distance = 0.0f;
};

struct MatchReport {
  std::vector<Match> matches;
  std::vector<int> unmatched_gt;    // false negatives
  std::vector<int> unmatched_pred;  // false positives
  float radius = kDefaultMatchRadius;
};

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

struct ClassificationMetrics {
  std::vector<double> per_class_f1;
  double macro_f1 = 0.0;
  std::vector<int> absent_classes;  // no matched gt or pred of this class
};

/// One-to-one greedy centre matching. Ground truths are visited in input
/// order; each claims the highest-scoring unclaimed prediction within
/// `radius` (ties: nearer, then lower index).
MatchReport match_centers(std::span<const PointAnnotation> gts, std::span<const Detection> preds,
                          float radius = kDefaultMatchRadius);

/// Optimal assignment maximizing (match count, total score) by exhaustive
/// search over prediction subsets. Test oracle only; needs |preds| <= 16.
MatchReport assignment_oracle(std::span<const PointAnnotation> gts, std::span<const Detection> preds,
                              float radius = kDefaultMatchRadius);

DetectionMetrics detection_metrics(long tp, long fp, long fn);
DetectionMetrics detection_metrics(const MatchReport& report);

/// One-vs-rest confusion counts over matched pairs, summable across images.
struct ClassCounts {
  std::vector<long> tp, fp, fn;

  explicit ClassCounts(int classes = 0) : tp(classes, 0), fp(classes, 0), fn(classes, 0) {}
  void add(const MatchReport& report, std::span<const PointAnnotation> gts, std::span<const Detection> preds);
  ClassificationMetrics metrics() const;
};

ClassificationMetrics classification_metrics(const MatchReport& report, std::span<const PointAnnotation> gts,
                                             std::span<const Detection> preds, int classes);

/// 2|P_t ∩ G_t| / (|P_t| + |G_t|) per class; 1 when the class is absent from both.
std::vector<double> dice_per_class(const LabelMap& pred, const LabelMap& gt, int classes);

/// Pixel overlap counts summable across images.
struct DiceCounts {
  std::vector<long> intersection, pred_size, gt_size;

  explicit DiceCounts(int classes = 0) : intersection(classes, 0), pred_size(classes, 0), gt_size(classes, 0) {}
  void add(const LabelMap& pred, const LabelMap& gt);
  std::vector<double> dice() const;
};

struct EvaluationReport {
  DetectionMetrics detection;
  ClassificationMetrics classification;
  std::vector<double> dice_per_class;
  double mean_dice = 0.0;
  float radius = kDefaultMatchRadius;
  int nucleus_classes = 0;
  int tissue_classes = 0;

  nlohmann::json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& j);
  std::string to_csv() const;
};

/// Reduces per-image results by count summation.
class EvaluationAccumulator {
 public:
  EvaluationAccumulator(int nucleus_classes, int tissue_classes, float radius);

  void add_detections(std::span<const PointAnnotation> gts, std::span<const Detection> preds);
  void add_tissue(const LabelMap& pred, const LabelMap& gt);
  EvaluationReport report() const;

 private:
  int nucleus_classes_;
  int tissue_classes_;
  float radius_;
  long tp_ = 0, fp_ = 0, fn_ = 0;
  ClassCounts class_counts_;
  DiceCounts dice_counts_;
  bool has_tissue_ = false;
};

}  // namespace tand
