// SPDX-License-Identifier: Apache-2.0
#include "tandkit/evaluation.hpp"

#include <cmath>
#include <cstdio>

#include "tandkit/error.hpp"

namespace tand {

namespace {

float distance(const PointAnnotation& g, const Detection& p) {
  const double dx = static_cast<double>(g.x) - p.x, dy = static_cast<double>(g.y) - p.y;
  return static_cast<float>(std::sqrt(dx * dx + dy * dy));
}

double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

double ratio(long num, long den) { return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }

void fill_unmatched(MatchReport& report, std::size_t n_gt, std::size_t n_pred) {
  std::vector<char> gt_used(n_gt, 0), pred_used(n_pred, 0);
  for (const Match& m : report.matches) {
    gt_used[static_cast<std::size_t>(m.gt_index)] = 1;
    pred_used[static_cast<std::size_t>(m.pred_index)] = 1;
  }
  for (std::size_t i = 0; i < n_gt; ++i) {
    if (!gt_used[i]) report.unmatched_gt.push_back(static_cast<int>(i));
  }
  for (std::size_t j = 0; j < n_pred; ++j) {
    if (!pred_used[j]) report.unmatched_pred.push_back(static_cast<int>(j));
  }
}

}  // namespace

MatchReport match_centers(std::span<const PointAnnotation> gts, std::span<const Detection> preds, float radius) {
  if (!(radius > 0.0f)) throw InvalidArgument("match_centers: radius must be > 0");
  MatchReport report;
  report.radius = radius;
  std::vector<char> claimed(preds.size(), 0);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    int best = -1;
    float best_d = 0.0f;
    for (std::size_t j = 0; j < preds.size(); ++j) {
      if (claimed[j]) continue;
      const float d = distance(gts[i], preds[j]);
      if (d > radius) continue;
      if (best < 0 || preds[j].score > preds[static_cast<std::size_t>(best)].score ||
          (preds[j].score == preds[static_cast<std::size_t>(best)].score && d < best_d)) {
        best = static_cast<int>(j);
        best_d = d;
      }
    }
    if (best >= 0) {
      claimed[static_cast<std::size_t>(best)] = 1;
      report.matches.push_back({static_cast<int>(i), best, best_d});
    }
  }
  fill_unmatched(report, gts.size(), preds.size());
  return report;
}

MatchReport assignment_oracle(std::span<const PointAnnotation> gts, std::span<const Detection> preds, float radius) {
  if (!(radius > 0.0f)) throw InvalidArgument("assignment_oracle: radius must be > 0");
  if (preds.size() > 16) throw InvalidArgument("assignment_oracle: at most 16 predictions");
  const std::size_t n = gts.size(), m = preds.size();
  const std::size_t masks = std::size_t{1} << m;

  struct Value {
    int count = -1;
    double score = 0.0;
    int choice = -2;  // -1 skip, >= 0 pred index
  };
  auto better = [](int c1, double s1, const Value& v) { return c1 > v.count || (c1 == v.count && s1 > v.score); };

  // best[i][mask]: optimum over gts[i..n) with `mask` preds already used.
  std::vector<std::vector<Value>> best(n + 1, std::vector<Value>(masks));
  for (std::size_t mask = 0; mask < masks; ++mask) best[n][mask] = {0, 0.0, -1};
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t mask = 0; mask < masks; ++mask) {
      Value v = best[i + 1][mask];
      v.choice = -1;
      for (std::size_t j = 0; j < m; ++j) {
        if ((mask >> j) & 1u) continue;
        if (distance(gts[i], preds[j]) > radius) continue;
        const Value& rest = best[i + 1][mask | (std::size_t{1} << j)];
        const int c = rest.count + 1;
        const double s = rest.score + preds[j].score;
        if (better(c, s, v)) v = {c, s, static_cast<int>(j)};
      }
      best[i][mask] = v;
    }
  }

  MatchReport report;
  report.radius = radius;
  std::size_t mask = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int j = best[i][mask].choice;
    if (j >= 0) {
      report.matches.push_back({static_cast<int>(i), j, distance(gts[i], preds[static_cast<std::size_t>(j)])});
      mask |= std::size_t{1} << j;
    }
  }
  fill_unmatched(report, n, m);
  return report;
}

DetectionMetrics detection_metrics(long tp, long fp, long fn) {
  DetectionMetrics d;
  d.tp = tp;
  d.fp = fp;
  d.fn = fn;
  d.precision = ratio(tp, tp + fp);
  d.recall = ratio(tp, tp + fn);
  d.f1 = f1_score(d.precision, d.recall);
  return d;
}

DetectionMetrics detection_metrics(const MatchReport& report) {
  return detection_metrics(static_cast<long>(report.matches.size()), static_cast<long>(report.unmatched_pred.size()),
                           static_cast<long>(report.unmatched_gt.size()));
}

void ClassCounts::add(const MatchReport& report, std::span<const PointAnnotation> gts,
                      std::span<const Detection> preds) {
  const int k = static_cast<int>(tp.size());
  for (const Match& m : report.matches) {
    const int g = gts[static_cast<std::size_t>(m.gt_index)].class_id;
    const Detection& d = preds[static_cast<std::size_t>(m.pred_index)];
    const int p = d.class_id.value_or(-1);
    if (g < 0 || g >= k) throw InvalidArgument("classification: ground-truth class out of range");
    if (p < -1 || p >= k) throw InvalidArgument("classification: predicted class out of range");
    if (g == p) {
      ++tp[static_cast<std::size_t>(g)];
    } else {
      ++fn[static_cast<std::size_t>(g)];
      if (p >= 0) ++fp[static_cast<std::size_t>(p)];
    }
  }
}

ClassificationMetrics ClassCounts::metrics() const {
  ClassificationMetrics out;
  const std::size_t k = tp.size();
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double f1 = 0.0;
    if (tp[c] + fp[c] + fn[c] == 0) {
      out.absent_classes.push_back(static_cast<int>(c));
    } else {
      f1 = f1_score(ratio(tp[c], tp[c] + fp[c]), ratio(tp[c], tp[c] + fn[c]));
    }
    out.per_class_f1.push_back(f1);
    total += f1;
  }
  out.macro_f1 = k > 0 ? total / static_cast<double>(k) : 0.0;
  return out;
}

ClassificationMetrics classification_metrics(const MatchReport& report, std::span<const PointAnnotation> gts,
                                             std::span<const Detection> preds, int classes) {
  ClassCounts counts(classes);
  counts.add(report, gts, preds);
  return counts.metrics();
}

void DiceCounts::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height) throw ShapeError("dice: mask sizes differ");
  const std::size_t t = intersection.size();
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const std::size_t p = pred.labels[i], g = gt.labels[i];
    if (p >= t || g >= t) throw InvalidArgument("dice: label out of range");
    ++pred_size[p];
    ++gt_size[g];
    if (p == g) ++intersection[p];
  }
}

std::vector<double> DiceCounts::dice() const {
  std::vector<double> out;
  for (std::size_t c = 0; c < intersection.size(); ++c) {
    const long den = pred_size[c] + gt_size[c];
    out.push_back(den == 0 ? 1.0 : 2.0 * static_cast<double>(intersection[c]) / static_cast<double>(den));
  }
  return out;
}

std::vector<double> dice_per_class(const LabelMap& pred, const LabelMap& gt, int classes) {
  DiceCounts counts(classes);
  counts.add(pred, gt);
  return counts.dice();
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json j;
  j["detection"] = {{"precision", detection.precision}, {"recall", detection.recall}, {"f1", detection.f1},
                    {"tp", detection.tp},               {"fp", detection.fp},         {"fn", detection.fn}};
  j["classification"] = {{"per_class_f1", classification.per_class_f1},
                         {"macro_f1", classification.macro_f1},
                         {"absent_classes", classification.absent_classes}};
  j["tissue"] = {{"dice_per_class", dice_per_class}, {"mean_dice", mean_dice}};
  j["config"] = {{"radius", radius}, {"K", nucleus_classes}, {"T", tissue_classes}};
  return j;
}

EvaluationReport EvaluationReport::from_json(const nlohmann::json& j) {
  EvaluationReport r;
  const auto& d = j.at("detection");
  r.detection = {d.at("precision").get<double>(), d.at("recall").get<double>(), d.at("f1").get<double>(),
                 d.at("tp").get<long>(),          d.at("fp").get<long>(),     d.at("fn").get<long>()};
  const auto& c = j.at("classification");
  r.classification.per_class_f1 = c.at("per_class_f1").get<std::vector<double>>();
  r.classification.macro_f1 = c.at("macro_f1").get<double>();
  r.classification.absent_classes = c.at("absent_classes").get<std::vector<int>>();
  r.dice_per_class = j.at("tissue").at("dice_per_class").get<std::vector<double>>();
  r.mean_dice = j.at("tissue").at("mean_dice").get<double>();
  r.radius = j.at("config").at("radius").get<float>();
  r.nucleus_classes = j.at("config").at("K").get<int>();
  r.tissue_classes = j.at("config").at("T").get<int>();
  return r;
}

std::string EvaluationReport::to_csv() const {
  std::string out = "metric,value\n";
  auto row = [&out](const std::string& name, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out += name + "," + buf + "\n";
  };
  row("detection.precision", detection.precision);
  row("detection.recall", detection.recall);
  row("detection.f1", detection.f1);
  row("detection.tp", static_cast<double>(detection.tp));
  row("detection.fp", static_cast<double>(detection.fp));
  row("detection.fn", static_cast<double>(detection.fn));
  for (std::size_t k = 0; k < classification.per_class_f1.size(); ++k) {
    row("classification.f1_class" + std::to_string(k), classification.per_class_f1[k]);
  }
  row("classification.macro_f1", classification.macro_f1);
  for (std::size_t t = 0; t < dice_per_class.size(); ++t) row("tissue.dice_class" + std::to_string(t), dice_per_class[t]);
  row("tissue.mean_dice", mean_dice);
  row("config.radius", radius);
  row("config.K", nucleus_classes);
  row("config.T", tissue_classes);
  return out;
}

EvaluationAccumulator::EvaluationAccumulator(int nucleus_classes, int tissue_classes, float radius)
    : nucleus_classes_(nucleus_classes),
      tissue_classes_(tissue_classes),
      radius_(radius),
      class_counts_(nucleus_classes),
      dice_counts_(tissue_classes) {}

void EvaluationAccumulator::add_detections(std::span<const PointAnnotation> gts, std::span<const Detection> preds) {
  const MatchReport r = match_centers(gts, preds, radius_);
  tp_ += static_cast<long>(r.matches.size());
  fp_ += static_cast<long>(r.unmatched_pred.size());
  fn_ += static_cast<long>(r.unmatched_gt.size());
  class_counts_.add(r, gts, preds);
}

void EvaluationAccumulator::add_tissue(const LabelMap& pred, const LabelMap& gt) {
  dice_counts_.add(pred, gt);
  has_tissue_ = true;
}

EvaluationReport EvaluationAccumulator::report() const {
  EvaluationReport r;
  r.detection = detection_metrics(tp_, fp_, fn_);
  r.classification = class_counts_.metrics();
  if (has_tissue_) {
    r.dice_per_class = dice_counts_.dice();
    double total = 0.0;
    for (double d : r.dice_per_class) total += d;
    r.mean_dice = r.dice_per_class.empty() ? 0.0 : total / static_cast<double>(r.dice_per_class.size());
  }
  r.radius = radius_;
  r.nucleus_classes = nucleus_classes_;
  r.tissue_classes = tissue_classes_;
  return r;
}

}  // namespace tand
