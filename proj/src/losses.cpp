// SPDX-License-Identifier: Apache-2.0
#include "tandkit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "tandkit/error.hpp"
#include "tandkit/ops.hpp"

namespace tand {

using detail::grad_sink;
using detail::make_result;

namespace {

constexpr double kProbEps = 1e-6;

// Clamps into (eps, 1-eps); `inside` reports whether the clamp was inactive.
double clamp_prob(double p, bool& inside) {
  inside = p > kProbEps && p < 1.0 - kProbEps;
  return std::clamp(p, kProbEps, 1.0 - kProbEps);
}

struct NkHw {
  int n, k, h, w;
};

NkHw nkhw(const Tensor& t, const char* what) {
  if (t.dim() == 4) return {t.size(0), t.size(1), t.size(2), t.size(3)};
  if (t.dim() == 3) return {1, t.size(0), t.size(1), t.size(2)};
  throw ShapeError(std::string(what) + ": expected [N,C,H,W] or [C,H,W], got " + shape_str(t.shape()));
}

void check_points(const BatchPoints& points, int n, int h, int w, int k, int stride, const char* what) {
  if (static_cast<int>(points.size()) != n) {
    throw InvalidArgument(std::string(what) + ": " + std::to_string(points.size()) + " point lists for batch of " +
                          std::to_string(n));
  }
  for (const auto& list : points) {
    for (const auto& p : list) {
      if (!(p.x >= 0.0f && p.x < static_cast<float>(w * stride) && p.y >= 0.0f &&
            p.y < static_cast<float>(h * stride))) {
        throw InvalidArgument(std::string(what) + ": point outside the map");
      }
      if (p.class_id < 0 || p.class_id >= k) throw InvalidArgument(std::string(what) + ": class id out of range");
    }
  }
}

}  // namespace

void LossWeights::validate() const {
  if (det < 0.0f || cls < 0.0f || bce < 0.0f) throw ConfigError("loss weights must be >= 0");
  if (det == 0.0f && cls == 0.0f && bce == 0.0f) throw ConfigError("at least one loss weight must be > 0");
}

Tensor focal_loss(const Tensor& pred, const Tensor& target, const FocalParams& params) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("focal_loss: pred " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  if (pred.numel() == 0) throw ShapeError("focal_loss: empty map");
  const double alpha = params.alpha, gamma = params.gamma;
  const auto p = pred.data();
  const auto t = target.data();
  double total = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    bool inside = false;
    const double q = clamp_prob(p[i], inside);
    if (t[i] == 1.0f) {
      ++positives;
      total += -alpha * std::pow(1.0 - q, gamma) * std::log(q);
    } else {
      total += -(1.0 - alpha) * std::pow(1.0 - t[i], 4.0) * std::pow(q, gamma) * std::log(1.0 - q);
    }
  }
  const double norm = static_cast<double>(std::max<std::size_t>(1, positives));
  return make_result({}, {static_cast<float>(total / norm)}, {pred, target},
                     [pred, target, alpha, gamma, norm](const TensorImpl& o) {
                       auto g = grad_sink(pred);
                       if (g.empty()) return;
                       const double go = o.grad[0] / norm;
                       const auto p = pred.data();
                       const auto t = target.data();
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         bool inside = false;
                         const double q = clamp_prob(p[i], inside);
                         if (!inside) continue;
                         double d;
                         if (t[i] == 1.0f) {
                           d = -alpha * (-gamma * std::pow(1.0 - q, gamma - 1.0) * std::log(q) +
                                         std::pow(1.0 - q, gamma) / q);
                         } else {
                           const double wneg = (1.0 - alpha) * std::pow(1.0 - t[i], 4.0);
                           d = -wneg * (gamma * std::pow(q, gamma - 1.0) * std::log(1.0 - q) -
                                        std::pow(q, gamma) / (1.0 - q));
                         }
                         g[i] += static_cast<float>(go * d);
                       }
                     });
}

Tensor point_ce(const Tensor& logits, const BatchPoints& points, int stride) {
  const NkHw s = nkhw(logits, "point_ce");
  check_points(points, s.n, s.h, s.w, s.k, stride, "point_ce");
  std::vector<PixelIndex> pixels;
  std::vector<int> labels;
  for (int b = 0; b < s.n; ++b) {
    for (const auto& p : points[static_cast<std::size_t>(b)]) {
      pixels.push_back({b, map_cell(p.y, stride, s.h), map_cell(p.x, stride, s.w)});
      labels.push_back(p.class_id);
    }
  }
  if (pixels.empty()) return Tensor::scalar(0.0f);
  if (logits.dim() != 4) throw ShapeError("point_ce: logits must be batched [N,K,H,W]");
  const Tensor rows = gather_points(logits, pixels);  // [P,K]
  const int k = s.k;
  const std::size_t count = labels.size();
  const auto z = rows.data();
  std::vector<double> softmax(count * k);
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    double zmax = z[i * k];
    for (int c = 1; c < k; ++c) zmax = std::max<double>(zmax, z[i * k + c]);
    double denom = 0.0;
    for (int c = 0; c < k; ++c) denom += std::exp(z[i * k + c] - zmax);
    for (int c = 0; c < k; ++c) softmax[i * k + c] = std::exp(z[i * k + c] - zmax) / denom;
    total += -(z[i * k + labels[i]] - zmax - std::log(denom));
  }
  return make_result({}, {static_cast<float>(total / count)}, {rows},
                     [rows, softmax, labels, k, count](const TensorImpl& o) {
                       auto g = grad_sink(rows);
                       if (g.empty()) return;
                       const double go = o.grad[0] / static_cast<double>(count);
                       for (std::size_t i = 0; i < count; ++i) {
                         for (int c = 0; c < k; ++c) {
                           const double y = c == labels[i] ? 1.0 : 0.0;
                           g[i * k + c] += static_cast<float>(go * (softmax[i * k + c] - y));
                         }
                       }
                     });
}

Tensor local_bce(const Tensor& probs, const BatchPoints& points, int radius, int stride) {
  if (radius < 0) throw InvalidArgument("local_bce: radius must be >= 0");
  const NkHw s = nkhw(probs, "local_bce");
  check_points(points, s.n, s.h, s.w, s.k, stride, "local_bce");
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;

  // For each evaluated cell: (flat offset of channel 0, target class).
  std::vector<std::pair<std::size_t, int>> cells;
  std::vector<int> owner(plane);
  std::vector<int> best_d2(plane);
  for (int b = 0; b < s.n; ++b) {
    std::fill(owner.begin(), owner.end(), -1);
    const auto& list = points[static_cast<std::size_t>(b)];
    for (const auto& p : list) {
      const int cu = map_cell(p.x, stride, s.w), cv = map_cell(p.y, stride, s.h);
      for (int dv = -radius; dv <= radius; ++dv) {
        for (int du = -radius; du <= radius; ++du) {
          const int d2 = du * du + dv * dv;
          const int u = cu + du, v = cv + dv;
          if (d2 > radius * radius || u < 0 || u >= s.w || v < 0 || v >= s.h) continue;
          const std::size_t at = static_cast<std::size_t>(v) * s.w + u;
          if (owner[at] < 0 || d2 < best_d2[at]) {
            owner[at] = p.class_id;
            best_d2[at] = d2;
          }
        }
      }
    }
    for (std::size_t i = 0; i < plane; ++i) {
      if (owner[i] >= 0) cells.emplace_back(static_cast<std::size_t>(b) * s.k * plane + i, owner[i]);
    }
  }
  if (cells.empty()) return Tensor::scalar(0.0f);

  const auto p = probs.data();
  const int k = s.k;
  double total = 0.0;
  for (const auto& [base, cls] : cells) {
    for (int c = 0; c < k; ++c) {
      bool inside = false;
      const double q = clamp_prob(p[base + c * plane], inside);
      total += c == cls ? -std::log(q) : -std::log(1.0 - q);
    }
  }
  const double count = static_cast<double>(cells.size()) * k;
  return make_result({}, {static_cast<float>(total / count)}, {probs},
                     [probs, cells, k, plane, count](const TensorImpl& o) {
                       auto g = grad_sink(probs);
                       if (g.empty()) return;
                       const double go = o.grad[0] / count;
                       const auto p = probs.data();
                       for (const auto& [base, cls] : cells) {
                         for (int c = 0; c < k; ++c) {
                           bool inside = false;
                           const double q = clamp_prob(p[base + c * plane], inside);
                           if (!inside) continue;
                           const double d = c == cls ? -1.0 / q : 1.0 / (1.0 - q);
                           g[base + c * plane] += static_cast<float>(go * d);
                         }
                       }
                     });
}

Tensor soft_dice_loss(const Tensor& probs, const Tensor& target_onehot) {
  if (probs.shape() != target_onehot.shape()) {
    throw ShapeError("soft_dice_loss: probs " + shape_str(probs.shape()) + " vs target " +
                     shape_str(target_onehot.shape()));
  }
  const NkHw s = nkhw(probs, "soft_dice_loss");
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const auto p = probs.data();
  const auto t = target_onehot.data();
  std::vector<double> inter(s.k, 0.0), denom(s.k, 0.0);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.k; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.k + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        inter[c] += static_cast<double>(p[base + i]) * t[base + i];
        denom[c] += static_cast<double>(p[base + i]) + t[base + i];
      }
    }
  }
  double dice_sum = 0.0;
  for (int c = 0; c < s.k; ++c) dice_sum += (2.0 * inter[c] + 1.0) / (denom[c] + 1.0);
  const double loss = 1.0 - dice_sum / s.k;
  return make_result({}, {static_cast<float>(loss)}, {probs, target_onehot},
                     [probs, target_onehot, s, plane, inter, denom](const TensorImpl& o) {
                       auto g = grad_sink(probs);
                       if (g.empty()) return;
                       const auto t = target_onehot.data();
                       const double go = o.grad[0] / s.k;
                       for (int b = 0; b < s.n; ++b) {
                         for (int c = 0; c < s.k; ++c) {
                           const double num = 2.0 * inter[c] + 1.0, den = denom[c] + 1.0;
                           const std::size_t base = (static_cast<std::size_t>(b) * s.k + c) * plane;
                           for (std::size_t i = 0; i < plane; ++i) {
                             const double d = (2.0 * t[base + i] * den - num) / (den * den);
                             g[base + i] += static_cast<float>(-go * d);
                           }
                         }
                       }
                     });
}

Tensor onehot(std::span<const LabelMap> labels, int classes) {
  if (labels.empty()) throw InvalidArgument("onehot: no label maps");
  const int h = labels[0].height, w = labels[0].width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out(Shape{static_cast<int>(labels.size()), classes, h, w});
  auto v = out.data();
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b].height != h || labels[b].width != w) throw ShapeError("onehot: label maps differ in size");
    for (std::size_t i = 0; i < plane; ++i) {
      const int c = labels[b].labels[i];
      if (c >= classes) throw InvalidArgument("onehot: label " + std::to_string(c) + " out of range");
      v[(b * classes + c) * plane + i] = 1.0f;
    }
  }
  return out;
}

Tensor pixel_nll(const Tensor& probs, std::span<const LabelMap> labels) {
  const NkHw s = nkhw(probs, "pixel_nll");
  if (static_cast<int>(labels.size()) != s.n) throw ShapeError("pixel_nll: label count differs from batch");
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  std::vector<std::size_t> index(static_cast<std::size_t>(s.n) * plane);
  for (int b = 0; b < s.n; ++b) {
    const LabelMap& m = labels[static_cast<std::size_t>(b)];
    if (m.height != s.h || m.width != s.w) throw ShapeError("pixel_nll: label map size differs from probs");
    for (std::size_t i = 0; i < plane; ++i) {
      if (m.labels[i] >= s.k) throw InvalidArgument("pixel_nll: label out of range");
      index[b * plane + i] = (static_cast<std::size_t>(b) * s.k + m.labels[i]) * plane + i;
    }
  }
  const auto p = probs.data();
  double total = 0.0;
  for (std::size_t j : index) {
    bool inside = false;
    total += -std::log(clamp_prob(p[j], inside));
  }
  const double count = static_cast<double>(index.size());
  return make_result({}, {static_cast<float>(total / count)}, {probs}, [probs, index, count](const TensorImpl& o) {
    auto g = grad_sink(probs);
    if (g.empty()) return;
    const auto p = probs.data();
    const double go = o.grad[0] / count;
    for (std::size_t j : index) {
      bool inside = false;
      const double q = clamp_prob(p[j], inside);
      if (inside) g[j] += static_cast<float>(-go / q);
    }
  });
}

Tensor pixel_ce_logits(const Tensor& logits, std::span<const LabelMap> labels, float temperature) {
  if (!(temperature > 0.0f)) throw InvalidArgument("pixel_ce_logits: temperature must be > 0");
  const NkHw s = nkhw(logits, "pixel_ce_logits");
  if (static_cast<int>(labels.size()) != s.n) throw ShapeError("pixel_ce_logits: label count differs from batch");
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const auto z = logits.data();
  const double inv_t = 1.0 / temperature;
  // Softmax per pixel is kept for the backward pass.
  std::vector<float> soft(z.size());
  std::vector<int> label(static_cast<std::size_t>(s.n) * plane);
  double total = 0.0;
  for (int b = 0; b < s.n; ++b) {
    const LabelMap& m = labels[static_cast<std::size_t>(b)];
    if (m.height != s.h || m.width != s.w) throw ShapeError("pixel_ce_logits: label map size differs from logits");
    const std::size_t base = static_cast<std::size_t>(b) * s.k * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const int y = m.labels[i];
      if (y >= s.k) throw InvalidArgument("pixel_ce_logits: label out of range");
      label[b * plane + i] = y;
      double mx = -1e300;
      for (int c = 0; c < s.k; ++c) mx = std::max(mx, z[base + c * plane + i] * inv_t);
      double denom = 0.0;
      for (int c = 0; c < s.k; ++c) denom += std::exp(z[base + c * plane + i] * inv_t - mx);
      for (int c = 0; c < s.k; ++c) {
        soft[base + c * plane + i] = static_cast<float>(std::exp(z[base + c * plane + i] * inv_t - mx) / denom);
      }
      total += -(z[base + y * plane + i] * inv_t - mx - std::log(denom));
    }
  }
  const double count = static_cast<double>(label.size());
  return make_result({}, {static_cast<float>(total / count)}, {logits},
                     [logits, soft = std::move(soft), label = std::move(label), s, plane, count,
                      inv_t](const TensorImpl& o) {
                       auto g = grad_sink(logits);
                       if (g.empty()) return;
                       const double go = o.grad[0] / count * inv_t;
                       for (int b = 0; b < s.n; ++b) {
                         const std::size_t base = static_cast<std::size_t>(b) * s.k * plane;
                         for (std::size_t i = 0; i < plane; ++i) {
                           const int y = label[b * plane + i];
                           for (int c = 0; c < s.k; ++c) {
                             const std::size_t j = base + c * plane + i;
                             g[j] += static_cast<float>(go * (soft[j] - (c == y ? 1.0 : 0.0)));
                           }
                         }
                       }
                     });
}

Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape()) throw ShapeError("binary_cross_entropy: shape mismatch");
  if (probs.numel() == 0) throw ShapeError("binary_cross_entropy: empty input");
  const auto p = probs.data();
  const auto t = targets.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    bool inside = false;
    const double q = clamp_prob(p[i], inside);
    total += -(t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q));
  }
  const double count = static_cast<double>(p.size());
  return make_result({}, {static_cast<float>(total / count)}, {probs, targets},
                     [probs, targets, count](const TensorImpl& o) {
                       auto g = grad_sink(probs);
                       if (g.empty()) return;
                       const auto p = probs.data();
                       const auto t = targets.data();
                       const double go = o.grad[0] / count;
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         bool inside = false;
                         const double q = clamp_prob(p[i], inside);
                         if (inside) g[i] += static_cast<float>(go * (q - t[i]) / (q * (1.0 - q)));
                       }
                     });
}

TissueLossTerms tissue_loss(const Tensor& logits, const Tensor& probs, std::span<const LabelMap> labels,
                            float temperature) {
  if (logits.dim() != 4 || probs.dim() != 4 || logits.size(1) != probs.size(1)) {
    throw ShapeError("tissue_loss: logits and probs must be NCHW with matching class counts");
  }
  const Tensor target = onehot(labels, probs.size(1));
  TissueLossTerms terms;
  terms.dice = soft_dice_loss(probs, target);
  terms.ce = pixel_ce_logits(bilinear_resize(logits, probs.size(2), probs.size(3)), labels, temperature);
  terms.bce = binary_cross_entropy(probs, target);
  terms.total = add(add(terms.dice, terms.ce), terms.bce);
  return terms;
}

Tensor total_loss(const Tensor& det, const Tensor& cls, const Tensor& bce, const LossWeights& weights) {
  weights.validate();
  return add(add(scale(det, weights.det), scale(cls, weights.cls)), scale(bce, weights.bce));
}

}  // namespace tand
