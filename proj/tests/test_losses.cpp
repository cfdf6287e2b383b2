// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "support/grad_suite.hpp"
#include "tandkit/error.hpp"
#include "tandkit/losses.hpp"
#include "tandkit/ops.hpp"

namespace tand {
namespace {

const double kLn2 = std::log(2.0);

TEST(FocalLoss, SinglePositiveClosedForm) {
  const Tensor pred(Shape{1, 1, 1}, 0.5f);
  const Tensor target(Shape{1, 1, 1}, 1.0f);
  EXPECT_NEAR(focal_loss(pred, target, {}).item(), 0.25 * 0.25 * kLn2, 1e-7);
}

TEST(FocalLoss, NegativeTermAndNormalization) {
  // Two positives and one soft negative (t = 0.5, p = 0.2).
  const Tensor pred(Shape{1, 1, 3}, std::vector<float>{0.9f, 0.8f, 0.2f});
  const Tensor target(Shape{1, 1, 3}, std::vector<float>{1.0f, 1.0f, 0.5f});
  const double pos = 0.25 * (0.01 * -std::log(0.9) + 0.04 * -std::log(0.8));
  const double neg = 0.75 * std::pow(0.5, 4) * 0.04 * -std::log(0.8);
  EXPECT_NEAR(focal_loss(pred, target, {}).item(), (pos + neg) / 2.0, 1e-7);
}

TEST(FocalLoss, PerfectLimitAndSign) {
  Rng rng(2);
  const Tensor target = testing::random_tensor(rng, {1, 6, 6}, 0.0f, 0.99f);
  Tensor near(Shape{1, 6, 6});
  for (std::size_t i = 0; i < near.numel(); ++i) near.data()[i] = std::max(1e-6f, target.data()[i] * 1e-5f);
  EXPECT_LT(focal_loss(near, target, {}).item(), 1e-6f);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor p = testing::random_tensor(rng, {1, 6, 6}, 0.01f, 0.99f);
    EXPECT_GE(focal_loss(p, target, {}).item(), 0.0f);
  }
}

TEST(FocalLoss, DecreasesTowardConfidentPositive) {
  float prev = 1e9f;
  for (int i = 0; i < 10; ++i) {
    const float p = 0.5f + 0.049f * static_cast<float>(i);
    const float l = focal_loss(Tensor(Shape{1, 1, 1}, p), Tensor(Shape{1, 1, 1}, 1.0f), {}).item();
    EXPECT_LT(l, prev) << "p = " << p;
    prev = l;
  }
}

TEST(FocalLoss, RejectsMismatch) {
  EXPECT_THROW(focal_loss(Tensor(Shape{1, 2, 2}), Tensor(Shape{1, 2, 3}), {}), ShapeError);
}

TEST(PointCe, UniformLogitsGiveLogK) {
  const Tensor logits(Shape{1, 3, 4, 4}, 0.0f);
  const BatchPoints pts{{{1.0f, 2.0f, 0}, {9.0f, 14.0f, 2}}};
  EXPECT_NEAR(point_ce(logits, pts, 4).item(), std::log(3.0), 1e-6);
  EXPECT_EQ(point_ce(logits, BatchPoints{{}}, 4).item(), 0.0f);
}

TEST(PointCe, AveragesPerPointTermsAndIsPermutationInvariant) {
  Rng rng(3);
  const Tensor logits = testing::random_tensor(rng, {2, 3, 4, 4}, -2.0f, 2.0f);
  const auto term = [&](int n, int u, int v, int k) {
    const auto d = logits.data();
    double z = 0.0;
    for (int c = 0; c < 3; ++c) z += std::exp(d[((n * 3 + c) * 4 + v) * 4 + u]);
    return std::log(z) - d[((n * 3 + k) * 4 + v) * 4 + u];
  };
  const BatchPoints pts{{{5.0f, 1.0f, 1}}, {{14.0f, 9.0f, 2}, {0.0f, 0.0f, 0}}};
  const double expect = (term(0, 1, 0, 1) + term(1, 3, 2, 2) + term(1, 0, 0, 0)) / 3.0;
  EXPECT_NEAR(point_ce(logits, pts, 4).item(), expect, 1e-6);
  const BatchPoints swapped{{{5.0f, 1.0f, 1}}, {{0.0f, 0.0f, 0}, {14.0f, 9.0f, 2}}};
  EXPECT_EQ(point_ce(logits, swapped, 4).item(), point_ce(logits, pts, 4).item());
}

TEST(PointCe, ConfidentCorrectLimit) {
  Tensor logits(Shape{1, 2, 2, 2}, 0.0f);
  for (int i = 0; i < 4; ++i) logits.data()[4 + i] = 40.0f;
  EXPECT_LT(point_ce(logits, BatchPoints{{{2.0f, 2.0f, 1}}}, 4).item(), 1e-6f);
}

TEST(LocalBce, PlusShapedDiskAtHalf) {
  const Tensor probs(Shape{1, 3, 8, 8}, 0.5f);
  const BatchPoints pts{{{13.0f, 13.0f, 1}}};
  EXPECT_NEAR(local_bce(probs, pts, 1, 4).item(), kLn2, 1e-6);
  EXPECT_NEAR(local_bce(probs, pts, 0, 4).item(), kLn2, 1e-6);
}

TEST(LocalBce, CountsOnlyDiskCells) {
  // Disk of radius 1 around cell (3,3) holds 5 cells; the rest of the map is garbage and must not count.
  Tensor probs(Shape{1, 2, 8, 8}, 0.01f);
  const auto put = [&](int c, int u, int v, float p) { probs.data()[(c * 8 + v) * 8 + u] = p; };
  for (auto [u, v] : {std::pair{3, 3}, {2, 3}, {4, 3}, {3, 2}, {3, 4}}) {
    put(0, u, v, 0.8f);
    put(1, u, v, 0.3f);
  }
  const BatchPoints pts{{{13.0f, 13.0f, 0}}};
  const double expect = (-std::log(0.8) - std::log(0.7)) / 2.0;
  EXPECT_NEAR(local_bce(probs, pts, 1, 4).item(), expect, 1e-6);
}

TEST(LocalBce, PerfectLimitAndNearestCentre) {
  // Points at cells (2,3) and (4,3) share cell (3,3); it belongs to the first (equal distance, lower index).
  Tensor probs(Shape{1, 2, 8, 8}, 0.5f);
  const auto put = [&](int c, int u, int v, float p) { probs.data()[(c * 8 + v) * 8 + u] = p; };
  for (int v = 0; v < 8; ++v) {
    for (int u = 0; u < 8; ++u) {
      const bool first = u <= 3;
      put(0, u, v, first ? 1.0f - 1e-7f : 1e-7f);
      put(1, u, v, first ? 1e-7f : 1.0f - 1e-7f);
    }
  }
  const BatchPoints pts{{{9.0f, 13.0f, 0}, {17.0f, 13.0f, 1}}};
  EXPECT_LT(local_bce(probs, pts, 1, 4).item(), 1e-5f);
  EXPECT_THROW(local_bce(probs, pts, -1, 4), InvalidArgument);
}

TEST(SoftDice, ClosedForms) {
  const Tensor half(Shape{1, 1, 2, 5}, 0.5f);
  const Tensor ones(Shape{1, 1, 2, 5}, 1.0f);
  const double n = 10.0;
  EXPECT_NEAR(soft_dice_loss(half, ones).item(), 1.0 - (n + 1.0) / (1.5 * n + 1.0), 1e-6);

  Tensor onehot(Shape{1, 2, 4, 4}, 0.0f);
  for (int i = 0; i < 16; ++i) onehot.data()[(i % 3 == 0 ? 0 : 16) + i] = 1.0f;
  EXPECT_LT(soft_dice_loss(onehot, onehot).item(), 1e-3f);
  Tensor flipped(Shape{1, 2, 4, 4});
  for (int i = 0; i < 32; ++i) flipped.data()[i] = 1.0f - onehot.data()[i];
  EXPECT_GT(soft_dice_loss(flipped, onehot).item(), 0.9f);
}

LabelMap label_map(int w, int h, std::vector<std::uint8_t> labels) { return LabelMap{w, h, std::move(labels)}; }

TEST(PixelLosses, CeOnLogitsMatchesNllOnSoftmax) {
  Rng rng(6);
  const Tensor logits = testing::random_tensor(rng, {2, 3, 2, 2}, -3.0f, 3.0f);
  const std::vector<LabelMap> labels{label_map(2, 2, {0, 1, 2, 1}), label_map(2, 2, {2, 2, 0, 0})};
  for (float tau : {1.0f, 0.5f, 2.0f}) {
    const float ce = pixel_ce_logits(logits, labels, tau).item();
    const float nll = pixel_nll(softmax_channels(logits, tau), labels).item();
    EXPECT_NEAR(ce, nll, 1e-5) << tau;
  }
  EXPECT_THROW(pixel_ce_logits(logits, labels, 0.0f), InvalidArgument);
  const std::vector<LabelMap> bad{label_map(2, 2, {0, 1, 3, 1}), label_map(2, 2, {0, 0, 0, 0})};
  EXPECT_THROW(pixel_ce_logits(logits, bad), InvalidArgument);
}

TEST(PixelLosses, OnehotAndBce) {
  const std::vector<LabelMap> labels{label_map(2, 1, {1, 0})};
  const Tensor oh = onehot(labels, 2);
  EXPECT_EQ(oh.shape(), (Shape{1, 2, 1, 2}));
  EXPECT_EQ(std::vector<float>(oh.data().begin(), oh.data().end()), (std::vector<float>{0, 1, 1, 0}));
  const Tensor p(Shape{1, 2, 1, 2}, 0.5f);
  EXPECT_NEAR(binary_cross_entropy(p, oh).item(), kLn2, 1e-6);
}

TEST(TissueLoss, SumOfItsParts) {
  Rng rng(8);
  const Tensor logits = testing::random_tensor(rng, {1, 4, 2, 2}, -2.0f, 2.0f);
  const Tensor probs = softmax_channels(bilinear_resize(logits, 8, 8), 1.0f);
  std::vector<std::uint8_t> lab(64);
  for (int i = 0; i < 64; ++i) lab[i] = static_cast<std::uint8_t>((i / 3) % 4);
  const std::vector<LabelMap> labels{label_map(8, 8, lab)};
  const TissueLossTerms t = tissue_loss(logits, probs, labels);
  EXPECT_NEAR(t.dice.item(), soft_dice_loss(probs, onehot(labels, 4)).item(), 1e-6);
  EXPECT_NEAR(t.ce.item(), pixel_nll(probs, labels).item(), 1e-5);
  EXPECT_NEAR(t.bce.item(), binary_cross_entropy(probs, onehot(labels, 4)).item(), 1e-6);
  EXPECT_NEAR(t.total.item(), t.dice.item() + t.ce.item() + t.bce.item(), 1e-6);
}

TEST(TotalLoss, WeightedSumAndLinearity) {
  Tensor a(Shape{}, std::vector<float>{0.1f}), b(Shape{}, std::vector<float>{0.2f}), c(Shape{}, std::vector<float>{0.3f});
  for (Tensor* t : {&a, &b, &c}) t->set_requires_grad(true);
  EXPECT_NEAR(total_loss(a, b, c, {1, 1, 1}).item(), 0.6f, 1e-7);

  backward(total_loss(a, b, c, {1, 0, 2}));
  EXPECT_EQ(a.grad()[0], 1.0f);
  EXPECT_EQ(b.grad()[0], 0.0f);
  EXPECT_EQ(c.grad()[0], 2.0f);
  for (Tensor* t : {&a, &b, &c}) t->zero_grad();
  const float single = total_loss(a, b, c, {1, 0.5f, 2}).item();
  backward(total_loss(a, b, c, {2, 1, 4}));
  EXPECT_NEAR(total_loss(a, b, c, {2, 1, 4}).item(), 2.0f * single, 1e-7);
  EXPECT_EQ(a.grad()[0], 2.0f);
  EXPECT_EQ(b.grad()[0], 1.0f);
  EXPECT_EQ(c.grad()[0], 4.0f);
}

TEST(LossWeights, Validation) {
  EXPECT_NO_THROW((LossWeights{1, 1, 0.5f}).validate());
  EXPECT_THROW((LossWeights{-1, 1, 1}).validate(), ConfigError);
  EXPECT_THROW((LossWeights{0, 0, 0}).validate(), ConfigError);
}

}  // namespace
}  // namespace tand
