// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include "support/grad_suite.hpp"
#include "tandkit/error.hpp"
#include "tandkit/film.hpp"
#include "tandkit/model.hpp"
#include "tandkit/ops.hpp"

namespace tand {
namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

float max_abs(const Tensor& t) {
  float m = 0.0f;
  for (float v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

TEST(FilmAdapter, ZeroConvsGiveZeroParams) {
  Rng rng(1);
  FilmAdapter a(Scale::S8, 4, 6, 5, 8, 0.5f, rng);
  a.conv1().zero_();
  a.conv2().zero_();
  Rng qr(2);
  const BoundedFilmParams p = a.params(testing::random_tensor(qr, {1, 4, 5, 5}, 0.0f, 1.0f));
  EXPECT_EQ(max_abs(p.gamma), 0.0f);
  EXPECT_EQ(max_abs(p.beta), 0.0f);
  EXPECT_EQ(p.gamma.shape(), (Shape{1, 6, 5, 5}));
}

TEST(FilmAdapter, SaturatedRawGamma) {
  Rng rng(1);
  FilmAdapter a(Scale::S4, 2, 1, 1, 1, 0.5f, rng);
  a.conv1().zero_();
  a.conv2().zero_();
  a.conv1().bias().data()[0] = 1.0f;  // relu(1) = 1 everywhere
  const auto w2 = a.conv2().weight().data();
  w2[4] = 10.0f;  // centre tap of the gamma output
  w2[9 + 4] = -10.0f;
  const BoundedFilmParams p = a.params(Tensor(Shape{1, 2, 3, 3}, 0.5f));
  EXPECT_NEAR(p.gamma.data()[4], 0.5 * std::tanh(10.0), 1e-7);
  EXPECT_NEAR(p.beta.data()[4], -0.25 * std::tanh(10.0), 1e-7);
  EXPECT_LE(max_abs(p.gamma), 0.5f);
  EXPECT_LE(max_abs(p.beta), 0.25f);
}

TEST(FilmAdapter, BoundsHoldForWildWeights) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    FilmAdapter a(Scale::S16, 3, 4, 4, 6, 0.5f, rng);
    for (Tensor* t : {&a.conv1().weight(), &a.conv2().weight(), &a.conv2().bias()}) {
      for (float& v : t->data()) v *= 50.0f;
    }
    const BoundedFilmParams p = a.params(testing::random_tensor(rng, {2, 3, 4, 4}, -5.0f, 5.0f));
    EXPECT_LE(max_abs(p.gamma), 0.5f);
    EXPECT_LE(max_abs(p.beta), 0.25f);
  }
}

TEST(FilmAdapter, RejectsWrongTissueChannels) {
  Rng rng(1);
  FilmAdapter a(Scale::S8, 4, 6, 5, 8, 0.5f, rng);
  EXPECT_THROW(a.params(Tensor(Shape{1, 3, 4, 4})), ShapeError);
  EXPECT_THROW(FilmAdapter(Scale::S8, 4, 6, 5, 8, 0.0f, rng), InvalidArgument);
}

TEST(FilmModulate, AffineForm) {
  const Shape s{1, 2, 3, 3};
  const FilmOutput out = film_modulate(Tensor(s, 2.0f), Tensor(s, 0.5f), Tensor(s, 0.25f), Scale::S8);
  for (float v : out.modulated.data()) EXPECT_EQ(v, 3.25f);
  for (float v : out.residual.delta.data()) EXPECT_EQ(v, 1.25f);
  EXPECT_EQ(out.residual.scale, Scale::S8);

  Rng rng(3);
  const Tensor x = testing::random_tensor(rng, s);
  const FilmOutput id = film_modulate(x, Tensor(s, 0.0f), Tensor(s, 0.0f), Scale::S4);
  EXPECT_TRUE(bit_equal(id.modulated, x));
  EXPECT_EQ(max_abs(id.residual.delta), 0.0f);

  const Tensor beta = testing::random_tensor(rng, s);
  const FilmOutput zx = film_modulate(Tensor(s, 0.0f), testing::random_tensor(rng, s), beta, Scale::S4);
  EXPECT_TRUE(bit_equal(zx.modulated, beta));
  EXPECT_TRUE(bit_equal(zx.residual.delta, beta));

  EXPECT_THROW(film_modulate(Tensor(s), Tensor(Shape{1, 2, 3, 4}), Tensor(s), Scale::S4), ShapeError);
}

struct StackFixture {
  Rng rng{17};
  FilmStack stack{4, {8, 6, 5}, 5, 8, 0.5f, rng};
  ScaleFeatures features;
  Tensor x_quarter;
  Tensor q;

  StackFixture() {
    features.s16 = testing::random_tensor(rng, {1, 8, 2, 2});
    features.s8 = testing::random_tensor(rng, {1, 6, 4, 4});
    features.s4 = testing::random_tensor(rng, {1, 5, 8, 8});
    x_quarter = features.s4;
    q = softmax_channels(testing::random_tensor(rng, {1, 4, 32, 32}, -2.0f, 2.0f), 1.0f);
  }
};

TEST(FilmStack, ZeroProjectionIsBitIdentity) {
  StackFixture f;
  EXPECT_TRUE(bit_equal(f.stack.apply(f.q, f.features, f.x_quarter), f.x_quarter));
}

TEST(FilmStack, TrainedProjectionReadsTissue) {
  StackFixture f;
  for (auto& a : f.stack.adapters()) {
    for (float& v : a.proj().weight().data()) v = 0.3f;
  }
  const Tensor y1 = f.stack.apply(f.q, f.features, f.x_quarter);
  EXPECT_FALSE(bit_equal(y1, f.x_quarter));
  const Tensor q2 = softmax_channels(testing::random_tensor(f.rng, {1, 4, 32, 32}, -2.0f, 2.0f), 1.0f);
  EXPECT_FALSE(bit_equal(f.stack.apply(q2, f.features, f.x_quarter), y1));
}

TEST(AggregateResiduals, ZeroDeltasAndUnitProjection) {
  StackFixture f;
  std::vector<ModulationResidual> zero{{Scale::S16, Tensor(Shape{1, 8, 2, 2}, 0.0f)},
                                       {Scale::S8, Tensor(Shape{1, 6, 4, 4}, 0.0f)},
                                       {Scale::S4, Tensor(Shape{1, 5, 8, 8}, 0.0f)}};
  for (auto& a : f.stack.adapters()) {
    for (float& v : a.proj().weight().data()) v = 0.7f;
  }
  EXPECT_TRUE(bit_equal(aggregate_residuals(f.x_quarter, zero, f.stack.adapters()), f.x_quarter));

  // Only the 1/4 projection is an identity on matched channels; delta is constant d.
  for (auto& a : f.stack.adapters()) a.proj().zero_();
  auto& p4 = f.stack.adapters()[2].proj().weight();
  for (int c = 0; c < 5; ++c) p4.data()[c * 5 + c] = 1.0f;
  zero[2].delta = Tensor(Shape{1, 5, 8, 8}, 0.375f);
  const Tensor y = aggregate_residuals(f.x_quarter, zero, f.stack.adapters());
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], f.x_quarter.data()[i] + 0.375f);
}

TEST(AggregateResiduals, RejectsMissingOrDuplicateScale) {
  StackFixture f;
  const std::vector<ModulationResidual> missing{{Scale::S16, Tensor(Shape{1, 8, 2, 2})},
                                                {Scale::S4, Tensor(Shape{1, 5, 8, 8})}};
  EXPECT_THROW(aggregate_residuals(f.x_quarter, missing, f.stack.adapters()), InvalidArgument);
  const std::vector<ModulationResidual> dup{{Scale::S16, Tensor(Shape{1, 8, 2, 2})},
                                            {Scale::S8, Tensor(Shape{1, 6, 4, 4})},
                                            {Scale::S8, Tensor(Shape{1, 6, 4, 4})},
                                            {Scale::S4, Tensor(Shape{1, 5, 8, 8})}};
  EXPECT_THROW(aggregate_residuals(f.x_quarter, dup, f.stack.adapters()), InvalidArgument);
}

TEST(FilmStack, ParamNamesAndZeroProj) {
  StackFixture f;
  std::vector<Param> params;
  f.stack.collect(params);
  ASSERT_EQ(params.size(), 18u);
  EXPECT_EQ(params[0].name, "film.s16.conv1.weight");
  EXPECT_EQ(params.back().name, "film.s4.proj.bias");
  for (const auto& p : params) {
    if (p.name.find(".proj.") != std::string::npos) EXPECT_EQ(max_abs(p.tensor), 0.0f) << p.name;
  }
}

ModelConfig small_config() {
  ModelConfig mc;
  mc.image_size = 32;
  mc.encoder_widths = {4, 6, 8, 8};
  mc.tissue_widths = {4, 4, 6, 6};
  mc.film_hidden = 4;
  mc.init_seed = 3;
  return mc;
}

TEST(TissueBranch, BiasOnlyHeadGivesClosedFormProbs) {
  ModelConfig mc = small_config();
  mc.tissue_classes = 3;
  TandModel m(mc);
  m.tissue().head().zero_();
  const auto b = m.tissue().head().bias().data();
  b[0] = 0.0f;
  b[1] = 1.0f;
  b[2] = 2.0f;
  Rng rng(4);
  const TissueOutput out = m.tissue_forward(testing::random_tensor(rng, {1, 3, 32, 32}, 0.0f, 1.0f));
  ASSERT_EQ(out.probs.probs.shape(), (Shape{1, 3, 32, 32}));
  const double z = 1.0 + std::exp(1.0) + std::exp(2.0);
  const std::array<double, 3> expect{1.0 / z, std::exp(1.0) / z, std::exp(2.0) / z};
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 32 * 32; ++i) EXPECT_NEAR(out.probs.probs.data()[t * 1024 + i], expect[t], 1e-6);
  }
  EXPECT_NEAR(expect[0], 0.0900, 1e-4);
  EXPECT_NEAR(expect[1], 0.2447, 1e-4);
  EXPECT_NEAR(expect[2], 0.6652, 1e-4);
}

TEST(TissueBranch, LargeTemperatureFlattens) {
  ModelConfig mc = small_config();
  mc.temperature = 1e5f;
  TandModel m(mc);
  Rng rng(5);
  const TissueOutput out = m.tissue_forward(testing::random_tensor(rng, {1, 3, 32, 32}, 0.0f, 1.0f));
  for (float v : out.probs.probs.data()) EXPECT_NEAR(v, 0.25f, 1e-3);
}

TEST(TissueBranch, FrozenIsDeterministic) {
  TandModel m(small_config());
  m.tissue().freeze();
  std::vector<Param> params;
  m.tissue().collect(params);
  for (const auto& p : params) EXPECT_FALSE(p.tensor.requires_grad());
  Rng rng(6);
  const Tensor img = testing::random_tensor(rng, {2, 3, 32, 32}, 0.0f, 1.0f);
  EXPECT_TRUE(bit_equal(m.tissue_forward(img).probs.probs, m.tissue_forward(img).probs.probs));
}

TEST(DetCls, ShapesAndZeroInitIdentity) {
  TandModel m(small_config());
  Rng rng(7);
  const Tensor img = testing::random_tensor(rng, {2, 3, 32, 32}, 0.0f, 1.0f);
  const TissueProbMap q = m.tissue_forward(img).probs;
  const DetClsOutput off = m.detcls_forward(img, q, false);
  const DetClsOutput on = m.detcls_forward(img, q, true);
  EXPECT_EQ(off.heat.shape(), (Shape{2, 1, 8, 8}));
  EXPECT_EQ(off.cls_logits.shape(), (Shape{2, 3, 8, 8}));
  EXPECT_TRUE(bit_equal(off.heat, on.heat));
  EXPECT_TRUE(bit_equal(off.cls_logits, on.cls_logits));
}

TEST(DetCls, HeatIgnoresTissueWithTrainedAdapters) {
  TandModel m(small_config());
  Rng rng(9);
  for (auto& a : m.film().adapters()) init_fan_in_uniform(a.proj().weight(), rng);
  const Tensor img = testing::random_tensor(rng, {1, 3, 32, 32}, 0.0f, 1.0f);
  const TissueProbMap q1{softmax_channels(testing::random_tensor(rng, {1, 4, 32, 32}, -3.0f, 3.0f), 1.0f), 1.0f};
  const TissueProbMap q2{softmax_channels(testing::random_tensor(rng, {1, 4, 32, 32}, -3.0f, 3.0f), 1.0f), 1.0f};
  const DetClsOutput a = m.detcls_forward(img, q1, true);
  const DetClsOutput b = m.detcls_forward(img, q2, true);
  const DetClsOutput c = m.detcls_forward(img, q1, false);
  EXPECT_TRUE(bit_equal(a.heat, b.heat));
  EXPECT_TRUE(bit_equal(a.heat, c.heat));
  EXPECT_FALSE(bit_equal(a.cls_logits, b.cls_logits));
  EXPECT_FALSE(bit_equal(a.cls_logits, c.cls_logits));
}

TEST(DetCls, RejectsBadInputs) {
  TandModel m(small_config());
  const Tensor img(Shape{1, 3, 32, 32}, 0.5f);
  EXPECT_THROW(m.detcls_forward(Tensor(Shape{1, 3, 30, 32}), {}, false), ShapeError);
  EXPECT_THROW(m.detcls_forward(img, {Tensor(Shape{1, 4, 16, 16}), 1.0f}, true), ShapeError);
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  ModelConfig mc = small_config();
  mc.input_mean = {0.1f, 0.2f, 0.3f};
  mc.input_std = {0.4f, 0.5f, 0.6f};
  EXPECT_EQ(ModelConfig::from_json(mc.to_json()), mc);
  mc.input_std[1] = 0.0f;
  EXPECT_THROW(mc.validate(), ConfigError);
  mc = small_config();
  mc.image_size = 40;
  EXPECT_THROW(mc.validate(), ConfigError);
}

TEST(NormalizeImage, PerChannelStandardization) {
  Tensor img(Shape{1, 3, 1, 2}, std::vector<float>{0.5f, 1.0f, 0.2f, 0.2f, 0.0f, 1.0f});
  const Tensor n = normalize_image(img, {0.5f, 0.2f, 0.5f}, {0.5f, 0.1f, 0.25f});
  EXPECT_EQ(std::vector<float>(n.data().begin(), n.data().end()), (std::vector<float>{0, 1, 0, 0, -2, 2}));
  EXPECT_THROW(normalize_image(Tensor(Shape{1, 2, 2, 2}), {}, {1, 1, 1}), ShapeError);
}

TEST(ModelParams, NamesAreUnique) {
  TandModel m(small_config());
  const auto params = m.params();
  std::set<std::string> names;
  for (const auto& p : params) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  EXPECT_TRUE(names.count("tissue.head.weight"));
  EXPECT_TRUE(names.count("det.cls_head.weight"));
  EXPECT_TRUE(names.count("film.s8.proj.weight"));
}

}  // namespace
}  // namespace tand
