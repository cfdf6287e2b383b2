// SPDX-License-Identifier: Apache-2.0
#include "tandkit/model.hpp"

#include <cmath>

#include "tandkit/error.hpp"
#include "tandkit/ops.hpp"

namespace tand {

Tensor normalize_image(const Tensor& image, const std::array<float, 3>& mean, const std::array<float, 3>& std) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ShapeError("normalize_image: expected [N,3,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(image.size(2)) * image.size(3);
  std::vector<float> v(image.data().begin(), image.data().end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = (i / plane) % 3;
    v[i] = (v[i] - mean[c]) / std[c];
  }
  return Tensor(image.shape(), std::move(v));
}

nlohmann::json ModelConfig::to_json() const {
  return {{"image_size", image_size},       {"nucleus_classes", nucleus_classes},
          {"tissue_classes", tissue_classes}, {"encoder_widths", encoder_widths},
          {"tissue_widths", tissue_widths},  {"temperature", temperature},
          {"eta", eta},                      {"sigma", sigma},
          {"film_hidden", film_hidden},      {"init_seed", init_seed},
          {"input_mean", input_mean},        {"input_std", input_std}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config block missing");
  ModelConfig c;
  try {
    c.image_size = j.at("image_size").get<int>();
    c.nucleus_classes = j.at("nucleus_classes").get<int>();
    c.tissue_classes = j.at("tissue_classes").get<int>();
    c.encoder_widths = j.at("encoder_widths").get<std::array<int, 4>>();
    c.tissue_widths = j.at("tissue_widths").get<std::array<int, 4>>();
    c.temperature = j.at("temperature").get<float>();
    c.eta = j.at("eta").get<float>();
    c.sigma = j.at("sigma").get<float>();
    c.film_hidden = j.at("film_hidden").get<int>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.input_mean = j.at("input_mean").get<std::array<float, 3>>();
    c.input_std = j.at("input_std").get<std::array<float, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config block: ") + e.what());
  }
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0) throw ConfigError("model.image_size must be a positive multiple of 16");
  if (nucleus_classes < 1) throw ConfigError("model.nucleus_classes must be >= 1");
  if (tissue_classes < 1) throw ConfigError("model.tissue_classes must be >= 1");
  for (int w : encoder_widths) {
    if (w < 1) throw ConfigError("model.encoder_widths entries must be >= 1");
  }
  for (int w : tissue_widths) {
    if (w < 1) throw ConfigError("model.tissue_widths entries must be >= 1");
  }
  if (!(temperature > 0.0f)) throw ConfigError("model.temperature must be > 0");
  if (!(eta > 0.0f)) throw ConfigError("film.eta must be > 0");
  if (!(sigma > 0.0f)) throw ConfigError("heatmap.sigma must be > 0");
  if (film_hidden < 1) throw ConfigError("film.hidden must be >= 1");
  for (std::size_t c = 0; c < 3; ++c) {
    if (!std::isfinite(input_mean[c])) throw ConfigError("model input_mean must be finite");
    if (!(input_std[c] > 0.0f) || !std::isfinite(input_std[c])) throw ConfigError("model input_std must be > 0");
  }
}

void check_image_tensor(const Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ShapeError("image batch must be [N,3,H,W], got " + shape_str(image.shape()));
  }
  if (image.size(2) % 16 != 0 || image.size(3) % 16 != 0) {
    throw ShapeError("image extents must be divisible by 16, got " + shape_str(image.shape()));
  }
}

TissueBranch::TissueBranch(const ModelConfig& cfg, Rng& rng)
    : temperature_(cfg.temperature), mean_(cfg.input_mean), std_(cfg.input_std) {
  int in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    encoder_[i] = Conv2d("tissue.enc" + std::to_string(i + 1), in, cfg.tissue_widths[i], 3, 2, rng);
    in = cfg.tissue_widths[i];
  }
  head_ = Conv2d("tissue.head", in, cfg.tissue_classes, 1, 1, rng);
}

TissueOutput TissueBranch::forward(const Tensor& image) const {
  check_image_tensor(image);
  Tensor x = normalize_image(image, mean_, std_);
  for (const Conv2d& c : encoder_) x = relu(c.forward(x));
  Tensor logits = head_.forward(x);
  Tensor probs = softmax_channels(bilinear_resize(logits, image.size(2), image.size(3)), temperature_);
  return {logits, {probs, temperature_}};
}

void TissueBranch::collect(std::vector<Param>& out) const {
  for (const Conv2d& c : encoder_) c.collect(out);
  head_.collect(out);
}

void TissueBranch::freeze() {
  std::vector<Param> ps;
  collect(ps);
  for (Param& p : ps) p.tensor.set_requires_grad(false);
  frozen_ = true;
}

DetClsBackbone::DetClsBackbone(const ModelConfig& cfg, Rng& rng) : mean_(cfg.input_mean), std_(cfg.input_std) {
  const auto& w = cfg.encoder_widths;
  int in = 3;
  for (std::size_t i = 0; i < 4; ++i) {
    encoder_[i] = Conv2d("det.enc" + std::to_string(i + 1), in, w[i], 3, 2, rng);
    in = w[i];
  }
  dec16_ = Conv2d("det.dec16", w[3], w[2], 3, 1, rng);
  dec8_ = Conv2d("det.dec8", w[2] + w[2], w[1], 3, 1, rng);
  dec4_ = Conv2d("det.dec4", w[1] + w[1], w[0], 3, 1, rng);
  det_head_ = Conv2d("det.det_head", w[0], 1, 1, 1, rng);
  cls_head_ = Conv2d("det.cls_head", w[0], cfg.nucleus_classes, 1, 1, rng);
}

std::array<int, 3> DetClsBackbone::decoder_widths() const {
  return {dec16_.out_channels(), dec8_.out_channels(), dec4_.out_channels()};
}

BackboneOutput DetClsBackbone::forward(const Tensor& image) const {
  check_image_tensor(image);
  const Tensor e1 = relu(encoder_[0].forward(normalize_image(image, mean_, std_)));  // 1/2
  const Tensor e2 = relu(encoder_[1].forward(e1));     // 1/4
  const Tensor e3 = relu(encoder_[2].forward(e2));     // 1/8
  const Tensor e4 = relu(encoder_[3].forward(e3));     // 1/16
  BackboneOutput out;
  out.features.s16 = relu(dec16_.forward(e4));
  const std::array<Tensor, 2> cat8{upsample_nearest(out.features.s16, 2), e3};
  out.features.s8 = relu(dec8_.forward(concat_channels(cat8)));
  const std::array<Tensor, 2> cat4{upsample_nearest(out.features.s8, 2), e2};
  out.features.s4 = relu(dec4_.forward(concat_channels(cat4)));
  out.heat_logits = det_head_.forward(out.features.s4);
  return out;
}

void DetClsBackbone::collect(std::vector<Param>& out) const {
  for (const Conv2d& c : encoder_) c.collect(out);
  dec16_.collect(out);
  dec8_.collect(out);
  dec4_.collect(out);
  det_head_.collect(out);
  cls_head_.collect(out);
}

namespace {
ModelConfig validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}
}  // namespace

TandModel::TandModel(const ModelConfig& cfg) : cfg_(validated(cfg)) {
  // Independent streams per component so toggling one never reshuffles another.
  Rng tissue_rng(cfg.init_seed * 3 + 1), backbone_rng(cfg.init_seed * 3 + 2), film_rng(cfg.init_seed * 3 + 3);
  tissue_ = TissueBranch(cfg_, tissue_rng);
  backbone_ = DetClsBackbone(cfg_, backbone_rng);
  const auto dec = backbone_.decoder_widths();
  film_ = FilmStack(cfg_.tissue_classes, dec, dec[2], cfg_.film_hidden, cfg_.eta, film_rng);
}

TissueOutput TandModel::tissue_forward(const Tensor& image) const { return tissue_.forward(image); }

DetClsOutput TandModel::detcls_forward(const Tensor& image, const TissueProbMap& q, bool film_enabled) const {
  BackboneOutput b = backbone_.forward(image);
  DetClsOutput out;
  out.heat = sigmoid(b.heat_logits);
  const Tensor& x4 = b.features.s4;
  if (film_enabled) {
    if (!q.probs.defined() || q.probs.dim() != 4 || q.probs.size(1) != cfg_.tissue_classes ||
        q.probs.size(2) != image.size(2) || q.probs.size(3) != image.size(3)) {
      throw ShapeError("detcls_forward: tissue probabilities must be [N,T,H,W] at image resolution");
    }
    out.cls_logits = backbone_.classify(film_.apply(q.probs, b.features, x4));
  } else {
    out.cls_logits = backbone_.classify(x4);
  }
  out.features = std::move(b.features);
  return out;
}

std::vector<Param> TandModel::params() const {
  std::vector<Param> out;
  tissue_.collect(out);
  backbone_.collect(out);
  film_.collect(out);
  return out;
}

}  // namespace tand
