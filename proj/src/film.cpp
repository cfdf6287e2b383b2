// SPDX-License-Identifier: Apache-2.0
#include "tandkit/film.hpp"

#include "tandkit/error.hpp"
#include "tandkit/ops.hpp"

namespace tand {

int scale_divisor(Scale s) {
  switch (s) {
    case Scale::S16:
      return 16;
    case Scale::S8:
      return 8;
    case Scale::S4:
      return 4;
  }
  return 0;
}

std::string scale_tag(Scale s) { return "s" + std::to_string(scale_divisor(s)); }

const Tensor& ScaleFeatures::at(Scale s) const {
  switch (s) {
    case Scale::S16:
      return s16;
    case Scale::S8:
      return s8;
    case Scale::S4:
      return s4;
  }
  return s4;
}

FilmAdapter::FilmAdapter(Scale scale, int tissue_classes, int feature_channels, int cls_channels, int hidden,
                         float eta, Rng& rng)
    : scale_(scale),
      eta_(eta),
      conv1_("film." + scale_tag(scale) + ".conv1", tissue_classes, hidden, 3, 1, rng),
      conv2_("film." + scale_tag(scale) + ".conv2", hidden, 2 * feature_channels, 3, 1, rng),
      proj_("film." + scale_tag(scale) + ".proj", feature_channels, cls_channels, 1, 1, rng) {
  if (!(eta > 0.0f)) throw InvalidArgument("FiLM bound eta must be > 0");
  proj_.zero_();
}

BoundedFilmParams FilmAdapter::params(const Tensor& q_s) const {
  if (q_s.dim() != 4 || q_s.size(1) != tissue_classes()) {
    throw ShapeError("FiLM adapter " + scale_tag(scale_) + " expects " + std::to_string(tissue_classes()) +
                     " tissue channels, got " + shape_str(q_s.shape()));
  }
  const Tensor raw = conv2_.forward(relu(conv1_.forward(q_s)));
  const int c = feature_channels();
  return {tand::scale(tanh(slice_channels(raw, 0, c)), eta_), tand::scale(tanh(slice_channels(raw, c, 2 * c)), 0.5f * eta_)};
}

void FilmAdapter::collect(std::vector<Param>& out) const {
  conv1_.collect(out);
  conv2_.collect(out);
  proj_.collect(out);
}

FilmOutput film_modulate(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scale s) {
  if (x.shape() != gamma.shape() || x.shape() != beta.shape()) {
    throw ShapeError("film_modulate: x " + shape_str(x.shape()) + ", gamma " + shape_str(gamma.shape()) +
                     ", beta " + shape_str(beta.shape()));
  }
  Tensor delta = add(mul(x, gamma), beta);
  return {add(x, delta), {s, delta}};
}

Tensor aggregate_residuals(const Tensor& x_quarter, std::span<const ModulationResidual> residuals,
                           std::span<const FilmAdapter> adapters) {
  if (x_quarter.dim() != 4) throw ShapeError("aggregate_residuals: x_quarter must be NCHW");
  std::array<const ModulationResidual*, 3> by_scale{};
  for (const auto& r : residuals) {
    auto& slot = by_scale[static_cast<std::size_t>(r.scale)];
    if (slot) throw InvalidArgument("aggregate_residuals: duplicate residual at scale " + scale_tag(r.scale));
    slot = &r;
  }
  const int h = x_quarter.size(2), w = x_quarter.size(3);
  Tensor out = x_quarter;
  for (Scale s : kFilmScales) {
    const ModulationResidual* r = by_scale[static_cast<std::size_t>(s)];
    if (!r) throw InvalidArgument("aggregate_residuals: missing residual at scale " + scale_tag(s));
    const FilmAdapter* adapter = nullptr;
    for (const auto& a : adapters) {
      if (a.scale() == s) adapter = &a;
    }
    if (!adapter) throw InvalidArgument("aggregate_residuals: no adapter for scale " + scale_tag(s));
    const Tensor& d = r->delta;
    const Tensor up = (d.size(2) == h && d.size(3) == w) ? d : bilinear_resize(d, h, w);
    out = add(out, adapter->proj().forward(up));
  }
  return out;
}

FilmStack::FilmStack(int tissue_classes, std::array<int, 3> feature_channels, int cls_channels, int hidden,
                     float eta, Rng& rng) {
  for (Scale s : kFilmScales) {
    adapters_.emplace_back(s, tissue_classes, feature_channels[static_cast<std::size_t>(s)], cls_channels, hidden,
                           eta, rng);
  }
}

Tensor FilmStack::apply(const Tensor& q_full, const ScaleFeatures& features, const Tensor& x_quarter) const {
  std::vector<ModulationResidual> residuals;
  for (const FilmAdapter& a : adapters_) {
    const Tensor& x = features.at(a.scale());
    const Tensor q_s = bilinear_resize(q_full, x.size(2), x.size(3));
    const BoundedFilmParams p = a.params(q_s);
    residuals.push_back(film_modulate(x, p.gamma, p.beta, a.scale()).residual);
  }
  return aggregate_residuals(x_quarter, residuals, adapters_);
}

void FilmStack::collect(std::vector<Param>& out) const {
  for (const auto& a : adapters_) a.collect(out);
}

}  // namespace tand
