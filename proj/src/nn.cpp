// SPDX-License-Identifier: Apache-2.0
#include "tandkit/nn.hpp"

#include <cmath>

#include "tandkit/ops.hpp"

namespace tand {

void init_fan_in_uniform(Tensor& weight, Rng& rng, float gain) {
  const std::size_t fan_in = weight.numel() / static_cast<std::size_t>(weight.size(0));
  const float bound = gain * std::sqrt(6.0f / static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : weight.data()) v = dist(rng);
}

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, Rng& rng,
               float gain)
    : name_(std::move(name)),
      weight_(Shape{out_channels, in_channels, kernel, kernel}),
      bias_(Shape{out_channels}),
      stride_(stride),
      padding_((kernel - 1) / 2) {
  init_fan_in_uniform(weight_, rng, gain);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight_, bias_, stride_, padding_); }

void Conv2d::collect(std::vector<Param>& out) const {
  out.push_back({name_ + ".weight", weight_});
  out.push_back({name_ + ".bias", bias_});
}

void Conv2d::zero_() {
  for (float& v : weight_.data()) v = 0.0f;
  for (float& v : bias_.data()) v = 0.0f;
}

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.compare(0, p.size(), p) == 0) return true;
  }
  return false;
}

void set_trainable(const std::vector<Param>& params, const std::vector<std::string>& prefixes) {
  for (const Param& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(has_prefix(p.name, prefixes));
  }
}

}  // namespace tand
