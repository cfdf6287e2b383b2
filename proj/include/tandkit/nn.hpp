// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tandkit/tensor.hpp"

namespace tand {

/// A trainable tensor with a dotted path name, e.g. "film.s8.conv1.weight".
struct Param {
  std::string name;
  Tensor tensor;
};

using Rng = std::mt19937_64;

/// Fan-in scaled uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)) times `gain`.
void init_fan_in_uniform(Tensor& weight, Rng& rng, float gain = 1.0f);

class Conv2d {
 public:
  Conv2d() = default;
  // Weights fan-in initialized from `rng`, bias zero. Padding keeps extents at stride 1.
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, Rng& rng,
         float gain = 1.0f);

  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Param>& out) const;
  void zero_();

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  int in_channels() const { return weight_.size(1); }
  int out_channels() const { return weight_.size(0); }

 private:
  std::string name_;
  Tensor weight_;
  Tensor bias_;
  int stride_ = 1;
  int padding_ = 0;
};

// Sets requires_grad on every param whose name starts with one of `prefixes`
// and clears it elsewhere.
void set_trainable(const std::vector<Param>& params, const std::vector<std::string>& prefixes);
bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes);

}  // namespace tand
