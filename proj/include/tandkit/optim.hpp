// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <unordered_map>
#include <vector>

#include "tandkit/nn.hpp"

namespace tand {

struct ParamGroup {
  std::vector<Param> params;
  float lr = 0.0f;
};

/// Momentum descent: v <- momentum*v + grad; p <- p - lr*v.
/// Grads are left untouched; callers zero them.
class Sgd {
 public:
  explicit Sgd(float momentum);

  void step(std::span<const Param> params, float lr);
  // Rejects a param appearing in more than one group or duplicate names.
  void step(std::span<const ParamGroup> groups);

  float momentum() const { return momentum_; }

 private:
  float momentum_;
  std::unordered_map<const TensorImpl*, std::vector<float>> velocity_;
};

void zero_grads(std::span<const Param> params);

/// Rescales every grad in `groups` so their joint L2 norm is at most
/// `max_norm`; returns the norm before rescaling.
double clip_grad_norm(std::span<const ParamGroup> groups, float max_norm);
void validate_groups(std::span<const ParamGroup> groups);

}  // namespace tand
