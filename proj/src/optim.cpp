// SPDX-License-Identifier: Apache-2.0
#include "tandkit/optim.hpp"

#include <cmath>
#include <unordered_set>

#include "tandkit/error.hpp"

namespace tand {

Sgd::Sgd(float momentum) : momentum_(momentum) {
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw InvalidArgument("momentum must lie in [0, 1)");
}

void Sgd::step(std::span<const Param> params, float lr) {
  if (!(lr > 0.0f)) throw InvalidArgument("learning rate must be > 0");
  for (const Param& p : params) {
    TensorImpl* impl = p.tensor.impl();
    auto& v = velocity_[impl];
    if (v.size() != impl->data.size()) v.assign(impl->data.size(), 0.0f);
    const bool has_grad = impl->grad.size() == impl->data.size();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] + (has_grad ? impl->grad[i] : 0.0f);
      impl->data[i] -= lr * v[i];
    }
  }
}

void Sgd::step(std::span<const ParamGroup> groups) {
  validate_groups(groups);
  for (const ParamGroup& g : groups) step(g.params, g.lr);
}

void zero_grads(std::span<const Param> params) {
  for (const Param& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

double clip_grad_norm(std::span<const ParamGroup> groups, float max_norm) {
  if (!(max_norm > 0.0f)) throw InvalidArgument("clip norm must be > 0");
  double sq = 0.0;
  for (const ParamGroup& g : groups) {
    for (const Param& p : g.params) {
      for (float v : p.tensor.impl()->grad) sq += static_cast<double>(v) * v;
    }
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float k = static_cast<float>(max_norm / norm);
    for (const ParamGroup& g : groups) {
      for (const Param& p : g.params) {
        for (float& v : p.tensor.impl()->grad) v *= k;
      }
    }
  }
  return norm;
}

void validate_groups(std::span<const ParamGroup> groups) {
  std::unordered_set<const TensorImpl*> tensors;
  std::unordered_set<std::string> names;
  for (const ParamGroup& g : groups) {
    for (const Param& p : g.params) {
      if (!names.insert(p.name).second || !tensors.insert(p.tensor.impl()).second) {
        throw InvalidArgument("param '" + p.name + "' appears in more than one optimizer group");
      }
    }
  }
}

}  // namespace tand
