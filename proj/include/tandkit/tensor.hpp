// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tand {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// One recorded operation. `inputs` keeps the operands alive and defines the
// edges walked by backward(); `backward` reads the output gradient and
// accumulates into whichever inputs require grad.
struct GradNode {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until populated
  bool requires_grad = false;
  std::shared_ptr<GradNode> node;  // null for leaves

  // Grad buffer, zero-filled on first use.
  std::span<float> grad_buffer();
};

/// Dense row-major float32 tensor. Copies are shallow handles onto shared
/// storage, so parameters can be held by both a layer and an optimizer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim() const { return static_cast<int>(impl_->shape.size()); }
  int size(int axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const { return impl_->grad; }
  void zero_grad();

  bool is_leaf() const { return impl_->node == nullptr; }

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;

  TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared_impl() const noexcept { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are recomputed each call.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds an op result; the node is attached only when recording is on and
// some input requires grad.
Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward_fn);

// Grad buffer of `t` if it participates in differentiation, else empty.
std::span<float> grad_sink(const Tensor& t);

}  // namespace detail

}  // namespace tand
