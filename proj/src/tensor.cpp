// SPDX-License-Identifier: Apache-2.0
#include "tandkit/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "tandkit/error.hpp"

namespace tand {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::span<float> TensorImpl::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  return grad;
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

int Tensor::size(int axis) const {
  const int d = dim();
  if (axis < 0) axis += d;
  if (axis < 0 || axis >= d) throw ShapeError("axis out of range for shape " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss");
  }
  TensorImpl* root = loss.impl();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reversed, it is a valid reverse-mode schedule.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      TensorImpl* child = impl->node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  for (TensorImpl* impl : order) {
    if (impl->node) impl->grad.assign(impl->data.size(), 0.0f);
  }
  root->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (impl->node && impl->node->backward) impl->node->backward(*impl);
  }
}

namespace detail {

Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward_fn) {
  Tensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<GradNode>();
  for (const Tensor& t : inputs) {
    if (t.defined()) node->inputs.push_back(t.shared_impl());
  }
  node->backward = std::move(backward_fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

std::span<float> grad_sink(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return {};
  return t.impl()->grad_buffer();
}

}  // namespace detail

}  // namespace tand
