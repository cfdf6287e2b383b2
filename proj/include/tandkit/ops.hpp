// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "tandkit/tensor.hpp"

// Differentiable primitives. Feature maps are NCHW throughout.
namespace tand {

// Elementwise; operands must share a shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float k);
Tensor add_scalar(const Tensor& a, float k);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

// Full reductions to a scalar, accumulated in double.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& x, int begin, int end);

// [N,C,H,W] -> [N,C]
Tensor spatial_mean(const Tensor& x);

struct PixelIndex {
  int batch = 0;
  int y = 0;
  int x = 0;
};

// Reads the C-vector at each pixel: [N,C,H,W] -> [P,C]. Gradient scatters
// back into the source map (repeated pixels accumulate).
Tensor gather_points(const Tensor& src, std::span<const PixelIndex> pixels);

/// Cross-correlation with odd square-or-rectangular kernels.
/// input [N,C,H,W], weight [O,C,kh,kw], bias [O] or undefined.
/// Output extents are (H + 2*padding - kh) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

/// Bilinear resampling with half-pixel centers (align_corners = false);
/// source coordinates below zero clamp to the first sample.
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);

Tensor upsample_nearest(const Tensor& input, int factor);

/// exp(z_t / temperature) normalized over the channel axis at every pixel.
Tensor softmax_channels(const Tensor& logits, float temperature);

}  // namespace tand
