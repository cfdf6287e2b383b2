// SPDX-License-Identifier: Apache-2.0
#include "tandkit/ops.hpp"

#include <algorithm>
#include <cmath>

#include "tandkit/error.hpp"

namespace tand {

using detail::grad_sink;
using detail::make_result;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_nchw(const Tensor& t, const char* op) {
  if (t.dim() != 4) throw ShapeError(std::string(op) + ": expected NCHW, got " + shape_str(t.shape()));
}

// Elementwise unary op with derivative expressed through (input, output).
template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [x, dfdx](const TensorImpl& o) {
    auto gx = grad_sink(x);
    if (gx.empty()) return;
    auto xin = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * dfdx(xin[i], o.data[i]);
  });
}

struct AxisWeights {
  std::vector<int> lo, hi;
  std::vector<float> frac;
};

AxisWeights half_pixel_weights(int in, int out) {
  AxisWeights w;
  w.lo.resize(out);
  w.hi.resize(out);
  w.frac.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(src);
    if (lo > in - 1) lo = in - 1;
    w.lo[i] = lo;
    w.hi[i] = lo < in - 1 ? lo + 1 : lo;
    w.frac[i] = static_cast<float>(src - lo);
  }
  return w;
}

// Output columns [lo, hi) whose input column ox*stride - pad + k is inside [0, width).
std::pair<int, int> valid_range(int out_extent, int in_extent, int stride, int pad, int k) {
  const int shift = pad - k;
  int lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  const int num = in_extent - 1 + shift;
  int hi = num < 0 ? 0 : num / stride + 1;
  hi = std::min(hi, out_extent);
  lo = std::min(lo, hi);
  return {lo, hi};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto da = a.data(), db = b.data();
  std::vector<float> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](const TensorImpl& o) {
    for (const Tensor* t : {&a, &b}) {
      auto g = grad_sink(*t);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto da = a.data(), db = b.data();
  std::vector<float> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](const TensorImpl& o) {
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    auto gb = grad_sink(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto da = a.data(), db = b.data();
  std::vector<float> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](const TensorImpl& o) {
    auto ga = grad_sink(a);
    auto vb = b.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * vb[i];
    auto gb = grad_sink(b);
    auto va = a.data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * va[i];
  });
}

Tensor scale(const Tensor& a, float k) {
  return unary(a, [k](float v) { return v * k; }, [k](float, float) { return k; });
}

Tensor add_scalar(const Tensor& a, float k) {
  return unary(a, [k](float v) { return v + k; }, [](float, float) { return 1.0f; });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](float v) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](float v) { return v > 0.0f ? v : 0.0f; },
               [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_result({}, {static_cast<float>(acc)}, {x}, [x](const TensorImpl& o) {
    auto g = grad_sink(x);
    const float go = o.grad[0];
    for (float& v : g) v += go;
  });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_result({}, {static_cast<float>(acc / n)}, {x}, [x, n](const TensorImpl& o) {
    auto g = grad_sink(x);
    const float go = static_cast<float>(o.grad[0] / static_cast<double>(n));
    for (float& v : g) v += go;
  });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  for (const Tensor& p : parts) require_nchw(p, "concat_channels");
  const int n = parts[0].size(0), h = parts[0].size(2), w = parts[0].size(3);
  int channels = 0;
  for (const Tensor& p : parts) {
    if (p.size(0) != n || p.size(2) != h || p.size(3) != w) {
      throw ShapeError("concat_channels: mismatched " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    }
    channels += p.size(1);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> out(static_cast<std::size_t>(n) * channels * plane);
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  for (int b = 0; b < n; ++b) {
    float* dst = out.data() + static_cast<std::size_t>(b) * channels * plane;
    for (const Tensor& p : parts) {
      const std::size_t block = static_cast<std::size_t>(p.size(1)) * plane;
      std::copy_n(p.data().data() + b * block, block, dst);
      dst += block;
    }
  }
  return make_result({n, channels, h, w}, std::move(out), inputs,
                     [inputs, n, channels, plane](const TensorImpl& o) {
                       std::size_t offset = 0;
                       for (const Tensor& p : inputs) {
                         const std::size_t block = static_cast<std::size_t>(p.size(1)) * plane;
                         auto g = grad_sink(p);
                         if (!g.empty()) {
                           for (int b = 0; b < n; ++b) {
                             const float* src = o.grad.data() + b * channels * plane + offset;
                             float* dst = g.data() + b * block;
                             for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                           }
                         }
                         offset += block;
                       }
                     });
}

Tensor slice_channels(const Tensor& x, int begin, int end) {
  require_nchw(x, "slice_channels");
  const int n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (begin < 0 || end > c || begin >= end) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside " + std::to_string(c) + " channels");
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const int oc = end - begin;
  std::vector<float> out(static_cast<std::size_t>(n) * oc * plane);
  for (int b = 0; b < n; ++b) {
    std::copy_n(x.data().data() + (static_cast<std::size_t>(b) * c + begin) * plane, oc * plane,
                out.data() + static_cast<std::size_t>(b) * oc * plane);
  }
  return make_result({n, oc, h, w}, std::move(out), {x}, [x, n, c, oc, begin, plane](const TensorImpl& o) {
    auto g = grad_sink(x);
    if (g.empty()) return;
    for (int b = 0; b < n; ++b) {
      float* dst = g.data() + (static_cast<std::size_t>(b) * c + begin) * plane;
      const float* src = o.grad.data() + static_cast<std::size_t>(b) * oc * plane;
      for (std::size_t i = 0; i < oc * plane; ++i) dst[i] += src[i];
    }
  });
}

Tensor spatial_mean(const Tensor& x) {
  require_nchw(x, "spatial_mean");
  const int n = x.size(0), c = x.size(1);
  const std::size_t plane = static_cast<std::size_t>(x.size(2)) * x.size(3);
  std::vector<float> out(static_cast<std::size_t>(n) * c);
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) acc += in[i * plane + j];
    out[i] = static_cast<float>(acc / plane);
  }
  return make_result({n, c}, std::move(out), {x}, [x, plane](const TensorImpl& o) {
    auto g = grad_sink(x);
    if (g.empty()) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const float v = static_cast<float>(o.grad[i] / static_cast<double>(plane));
      for (std::size_t j = 0; j < plane; ++j) g[i * plane + j] += v;
    }
  });
}

Tensor gather_points(const Tensor& src, std::span<const PixelIndex> pixels) {
  require_nchw(src, "gather_points");
  const int n = src.size(0), c = src.size(1), h = src.size(2), w = src.size(3);
  std::vector<std::size_t> base(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const PixelIndex& p = pixels[i];
    if (p.batch < 0 || p.batch >= n || p.y < 0 || p.y >= h || p.x < 0 || p.x >= w) {
      throw InvalidArgument("gather_points: pixel (" + std::to_string(p.batch) + "," + std::to_string(p.y) +
                            "," + std::to_string(p.x) + ") outside " + shape_str(src.shape()));
    }
    base[i] = static_cast<std::size_t>(p.batch) * c * h * w + static_cast<std::size_t>(p.y) * w + p.x;
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> out(pixels.size() * c);
  auto in = src.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    for (int ch = 0; ch < c; ++ch) out[i * c + ch] = in[base[i] + ch * plane];
  }
  return make_result({static_cast<int>(pixels.size()), c}, std::move(out), {src},
                     [src, base, c, plane](const TensorImpl& o) {
                       auto g = grad_sink(src);
                       if (g.empty()) return;
                       for (std::size_t i = 0; i < base.size(); ++i) {
                         for (int ch = 0; ch < c; ++ch) g[base[i] + ch * plane] += o.grad[i * c + ch];
                       }
                     });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  require_nchw(input, "conv2d");
  if (weight.dim() != 4) throw ShapeError("conv2d: weight must be [O,C,kh,kw], got " + shape_str(weight.shape()));
  const int n = input.size(0), c = input.size(1), h = input.size(2), w = input.size(3);
  const int oc = weight.size(0), kh = weight.size(2), kw = weight.size(3);
  if (weight.size(1) != c) {
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                     std::to_string(weight.size(1)));
  }
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != oc)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " for " + std::to_string(oc) + " outputs");
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw InvalidArgument("conv2d: kernel extents must be odd");
  if (stride < 1 || padding < 0) throw InvalidArgument("conv2d: stride >= 1 and padding >= 0 required");
  const int oh_num = h + 2 * padding - kh, ow_num = w + 2 * padding - kw;
  if (oh_num < 0 || ow_num < 0) throw ShapeError("conv2d: kernel larger than padded input");
  const int oh = oh_num / stride + 1, ow = ow_num / stride + 1;

  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  std::vector<float> out(static_cast<std::size_t>(n) * oc * out_plane, 0.0f);
  const float* in = input.data().data();
  const float* wt = weight.data().data();

  std::vector<std::pair<int, int>> col_range(kw), row_range(kh);
  for (int k = 0; k < kw; ++k) col_range[k] = valid_range(ow, w, stride, padding, k);
  for (int k = 0; k < kh; ++k) row_range[k] = valid_range(oh, h, stride, padding, k);

  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < oc; ++o) {
      float* dst = out.data() + (static_cast<std::size_t>(b) * oc + o) * out_plane;
      if (bias.defined()) std::fill_n(dst, out_plane, bias.data()[o]);
      for (int ci = 0; ci < c; ++ci) {
        const float* src = in + (static_cast<std::size_t>(b) * c + ci) * in_plane;
        const float* wk = wt + (static_cast<std::size_t>(o) * c + ci) * kh * kw;
        for (int ki = 0; ki < kh; ++ki) {
          for (int kj = 0; kj < kw; ++kj) {
            const float wv = wk[ki * kw + kj];
            const auto [x0, x1] = col_range[kj];
            for (int oy = row_range[ki].first; oy < row_range[ki].second; ++oy) {
              const int iy = oy * stride - padding + ki;
              float* drow = dst + static_cast<std::size_t>(oy) * ow;
              const float* srow = src + static_cast<std::size_t>(iy) * w - padding + kj;
              if (stride == 1) {
                for (int ox = x0; ox < x1; ++ox) drow[ox] += wv * srow[ox];
              } else {
                for (int ox = x0; ox < x1; ++ox) drow[ox] += wv * srow[ox * stride];
              }
            }
          }
        }
      }
    }
  }

  return make_result(
      {n, oc, oh, ow}, std::move(out), {input, weight, bias},
      [=](const TensorImpl& o) {
        auto gin = grad_sink(input);
        auto gw = grad_sink(weight);
        auto gb = grad_sink(bias);
        const float* gout = o.grad.data();
        const float* in = input.data().data();
        const float* wt = weight.data().data();
        for (int b = 0; b < n; ++b) {
          for (int oi = 0; oi < oc; ++oi) {
            const float* g = gout + (static_cast<std::size_t>(b) * oc + oi) * out_plane;
            if (!gb.empty()) {
              double acc = 0.0;
              for (std::size_t i = 0; i < out_plane; ++i) acc += g[i];
              gb[oi] += static_cast<float>(acc);
            }
            if (gin.empty() && gw.empty()) continue;
            for (int ci = 0; ci < c; ++ci) {
              const std::size_t in_off = (static_cast<std::size_t>(b) * c + ci) * in_plane;
              const float* src = in + in_off;
              float* gsrc = gin.empty() ? nullptr : gin.data() + in_off;
              const std::size_t w_off = (static_cast<std::size_t>(oi) * c + ci) * kh * kw;
              for (int ki = 0; ki < kh; ++ki) {
                for (int kj = 0; kj < kw; ++kj) {
                  const float wv = wt[w_off + ki * kw + kj];
                  const auto [x0, x1] = col_range[kj];
                  float wacc = 0.0f;
                  for (int oy = row_range[ki].first; oy < row_range[ki].second; ++oy) {
                    const int iy = oy * stride - padding + ki;
                    const float* grow = g + static_cast<std::size_t>(oy) * ow;
                    const std::ptrdiff_t row_off = static_cast<std::ptrdiff_t>(iy) * w - padding + kj;
                    const float* srow = src + row_off;
                    if (!gw.empty()) {
                      float racc = 0.0f;
#pragma omp simd reduction(+ : racc)
                      for (int ox = x0; ox < x1; ++ox) racc += grow[ox] * srow[ox * stride];
                      wacc += racc;
                    }
                    if (gsrc) {
                      float* gsrow = gsrc + row_off;
                      if (stride == 1) {
                        for (int ox = x0; ox < x1; ++ox) gsrow[ox] += wv * grow[ox];
                      } else {
                        for (int ox = x0; ox < x1; ++ox) gsrow[ox * stride] += wv * grow[ox];
                      }
                    }
                  }
                  if (!gw.empty()) gw[w_off + ki * kw + kj] += wacc;
                }
              }
            }
          }
        }
      });
}

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
  require_nchw(input, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw InvalidArgument("bilinear_resize: output extents must be >= 1");
  const int n = input.size(0), c = input.size(1), h = input.size(2), w = input.size(3);
  const AxisWeights ry = half_pixel_weights(h, out_h);
  const AxisWeights rx = half_pixel_weights(w, out_w);
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  std::vector<float> out(planes * out_plane);
  auto in = input.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = in.data() + p * in_plane;
    float* dst = out.data() + p * out_plane;
    for (int y = 0; y < out_h; ++y) {
      const float* r0 = src + static_cast<std::size_t>(ry.lo[y]) * w;
      const float* r1 = src + static_cast<std::size_t>(ry.hi[y]) * w;
      const float fy = ry.frac[y];
      for (int x = 0; x < out_w; ++x) {
        const int x0 = rx.lo[x], x1 = rx.hi[x];
        const float fx = rx.frac[x];
        const float top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const float bot = r1[x0] + fx * (r1[x1] - r1[x0]);
        dst[static_cast<std::size_t>(y) * out_w + x] = top + fy * (bot - top);
      }
    }
  }
  return make_result({n, c, out_h, out_w}, std::move(out), {input},
                     [input, ry, rx, planes, in_plane, out_plane, w, out_h, out_w](const TensorImpl& o) {
                       auto g = grad_sink(input);
                       if (g.empty()) return;
                       for (std::size_t p = 0; p < planes; ++p) {
                         float* gs = g.data() + p * in_plane;
                         const float* go = o.grad.data() + p * out_plane;
                         for (int y = 0; y < out_h; ++y) {
                           float* r0 = gs + static_cast<std::size_t>(ry.lo[y]) * w;
                           float* r1 = gs + static_cast<std::size_t>(ry.hi[y]) * w;
                           const float fy = ry.frac[y];
                           for (int x = 0; x < out_w; ++x) {
                             const float v = go[static_cast<std::size_t>(y) * out_w + x];
                             const float fx = rx.frac[x];
                             const float top = v * (1.0f - fy), bot = v * fy;
                             r0[rx.lo[x]] += top * (1.0f - fx);
                             r0[rx.hi[x]] += top * fx;
                             r1[rx.lo[x]] += bot * (1.0f - fx);
                             r1[rx.hi[x]] += bot * fx;
                           }
                         }
                       }
                     });
}

Tensor upsample_nearest(const Tensor& input, int factor) {
  require_nchw(input, "upsample_nearest");
  if (factor < 1) throw InvalidArgument("upsample_nearest: factor must be >= 1");
  const int n = input.size(0), c = input.size(1), h = input.size(2), w = input.size(3);
  const int oh = h * factor, ow = w * factor;
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  std::vector<float> out(planes * oh * ow);
  auto in = input.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        out[(p * oh + y) * ow + x] = in[(p * h + y / factor) * w + x / factor];
      }
    }
  }
  return make_result({n, c, oh, ow}, std::move(out), {input},
                     [input, planes, h, w, oh, ow, factor](const TensorImpl& o) {
                       auto g = grad_sink(input);
                       if (g.empty()) return;
                       for (std::size_t p = 0; p < planes; ++p) {
                         for (int y = 0; y < oh; ++y) {
                           for (int x = 0; x < ow; ++x) {
                             g[(p * h + y / factor) * w + x / factor] += o.grad[(p * oh + y) * ow + x];
                           }
                         }
                       }
                     });
}

Tensor softmax_channels(const Tensor& logits, float temperature) {
  require_nchw(logits, "softmax_channels");
  if (!(temperature > 0.0f)) throw InvalidArgument("softmax_channels: temperature must be > 0");
  const int n = logits.size(0), t = logits.size(1);
  const std::size_t plane = static_cast<std::size_t>(logits.size(2)) * logits.size(3);
  std::vector<float> out(logits.numel());
  auto z = logits.data();
  std::vector<double> e(t);
  for (int b = 0; b < n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * t * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      float zmax = z[base + i];
      for (int k = 1; k < t; ++k) zmax = std::max(zmax, z[base + k * plane + i]);
      double total = 0.0;
      for (int k = 0; k < t; ++k) {
        e[k] = std::exp((static_cast<double>(z[base + k * plane + i]) - zmax) / temperature);
        total += e[k];
      }
      for (int k = 0; k < t; ++k) out[base + k * plane + i] = static_cast<float>(e[k] / total);
    }
  }
  return make_result(logits.shape(), std::move(out), {logits},
                     [logits, n, t, plane, temperature](const TensorImpl& o) {
                       auto g = grad_sink(logits);
                       if (g.empty()) return;
                       for (int b = 0; b < n; ++b) {
                         const std::size_t base = static_cast<std::size_t>(b) * t * plane;
                         for (std::size_t i = 0; i < plane; ++i) {
                           double dot = 0.0;
                           for (int k = 0; k < t; ++k) {
                             const std::size_t j = base + k * plane + i;
                             dot += static_cast<double>(o.grad[j]) * o.data[j];
                           }
                           for (int k = 0; k < t; ++k) {
                             const std::size_t j = base + k * plane + i;
                             g[j] += static_cast<float>(o.data[j] * (o.grad[j] - dot) / temperature);
                           }
                         }
                       }
                     });
}

}  // namespace tand
