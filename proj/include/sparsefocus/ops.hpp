#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/graph.hpp"
#include "sparsefocus/tensor.hpp"

namespace sf {

enum class Activation { relu, hardswish, sigmoid };
enum class PoolKind { max, avg };
enum class NormMode { train, eval };

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Output index range [lo, hi) whose input coordinate o*stride - pad + tap is in [0, in).
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t in, std::size_t out,
                                                     std::size_t stride, std::size_t pad,
                                                     std::size_t tap) {
  const long s = static_cast<long>(stride);
  const long off = static_cast<long>(tap) - static_cast<long>(pad);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(in) - 1 - off);
  hi = hi < 0 ? -1 : hi / s;
  hi = std::min(hi, static_cast<long>(out) - 1);
  if (hi < lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
}

struct ConvGeom {
  std::size_t n, c, h, w, f, kh, kw, ho, wo, stride, pad;
};

// Per-tap gather/GEMM/scatter convolution. Taps whose window falls entirely
// in the zero padding are skipped, which matters for the small late-stage
// feature maps of the patch regressor.
template <typename T>
struct TapConv {
  ConvGeom g;

  template <typename Fn>
  void for_each_tap(Fn&& fn) const {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      auto [y0, y1] = tap_range(g.h, g.ho, g.stride, g.pad, ky);
      if (y0 == y1) continue;
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        auto [x0, x1] = tap_range(g.w, g.wo, g.stride, g.pad, kx);
        if (x0 == x1) continue;
        fn(ky, kx, y0, y1, x0, x1);
      }
    }
  }

  // dst[c, m] = src[n, c, iy, ix] over the tap's valid outputs.
  void gather_input(const T* x, std::size_t ky, std::size_t kx, std::size_t y0, std::size_t y1,
                    std::size_t x0, std::size_t x1, std::vector<T>& dst) const {
    const std::size_t ny = y1 - y0, nx = x1 - x0, m = g.n * ny * nx;
    dst.resize(g.c * m);
    for (std::size_t c = 0; c < g.c; ++c) {
      T* row = dst.data() + c * m;
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* plane = x + (n * g.c + c) * g.h * g.w;
        for (std::size_t a = 0; a < ny; ++a) {
          const std::size_t iy = (y0 + a) * g.stride + ky - g.pad;
          const T* src = plane + iy * g.w;
          T* out = row + (n * ny + a) * nx;
          if (g.stride == 1) {
            const std::size_t ix0 = x0 + kx - g.pad;
            std::copy(src + ix0, src + ix0 + nx, out);
          } else {
            for (std::size_t b = 0; b < nx; ++b) out[b] = src[(x0 + b) * g.stride + kx - g.pad];
          }
        }
      }
    }
  }

  // dst[c, m] += (or =) per-output values, for an NCHW tensor with `ch` channels at output geometry.
  void gather_output(const T* y, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1,
                     std::vector<T>& dst) const {
    const std::size_t ny = y1 - y0, nx = x1 - x0, m = g.n * ny * nx;
    dst.resize(g.f * m);
    for (std::size_t f = 0; f < g.f; ++f) {
      T* row = dst.data() + f * m;
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* plane = y + (n * g.f + f) * g.ho * g.wo;
        for (std::size_t a = 0; a < ny; ++a) {
          const T* src = plane + (y0 + a) * g.wo + x0;
          std::copy(src, src + nx, row + (n * ny + a) * nx);
        }
      }
    }
  }

  void scatter_output(T* y, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1,
                      const T* src_all) const {
    const std::size_t ny = y1 - y0, nx = x1 - x0, m = g.n * ny * nx;
    for (std::size_t f = 0; f < g.f; ++f) {
      const T* row = src_all + f * m;
      for (std::size_t n = 0; n < g.n; ++n) {
        T* plane = y + (n * g.f + f) * g.ho * g.wo;
        for (std::size_t a = 0; a < ny; ++a) {
          T* dst = plane + (y0 + a) * g.wo + x0;
          const T* src = row + (n * ny + a) * nx;
          for (std::size_t b = 0; b < nx; ++b) dst[b] += src[b];
        }
      }
    }
  }

  void scatter_input(T* x, std::size_t ky, std::size_t kx, std::size_t y0, std::size_t y1,
                     std::size_t x0, std::size_t x1, const T* src_all) const {
    const std::size_t ny = y1 - y0, nx = x1 - x0, m = g.n * ny * nx;
    for (std::size_t c = 0; c < g.c; ++c) {
      const T* row = src_all + c * m;
      for (std::size_t n = 0; n < g.n; ++n) {
        T* plane = x + (n * g.c + c) * g.h * g.w;
        for (std::size_t a = 0; a < ny; ++a) {
          const std::size_t iy = (y0 + a) * g.stride + ky - g.pad;
          T* dst = plane + iy * g.w;
          const T* src = row + (n * ny + a) * nx;
          for (std::size_t b = 0; b < nx; ++b) dst[(x0 + b) * g.stride + kx - g.pad] += src[b];
        }
      }
    }
  }

  // Packs w[f, c, ky, kx] into one contiguous [F, C] block per tap.
  std::vector<T> pack_weights(const Tensor<T>& w) const {
    std::vector<T> packed(g.kh * g.kw * g.f * g.c);
    for (std::size_t f = 0; f < g.f; ++f)
      for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
          for (std::size_t kx = 0; kx < g.kw; ++kx)
            packed[((ky * g.kw + kx) * g.f + f) * g.c + c] = w.at(f, c, ky, kx);
    return packed;
  }
};

template <typename T>
T hardswish(T x) {
  return x * std::clamp(x + T{3}, T{0}, T{6}) / T{6};
}

template <typename T>
T hardswish_grad(T x) {
  if (x <= T{-3}) return T{0};
  if (x >= T{3}) return T{1};
  return (T{2} * x + T{3}) / T{6};
}

template <typename T>
T sigmoid(T x) {
  const T y = x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
  // Saturated inputs round to 0 or 1 in finite precision; keep the range open.
  return std::clamp(y, std::numeric_limits<T>::min(), T{1} - std::numeric_limits<T>::epsilon() / T{2});
}

}  // namespace detail

/// 2-D cross-correlation over NCHW input with an [F, C, kh, kw] kernel.
/// `bias` may be an invalid Var for bias-free convolutions.
template <typename T>
Var conv2d(Graph<T>& g, Var input, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
  const Tensor<T>& x = g.value(input);
  const Tensor<T>& w = g.value(kernel);
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "kernel");
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d", "channels", "input has " + std::to_string(x.dim(1)) +
                                               ", kernel expects " + std::to_string(w.dim(1)));
  }
  if (x.dim(2) + 2 * padding < w.dim(2)) {
    throw ShapeError("conv2d", "height", "padded input smaller than kernel");
  }
  if (x.dim(3) + 2 * padding < w.dim(3)) {
    throw ShapeError("conv2d", "width", "padded input smaller than kernel");
  }
  if (bias.valid() && (g.value(bias).rank() != 1 || g.value(bias).dim(0) != w.dim(0))) {
    throw ShapeError("conv2d", "bias", "expected [" + std::to_string(w.dim(0)) + "], got " +
                                           dims_string(g.value(bias).dims()));
  }

  detail::ConvGeom geom{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                        detail::conv_out(x.dim(2), w.dim(2), stride, padding),
                        detail::conv_out(x.dim(3), w.dim(3), stride, padding), stride, padding};
  detail::TapConv<T> tc{geom};

  Tensor<T> out({geom.n, geom.f, geom.ho, geom.wo});
  const std::vector<T> packed = tc.pack_weights(w);
  std::vector<T> cols, prod;
  tc.for_each_tap([&](std::size_t ky, std::size_t kx, std::size_t y0, std::size_t y1,
                      std::size_t x0, std::size_t x1) {
    const std::size_t m = geom.n * (y1 - y0) * (x1 - x0);
    tc.gather_input(x.raw(), ky, kx, y0, y1, x0, x1, cols);
    prod.resize(geom.f * m);
    detail::MapMat<T>(prod.data(), geom.f, m).noalias() =
        detail::CMapMat<T>(packed.data() + (ky * geom.kw + kx) * geom.f * geom.c, geom.f, geom.c) *
        detail::CMapMat<T>(cols.data(), geom.c, m);
    tc.scatter_output(out.raw(), y0, y1, x0, x1, prod.data());
  });
  if (bias.valid()) {
    const Tensor<T>& b = g.value(bias);
    const std::size_t plane = geom.ho * geom.wo;
    for (std::size_t n = 0; n < geom.n; ++n)
      for (std::size_t f = 0; f < geom.f; ++f) {
        T* p = out.raw() + (n * geom.f + f) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += b[f];
      }
  }

  return g.record(std::move(out), {input, kernel, bias}, [=](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    const Tensor<T>& xv = gr.value(input);
    const Tensor<T>& wv = gr.value(kernel);
    Tensor<T>* dx = gr.grad_of(input);
    Tensor<T>* dw = gr.grad_of(kernel);
    Tensor<T>* db = bias.valid() ? gr.grad_of(bias) : nullptr;
    const std::vector<T> wpack = tc.pack_weights(wv);
    std::vector<T> cols, dcols, dyc;
    detail::RowMat<T> dwt(geom.f, geom.c);
    tc.for_each_tap([&](std::size_t ky, std::size_t kx, std::size_t y0, std::size_t y1,
                        std::size_t x0, std::size_t x1) {
      const std::size_t m = geom.n * (y1 - y0) * (x1 - x0);
      tc.gather_output(dy.raw(), y0, y1, x0, x1, dyc);
      detail::CMapMat<T> d(dyc.data(), geom.f, m);
      if (dw) {
        tc.gather_input(xv.raw(), ky, kx, y0, y1, x0, x1, cols);
        dwt.noalias() = d * detail::CMapMat<T>(cols.data(), geom.c, m).transpose();
        for (std::size_t f = 0; f < geom.f; ++f)
          for (std::size_t c = 0; c < geom.c; ++c) dw->at(f, c, ky, kx) += dwt(f, c);
      }
      if (dx) {
        dcols.resize(geom.c * m);
        detail::MapMat<T>(dcols.data(), geom.c, m).noalias() =
            detail::CMapMat<T>(wpack.data() + (ky * geom.kw + kx) * geom.f * geom.c, geom.f,
                               geom.c)
                .transpose() *
            d;
        tc.scatter_input(dx->raw(), ky, kx, y0, y1, x0, x1, dcols.data());
      }
    });
    if (db) {
      const std::size_t plane = geom.ho * geom.wo;
      for (std::size_t n = 0; n < geom.n; ++n)
        for (std::size_t f = 0; f < geom.f; ++f) {
          const T* p = dy.raw() + (n * geom.f + f) * plane;
          T s{0};
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          (*db)[f] += s;
        }
    }
  });
}

/// Running statistics owned by a batch-norm layer. They are non-trainable
/// parameters so checkpoints carry them alongside the weights.
template <typename T>
struct BatchNormStats {
  Parameter<T> mean;
  Parameter<T> var;
};

/// Per-channel batch normalization over (N, H, W).
/// Train mode normalizes with batch statistics (biased variance) and folds them
/// into the running stats (unbiased variance); eval mode uses the running stats.
template <typename T>
Var batchnorm2d(Graph<T>& g, Var input, Var gamma, Var beta, BatchNormStats<T>& stats,
                NormMode mode, T momentum, T eps) {
  if (!(eps > T{0})) throw ConfigError("batchnorm2d: eps must be positive");
  const Tensor<T>& x = g.value(input);
  require_rank(x, 4, "batchnorm2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t count = n * plane;
  if (g.value(gamma).size() != c || g.value(beta).size() != c) {
    throw ShapeError("batchnorm2d", "channels", "gamma/beta size does not match " +
                                                    std::to_string(c) + " channels");
  }
  if (stats.mean.value.size() != c || stats.var.value.size() != c) {
    throw ShapeError("batchnorm2d", "channels", "running stats size mismatch");
  }

  std::vector<T> mean(c), inv_std(c);
  if (mode == NormMode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s{0};
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.raw() + (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) s += p[k];
      }
      const T mu = s / static_cast<T>(count);
      T ss{0};
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = x.raw() + (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) ss += (p[k] - mu) * (p[k] - mu);
      }
      const T var = ss / static_cast<T>(count);
      mean[ch] = mu;
      inv_std[ch] = T{1} / std::sqrt(var + eps);
      const T unbiased = count > 1 ? ss / static_cast<T>(count - 1) : var;
      stats.mean.value[ch] = (T{1} - momentum) * stats.mean.value[ch] + momentum * mu;
      stats.var.value[ch] = (T{1} - momentum) * stats.var.value[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.mean.value[ch];
      inv_std[ch] = T{1} / std::sqrt(stats.var.value[ch] + eps);
    }
  }

  const Tensor<T>& gm = g.value(gamma);
  const Tensor<T>& bt = g.value(beta);
  Tensor<T> xhat(x.dims());
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const T h = (x[base + k] - mean[ch]) * inv_std[ch];
        xhat[base + k] = h;
        out[base + k] = gm[ch] * h + bt[ch];
      }
    }

  return g.record(std::move(out), {input, gamma, beta},
                  [=, xhat = std::move(xhat)](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    const Tensor<T>& gmv = gr.value(gamma);
    Tensor<T>* dx = gr.grad_of(input);
    Tensor<T>* dg = gr.grad_of(gamma);
    Tensor<T>* dbt = gr.grad_of(beta);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum_dy{0}, sum_dy_xhat{0};
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          sum_dy += dy[base + k];
          sum_dy_xhat += dy[base + k] * xhat[base + k];
        }
      }
      if (dg) (*dg)[ch] += sum_dy_xhat;
      if (dbt) (*dbt)[ch] += sum_dy;
      if (!dx) continue;
      const T scale = gmv[ch] * inv_std[ch];
      if (mode == NormMode::train) {
        const T inv_m = T{1} / static_cast<T>(count);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t base = (i * c + ch) * plane;
          for (std::size_t k = 0; k < plane; ++k) {
            (*dx)[base + k] += scale * (dy[base + k] - inv_m * sum_dy -
                                        xhat[base + k] * inv_m * sum_dy_xhat);
          }
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t base = (i * c + ch) * plane;
          for (std::size_t k = 0; k < plane; ++k) (*dx)[base + k] += scale * dy[base + k];
        }
      }
    }
  });
}

template <typename T>
Var activation(Graph<T>& g, Var input, Activation kind) {
  const Tensor<T>& x = g.value(input);
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (kind) {
      case Activation::relu: out[i] = x[i] > T{0} ? x[i] : T{0}; break;
      case Activation::hardswish: out[i] = detail::hardswish(x[i]); break;
      case Activation::sigmoid: out[i] = detail::sigmoid(x[i]); break;
    }
  }
  return g.record(std::move(out), {input}, [=](Graph<T>& gr, Var self) {
    Tensor<T>* dx = gr.grad_of(input);
    if (!dx) return;
    const Tensor<T>& dy = gr.grad(self);
    const Tensor<T>& xv = gr.value(input);
    const Tensor<T>& yv = gr.value(self);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      T d{0};
      switch (kind) {
        case Activation::relu: d = xv[i] > T{0} ? T{1} : T{0}; break;
        case Activation::hardswish: d = detail::hardswish_grad(xv[i]); break;
        case Activation::sigmoid: d = yv[i] * (T{1} - yv[i]); break;
      }
      (*dx)[i] += d * dy[i];
    }
  });
}

/// Unpadded max/avg pooling with a square window.
template <typename T>
Var pool2d(Graph<T>& g, Var input, PoolKind kind, std::size_t window, std::size_t stride) {
  const Tensor<T>& x = g.value(input);
  require_rank(x, 4, "pool2d", "input");
  if (window == 0 || stride == 0) throw ConfigError("pool2d: window and stride must be positive");
  if (window > x.dim(2)) throw ShapeError("pool2d", "height", "window exceeds extent");
  if (window > x.dim(3)) throw ShapeError("pool2d", "width", "window exceeds extent");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = (h - window) / stride + 1, wo = (w - window) / stride + 1;
  Tensor<T> out({n, c, ho, wo});
  std::vector<std::size_t> argmax(kind == PoolKind::max ? out.size() : 0);
  const T inv = T{1} / static_cast<T>(window * window);
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.raw() + p * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t oi = (p * ho + oy) * wo + ox;
        if (kind == PoolKind::max) {
          std::size_t best = oy * stride * w + ox * stride;
          for (std::size_t a = 0; a < window; ++a)
            for (std::size_t b = 0; b < window; ++b) {
              const std::size_t idx = (oy * stride + a) * w + ox * stride + b;
              if (src[idx] > src[best]) best = idx;
            }
          argmax[oi] = p * h * w + best;
          out[oi] = src[best];
        } else {
          T s{0};
          for (std::size_t a = 0; a < window; ++a)
            for (std::size_t b = 0; b < window; ++b) s += src[(oy * stride + a) * w + ox * stride + b];
          out[oi] = s * inv;
        }
      }
  }
  return g.record(std::move(out), {input},
                  [=, argmax = std::move(argmax)](Graph<T>& gr, Var self) {
    Tensor<T>* dx = gr.grad_of(input);
    if (!dx) return;
    const Tensor<T>& dy = gr.grad(self);
    if (kind == PoolKind::max) {
      for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[argmax[i]] += dy[i];
      return;
    }
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T d = dy[(p * ho + oy) * wo + ox] * inv;
          for (std::size_t a = 0; a < window; ++a)
            for (std::size_t b = 0; b < window; ++b)
              (*dx)[p * h * w + (oy * stride + a) * w + ox * stride + b] += d;
        }
  });
}

/// Max over all spatial positions: [N, C, H, W] -> [N, C].
template <typename T>
Var global_max_pool(Graph<T>& g, Var input) {
  const Tensor<T>& x = g.value(input);
  require_rank(x, 4, "global_max_pool", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out({n, c});
  std::vector<std::size_t> argmax(n * c);
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.raw() + p * plane;
    const std::size_t best =
        static_cast<std::size_t>(std::max_element(src, src + plane) - src);
    argmax[p] = p * plane + best;
    out[p] = src[best];
  }
  return g.record(std::move(out), {input},
                  [=, argmax = std::move(argmax)](Graph<T>& gr, Var self) {
    Tensor<T>* dx = gr.grad_of(input);
    if (!dx) return;
    const Tensor<T>& dy = gr.grad(self);
    for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[argmax[i]] += dy[i];
  });
}

/// Average pooling to a fixed output grid with variable windows
/// [floor(i*in/out), ceil((i+1)*in/out)).
template <typename T>
Var adaptive_avg_pool2d(Graph<T>& g, Var input, std::size_t out_h, std::size_t out_w) {
  const Tensor<T>& x = g.value(input);
  require_rank(x, 4, "adaptive_avg_pool2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_h == 0 || out_h > h) throw ShapeError("adaptive_avg_pool2d", "height", "bad output size");
  if (out_w == 0 || out_w > w) throw ShapeError("adaptive_avg_pool2d", "width", "bad output size");
  auto lo = [](std::size_t i, std::size_t in, std::size_t out) { return i * in / out; };
  auto hi = [](std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; };
  Tensor<T> out({n, c, out_h, out_w});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const std::size_t y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
        const std::size_t x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
        T s{0};
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) s += x[p * h * w + y * w + xx];
        out[(p * out_h + oy) * out_w + ox] = s / static_cast<T>((y1 - y0) * (x1 - x0));
      }
  return g.record(std::move(out), {input}, [=](Graph<T>& gr, Var self) {
    Tensor<T>* dx = gr.grad_of(input);
    if (!dx) return;
    const Tensor<T>& dy = gr.grad(self);
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t oy = 0; oy < out_h; ++oy)
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const std::size_t y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
          const std::size_t x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
          const T d = dy[(p * out_h + oy) * out_w + ox] / static_cast<T>((y1 - y0) * (x1 - x0));
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t xx = x0; xx < x1; ++xx) (*dx)[p * h * w + y * w + xx] += d;
        }
  });
}

template <typename T>
Var reshape(Graph<T>& g, Var input, Dims dims) {
  Tensor<T> out = g.value(input).reshaped(std::move(dims));
  return g.record(std::move(out), {input}, [=](Graph<T>& gr, Var self) {
    Tensor<T>* dx = gr.grad_of(input);
    if (!dx) return;
    const Tensor<T>& dy = gr.grad(self);
    for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i];
  });
}

/// Affine map [N, D] x [O, D]^T + [O] -> [N, O].
template <typename T>
Var linear(Graph<T>& g, Var input, Var weight, Var bias) {
  const Tensor<T>& x = g.value(input);
  const Tensor<T>& w = g.value(weight);
  require_rank(x, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("linear", "features", "input has " + std::to_string(x.dim(1)) +
                                               ", weight expects " + std::to_string(w.dim(1)));
  }
  const std::size_t n = x.dim(0), d = x.dim(1), o = w.dim(0);
  if (bias.valid() && g.value(bias).size() != o) {
    throw ShapeError("linear", "bias", "expected " + std::to_string(o) + " entries");
  }
  Tensor<T> out({n, o});
  detail::MapMat<T>(out.raw(), n, o).noalias() =
      detail::CMapMat<T>(x.raw(), n, d) * detail::CMapMat<T>(w.raw(), o, d).transpose();
  if (bias.valid()) {
    const Tensor<T>& b = g.value(bias);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < o; ++j) out[i * o + j] += b[j];
  }
  return g.record(std::move(out), {input, weight, bias}, [=](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    detail::CMapMat<T> dym(dy.raw(), n, o);
    if (Tensor<T>* dx = gr.grad_of(input)) {
      detail::MapMat<T>(dx->raw(), n, d).noalias() +=
          dym * detail::CMapMat<T>(gr.value(weight).raw(), o, d);
    }
    if (Tensor<T>* dw = gr.grad_of(weight)) {
      detail::MapMat<T>(dw->raw(), o, d).noalias() +=
          dym.transpose() * detail::CMapMat<T>(gr.value(input).raw(), n, d);
    }
    if (bias.valid()) {
      if (Tensor<T>* db = gr.grad_of(bias)) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < o; ++j) (*db)[j] += dy[i * o + j];
      }
    }
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& x = g.value(a);
  const Tensor<T>& y = g.value(b);
  if (x.dims() != y.dims()) {
    throw ShapeError("add", "all", dims_string(x.dims()) + " vs " + dims_string(y.dims()));
  }
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return g.record(std::move(out), {a, b}, [=](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    for (Var v : {a, b}) {
      if (Tensor<T>* d = gr.grad_of(v))
        for (std::size_t i = 0; i < dy.size(); ++i) (*d)[i] += dy[i];
    }
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& x = g.value(a);
  const Tensor<T>& y = g.value(b);
  if (x.dims() != y.dims()) {
    throw ShapeError("mul", "all", dims_string(x.dims()) + " vs " + dims_string(y.dims()));
  }
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return g.record(std::move(out), {a, b}, [=](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    const Tensor<T>& xv = gr.value(a);
    const Tensor<T>& yv = gr.value(b);
    if (Tensor<T>* d = gr.grad_of(a))
      for (std::size_t i = 0; i < dy.size(); ++i) (*d)[i] += dy[i] * yv[i];
    if (Tensor<T>* d = gr.grad_of(b))
      for (std::size_t i = 0; i < dy.size(); ++i) (*d)[i] += dy[i] * xv[i];
  });
}

template <typename T>
Var scale(Graph<T>& g, Var input, T factor) {
  const Tensor<T>& x = g.value(input);
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return g.record(std::move(out), {input}, [=](Graph<T>& gr, Var self) {
    Tensor<T>* dx = gr.grad_of(input);
    if (!dx) return;
    const Tensor<T>& dy = gr.grad(self);
    for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i] * factor;
  });
}

template <typename T>
Var sum(Graph<T>& g, Var input) {
  const Tensor<T>& x = g.value(input);
  T s{0};
  for (T v : x.data()) s += v;
  return g.record(Tensor<T>({1}, std::vector<T>{s}), {input}, [=](Graph<T>& gr, Var self) {
    Tensor<T>* dx = gr.grad_of(input);
    if (!dx) return;
    const T d = gr.grad(self)[0];
    for (std::size_t i = 0; i < dx->size(); ++i) (*dx)[i] += d;
  });
}

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var loss_bce(Graph<T>& g, Var pred, const Tensor<T>& target) {
  const Tensor<T>& p = g.value(pred);
  if (p.size() != target.size()) {
    throw ShapeError("loss_bce", "all", dims_string(p.dims()) + " vs " + dims_string(target.dims()));
  }
  const T lo = static_cast<T>(kBceClamp), hi = T{1} - static_cast<T>(kBceClamp);
  const std::size_t count = p.size();
  T s{0};
  for (std::size_t i = 0; i < count; ++i) {
    const T q = std::clamp(p[i], lo, hi);
    s += target[i] * std::log(q) + (T{1} - target[i]) * std::log(T{1} - q);
  }
  const T loss = -s / static_cast<T>(count);
  return g.record(Tensor<T>({1}, std::vector<T>{loss}), {pred},
                  [=, t = target](Graph<T>& gr, Var self) {
    Tensor<T>* dp = gr.grad_of(pred);
    if (!dp) return;
    const T d = gr.grad(self)[0] / static_cast<T>(count);
    const Tensor<T>& pv = gr.value(pred);
    for (std::size_t i = 0; i < count; ++i) {
      if (pv[i] < lo || pv[i] > hi) continue;
      (*dp)[i] += -d * (t[i] / pv[i] - (T{1} - t[i]) / (T{1} - pv[i]));
    }
  });
}

/// Mean squared error over M >= 1 contributing entries.
template <typename T>
Var loss_l2(Graph<T>& g, Var pred, const Tensor<T>& target) {
  const Tensor<T>& p = g.value(pred);
  if (p.size() == 0 || target.size() == 0) {
    throw UsageError("loss_l2: empty selection (no contributing patches)");
  }
  if (p.size() != target.size()) {
    throw ShapeError("loss_l2", "all", dims_string(p.dims()) + " vs " + dims_string(target.dims()));
  }
  const std::size_t m = p.size();
  T s{0};
  for (std::size_t i = 0; i < m; ++i) s += (p[i] - target[i]) * (p[i] - target[i]);
  return g.record(Tensor<T>({1}, std::vector<T>{s / static_cast<T>(m)}), {pred},
                  [=, t = target](Graph<T>& gr, Var self) {
    Tensor<T>* dp = gr.grad_of(pred);
    if (!dp) return;
    const T d = gr.grad(self)[0] * T{2} / static_cast<T>(m);
    const Tensor<T>& pv = gr.value(pred);
    for (std::size_t i = 0; i < m; ++i) (*dp)[i] += d * (pv[i] - t[i]);
  });
}

}  // namespace sf
