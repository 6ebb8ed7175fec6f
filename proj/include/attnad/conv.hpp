#ifndef ATTNAD_CONV_HPP
#define ATTNAD_CONV_HPP

// 2-D convolution and bilinear resampling.
//
// Convolution is a bilinear form B(x, g, W) = <g, conv(x, W)>. Its three
// partial derivatives (conv2d, conv2d_input_grad, conv2d_weight_grad) close
// under differentiation, which is what makes arbitrary-order gradients through
// the encoder possible. Bilinear resizing is linear and pairs with its adjoint
// in the same way.

#include <cmath>
#include <memory>

#include "attnad/ops.hpp"

namespace attnad {

struct ConvGeometry {
  std::int64_t stride = 1;
  std::int64_t pad = 0;

  std::int64_t out_extent(std::int64_t in, std::int64_t k) const { return (in + 2 * pad - k) / stride + 1; }
};

namespace detail {

// Output columns [lo, hi) whose input column ox*stride - pad + kx lies inside [0, w).
inline std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t w, std::int64_t wo, std::int64_t kx,
                                                         ConvGeometry geo) {
  std::int64_t lo = 0;
  while (lo < wo && lo * geo.stride - geo.pad + kx < 0) ++lo;
  std::int64_t hi = wo;
  while (hi > lo && (hi - 1) * geo.stride - geo.pad + kx >= w) --hi;
  return {lo, hi};
}

// cols[(c, ky, kx), (n - n0, oy, ox)] for samples [n0, n1).
template <typename T>
void im2col(const Tensor<T>& x, std::int64_t n0, std::int64_t n1, std::int64_t k, ConvGeometry geo, std::int64_t ho,
            std::int64_t wo, T* cols) {
  const std::int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t width = (n1 - n0) * ho * wo;
  const T* xs = x.data();
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((ci * k + ky) * k + kx) * width;
        const auto [lo, hi] = valid_range(w, wo, kx, geo);
        for (std::int64_t ni = n0; ni < n1; ++ni) {
          const T* plane = xs + (ni * c + ci) * h * w;
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy * geo.stride - geo.pad + ky;
            T* dst = row + ((ni - n0) * ho + oy) * wo;
            if (iy < 0 || iy >= h) {
              std::fill_n(dst, wo, T(0));
              continue;
            }
            std::fill_n(dst, lo, T(0));
            std::fill(dst + hi, dst + wo, T(0));
            const T* src = plane + iy * w - geo.pad + kx;
            if (geo.stride == 1) {
              std::copy(src + lo, src + hi, dst + lo);
            } else {
              for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * geo.stride];
            }
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::int64_t n0, std::int64_t n1, std::int64_t k, ConvGeometry geo, std::int64_t ho,
            std::int64_t wo, Tensor<T>& x) {
  const std::int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t width = (n1 - n0) * ho * wo;
  T* xs = x.data();
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((ci * k + ky) * k + kx) * width;
        const auto [lo, hi] = valid_range(w, wo, kx, geo);
        for (std::int64_t ni = n0; ni < n1; ++ni) {
          T* plane = xs + (ni * c + ci) * h * w;
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy * geo.stride - geo.pad + ky;
            if (iy < 0 || iy >= h) continue;
            const T* __restrict src = row + ((ni - n0) * ho + oy) * wo;
            T* __restrict dst = plane + iy * w - geo.pad + kx;
            if (geo.stride == 1) {
              for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
            } else {
              for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * geo.stride] += src[ox];
            }
          }
        }
      }
}

// Samples [n0, n1) of (N, C, HW) <-> (C, (n1 - n0) * HW)
template <typename T>
void gather_cn(const Tensor<T>& x, std::int64_t n0, std::int64_t n1, T* out) {
  const std::int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3), cnt = n1 - n0;
  for (std::int64_t ni = n0; ni < n1; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci)
      std::copy_n(x.data() + (ni * c + ci) * hw, hw, out + ci * cnt * hw + (ni - n0) * hw);
}

template <typename T>
void scatter_cn(const T* in, std::int64_t n0, std::int64_t n1, Tensor<T>& x) {
  const std::int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3), cnt = n1 - n0;
  for (std::int64_t ni = n0; ni < n1; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci)
      std::copy_n(in + ci * cnt * hw + (ni - n0) * hw, hw, x.data() + (ni * c + ci) * hw);
}

/// Per-thread scratch buffer that is grown but never zeroed.
template <typename T, int Slot>
T* scratch(std::int64_t n) {
  thread_local std::unique_ptr<T[]> buf;
  thread_local std::int64_t cap = 0;
  if (n > cap) {
    buf.reset(new T[static_cast<std::size_t>(n)]);
    cap = n;
  }
  return buf.get();
}

// Samples per im2col chunk, sized so one chunk spans roughly 4096 output pixels.
inline std::int64_t chunk_samples(std::int64_t n, std::int64_t ho, std::int64_t wo) {
  return std::clamp<std::int64_t>(4096 / std::max<std::int64_t>(1, ho * wo), 1, n);
}

template <typename T>
using ColMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstColMap = Eigen::Map<const RowMatrix<T>>;

}  // namespace detail

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& weight, ConvGeometry geo, Shape input_shape);
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, ConvGeometry geo, Shape weight_shape);

/// x (N, Cin, H, W), weight (Cout, Cin, k, k) -> (N, Cout, Ho, Wo). No bias.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, ConvGeometry geo) {
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  const std::int64_t ho = geo.out_extent(h, k), wo = geo.out_extent(w, k);
  const std::int64_t rows = cin * k * k, hw = ho * wo;
  const std::int64_t chunk = detail::chunk_samples(n, ho, wo);
  T* cols = detail::scratch<T, 0>(rows * chunk * hw);
  T* ycn = detail::scratch<T, 1>(cout * chunk * hw);
  detail::ConstColMap<T> wm(weight.value().data(), cout, rows);
  Tensor<T> y({n, cout, ho, wo}, Uninitialized{});
  for (std::int64_t n0 = 0; n0 < n; n0 += chunk) {
    const std::int64_t n1 = std::min(n, n0 + chunk), width = (n1 - n0) * hw;
    detail::im2col(x.value(), n0, n1, k, geo, ho, wo, cols);
    detail::ConstColMap<T> cm(cols, rows, width);
    if (n1 - n0 == 1) {
      detail::ColMap<T>(y.data() + n0 * cout * hw, cout, width).noalias() = wm * cm;
    } else {
      detail::ColMap<T>(ycn, cout, width).noalias() = wm * cm;
      detail::scatter_cn(ycn, n0, n1, y);
    }
  }
  Shape xs = x.shape(), ws = weight.shape();
  return record<T>(std::move(y), {x, weight},
                   [x, weight, geo, xs, ws](const Var<T>& g, const std::vector<bool>& need, std::vector<Var<T>>& out) {
                     if (need[0]) out[0] = conv2d_input_grad(g, weight, geo, xs);
                     if (need[1]) out[1] = conv2d_weight_grad(x, g, geo, ws);
                   });
}

/// Adjoint of conv2d in its input (transposed convolution).
template <typename T>
Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& weight, ConvGeometry geo, Shape input_shape) {
  const std::int64_t n = g.dim(0), cout = g.dim(1), ho = g.dim(2), wo = g.dim(3);
  const std::int64_t cin = weight.dim(1), k = weight.dim(2);
  const std::int64_t rows = cin * k * k, hw = ho * wo;
  const std::int64_t chunk = detail::chunk_samples(n, ho, wo);
  T* cols = detail::scratch<T, 0>(rows * chunk * hw);
  T* gcn = detail::scratch<T, 1>(cout * chunk * hw);
  detail::ConstColMap<T> wm(weight.value().data(), cout, rows);
  Tensor<T> x(input_shape);
  for (std::int64_t n0 = 0; n0 < n; n0 += chunk) {
    const std::int64_t n1 = std::min(n, n0 + chunk), width = (n1 - n0) * hw;
    const T* gsrc = g.value().data() + n0 * cout * hw;
    if (n1 - n0 > 1) {
      detail::gather_cn(g.value(), n0, n1, gcn);
      gsrc = gcn;
    }
    detail::ColMap<T>(cols, rows, width).noalias() = wm.transpose() * detail::ConstColMap<T>(gsrc, cout, width);
    detail::col2im(cols, n0, n1, k, geo, ho, wo, x);
  }
  return record<T>(std::move(x), {g, weight},
                   [g, weight, geo](const Var<T>& gx, const std::vector<bool>& need, std::vector<Var<T>>& out) {
                     if (need[0]) out[0] = conv2d(gx, weight, geo);
                     if (need[1]) out[1] = conv2d_weight_grad(gx, g, geo, weight.shape());
                   });
}

/// Adjoint of conv2d in its weight.
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, ConvGeometry geo, Shape weight_shape) {
  const std::int64_t n = x.dim(0), cin = x.dim(1);
  const std::int64_t cout = weight_shape.at(0), k = weight_shape.at(2);
  const std::int64_t ho = g.dim(2), wo = g.dim(3);
  const std::int64_t rows = cin * k * k, hw = ho * wo;
  const std::int64_t chunk = detail::chunk_samples(n, ho, wo);
  T* cols = detail::scratch<T, 0>(rows * chunk * hw);
  T* gcn = detail::scratch<T, 1>(cout * chunk * hw);
  Tensor<T> dw(weight_shape);
  detail::ColMap<T> dm(dw.data(), cout, rows);
  for (std::int64_t n0 = 0; n0 < n; n0 += chunk) {
    const std::int64_t n1 = std::min(n, n0 + chunk), width = (n1 - n0) * hw;
    detail::im2col(x.value(), n0, n1, k, geo, ho, wo, cols);
    const T* gsrc = g.value().data() + n0 * cout * hw;
    if (n1 - n0 > 1) {
      detail::gather_cn(g.value(), n0, n1, gcn);
      gsrc = gcn;
    }
    dm.noalias() += detail::ConstColMap<T>(gsrc, cout, width) * detail::ConstColMap<T>(cols, rows, width).transpose();
  }
  Shape xs = x.shape();
  return record<T>(std::move(dw), {x, g},
                   [x, g, geo, xs](const Var<T>& gw, const std::vector<bool>& need, std::vector<Var<T>>& out) {
                     if (need[0]) out[0] = conv2d_input_grad(g, gw, geo, xs);
                     if (need[1]) out[1] = conv2d(x, gw, geo);
                   });
}

// ---------------------------------------------------------------------------
// Bilinear resampling (half-pixel centres, edge clamped)

namespace detail {

struct Taps {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> frac;
};

inline Taps bilinear_taps(std::int64_t in, std::int64_t out) {
  Taps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = std::max(0.0, (static_cast<double>(i) + 0.5) * scale - 0.5);
    auto lo = std::min(static_cast<std::int64_t>(std::floor(src)), in - 1);
    t.lo[static_cast<std::size_t>(i)] = lo;
    t.hi[static_cast<std::size_t>(i)] = std::min(lo + 1, in - 1);
    t.frac[static_cast<std::size_t>(i)] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace detail

template <typename T>
Var<T> resize_bilinear_adjoint(const Var<T>& g, std::int64_t in_h, std::int64_t in_w);

/// (N, C, H, W) -> (N, C, out_h, out_w).
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, std::int64_t out_h, std::int64_t out_w) {
  const std::int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == out_h && w == out_w) return x;
  const auto ty = detail::bilinear_taps(h, out_h);
  const auto tx = detail::bilinear_taps(w, out_w);
  Tensor<T> y({x.dim(0), x.dim(1), out_h, out_w}, Uninitialized{});
  const T* xs = x.value().data();
  T* ys = y.data();
  for (std::int64_t p = 0; p < nc; ++p) {
    const T* plane = xs + p * h * w;
    T* dst = ys + p * out_h * out_w;
    for (std::int64_t i = 0; i < out_h; ++i) {
      const auto fy = static_cast<T>(ty.frac[i]);
      const T* r0 = plane + ty.lo[i] * w;
      const T* r1 = plane + ty.hi[i] * w;
      for (std::int64_t j = 0; j < out_w; ++j) {
        const auto fx = static_cast<T>(tx.frac[j]);
        const T top = r0[tx.lo[j]] + fx * (r0[tx.hi[j]] - r0[tx.lo[j]]);
        const T bot = r1[tx.lo[j]] + fx * (r1[tx.hi[j]] - r1[tx.lo[j]]);
        dst[i * out_w + j] = top + fy * (bot - top);
      }
    }
  }
  return record<T>(std::move(y), {x}, [h, w](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = resize_bilinear_adjoint(g, h, w);
  });
}

template <typename T>
Var<T> resize_bilinear_adjoint(const Var<T>& g, std::int64_t in_h, std::int64_t in_w) {
  const std::int64_t nc = g.dim(0) * g.dim(1), out_h = g.dim(2), out_w = g.dim(3);
  const auto ty = detail::bilinear_taps(in_h, out_h);
  const auto tx = detail::bilinear_taps(in_w, out_w);
  Tensor<T> x({g.dim(0), g.dim(1), in_h, in_w});
  const T* gs = g.value().data();
  T* xs = x.data();
  for (std::int64_t p = 0; p < nc; ++p) {
    const T* src = gs + p * out_h * out_w;
    T* plane = xs + p * in_h * in_w;
    for (std::int64_t i = 0; i < out_h; ++i) {
      const auto fy = static_cast<T>(ty.frac[i]);
      T* r0 = plane + ty.lo[i] * in_w;
      T* r1 = plane + ty.hi[i] * in_w;
      for (std::int64_t j = 0; j < out_w; ++j) {
        const auto fx = static_cast<T>(tx.frac[j]);
        const T v = src[i * out_w + j];
        r0[tx.lo[j]] += (T(1) - fy) * (T(1) - fx) * v;
        r0[tx.hi[j]] += (T(1) - fy) * fx * v;
        r1[tx.lo[j]] += fy * (T(1) - fx) * v;
        r1[tx.hi[j]] += fy * fx * v;
      }
    }
  }
  return record<T>(std::move(x), {g},
                   [out_h, out_w](const Var<T>& gx, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = resize_bilinear(gx, out_h, out_w);
                   });
}

}  // namespace attnad

#endif  // ATTNAD_CONV_HPP
