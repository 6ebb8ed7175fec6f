#ifndef ATTNAD_OPS_HPP
#define ATTNAD_OPS_HPP

// Differentiable element-wise, reduction, broadcast and dense operations.

#include <cmath>

#include <Eigen/Core>

#include "attnad/autograd.hpp"

namespace attnad {

namespace detail {

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F f) {
  Tensor<T> y(x.shape(), Uninitialized{});
  const T* xs = x.data();
  T* ys = y.data();
  for (std::int64_t i = 0; i < x.size(); ++i) ys[i] = f(xs[i]);
  return y;
}

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f, const char* where) {
  require_same_shape(a.shape(), b.shape(), where);
  Tensor<T> y(a.shape(), Uninitialized{});
  const T* as = a.data();
  const T* bs = b.data();
  T* ys = y.data();
  for (std::int64_t i = 0; i < a.size(); ++i) ys[i] = f(as[i], bs[i]);
  return y;
}

template <typename T>
T stable_sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return record<T>(detail::zip(a.value(), b.value(), std::plus<T>(), "add"), {a, b},
                   [](const Var<T>& g, const std::vector<bool>& need, std::vector<Var<T>>& out) {
                     if (need[0]) out[0] = g;
                     if (need[1]) out[1] = g;
                   });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, T c) {
  return record<T>(detail::map(x.value(), [c](T v) { return v * c; }), {x},
                   [c](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = mul_scalar(g, c);
                   });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  return mul_scalar(x, T(-1));
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return add(a, neg(b));
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return record<T>(detail::map(x.value(), [c](T v) { return v + c; }), {x},
                   [](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) { out[0] = g; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return record<T>(detail::zip(a.value(), b.value(), std::multiplies<T>(), "mul"), {a, b},
                   [a, b](const Var<T>& g, const std::vector<bool>& need, std::vector<Var<T>>& out) {
                     if (need[0]) out[0] = mul(g, b);
                     if (need[1]) out[1] = mul(g, a);
                   });
}

/// Multiplication by a tensor that is treated as a constant.
template <typename T>
Var<T> mul_const(const Var<T>& x, Tensor<T> c) {
  Tensor<T> y = detail::zip(x.value(), c, std::multiplies<T>(), "mul_const");
  return record<T>(std::move(y), {x},
                   [c = std::move(c)](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = mul_const(g, c);
                   });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return record<T>(detail::map(x.value(), [](T v) { return v > T(0) ? v : T(0); }), {x},
                   [x](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = mul_const(g, detail::map(x.value(), [](T v) { return v > T(0) ? T(1) : T(0); }));
                   });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return record<T>(detail::map(x.value(), [](T v) { return detail::stable_sigmoid(v); }), {x},
                   [x](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     Var<T> s = sigmoid(x);
                     out[0] = mul(g, mul(s, add_scalar(neg(s), T(1))));
                   });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return record<T>(detail::map(x.value(), [](T v) { return std::exp(v); }), {x},
                   [x](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = mul(g, exp(x));
                   });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return record<T>(detail::map(x.value(), [](T v) { return v * v; }), {x},
                   [x](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = mul(g, mul_scalar(x, T(2)));
                   });
}

template <typename T>
Var<T> reciprocal(const Var<T>& x) {
  return record<T>(detail::map(x.value(), [](T v) { return T(1) / v; }), {x},
                   [x](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = neg(mul(g, square(reciprocal(x))));
                   });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return mul(a, reciprocal(b));
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return record<T>(detail::map(x.value(), [](T v) { return std::log(v); }), {x},
                   [x](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = mul(g, reciprocal(x));
                   });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return record<T>(detail::map(x.value(), [lo, hi](T v) { return std::clamp(v, lo, hi); }), {x},
                   [x, lo, hi](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = mul_const(g, detail::map(x.value(), [lo, hi](T v) {
                                          return (v >= lo && v <= hi) ? T(1) : T(0);
                                        }));
                   });
}

// ---------------------------------------------------------------------------
// Shape

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Shape original = x.shape();
  return record<T>(x.value().reshaped(std::move(shape)), {x},
                   [original](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = reshape(g, original);
                   });
}

// ---------------------------------------------------------------------------
// Reductions and their broadcast adjoints

template <typename T>
Var<T> broadcast_scalar(const Var<T>& x, Shape shape);

/// Sum of all elements, shape {1}.
template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = T(0);
  for (T v : x.value().values()) acc += v;
  Shape shape = x.shape();
  return record<T>(Tensor<T>({1}, acc), {x},
                   [shape](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
                     out[0] = broadcast_scalar(g, shape);
                   });
}

template <typename T>
Var<T> broadcast_scalar(const Var<T>& x, Shape shape) {
  if (x.value().size() != 1) throw ShapeError("broadcast_scalar expects a single element");
  return record<T>(Tensor<T>(shape, x.value()[0]), {x},
                   [](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) { out[0] = sum(g); });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.value().size()));
}

/// Collapses all axes after the leading one: (N, ...) -> (N).
template <typename T>
Var<T> broadcast_per_sample(const Var<T>& x, Shape shape);

template <typename T>
Var<T> sum_per_sample(const Var<T>& x) {
  const std::int64_t n = x.dim(0);
  const std::int64_t inner = x.value().size() / n;
  Tensor<T> y({n});
  const T* xs = x.value().data();
  for (std::int64_t i = 0; i < n; ++i) {
    T acc = T(0);
    for (std::int64_t j = 0; j < inner; ++j) acc += xs[i * inner + j];
    y[i] = acc;
  }
  Shape shape = x.shape();
  return record<T>(std::move(y), {x}, [shape](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = broadcast_per_sample(g, shape);
  });
}

template <typename T>
Var<T> broadcast_per_sample(const Var<T>& x, Shape shape) {
  const std::int64_t n = shape.at(0);
  if (x.value().size() != n) throw ShapeError("broadcast_per_sample: leading dimension mismatch");
  const std::int64_t inner = numel(shape) / n;
  Tensor<T> y(shape, Uninitialized{});
  for (std::int64_t i = 0; i < n; ++i) std::fill_n(y.data() + i * inner, inner, x.value()[i]);
  return record<T>(std::move(y), {x}, [](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = sum_per_sample(g);
  });
}

template <typename T>
Var<T> mean_per_sample(const Var<T>& x) {
  return mul_scalar(sum_per_sample(x), T(x.dim(0)) / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> broadcast_spatial(const Var<T>& x, std::int64_t h, std::int64_t w);

/// (N, C, H, W) -> (N, C): sum over the spatial axes.
template <typename T>
Var<T> spatial_sum(const Var<T>& x) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({n, c});
  const T* xs = x.value().data();
  for (std::int64_t i = 0; i < n * c; ++i) {
    T acc = T(0);
    for (std::int64_t j = 0; j < h * w; ++j) acc += xs[i * h * w + j];
    y[i] = acc;
  }
  return record<T>(std::move(y), {x}, [h, w](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = broadcast_spatial(g, h, w);
  });
}

template <typename T>
Var<T> broadcast_spatial(const Var<T>& x, std::int64_t h, std::int64_t w) {
  const std::int64_t n = x.dim(0), c = x.dim(1);
  Tensor<T> y({n, c, h, w}, Uninitialized{});
  for (std::int64_t i = 0; i < n * c; ++i) std::fill_n(y.data() + i * h * w, h * w, x.value()[i]);
  return record<T>(std::move(y), {x}, [](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = spatial_sum(g);
  });
}

template <typename T>
Var<T> spatial_mean(const Var<T>& x) {
  return mul_scalar(spatial_sum(x), T(1) / static_cast<T>(x.dim(2) * x.dim(3)));
}

template <typename T>
Var<T> broadcast_channels(const Var<T>& x, std::int64_t c);

/// (N, C, H, W) -> (N, 1, H, W): sum over channels.
template <typename T>
Var<T> channel_sum(const Var<T>& x) {
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> y({n, 1, x.dim(2), x.dim(3)});
  const T* xs = x.value().data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < c; ++k)
      for (std::int64_t j = 0; j < hw; ++j) y[i * hw + j] += xs[(i * c + k) * hw + j];
  return record<T>(std::move(y), {x}, [c](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = broadcast_channels(g, c);
  });
}

template <typename T>
Var<T> broadcast_channels(const Var<T>& x, std::int64_t c) {
  const std::int64_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
  Tensor<T> y({n, c, x.dim(2), x.dim(3)}, Uninitialized{});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < c; ++k) std::copy_n(x.value().data() + i * hw, hw, y.data() + (i * c + k) * hw);
  return record<T>(std::move(y), {x}, [](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = channel_sum(g);
  });
}

template <typename T>
Var<T> broadcast_bias(const Var<T>& b, Shape shape);

/// Sums everything except axis 1: (N, C, ...) -> (C).
template <typename T>
Var<T> sum_except_channel(const Var<T>& x) {
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t inner = x.value().size() / (n * c);
  Tensor<T> y({c});
  const T* xs = x.value().data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < c; ++k) {
      T acc = T(0);
      for (std::int64_t j = 0; j < inner; ++j) acc += xs[(i * c + k) * inner + j];
      y[k] += acc;
    }
  Shape shape = x.shape();
  return record<T>(std::move(y), {x}, [shape](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = broadcast_bias(g, shape);
  });
}

/// (C) -> (N, C, ...), replicating along every axis except axis 1.
template <typename T>
Var<T> broadcast_bias(const Var<T>& b, Shape shape) {
  const std::int64_t n = shape.at(0), c = shape.at(1);
  if (b.value().size() != c) throw ShapeError("broadcast_bias: channel mismatch");
  const std::int64_t inner = numel(shape) / (n * c);
  Tensor<T> y(shape, Uninitialized{});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < c; ++k) std::fill_n(y.data() + (i * c + k) * inner, inner, b.value()[k]);
  return record<T>(std::move(y), {b}, [](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = sum_except_channel(g);
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  return add(x, broadcast_bias(b, x.shape()));
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// op(A) * op(B) for 2-D tensors, where op transposes when requested.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  using Map = Eigen::Map<const RowMatrix<T>>;
  Map am(a.value().data(), a.dim(0), a.dim(1));
  Map bm(b.value().data(), b.dim(0), b.dim(1));
  const std::int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::int64_t ka = trans_a ? a.dim(0) : a.dim(1);
  const std::int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb) throw ShapeError("matmul: inner dimensions " + std::to_string(ka) + " vs " + std::to_string(kb));
  Tensor<T> y({m, n});
  Eigen::Map<RowMatrix<T>> ym(y.data(), m, n);
  if (!trans_a && !trans_b) ym.noalias() = am * bm;
  else if (trans_a && !trans_b) ym.noalias() = am.transpose() * bm;
  else if (!trans_a && trans_b) ym.noalias() = am * bm.transpose();
  else ym.noalias() = am.transpose() * bm.transpose();
  return record<T>(std::move(y), {a, b},
                   [a, b, trans_a, trans_b](const Var<T>& g, const std::vector<bool>& need, std::vector<Var<T>>& out) {
                     // C = op(A) op(B); dA and dB follow from the four transpose cases.
                     if (need[0]) {
                       if (!trans_a) out[0] = matmul(g, b, false, !trans_b);
                       else out[0] = matmul(b, g, trans_b, true);
                     }
                     if (need[1]) {
                       if (!trans_b) out[1] = matmul(a, g, !trans_a, false);
                       else out[1] = matmul(g, a, true, trans_a);
                     }
                   });
}

/// y = x W^T + b with x (N, in), W (out, in), b (out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return add_bias(matmul(x, weight, false, true), bias);
}

}  // namespace attnad

#endif  // ATTNAD_OPS_HPP
