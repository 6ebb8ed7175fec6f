#ifndef ATTNAD_CONSTRAINTS_HPP
#define ATTNAD_CONSTRAINTS_HPP

// Size constraint on attention maps and the functionals that enforce it:
// the extended log-barrier, one-sided L2 penalties (image- and pixel-level)
// and the pixel-wise L1 expansion loss.
//
// Scalar overloads act on a single map given as a span of values in [0,1].
// The Var overloads act on a batch (N, 1, H, W) and return one loss per image.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "attnad/ops.hpp"

namespace attnad {

enum class ConstraintKind { log_barrier, l2_image, l2_pixel, l1_expansion };

inline std::string_view to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::log_barrier: return "log_barrier";
    case ConstraintKind::l2_image: return "l2_image";
    case ConstraintKind::l2_pixel: return "l2_pixel";
    case ConstraintKind::l1_expansion: return "l1_expansion";
  }
  return "?";
}

inline std::optional<ConstraintKind> constraint_kind_from(std::string_view s) {
  for (auto k : {ConstraintKind::log_barrier, ConstraintKind::l2_image, ConstraintKind::l2_pixel,
                 ConstraintKind::l1_expansion})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct ConstraintConfig {
  double p = 0.2;        // size-proportion margin
  double t = 20.0;       // barrier sharpness
  double lambda = 10.0;  // regularizer weight
  ConstraintKind kind = ConstraintKind::log_barrier;

  void validate() const {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("train.constraint.p", "must lie in [0, 1)");
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("train.constraint.t", "must be > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train.constraint.lambda", "must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Scalar functionals

inline void require_nonempty(std::span<const double> a, const char* where) {
  if (a.empty()) throw DomainError(std::string(where) + ": empty attention map");
}

inline double mean_of(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v;
  return s / static_cast<double>(a.size());
}

/// f_c(a) = (1 - mean(a)) - p. Non-positive iff the map covers at least 1 - p.
inline double size_constraint(std::span<const double> a, double p) {
  require_nonempty(a, "size_constraint");
  return (1.0 - mean_of(a)) - p;
}

/// Extended log-barrier: -log(-z)/t for z <= -1/t^2, linear continuation beyond.
inline double extended_log_barrier(double z, double t) {
  const double breakpoint = -1.0 / (t * t);
  if (z <= breakpoint) return -std::log(-z) / t;
  return t * z - std::log(1.0 / (t * t)) / t + 1.0 / t;
}

inline double extended_log_barrier_derivative(double z, double t) {
  if (z <= -1.0 / (t * t)) return -1.0 / (t * z);
  return t;
}

inline double extended_log_barrier_second_derivative(double z, double t) {
  if (z <= -1.0 / (t * t)) return 1.0 / (t * z * z);
  return 0.0;
}

/// Extended log-barrier of the size constraint. `cfg.kind` must be log_barrier.
inline double barrier_size_loss(std::span<const double> a, const ConstraintConfig& cfg) {
  if (cfg.kind != ConstraintKind::log_barrier) throw ConfigError("train.constraint.kind", "barrier_size_loss requires log_barrier");
  return extended_log_barrier(size_constraint(a, cfg.p), cfg.t);
}

inline double l2_penalty_image(std::span<const double> a, double p) {
  const double v = std::max(0.0, size_constraint(a, p));
  return v * v;
}

inline double l2_penalty_pixel(std::span<const double> a, double p) {
  require_nonempty(a, "l2_penalty_pixel");
  double s = 0.0;
  for (double v : a) {
    const double r = std::max(0.0, (1.0 - v) - p);
    s += r * r;
  }
  return s / static_cast<double>(a.size());
}

inline double l1_expansion_loss(std::span<const double> a) {
  require_nonempty(a, "l1_expansion_loss");
  return 1.0 - mean_of(a);
}

/// Dispatches on `cfg.kind`; returns the unweighted per-image regularizer.
inline double size_regularizer(std::span<const double> a, const ConstraintConfig& cfg) {
  switch (cfg.kind) {
    case ConstraintKind::log_barrier: return barrier_size_loss(a, cfg);
    case ConstraintKind::l2_image: return l2_penalty_image(a, cfg.p);
    case ConstraintKind::l2_pixel: return l2_penalty_pixel(a, cfg.p);
    case ConstraintKind::l1_expansion: return l1_expansion_loss(a);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Differentiable batch versions. Input (N, ...), output (N).

template <typename T>
Var<T> extended_log_barrier_derivative(const Var<T>& z, double t);

template <typename T>
Var<T> extended_log_barrier(const Var<T>& z, double t) {
  Tensor<T> y = detail::map(z.value(), [t](T v) { return static_cast<T>(extended_log_barrier(double(v), t)); });
  return record<T>(std::move(y), {z}, [z, t](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = mul(g, extended_log_barrier_derivative(z, t));
  });
}

template <typename T>
Var<T> extended_log_barrier_derivative(const Var<T>& z, double t) {
  Tensor<T> y =
      detail::map(z.value(), [t](T v) { return static_cast<T>(extended_log_barrier_derivative(double(v), t)); });
  return record<T>(std::move(y), {z}, [z, t](const Var<T>& g, const std::vector<bool>&, std::vector<Var<T>>& out) {
    out[0] = mul_const(g, detail::map(z.value(), [t](T v) {
                         return static_cast<T>(extended_log_barrier_second_derivative(double(v), t));
                       }));
  });
}

template <typename T>
Var<T> size_constraint(const Var<T>& a, double p) {
  if (a.value().empty()) throw DomainError("size_constraint: empty attention map");
  return add_scalar(neg(mean_per_sample(a)), static_cast<T>(1.0 - p));
}

template <typename T>
Var<T> barrier_size_loss(const Var<T>& a, const ConstraintConfig& cfg) {
  return extended_log_barrier(size_constraint(a, cfg.p), cfg.t);
}

template <typename T>
Var<T> l2_penalty_image(const Var<T>& a, double p) {
  return square(relu(size_constraint(a, p)));
}

template <typename T>
Var<T> l2_penalty_pixel(const Var<T>& a, double p) {
  if (a.value().empty()) throw DomainError("l2_penalty_pixel: empty attention map");
  return mean_per_sample(square(relu(add_scalar(neg(a), static_cast<T>(1.0 - p)))));
}

template <typename T>
Var<T> l1_expansion_loss(const Var<T>& a) {
  if (a.value().empty()) throw DomainError("l1_expansion_loss: empty attention map");
  return add_scalar(neg(mean_per_sample(a)), T(1));
}

template <typename T>
Var<T> size_regularizer(const Var<T>& a, const ConstraintConfig& cfg) {
  switch (cfg.kind) {
    case ConstraintKind::log_barrier: return barrier_size_loss(a, cfg);
    case ConstraintKind::l2_image: return l2_penalty_image(a, cfg.p);
    case ConstraintKind::l2_pixel: return l2_penalty_pixel(a, cfg.p);
    case ConstraintKind::l1_expansion: return l1_expansion_loss(a);
  }
  throw ConfigError("train.constraint.kind", "unknown kind");
}

}  // namespace attnad

#endif  // ATTNAD_CONSTRAINTS_HPP
