#ifndef ATTNAD_TESTS_GRAD_CHECK_HPP
#define ATTNAD_TESTS_GRAD_CHECK_HPP

// Central finite-difference oracle for gradient tests.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "attnad/autograd.hpp"

namespace attnad::testing {

using Fn = std::function<Var<double>(const std::vector<Var<double>>&)>;

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

/// d fn / d inputs[which][index] by central differences.
inline double finite_difference(const Fn& fn, const std::vector<Tensor<double>>& values, std::size_t which,
                                std::int64_t index, double eps) {
  auto eval = [&](double delta) {
    std::vector<Var<double>> vars;
    for (std::size_t i = 0; i < values.size(); ++i) {
      Tensor<double> t = values[i];
      if (i == which) t[index] += delta;
      vars.push_back(Var<double>::parameter(std::move(t)));
    }
    return fn(vars).item();
  };
  return (eval(eps) - eval(-eps)) / (2.0 * eps);
}

/// Copy of a tensor's values, for equality assertions.
template <typename T>
std::vector<T> values_of(const Tensor<T>& t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

/// Compares the autograd gradient of a scalar function with finite
/// differences at every element of every input (or `max_per_input` sampled ones).
inline GradCheckResult check_gradient(const Fn& fn, const std::vector<Tensor<double>>& values, double eps = 1e-5,
                                      std::int64_t max_per_input = -1, std::uint64_t seed = 7,
                                      double rel_floor = 1e-3) {
  std::vector<Var<double>> vars;
  for (const auto& v : values) vars.push_back(Var<double>::parameter(v));
  Var<double> out = fn(vars);
  auto grads = grad(out, vars, false);
  GradCheckResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::vector<std::int64_t> idx;
    const std::int64_t n = values[i].size();
    if (max_per_input < 0 || n <= max_per_input) {
      for (std::int64_t j = 0; j < n; ++j) idx.push_back(j);
    } else {
      std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
      for (std::int64_t j = 0; j < max_per_input; ++j) idx.push_back(pick(rng));
    }
    for (auto j : idx) {
      const double analytic = grads[i].value()[j];
      const double numeric = finite_difference(fn, values, i, j, eps);
      const double abs_err = std::abs(analytic - numeric);
      const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), rel_floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      r.max_rel_error = std::max(r.max_rel_error, rel);
    }
  }
  return r;
}

}  // namespace attnad::testing

#endif  // ATTNAD_TESTS_GRAD_CHECK_HPP
