#ifndef ATTNAD_IMAGE_HPP
#define ATTNAD_IMAGE_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attnad/tensor.hpp"

namespace attnad {

/// Single-channel 2-D grid of doubles, row-major.
struct Grid {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::int64_t h, std::int64_t w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h * w), fill) {}
  Grid(std::int64_t h, std::int64_t w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
    if (static_cast<std::int64_t>(values.size()) != h * w) throw ShapeError("grid value count does not match size");
  }

  std::int64_t size() const noexcept { return height * width; }
  bool empty() const noexcept { return values.empty(); }
  double& operator()(std::int64_t y, std::int64_t x) { return values[static_cast<std::size_t>(y * width + x)]; }
  double operator()(std::int64_t y, std::int64_t x) const { return values[static_cast<std::size_t>(y * width + x)]; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Intensities in [0,1].
using Image = Grid;

/// Binary grid; `bits` holds 0 or 1.
struct Mask {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::int64_t h, std::int64_t w, std::uint8_t fill = 0)
      : height(h), width(w), bits(static_cast<std::size_t>(h * w), fill) {}

  std::int64_t size() const noexcept { return height * width; }
  std::uint8_t& operator()(std::int64_t y, std::int64_t x) { return bits[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t operator()(std::int64_t y, std::int64_t x) const { return bits[static_cast<std::size_t>(y * width + x)]; }
  std::int64_t count() const {
    std::int64_t c = 0;
    for (auto b : bits) c += b;
    return c;
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

inline void require_same_size(const Grid& a, const Grid& b, const char* where) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError(std::string(where) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
}

inline void require_same_size(const Grid& a, const Mask& b, const char* where) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError(std::string(where) + ": image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " vs mask " + std::to_string(b.height) + "x" + std::to_string(b.width));
}

inline void require_same_size(const Mask& a, const Mask& b, const char* where) {
  if (a.height != b.height || a.width != b.width) throw ShapeError(std::string(where) + ": mask sizes differ");
}

/// Stacks equally sized images into an (N, 1, H, W) tensor.
template <typename T>
Tensor<T> to_batch(std::span<const Image* const> images) {
  if (images.empty()) throw ShapeError("to_batch: no images");
  const auto h = images[0]->height, w = images[0]->width;
  Tensor<T> out({static_cast<std::int64_t>(images.size()), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_size(*images[0], *images[i], "to_batch");
    for (std::int64_t j = 0; j < h * w; ++j)
      out[static_cast<std::int64_t>(i) * h * w + j] = static_cast<T>(images[i]->values[static_cast<std::size_t>(j)]);
  }
  return out;
}

template <typename T>
Tensor<T> to_batch(const Image& image) {
  const Image* p = &image;
  return to_batch<T>(std::span<const Image* const>(&p, 1));
}

/// Extracts plane `n` of an (N, 1, H, W) tensor.
template <typename T>
Grid plane_of(const Tensor<T>& t, std::int64_t n) {
  const auto h = t.dim(2), w = t.dim(3);
  Grid g(h, w);
  for (std::int64_t j = 0; j < h * w; ++j) g.values[static_cast<std::size_t>(j)] = static_cast<double>(t[n * h * w + j]);
  return g;
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace attnad

#endif  // ATTNAD_IMAGE_HPP
