#ifndef ATTNAD_PNG_HPP
#define ATTNAD_PNG_HPP

// Grayscale PNG input/output at 8 or 16 bits per pixel.

#include <png.h>

#include <cmath>
#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "attnad/image.hpp"

namespace attnad {

struct PngPixels {
  std::int64_t height = 0;
  std::int64_t width = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> levels;  // raw sample values, row-major
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw DataError("cannot open " + path.string());
  return f;
}

}  // namespace detail

/// Reads a PNG, converting palette/RGB/alpha variants to single-channel gray.
inline PngPixels read_png(const std::filesystem::path& path) {
  auto file = detail::open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError("not a PNG file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialisation failed");
  }
  PngPixels out;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  out.height = png_get_image_height(png, info);
  out.width = png_get_image_width(png, info);
  out.bit_depth = depth;
  const auto stride = png_get_rowbytes(png, info);
  buffer.resize(stride * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (std::int64_t y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  out.levels.resize(static_cast<std::size_t>(out.height * out.width));
  for (std::int64_t y = 0; y < out.height; ++y)
    for (std::int64_t x = 0; x < out.width; ++x) {
      const png_byte* row = rows[static_cast<std::size_t>(y)];
      std::uint16_t v;
      if (depth == 16) {
        std::uint16_t le;
        std::memcpy(&le, row + 2 * x, 2);
        v = le;
      } else {
        v = row[x];
      }
      out.levels[static_cast<std::size_t>(y * out.width + x)] = v;
    }
  return out;
}

inline void write_png(const std::filesystem::path& path, const PngPixels& px) {
  if (px.bit_depth != 1 && px.bit_depth != 8 && px.bit_depth != 16)
    throw ConfigError("bit_depth", "must be 1, 8 or 16");
  if (static_cast<std::int64_t>(px.levels.size()) != px.height * px.width)
    throw ShapeError("write_png: level count does not match size");
  auto file = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialisation failed");
  }
  const std::size_t bpp = px.bit_depth == 16 ? 2 : 1;
  std::vector<png_byte> buffer(bpp * px.levels.size());
  for (std::size_t i = 0; i < px.levels.size(); ++i) {
    if (bpp == 2) {
      buffer[2 * i] = static_cast<png_byte>(px.levels[i] >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(px.levels[i] & 0xff);
    } else {
      buffer[i] = static_cast<png_byte>(px.levels[i]);
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(px.height));
  for (std::int64_t y = 0; y < px.height; ++y)
    rows[static_cast<std::size_t>(y)] = buffer.data() + static_cast<std::size_t>(y * px.width) * bpp;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(px.width), static_cast<png_uint_32>(px.height), px.bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (px.bit_depth == 1) png_set_packing(png);  // one byte (0 or 1) per pixel in, packed bits out
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Intensities rescaled from [0, 2^depth - 1] to [0, 1].
inline Image read_image_png(const std::filesystem::path& path) {
  PngPixels px = read_png(path);
  const double top = px.bit_depth == 16 ? 65535.0 : 255.0;
  Image img(px.height, px.width);
  for (std::size_t i = 0; i < px.levels.size(); ++i) img.values[i] = px.levels[i] / top;
  return img;
}

/// Values are clamped to [0, 1] and rounded to the nearest level.
inline void write_image_png(const std::filesystem::path& path, const Grid& g, int bit_depth = 16) {
  const double top = bit_depth == 16 ? 65535.0 : 255.0;
  PngPixels px{g.height, g.width, bit_depth, std::vector<std::uint16_t>(g.values.size())};
  for (std::size_t i = 0; i < g.values.size(); ++i)
    px.levels[i] = static_cast<std::uint16_t>(std::lround(std::clamp(g.values[i], 0.0, 1.0) * top));
  write_png(path, px);
}

/// Binarized at half the full-scale level.
inline Mask read_mask_png(const std::filesystem::path& path) {
  PngPixels px = read_png(path);
  const double top = px.bit_depth == 16 ? 65535.0 : 255.0;
  Mask m(px.height, px.width);
  for (std::size_t i = 0; i < px.levels.size(); ++i) m.bits[i] = px.levels[i] / top >= 0.5 ? 1 : 0;
  return m;
}

/// 1-bit grayscale.
inline void write_mask_png(const std::filesystem::path& path, const Mask& m) {
  PngPixels px{m.height, m.width, 1, std::vector<std::uint16_t>(m.bits.size())};
  for (std::size_t i = 0; i < m.bits.size(); ++i) px.levels[i] = m.bits[i] ? 1 : 0;
  write_png(path, px);
}

}  // namespace attnad

#endif  // ATTNAD_PNG_HPP
