#ifndef ATTNAD_DATA_HPP
#define ATTNAD_DATA_HPP

// Samples, the synthetic anomaly benchmark, manifest ingestion/export,
// the small-anomaly filter and disk erosion.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "attnad/png.hpp"

namespace attnad {

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> split_from(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct Sample {
  Image image;
  std::optional<Mask> anomaly_mask;
  std::string scan_id;
  Split split = Split::train;

  friend bool operator==(const Sample&, const Sample&) = default;
};

using Dataset = std::vector<Sample>;

struct SynthConfig {
  std::int64_t n_train_scans = 20;
  std::int64_t n_val_scans = 2;
  std::int64_t n_test_scans = 4;
  std::int64_t slices_per_scan = 10;
  std::int64_t image_size = 64;
  std::int64_t blobs_min = 1;
  std::int64_t blobs_max = 3;
  double radius_min = 3.0;  // ellipse semi-axes, pixels
  double radius_max = 8.0;
  double shift_min = 0.2;  // added intensity inside a blob
  double shift_max = 0.35;
  double smoothness = 3.0;  // Gaussian length-scale of the background field, pixels
  double structure_contrast = 0.3;  // peak brightness of thin curvilinear normal structures
  double structure_scale = 4.0;     // length-scale of the field whose zero set draws them, pixels
  double structure_width = 0.15;    // half-width of the structures in units of that field's std
  double anatomy_fraction = 0.8;  // disk diameter over image size
  std::uint64_t seed = 0;

  /// Smallest anatomy radius any scan can draw.
  double min_anatomy_radius() const { return 0.5 * anatomy_fraction * static_cast<double>(image_size) * 0.9; }

  void validate() const {
    if (n_train_scans < 1) throw ConfigError("data.synth.n_train_scans", "must be >= 1");
    if (n_val_scans < 0) throw ConfigError("data.synth.n_val_scans", "must be >= 0");
    if (n_test_scans < 1) throw ConfigError("data.synth.n_test_scans", "must be >= 1");
    if (slices_per_scan < 1) throw ConfigError("data.synth.slices_per_scan", "must be >= 1");
    if (image_size < 8) throw ConfigError("data.synth.image_size", "must be >= 8");
    if (blobs_min < 1 || blobs_max < blobs_min) throw ConfigError("data.synth.blobs_min", "need 1 <= blobs_min <= blobs_max");
    if (!(radius_min >= 1.0)) throw ConfigError("data.synth.radius_min", "radii must be >= 1 px");
    if (!(radius_max >= radius_min)) throw ConfigError("data.synth.radius_max", "must be >= radius_min");
    if (!(shift_min >= 0.0 && shift_max >= shift_min && shift_max <= 1.0))
      throw ConfigError("data.synth.shift_max", "need 0 <= shift_min <= shift_max <= 1");
    if (!(smoothness > 0.0)) throw ConfigError("data.synth.smoothness", "must be > 0");
    if (!(structure_contrast >= 0.0 && structure_contrast <= 1.0))
      throw ConfigError("data.synth.structure_contrast", "must lie in [0, 1]");
    if (!(structure_scale > 0.0)) throw ConfigError("data.synth.structure_scale", "must be > 0");
    if (!(structure_width > 0.0)) throw ConfigError("data.synth.structure_width", "must be > 0");
    if (!(anatomy_fraction > 0.0 && anatomy_fraction <= 1.0))
      throw ConfigError("data.synth.anatomy_fraction", "must lie in (0, 1]");
    if (radius_max + 2.0 > min_anatomy_radius())
      throw ConfigError("data.synth.radius_max", "blob does not fit inside the anatomy disk");
  }
};

/// Intensity above which a pixel belongs to the anatomy (brain) region.
inline constexpr double kBackgroundLevel = 0.01;

inline Mask brain_mask(const Image& x, double level = kBackgroundLevel) {
  Mask m(x.height, x.width);
  for (std::size_t i = 0; i < x.values.size(); ++i) m.bits[i] = x.values[i] > level ? 1 : 0;
  return m;
}

/// Erosion by the disk {dx^2 + dy^2 <= r^2}; pixels outside the frame count as unset.
inline Mask erode_mask(const Mask& m, std::int64_t radius) {
  if (radius < 0) throw DomainError("erode_mask: negative radius");
  if (radius == 0) return m;
  std::vector<std::pair<std::int64_t, std::int64_t>> offsets;
  for (std::int64_t dy = -radius; dy <= radius; ++dy)
    for (std::int64_t dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dy, dx);
  Mask out(m.height, m.width);
  for (std::int64_t y = 0; y < m.height; ++y)
    for (std::int64_t x = 0; x < m.width; ++x) {
      if (!m(y, x)) continue;
      bool keep = true;
      for (auto [dy, dx] : offsets) {
        const auto yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width || !m(yy, xx)) {
          keep = false;
          break;
        }
      }
      out(y, x) = keep ? 1 : 0;
    }
  return out;
}

/// Erosion radius for residual baselines: 3 px at 224 scale, at least 1.
inline std::int64_t default_erosion_radius(std::int64_t image_size) {
  return std::max<std::int64_t>(1, std::llround(3.0 * static_cast<double>(image_size) / 224.0));
}

inline double anomaly_fraction(const Sample& s) {
  if (!s.anomaly_mask || s.anomaly_mask->size() == 0) return 0.0;
  return static_cast<double>(s.anomaly_mask->count()) / static_cast<double>(s.anomaly_mask->size());
}

/// Drops val/test samples whose anomaly fraction is below `min_fraction`; train samples pass through.
inline Dataset filter_small_anomalies(const Dataset& samples, double min_fraction = 1e-4) {
  Dataset out;
  for (const auto& s : samples)
    if (s.split == Split::train || anomaly_fraction(s) >= min_fraction) out.push_back(s);
  return out;
}

inline Dataset select_split(const Dataset& samples, Split split) {
  Dataset out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(s);
  return out;
}

inline std::vector<Image> images_of(const Dataset& samples) {
  std::vector<Image> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

namespace detail {

inline std::mt19937_64 sample_rng(std::uint64_t seed, Split split, std::int64_t scan, std::int64_t slice,
                                  std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(scan),
                    static_cast<std::uint32_t>(slice), stream};
  return std::mt19937_64(seq);
}

/// Separable Gaussian blur with mirrored borders.
inline std::vector<double> gaussian_blur(const std::vector<double>& in, std::int64_t n, double sigma) {
  const auto r = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (std::int64_t i = -r; i <= r; ++i) total += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  auto reflect = [n](std::int64_t i) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  std::vector<double> tmp(in.size()), out(in.size());
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (std::int64_t i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * in[static_cast<std::size_t>(y * n + reflect(x + i))];
      tmp[static_cast<std::size_t>(y * n + x)] = acc;
    }
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (std::int64_t i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(reflect(y + i) * n + x)];
      out[static_cast<std::size_t>(y * n + x)] = acc;
    }
  return out;
}

struct Anatomy {
  double cy, cx, radius;
};

inline double quantize16(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0; }

inline Sample synth_sample(const SynthConfig& cfg, Split split, std::int64_t scan, std::int64_t slice,
                           const Anatomy& scan_anatomy) {
  const std::int64_t n = cfg.image_size;
  auto rng = sample_rng(cfg.seed, split, scan, slice, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Slices further from the middle of the scan have a slightly smaller cross-section.
  const double mid = 0.5 * static_cast<double>(cfg.slices_per_scan - 1);
  const double rel = cfg.slices_per_scan > 1 ? (static_cast<double>(slice) - mid) / (mid + 1.0) : 0.0;
  Anatomy a = scan_anatomy;
  a.radius *= std::sqrt(1.0 - 0.15 * rel * rel);

  auto standardized_field = [&](double scale) {
    std::vector<double> noise(static_cast<std::size_t>(n * n));
    for (auto& v : noise) v = normal(rng);
    std::vector<double> f = gaussian_blur(noise, n, scale);
    double mean = 0.0, sq = 0.0;
    for (double v : f) mean += v;
    mean /= static_cast<double>(f.size());
    for (double v : f) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(f.size())) + 1e-12;
    for (auto& v : f) v = (v - mean) / sd;
    return f;
  };
  const std::vector<double> field = standardized_field(cfg.smoothness);
  // Thin bright ridges along the zero set of a second field.
  const std::vector<double> ridges = standardized_field(cfg.structure_scale);

  Sample s;
  s.split = split;
  s.scan_id = std::string(to_string(split)) + "-" + std::to_string(scan);
  s.image = Image(n, n);
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - a.cy, dx = static_cast<double>(x) + 0.5 - a.cx;
      const double rr = std::sqrt(dy * dy + dx * dx) / a.radius;
      if (rr > 1.0) continue;
      // Textured tissue with a darker rim and thin hyperintense structures.
      const auto i = static_cast<std::size_t>(y * n + x);
      const double ridge = ridges[i] / cfg.structure_width;
      const double tissue = 0.42 + 0.09 * field[i] - 0.08 * rr * rr + cfg.structure_contrast * std::exp(-ridge * ridge);
      s.image(y, x) = std::clamp(tissue, 0.05, 0.95);
    }

  if (split != Split::train) {
    Mask mask(n, n);
    std::uniform_int_distribution<std::int64_t> count(cfg.blobs_min, cfg.blobs_max);
    const std::int64_t blobs = count(rng);
    for (std::int64_t b = 0; b < blobs; ++b) {
      const double ra = cfg.radius_min + unit(rng) * (cfg.radius_max - cfg.radius_min);
      const double rb = cfg.radius_min + unit(rng) * (cfg.radius_max - cfg.radius_min);
      const double theta = unit(rng) * std::numbers::pi;
      const double shift = cfg.shift_min + unit(rng) * (cfg.shift_max - cfg.shift_min);
      // Centre uniformly inside the disk that keeps the whole ellipse in the anatomy.
      const double room = a.radius - std::max(ra, rb) - 1.0;
      const double rho = room * std::sqrt(unit(rng)), phi = 2.0 * std::numbers::pi * unit(rng);
      const double by = a.cy + rho * std::sin(phi), bx = a.cx + rho * std::cos(phi);
      const double c = std::cos(theta), sn = std::sin(theta);
      for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x < n; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - by, dx = static_cast<double>(x) + 0.5 - bx;
          const double u = (c * dx + sn * dy) / ra, v = (-sn * dx + c * dy) / rb;
          if (u * u + v * v > 1.0) continue;
          if (!mask(y, x)) s.image(y, x) += shift;
          mask(y, x) = 1;
        }
    }
    s.anomaly_mask = std::move(mask);
  }
  for (auto& v : s.image.values) v = quantize16(v);
  return s;
}

}  // namespace detail

/// Deterministic benchmark: smoothed random fields inside a disk on a black
/// background; val/test slices carry 1..3 hyperintense ellipses with exact masks.
/// Intensities are quantized to 16-bit levels so that PNG export is lossless.
inline Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Dataset out;
  const double n = static_cast<double>(cfg.image_size);
  for (Split split : {Split::train, Split::val, Split::test}) {
    const std::int64_t scans =
        split == Split::train ? cfg.n_train_scans : split == Split::val ? cfg.n_val_scans : cfg.n_test_scans;
    for (std::int64_t scan = 0; scan < scans; ++scan) {
      auto rng = detail::sample_rng(cfg.seed, split, scan, -1, 2);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      detail::Anatomy a;
      a.radius = 0.5 * cfg.anatomy_fraction * n * (0.9 + 0.1 * unit(rng));
      a.cy = 0.5 * n + (unit(rng) - 0.5) * 0.05 * n;
      a.cx = 0.5 * n + (unit(rng) - 0.5) * 0.05 * n;
      for (std::int64_t slice = 0; slice < cfg.slices_per_scan; ++slice)
        out.push_back(detail::synth_sample(cfg, split, scan, slice, a));
    }
  }
  return out;
}

/// Bounds on the expected anomaly area fraction per image implied by `cfg`.
inline std::pair<double, double> anomaly_fraction_bounds(const SynthConfig& cfg) {
  const double area = static_cast<double>(cfg.image_size * cfg.image_size);
  const double lo = std::numbers::pi * cfg.radius_min * cfg.radius_min / area;
  const double hi = static_cast<double>(cfg.blobs_max) * std::numbers::pi * cfg.radius_max * cfg.radius_max / area;
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// Manifest

inline constexpr const char* kManifestFormat = "attnad-manifest";
inline constexpr int kManifestVersion = 1;

/// Loads a manifest: {"format", "version", "samples": [{image_path, mask_path|null, scan_id, split}]}.
/// Relative paths resolve against the manifest's directory.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid manifest JSON " + manifest_path.string() + ": " + e.what());
  }
  const auto where = manifest_path.string();
  if (!doc.is_object() || doc.value("format", "") != kManifestFormat)
    throw DataError(where + ": missing \"format\": \"" + kManifestFormat + "\"");
  if (doc.value("version", 0) != kManifestVersion)
    throw DataError(where + ": unsupported manifest version");
  if (!doc.contains("samples") || !doc["samples"].is_array()) throw DataError(where + ": \"samples\" must be an array");
  if (doc["samples"].empty()) throw DataError(where + ": manifest lists no samples");

  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  Dataset out;
  for (const auto& e : doc["samples"]) {
    if (!e.is_object() || !e.contains("image_path") || !e.contains("scan_id") || !e.contains("split"))
      throw DataError(where + ": sample needs image_path, scan_id and split");
    Sample s;
    const auto image_path = resolve(e["image_path"].get<std::string>());
    if (!std::filesystem::exists(image_path)) throw DataError("missing image file " + image_path.string());
    s.image = read_image_png(image_path);
    s.scan_id = e["scan_id"].get<std::string>();
    auto split = split_from(e["split"].get<std::string>());
    if (!split) throw DataError(where + ": unknown split \"" + e["split"].get<std::string>() + "\" for " + image_path.string());
    s.split = *split;
    if (e.contains("mask_path") && !e["mask_path"].is_null()) {
      const auto mask_path = resolve(e["mask_path"].get<std::string>());
      if (!std::filesystem::exists(mask_path)) throw DataError("missing mask file " + mask_path.string());
      Mask m = read_mask_png(mask_path);
      if (m.height != s.image.height || m.width != s.image.width)
        throw DataError("mask size does not match image: " + mask_path.string());
      s.anomaly_mask = std::move(m);
    }
    out.push_back(std::move(s));
  }
  return out;
}

/// Writes images (16-bit), masks (1-bit) and `manifest.json` under `dir`; returns the manifest path.
inline std::filesystem::path export_dataset(const Dataset& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  nlohmann::json list = nlohmann::json::array();
  std::map<std::string, int> counters;
  for (const auto& s : samples) {
    const std::string stem = s.scan_id + "_" + std::to_string(counters[s.scan_id]++);
    const std::string image_rel = "images/" + stem + ".png";
    write_image_png(dir / image_rel, s.image, 16);
    nlohmann::json e{{"image_path", image_rel}, {"scan_id", s.scan_id}, {"split", to_string(s.split)}};
    if (s.anomaly_mask) {
      const std::string mask_rel = "masks/" + stem + ".png";
      write_mask_png(dir / mask_rel, *s.anomaly_mask);
      e["mask_path"] = mask_rel;
    } else {
      e["mask_path"] = nullptr;
    }
    list.push_back(std::move(e));
  }
  nlohmann::json doc{{"format", kManifestFormat}, {"version", kManifestVersion}, {"samples", std::move(list)}};
  const auto path = dir / "manifest.json";
  std::ofstream(path) << doc.dump(2) << '\n';
  return path;
}

}  // namespace attnad

#endif  // ATTNAD_DATA_HPP
