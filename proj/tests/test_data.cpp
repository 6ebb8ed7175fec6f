#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "attnad/data.hpp"

namespace attnad {
namespace {

namespace fs = std::filesystem;

SynthConfig small_synth() {
  SynthConfig c;
  c.n_train_scans = 3;
  c.n_val_scans = 1;
  c.n_test_scans = 2;
  c.slices_per_scan = 4;
  c.image_size = 32;
  c.seed = 5;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("attnad_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Mask disk(std::int64_t n, double cy, double cx, double r) {
  Mask m(n, n);
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t x = 0; x < n; ++x) m(y, x) = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
  return m;
}

bool contains(const Mask& outer, const Mask& inner) {
  for (std::size_t i = 0; i < inner.bits.size(); ++i)
    if (inner.bits[i] && !outer.bits[i]) return false;
  return true;
}

TEST(Erosion, Examples) {
  Mask m = disk(16, 7.5, 7.5, 5.0);
  EXPECT_EQ(erode_mask(m, 0), m);
  Mask full(5, 6, 1);
  Mask ring = erode_mask(full, 1);
  for (std::int64_t y = 0; y < 5; ++y)
    for (std::int64_t x = 0; x < 6; ++x)
      EXPECT_EQ(ring(y, x), (y > 0 && y < 4 && x > 0 && x < 5) ? 1 : 0);
  EXPECT_THROW(erode_mask(m, -1), DomainError);
}

TEST(Erosion, DiskShrinksByRadius) {
  Mask d10 = disk(41, 20, 20, 10);
  Mask e = erode_mask(d10, 3);
  // Radius 7 up to one pixel of discretization slack on the diagonals.
  EXPECT_TRUE(contains(disk(41, 20, 20, 8), e));
  EXPECT_FALSE(contains(disk(41, 20, 20, 6.5), e));
  EXPECT_TRUE(contains(e, disk(41, 20, 20, 6)));
}

TEST(Erosion, MatchesBruteForceDefinition) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution b(0.8);
  Mask m(12, 12);
  for (auto& v : m.bits) v = b(rng);
  for (std::int64_t r : {1, 2}) {
    Mask e = erode_mask(m, r);
    for (std::int64_t y = 0; y < 12; ++y)
      for (std::int64_t x = 0; x < 12; ++x) {
        bool all = true;
        for (std::int64_t dy = -r; dy <= r; ++dy)
          for (std::int64_t dx = -r; dx <= r; ++dx) {
            if (dx * dx + dy * dy > r * r) continue;
            const auto yy = y + dy, xx = x + dx;
            all = all && yy >= 0 && yy < 12 && xx >= 0 && xx < 12 && m(yy, xx);
          }
        EXPECT_EQ(e(y, x), all ? 1 : 0);
      }
  }
}

TEST(Erosion, DefaultRadius) {
  EXPECT_EQ(default_erosion_radius(224), 3);
  EXPECT_EQ(default_erosion_radius(64), 1);
  EXPECT_EQ(default_erosion_radius(8), 1);
}

TEST(Filter, BoundaryAndSplits) {
  Sample train{Image(64, 64), std::nullopt, "train-0", Split::train};
  Sample none{Image(64, 64), Mask(64, 64), "test-0", Split::test};
  Sample one = none;
  one.anomaly_mask->bits[7] = 1;  // 1/4096 >= 1e-4
  Sample exact{Image(10, 10), Mask(10, 10), "test-1", Split::test};
  exact.anomaly_mask->bits[0] = 1;  // exactly 0.01
  Dataset all{train, none, one, exact};
  auto kept = filter_small_anomalies(all, 1e-4);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept[0].split, Split::train);
  EXPECT_EQ(kept[1], one);
  EXPECT_EQ(filter_small_anomalies(Dataset{exact}, 0.01).size(), 1u);
  EXPECT_EQ(filter_small_anomalies(Dataset{exact}, 0.0100001).size(), 0u);
}

TEST(Synthetic, DeterministicAndSeedSensitive) {
  auto a = generate_synthetic(small_synth()), b = generate_synthetic(small_synth());
  EXPECT_EQ(a, b);
  auto cfg = small_synth();
  cfg.seed = 6;
  EXPECT_NE(generate_synthetic(cfg)[0].image, a[0].image);
}

TEST(Synthetic, SplitContract) {
  auto cfg = small_synth();
  auto data = generate_synthetic(cfg);
  EXPECT_EQ(static_cast<std::int64_t>(data.size()),
            (cfg.n_train_scans + cfg.n_val_scans + cfg.n_test_scans) * cfg.slices_per_scan);
  std::map<Split, std::set<std::string>> scans;
  for (const auto& s : data) {
    scans[s.split].insert(s.scan_id);
    EXPECT_EQ(s.image.height, 32);
    for (double v : s.image.values) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    if (s.split == Split::train) {
      EXPECT_TRUE(!s.anomaly_mask || s.anomaly_mask->count() == 0);
    } else {
      ASSERT_TRUE(s.anomaly_mask.has_value());
      EXPECT_GT(s.anomaly_mask->count(), 0);
      // Lesions lie inside the anatomy.
      EXPECT_TRUE(contains(brain_mask(s.image), *s.anomaly_mask));
    }
  }
  for (const auto& a : scans[Split::train]) {
    EXPECT_FALSE(scans[Split::val].count(a));
    EXPECT_FALSE(scans[Split::test].count(a));
  }
  EXPECT_EQ(scans[Split::train].size(), 3u);
  EXPECT_EQ(scans[Split::test].size(), 2u);
}

TEST(Synthetic, AnomalyFractionWithinBounds) {
  SynthConfig cfg;
  cfg.n_train_scans = 1;
  cfg.slices_per_scan = 10;
  cfg.n_val_scans = 0;
  cfg.n_test_scans = 10;
  auto data = select_split(generate_synthetic(cfg), Split::test);
  ASSERT_EQ(data.size(), 100u);
  const auto [lo, hi] = anomaly_fraction_bounds(cfg);
  double mean = 0.0;
  for (const auto& s : data) mean += anomaly_fraction(s);
  mean /= 100.0;
  EXPECT_GE(mean, lo);
  EXPECT_LE(mean, hi);
}

TEST(Synthetic, RejectsInfeasibleGeometry) {
  auto cfg = small_synth();
  cfg.radius_max = 40;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

TEST(Manifest, RoundTrip) {
  auto dir = scratch_dir("roundtrip");
  auto data = generate_synthetic(small_synth());
  auto manifest = export_dataset(data, dir);
  EXPECT_EQ(load_dataset(manifest), data);
  fs::remove_all(dir);
}

TEST(Manifest, Errors) {
  auto dir = scratch_dir("manifest_errors");
  auto write = [&](const std::string& text) {
    std::ofstream(dir / "manifest.json") << text;
    return dir / "manifest.json";
  };
  EXPECT_THROW(load_dataset(write(R"({"format":"attnad-manifest","version":1,"samples":[]})")), DataError);
  EXPECT_THROW(
      load_dataset(write(
          R"({"format":"attnad-manifest","version":1,"samples":[{"image_path":"nope.png","scan_id":"a","split":"train"}]})")),
      DataError);
  EXPECT_THROW(load_dataset(dir / "missing.json"), DataError);

  Image eight(4, 4, 1.0);
  write_image_png(dir / "x.png", eight, 8);
  write_mask_png(dir / "m.png", Mask(5, 5));
  try {
    load_dataset(write(
        R"({"format":"attnad-manifest","version":1,"samples":[{"image_path":"x.png","mask_path":"m.png","scan_id":"a","split":"test"}]})"));
    FAIL() << "size mismatch accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("m.png"), std::string::npos);
  }
  EXPECT_THROW(load_dataset(write(
                   R"({"format":"attnad-manifest","version":1,"samples":[{"image_path":"x.png","scan_id":"a","split":"holdout"}]})")),
               DataError);
  auto ok = load_dataset(write(
      R"({"format":"attnad-manifest","version":1,"samples":[{"image_path":"x.png","scan_id":"a","split":"train"}]})"));
  ASSERT_EQ(ok.size(), 1u);
  EXPECT_EQ(ok[0].image.values[0], 1.0);  // 8-bit 255 maps to 1.0
  fs::remove_all(dir);
}

}  // namespace
}  // namespace attnad
