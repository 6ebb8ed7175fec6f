#include <gtest/gtest.h>

#include "attnad/metrics.hpp"
#include "oracles.hpp"

namespace attnad {
namespace {

using Labels = std::vector<std::uint8_t>;
using Scores = std::vector<double>;

TEST(Auroc, Fixtures) {
  EXPECT_EQ(auroc(Scores{0.1, 0.4, 0.35, 0.8}, Labels{0, 0, 1, 1}), 0.75);
  EXPECT_EQ(auroc(Scores{0, 1, 1, 0}, Labels{0, 1, 1, 0}), 1.0);
  EXPECT_EQ(auroc(Scores{0.3, 0.3, 0.3}, Labels{1, 0, 1}), 0.5);
  EXPECT_THROW(auroc(Scores{0.1, 0.2}, Labels{1, 1}), DomainError);
  EXPECT_THROW(auroc(Scores{0.1}, Labels{1, 0}), ShapeError);
}

TEST(Auprc, Fixtures) {
  EXPECT_EQ(auprc(Scores{0, 1, 1, 0}, Labels{0, 1, 1, 0}), 1.0);
  EXPECT_NEAR(auprc(Scores{0.9, 0.8, 0.7}, Labels{1, 0, 1}), 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(auprc(Scores{0.9, 0.8, 0.7, 0.1}, Labels{0, 0, 0, 1}), 0.25, 1e-15);
  EXPECT_THROW(auprc(Scores{0.1, 0.2}, Labels{0, 0}), DomainError);
}

TEST(OperatingPoint, Fixtures) {
  auto a = operating_point(Scores{0.9, 0.6, 0.4, 0.1}, Labels{1, 1, 0, 0});
  EXPECT_EQ(a.threshold, 0.6);
  EXPECT_EQ(a.dice, 1.0);
  auto b = operating_point(Scores{0.9, 0.2, 0.6, 0.1}, Labels{1, 0, 0, 0});
  EXPECT_EQ(b.threshold, 0.9);
  EXPECT_EQ(b.dice, 1.0);
  auto c = operating_point(Scores{1, 0, 1, 0}, Labels{1, 0, 1, 0});
  EXPECT_EQ(c.threshold, 1.0);
  EXPECT_EQ(c.dice, 1.0);
  EXPECT_THROW(operating_point(Scores{0.5, 0.6}, Labels{0, 0}), DomainError);
}

TEST(OperatingPoint, SmallestThresholdWinsTies) {
  // tau = 0.8 gives 2*1/(1+0+2) = 2/3; tau = 0.4 gives 2*2/(2+1+2) = 4/5; tau = 0.2 gives 4/6.
  auto r = operating_point(Scores{0.8, 0.4, 0.4, 0.2}, Labels{1, 1, 0, 0});
  EXPECT_EQ(r.threshold, 0.4);
  EXPECT_DOUBLE_EQ(r.dice, 0.8);
  // DICE 2/3 at both 0.9 and 0.5; the smaller one is returned.
  auto t = operating_point(Scores{0.9, 0.5, 0.5, 0.5}, Labels{1, 1, 0, 0});
  EXPECT_EQ(t.threshold, 0.5);
  EXPECT_DOUBLE_EQ(t.dice, 2.0 / 3.0);
}

TEST(Metrics, MatchBruteForceOn200RandomInstances) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 200; ++i) {
    auto in = oracle::random_instance(rng);
    EXPECT_NEAR(auroc(in.scores, in.labels), oracle::auroc(in.scores, in.labels), 1e-12) << "instance " << i;
    EXPECT_NEAR(auprc(in.scores, in.labels), oracle::auprc(in.scores, in.labels), 1e-12) << "instance " << i;
    auto fast = operating_point(in.scores, in.labels);
    auto slow = oracle::operating_point(in.scores, in.labels);
    EXPECT_EQ(fast.threshold, slow.threshold) << "instance " << i;
    EXPECT_NEAR(fast.dice, slow.dice, 1e-12) << "instance " << i;
  }
}

TEST(Metrics, OperatingPointMatchesBruteForceOnLargeInstances) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 5; ++i) {
    auto in = oracle::random_instance(rng, 10000);
    auto fast = operating_point(in.scores, in.labels);
    auto slow = oracle::operating_point(in.scores, in.labels);
    EXPECT_EQ(fast.threshold, slow.threshold);
    EXPECT_NEAR(fast.dice, slow.dice, 1e-12);
  }
}

TEST(Metrics, RankMetricsInvariantUnderMonotoneRescaling) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    auto in = oracle::random_instance(rng, 300);
    Scores warped;
    for (double s : in.scores) warped.push_back(std::exp(3.0 * s) - 7.0);
    EXPECT_NEAR(auroc(in.scores, in.labels), auroc(warped, in.labels), 1e-15);
    EXPECT_NEAR(auprc(in.scores, in.labels), auprc(warped, in.labels), 1e-15);
  }
}

Mask mask_from(std::int64_t h, std::int64_t w, std::initializer_list<int> on) {
  Mask m(h, w);
  for (int i : on) m.bits[static_cast<std::size_t>(i)] = 1;
  return m;
}

TEST(Overlap, Examples) {
  Mask g = mask_from(3, 3, {0, 1, 2, 3, 4, 5});
  Mask same = g;
  auto o = dice_iou_dataset(std::vector<Mask>{same}, std::vector<Mask>{g});
  EXPECT_EQ(o.dice, 1.0);
  EXPECT_EQ(o.iou, 1.0);
  Mask disjoint = mask_from(3, 3, {6, 7});
  o = dice_iou_dataset(std::vector<Mask>{disjoint}, std::vector<Mask>{g});
  EXPECT_EQ(o.dice, 0.0);
  EXPECT_EQ(o.iou, 0.0);
  Mask p = mask_from(3, 3, {3, 4, 5, 8});  // |P| = 4, |P & G| = 3
  o = dice_iou_dataset(std::vector<Mask>{p}, std::vector<Mask>{g});
  EXPECT_DOUBLE_EQ(o.dice, 0.6);
  EXPECT_DOUBLE_EQ(o.iou, 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(o.dice, 2 * o.iou / (1 + o.iou));
  Mask empty(3, 3);
  o = dice_iou_dataset(std::vector<Mask>{empty}, std::vector<Mask>{empty});
  EXPECT_EQ(o.dice, 1.0);
}

TEST(Overlap, DiceIouRelationOnRandomMasks) {
  std::mt19937_64 rng(17);
  std::bernoulli_distribution b(0.3);
  for (int i = 0; i < 100; ++i) {
    Mask p(6, 6), g(6, 6);
    for (auto& v : p.bits) v = b(rng);
    for (auto& v : g.bits) v = b(rng);
    auto o = dice_iou_dataset(std::vector<Mask>{p}, std::vector<Mask>{g});
    EXPECT_NEAR(o.dice, 2 * o.iou / (1 + o.iou), 1e-15);
  }
}

TEST(PerScan, Examples) {
  Mask g = mask_from(2, 5, {0, 1, 2, 3, 4});
  // Scan a: |P| = 5, overlap 2 -> 0.4. Scan b: |P| = 5, overlap 4 -> 0.8.
  Mask pa = mask_from(2, 5, {0, 1, 5, 6, 7});
  Mask pb = mask_from(2, 5, {0, 1, 2, 3, 9});
  std::vector<std::string> ids{"a", "b"};
  auto r = dice_per_scan(std::vector<Mask>{pa, pb}, std::vector<Mask>{g, g}, ids);
  EXPECT_NEAR(r.mean, 0.6, 1e-15);
  EXPECT_NEAR(r.std, 0.2, 1e-15);
  auto one = dice_per_scan(std::vector<Mask>{pa, pb}, std::vector<Mask>{g, g}, std::vector<std::string>{"s", "s"});
  EXPECT_EQ(one.std, 0.0);
  auto perfect = dice_per_scan(std::vector<Mask>{g, g}, std::vector<Mask>{g, g}, ids);
  EXPECT_EQ(perfect.mean, 1.0);
  EXPECT_EQ(perfect.std, 0.0);
  EXPECT_THROW(dice_per_scan(std::vector<Mask>{g}, std::vector<Mask>{g}, std::vector<std::string>{""}), DataError);
  EXPECT_THROW(dice_per_scan(std::vector<Mask>{g}, std::vector<Mask>{g}, std::vector<std::string>{}), DataError);
}

// Three 2x3 images; every metric is recomputed from scratch over all thresholds.
struct Fixture {
  std::vector<Grid> maps{Grid(2, 3, std::vector<double>{0.9, 0.1, 0.4, 0.2, 0.7, 0.3}),
                         Grid(2, 3, std::vector<double>{0.05, 0.6, 0.6, 0.8, 0.1, 0.0}),
                         Grid(2, 3, std::vector<double>{0.5, 0.5, 0.2, 0.95, 0.3, 0.45})};
  std::vector<Mask> gts{mask_from(2, 3, {0, 4}), mask_from(2, 3, {1, 3}), mask_from(2, 3, {3, 5})};
  std::vector<std::string> ids{"x", "x", "y"};
};

TEST(EvaluateMaps, MatchesBruteForceReference) {
  Fixture f;
  Pooled p = pool(f.maps, f.gts);
  for (double tau : {0.0, 0.3, 0.5, 0.6, 1.0}) {
    auto r = evaluate_maps(f.maps, f.gts, f.ids, tau, "fixed", "m", false);
    EXPECT_NEAR(r.auroc, oracle::auroc(p.scores, p.labels), 1e-12);
    EXPECT_NEAR(r.auprc, oracle::auprc(p.scores, p.labels), 1e-12);
    EXPECT_EQ(r.op_threshold, oracle::operating_point(p.scores, p.labels).threshold);
    auto c = oracle::confusion_at(p.scores, p.labels, tau);
    const double dice = c.tp + c.fp + c.fn == 0 ? 1.0 : 2.0 * c.tp / double(2 * c.tp + c.fp + c.fn);
    EXPECT_NEAR(r.dice_dataset, dice, 1e-15) << tau;
    EXPECT_NEAR(r.dice_dataset, 2 * r.iou_dataset / (1 + r.iou_dataset), 1e-15);
    EXPECT_EQ(r.n_images, 3);
    EXPECT_EQ(r.n_pixels, 18);
  }
}

TEST(EvaluateMaps, PerfectSaliency) {
  Fixture f;
  std::vector<Grid> perfect;
  for (const auto& g : f.gts) {
    Grid m(g.height, g.width);
    for (std::size_t i = 0; i < g.bits.size(); ++i) m.values[i] = g.bits[i];
    perfect.push_back(m);
  }
  auto r = evaluate_maps(perfect, f.gts, f.ids, 0.5, "fixed:0.5", "m", false);
  EXPECT_EQ(r.auroc, 1.0);
  EXPECT_EQ(r.auprc, 1.0);
  EXPECT_EQ(r.dice_dataset, 1.0);
  EXPECT_EQ(r.iou_dataset, 1.0);
  EXPECT_EQ(r.dice_per_scan_mean, 1.0);
}

TEST(Regime, ParseAndLabel) {
  EXPECT_EQ(Regime::parse("op").kind, RegimeKind::op);
  EXPECT_EQ(Regime::parse("fixed:0.5").label(), "fixed:0.5");
  EXPECT_EQ(Regime::parse("percentile:95").label(), "percentile:95");
  EXPECT_EQ(Regime::parse("percentile:97.5").value, 97.5);
  EXPECT_THROW(Regime::parse("fixed:1.5"), ConfigError);
  EXPECT_THROW(Regime::parse("percentile:100"), ConfigError);
  EXPECT_THROW(Regime::parse("fixed:abc"), ConfigError);
  EXPECT_THROW(Regime::parse("median"), ConfigError);
}

TEST(Report, JsonRoundTripAndAveraging) {
  EvalReport a;
  a.method = "attention";
  a.threshold_regime = "op";
  a.uses_anomalous_images = true;
  a.threshold = 0.31;
  a.auroc = 0.9;
  a.auprc = 0.5;
  a.dice_dataset = 0.4;
  a.n_images = 10;
  a.n_pixels = 640;
  EXPECT_EQ(report_from_json(nlohmann::json::parse(to_json(a).dump())), a);
  EXPECT_THROW(report_from_json(nlohmann::json{{"schema", "other"}}), DataError);
  auto broken = to_json(a);
  broken.erase("auprc");
  EXPECT_THROW(report_from_json(broken), DataError);

  EvalReport b = a;
  b.auprc = 0.7;
  b.auroc = 0.8;
  std::vector<EvalReport> both{a, b};
  auto m = average_reports(both);
  EXPECT_DOUBLE_EQ(m.auprc, 0.6);
  EXPECT_DOUBLE_EQ(m.auroc, 0.85);
  EXPECT_EQ(m.repetitions, 2);
  EXPECT_EQ(m.n_pixels, 640);
  b.method = "residual";
  std::vector<EvalReport> mixed{a, b};
  EXPECT_THROW(average_reports(mixed), DomainError);
}

TEST(ThresholdGrid, MonotoneInTau) {
  Grid g(2, 2, std::vector<double>{0.2, 0.7, 0.5, 0.0});
  EXPECT_EQ(threshold_grid(g, 0.0).count(), 4);
  EXPECT_EQ(threshold_grid(g, 0.5).count(), 2);
  std::int64_t prev = 5;
  for (double tau = 0.0; tau <= 1.0; tau += 0.05) {
    const auto c = threshold_grid(g, tau).count();
    EXPECT_LE(c, prev);
    prev = c;
  }
}

}  // namespace
}  // namespace attnad
