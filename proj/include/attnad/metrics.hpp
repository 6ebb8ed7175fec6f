#ifndef ATTNAD_METRICS_HPP
#define ATTNAD_METRICS_HPP

// Pixel-pooled ranking metrics, overlap scores and the evaluation report.
// Equal scores always form a single threshold group.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnad/image.hpp"

namespace attnad {

namespace detail {

inline void check_pairs(std::span<const double> scores, std::span<const std::uint8_t> labels, const char* where) {
  if (scores.size() != labels.size())
    throw ShapeError(std::string(where) + ": " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  if (scores.empty()) throw DomainError(std::string(where) + ": no pixels");
}

/// Indices ordered by descending score.
inline std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

/// Calls f(score, positives_in_group, negatives_in_group) per tie group, highest score first.
template <typename F>
void for_each_group(std::span<const double> scores, std::span<const std::uint8_t> labels, F f) {
  const auto idx = descending(scores);
  std::size_t i = 0;
  while (i < idx.size()) {
    const double s = scores[idx[i]];
    std::int64_t pos = 0, neg = 0;
    for (; i < idx.size() && scores[idx[i]] == s; ++i) (labels[idx[i]] ? pos : neg) += 1;
    f(s, pos, neg);
  }
}

inline std::pair<std::int64_t, std::int64_t> class_counts(std::span<const std::uint8_t> labels) {
  std::int64_t p = 0;
  for (auto l : labels) p += l ? 1 : 0;
  return {p, static_cast<std::int64_t>(labels.size()) - p};
}

}  // namespace detail

/// P(score of a random positive > score of a random negative), ties count one half.
inline double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_pairs(scores, labels, "auroc");
  const auto [p, n] = detail::class_counts(labels);
  if (p == 0 || n == 0) throw DomainError("auroc: labels contain a single class");
  // Twice the number of correctly ordered pairs, counted exactly.
  std::int64_t twice = 0, neg_below = n;
  detail::for_each_group(scores, labels, [&](double, std::int64_t pos, std::int64_t neg) {
    neg_below -= neg;
    twice += pos * (2 * neg_below + neg);
  });
  return static_cast<double>(twice) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

/// Average precision: sum over thresholds of precision times the recall increment.
inline double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_pairs(scores, labels, "auprc");
  const auto [p, n] = detail::class_counts(labels);
  if (p == 0) throw DomainError("auprc: no positive labels");
  std::int64_t tp = 0, fp = 0;
  double ap = 0.0;
  detail::for_each_group(scores, labels, [&](double, std::int64_t pos, std::int64_t neg) {
    tp += pos;
    fp += neg;
    if (pos > 0) ap += (static_cast<double>(tp) / static_cast<double>(tp + fp)) * (static_cast<double>(pos) / static_cast<double>(p));
  });
  return ap;
}

struct OperatingPoint {
  double threshold = 0.0;
  double dice = 0.0;
};

/// Threshold (among the distinct scores) maximizing pooled DICE of {score >= threshold};
/// ties resolve to the smallest threshold.
inline OperatingPoint operating_point(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  detail::check_pairs(scores, labels, "operating_point");
  const auto [p, n] = detail::class_counts(labels);
  if (p == 0 || n == 0) throw DomainError("operating_point: pooled labels contain a single class");
  std::int64_t tp = 0, fp = 0;
  std::int64_t best_num = -1, best_den = 1;
  OperatingPoint best;
  detail::for_each_group(scores, labels, [&](double s, std::int64_t pos, std::int64_t neg) {
    tp += pos;
    fp += neg;
    const std::int64_t num = 2 * tp, den = tp + fp + p;
    if (best_num < 0 || num * best_den >= best_num * den) {
      best_num = num;
      best_den = den;
      best.threshold = s;
    }
  });
  best.dice = static_cast<double>(best_num) / static_cast<double>(best_den);
  return best;
}

struct Overlap {
  double dice = 1.0;
  double iou = 1.0;
};

/// DICE and IoU from counts; both are 1 when prediction and truth are empty.
inline Overlap overlap_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  if (tp + fp + fn == 0) return {1.0, 1.0};
  return {2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn),
          static_cast<double>(tp) / static_cast<double>(tp + fp + fn)};
}

struct Counts {
  std::int64_t tp = 0, fp = 0, fn = 0;
  void add(const Mask& pred, const Mask& gt) {
    require_same_size(pred, gt, "overlap");
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
      const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
      tp += a && b;
      fp += a && !b;
      fn += !a && b;
    }
  }
};

/// Pooled over every pixel of every image.
inline Overlap dice_iou_dataset(std::span<const Mask> masks, std::span<const Mask> gts) {
  if (masks.size() != gts.size()) throw ShapeError("dice_iou_dataset: mask and truth counts differ");
  Counts c;
  for (std::size_t i = 0; i < masks.size(); ++i) c.add(masks[i], gts[i]);
  return overlap_from_counts(c.tp, c.fp, c.fn);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Pixels pooled within each scan; mean and population standard deviation across scans.
inline MeanStd dice_per_scan(std::span<const Mask> masks, std::span<const Mask> gts,
                             std::span<const std::string> scan_ids) {
  if (masks.size() != gts.size()) throw ShapeError("dice_per_scan: mask and truth counts differ");
  if (scan_ids.size() != masks.size()) throw DataError("dice_per_scan: every image needs a scan id");
  if (masks.empty()) throw DomainError("dice_per_scan: no images");
  std::map<std::string, Counts> per;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (scan_ids[i].empty()) throw DataError("dice_per_scan: image " + std::to_string(i) + " has no scan id");
    per[scan_ids[i]].add(masks[i], gts[i]);
  }
  std::vector<double> d;
  for (const auto& [id, c] : per) d.push_back(overlap_from_counts(c.tp, c.fp, c.fn).dice);
  MeanStd r;
  for (double v : d) r.mean += v;
  r.mean /= static_cast<double>(d.size());
  for (double v : d) r.std += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(d.size()));
  return r;
}

inline Mask threshold_grid(const Grid& g, double tau) {
  Mask m(g.height, g.width);
  for (std::size_t i = 0; i < g.values.size(); ++i) m.bits[i] = g.values[i] >= tau ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Threshold regimes

enum class RegimeKind { fixed, op, percentile };

struct Regime {
  RegimeKind kind = RegimeKind::fixed;
  double value = 0.5;  // tau for fixed, q for percentile

  std::string label() const {
    char buf[32];
    switch (kind) {
      case RegimeKind::op: return "op";
      case RegimeKind::fixed: {
        auto r = std::to_chars(buf, buf + sizeof buf, value);
        return "fixed:" + std::string(buf, r.ptr);
      }
      case RegimeKind::percentile: {
        auto r = std::to_chars(buf, buf + sizeof buf, value);
        return "percentile:" + std::string(buf, r.ptr);
      }
    }
    return "?";
  }

  /// Parses "fixed:<tau>", "op" or "percentile:<q>".
  static Regime parse(std::string_view s) {
    auto number = [&](std::string_view rest, const char* what) {
      double v = 0.0;
      auto r = std::from_chars(rest.data(), rest.data() + rest.size(), v);
      if (r.ec != std::errc() || r.ptr != rest.data() + rest.size())
        throw ConfigError("eval.regimes", std::string("bad ") + what + " in \"" + std::string(s) + "\"");
      return v;
    };
    if (s == "op") return {RegimeKind::op, 0.0};
    if (s.starts_with("fixed:")) {
      const double tau = number(s.substr(6), "threshold");
      if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("eval.regimes", "fixed threshold must lie in [0, 1]");
      return {RegimeKind::fixed, tau};
    }
    if (s.starts_with("percentile:")) {
      const double q = number(s.substr(11), "percentile");
      if (!(q > 0.0 && q < 100.0)) throw ConfigError("eval.regimes", "percentile must lie in (0, 100)");
      return {RegimeKind::percentile, q};
    }
    throw ConfigError("eval.regimes", "unknown regime \"" + std::string(s) + "\"");
  }
};

// ---------------------------------------------------------------------------
// Report

struct EvalReport {
  std::string method;
  std::string threshold_regime;
  bool uses_anomalous_images = false;  // the threshold was fit on labelled anomalies
  double threshold = 0.0;              // applied threshold
  double op_threshold = 0.0;           // pooled-DICE-maximizing threshold (reference)
  double auroc = 0.0;
  double auprc = 0.0;
  double dice_dataset = 0.0;
  double iou_dataset = 0.0;
  double dice_per_scan_mean = 0.0;
  double dice_per_scan_std = 0.0;
  std::int64_t n_images = 0;
  std::int64_t n_pixels = 0;
  std::int64_t repetitions = 1;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline constexpr const char* kReportSchema = "attnad-eval-report/1";

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  return nlohmann::ordered_json{{"schema", kReportSchema},
                                {"method", r.method},
                                {"threshold_regime", r.threshold_regime},
                                {"uses_anomalous_images", r.uses_anomalous_images},
                                {"threshold", r.threshold},
                                {"op_threshold", r.op_threshold},
                                {"auroc", r.auroc},
                                {"auprc", r.auprc},
                                {"dice_dataset", r.dice_dataset},
                                {"iou_dataset", r.iou_dataset},
                                {"dice_per_scan_mean", r.dice_per_scan_mean},
                                {"dice_per_scan_std", r.dice_per_scan_std},
                                {"n_images", r.n_images},
                                {"n_pixels", r.n_pixels},
                                {"repetitions", r.repetitions}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema", "") != kReportSchema) throw DataError("not an evaluation report");
  try {
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.threshold_regime = j.at("threshold_regime").get<std::string>();
    r.uses_anomalous_images = j.at("uses_anomalous_images").get<bool>();
    r.threshold = j.at("threshold").get<double>();
    r.op_threshold = j.at("op_threshold").get<double>();
    r.auroc = j.at("auroc").get<double>();
    r.auprc = j.at("auprc").get<double>();
    r.dice_dataset = j.at("dice_dataset").get<double>();
    r.iou_dataset = j.at("iou_dataset").get<double>();
    r.dice_per_scan_mean = j.at("dice_per_scan_mean").get<double>();
    r.dice_per_scan_std = j.at("dice_per_scan_std").get<double>();
    r.n_images = j.at("n_images").get<std::int64_t>();
    r.n_pixels = j.at("n_pixels").get<std::int64_t>();
    r.repetitions = j.at("repetitions").get<std::int64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
}

/// Checks a report document against the published schema; returns one message per violation.
inline std::vector<std::string> report_schema_errors(const nlohmann::json& j) {
  std::vector<std::string> errs;
  if (!j.is_object()) return {"report must be a JSON object"};
  static const char* kKeys[] = {"schema",       "method",       "threshold_regime",   "uses_anomalous_images",
                                "threshold",    "op_threshold", "auroc",              "auprc",
                                "dice_dataset", "iou_dataset",  "dice_per_scan_mean", "dice_per_scan_std",
                                "n_images",     "n_pixels",     "repetitions"};
  for (const char* k : kKeys)
    if (!j.contains(k)) errs.push_back(std::string("missing key ") + k);
  for (const auto& [k, v] : j.items())
    if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* x) { return k == x; }) == std::end(kKeys))
      errs.push_back("unexpected key " + k);
  if (!errs.empty()) return errs;
  if (j["schema"] != kReportSchema) errs.push_back(std::string("schema must be ") + kReportSchema);
  for (const char* k : {"method", "threshold_regime"})
    if (!j[k].is_string() || j[k].get<std::string>().empty()) errs.push_back(std::string(k) + " must be a non-empty string");
  if (j["threshold_regime"].is_string()) {
    try {
      Regime::parse(j["threshold_regime"].get<std::string>());
    } catch (const ConfigError&) {
      errs.push_back("threshold_regime is not a known regime");
    }
  }
  if (!j["uses_anomalous_images"].is_boolean()) errs.push_back("uses_anomalous_images must be a boolean");
  for (const char* k : {"threshold", "op_threshold", "auroc", "auprc", "dice_dataset", "iou_dataset",
                        "dice_per_scan_mean", "dice_per_scan_std"}) {
    if (!j[k].is_number()) {
      errs.push_back(std::string(k) + " must be a number");
      continue;
    }
    const double v = j[k].get<double>();
    if (!(v >= 0.0 && v <= 1.0)) errs.push_back(std::string(k) + " must lie in [0, 1]");
  }
  for (const char* k : {"n_images", "n_pixels", "repetitions"})
    if (!j[k].is_number_integer() || j[k].get<std::int64_t>() < 1) errs.push_back(std::string(k) + " must be an integer >= 1");
  return errs;
}

/// Arithmetic mean of every metric over reports that share method and regime.
inline EvalReport average_reports(std::span<const EvalReport> reports) {
  if (reports.empty()) throw DomainError("average_reports: no reports");
  EvalReport out = reports[0];
  const double k = static_cast<double>(reports.size());
  auto mean_of = [&](double EvalReport::*field) {
    double s = 0.0;
    for (const auto& r : reports) s += r.*field;
    return s / k;
  };
  for (const auto& r : reports)
    if (r.method != out.method || r.threshold_regime != out.threshold_regime)
      throw DomainError("average_reports: reports differ in method or regime");
  for (auto f : {&EvalReport::threshold, &EvalReport::op_threshold, &EvalReport::auroc, &EvalReport::auprc,
                 &EvalReport::dice_dataset, &EvalReport::iou_dataset, &EvalReport::dice_per_scan_mean,
                 &EvalReport::dice_per_scan_std})
    out.*f = mean_of(f);
  out.repetitions = 0;
  for (const auto& r : reports) out.repetitions += r.repetitions;
  return out;
}

/// Flattened scores and labels over all images.
struct Pooled {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

inline Pooled pool(std::span<const Grid> maps, std::span<const Mask> gts) {
  if (maps.size() != gts.size()) throw ShapeError("pool: map and truth counts differ");
  Pooled p;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    require_same_size(maps[i], gts[i], "pool");
    p.scores.insert(p.scores.end(), maps[i].values.begin(), maps[i].values.end());
    p.labels.insert(p.labels.end(), gts[i].bits.begin(), gts[i].bits.end());
  }
  return p;
}

/// Full report for saliency maps thresholded at `threshold`.
inline EvalReport evaluate_maps(std::span<const Grid> maps, std::span<const Mask> gts,
                                std::span<const std::string> scan_ids, double threshold, const std::string& regime,
                                const std::string& method, bool uses_anomalous_images) {
  Pooled p = pool(maps, gts);
  EvalReport r;
  r.method = method;
  r.threshold_regime = regime;
  r.uses_anomalous_images = uses_anomalous_images;
  r.threshold = threshold;
  r.op_threshold = operating_point(p.scores, p.labels).threshold;
  r.auroc = auroc(p.scores, p.labels);
  r.auprc = auprc(p.scores, p.labels);
  std::vector<Mask> masks;
  masks.reserve(maps.size());
  for (const auto& m : maps) masks.push_back(threshold_grid(m, threshold));
  const Overlap o = dice_iou_dataset(masks, gts);
  r.dice_dataset = o.dice;
  r.iou_dataset = o.iou;
  const MeanStd ps = dice_per_scan(masks, gts, scan_ids);
  r.dice_per_scan_mean = ps.mean;
  r.dice_per_scan_std = ps.std;
  r.n_images = static_cast<std::int64_t>(maps.size());
  r.n_pixels = static_cast<std::int64_t>(p.scores.size());
  return r;
}

}  // namespace attnad

#endif  // ATTNAD_METRICS_HPP
