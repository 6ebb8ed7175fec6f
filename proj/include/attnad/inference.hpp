#ifndef ATTNAD_INFERENCE_HPP
#define ATTNAD_INFERENCE_HPP

// Saliency maps from a trained model, thresholding regimes and dataset-level
// evaluation.

#include "attnad/data.hpp"
#include "attnad/metrics.hpp"
#include "attnad/training.hpp"

namespace attnad {

enum class Provenance { attention, residual };

struct AnomalyMap {
  Grid values;
  Provenance provenance = Provenance::attention;
};

struct SegMask {
  Mask mask;
  double threshold = 0.0;
};

/// Saliency producers compared in evaluation.
enum class Method {
  attention,               // Grad-CAM on the latent-mean sum, min-max normalized
  attention_disentangled,  // Grad-CAM_D, min-max normalized
  residual,                // |x - x_hat| inside the eroded brain mask
  cavga,                   // 1 - sigmoid attention, the expansion-loss baseline convention
};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::attention: return "attention";
    case Method::attention_disentangled: return "attention_disentangled";
    case Method::residual: return "residual";
    case Method::cavga: return "cavga";
  }
  return "?";
}

inline std::optional<Method> method_from(std::string_view s) {
  for (Method m : {Method::attention, Method::attention_disentangled, Method::residual, Method::cavga})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

/// Raw Grad-CAM followed by min-max normalization (no inversion).
template <typename T>
AnomalyMap attention_saliency(const Vae<T>& model, const Image& x, std::int64_t depth) {
  auto raw = raw_cam_batch(model, to_batch<T>(x), depth);
  return {minmax_normalize(raw[0]), Provenance::attention};
}

/// |x - x_hat| masked by the brain mask eroded by `radius`, then min-max normalized.
inline AnomalyMap residual_saliency_from(const Image& x, const Image& xhat, const Mask& brain, std::int64_t radius) {
  require_same_size(x, xhat, "residual_saliency");
  require_same_size(x, brain, "residual_saliency");
  const Mask eroded = erode_mask(brain, radius);
  Grid r(x.height, x.width);
  for (std::size_t i = 0; i < r.values.size(); ++i)
    r.values[i] = eroded.bits[i] ? std::abs(x.values[i] - xhat.values[i]) : 0.0;
  return {minmax_normalize(r), Provenance::residual};
}

/// Posterior-mean reconstructions (noise = 0), batched.
template <typename T>
std::vector<Image> reconstruct_mean(const Vae<T>& model, std::span<const Image> images, std::int64_t batch = 32) {
  std::vector<Image> out;
  GradMode off(false);
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
    const auto end = std::min(images.size(), start + static_cast<std::size_t>(batch));
    std::vector<const Image*> picked;
    for (auto i = start; i < end; ++i) picked.push_back(&images[i]);
    auto pass = model.encode(Var<T>::constant(to_batch<T>(std::span<const Image* const>(picked))));
    Var<T> xhat = model.decode(pass.mu);
    for (std::int64_t i = 0; i < xhat.dim(0); ++i) out.push_back(plane_of(xhat.value(), i));
  }
  return out;
}

/// Residual baseline. A negative `radius` selects the default erosion for the image size.
template <typename T>
AnomalyMap residual_saliency(const Vae<T>& model, const Image& x, const Mask& brain, std::int64_t radius = -1) {
  require_same_size(x, brain, "residual_saliency");
  if (radius < 0) radius = default_erosion_radius(x.height);
  const Image* p = &x;
  auto xhat = reconstruct_mean(model, std::span<const Image>(p, 1));
  return residual_saliency_from(x, xhat[0], brain, radius);
}

/// Saliency for every image, batched. Values lie in [0, 1].
template <typename T>
std::vector<Grid> saliency_maps(const Vae<T>& model, std::span<const Image> images, Method method, std::int64_t depth,
                                std::int64_t batch = 32) {
  std::vector<Grid> out;
  out.reserve(images.size());
  if (method == Method::residual) {
    auto xhat = reconstruct_mean(model, images, batch);
    for (std::size_t i = 0; i < images.size(); ++i)
      out.push_back(residual_saliency_from(images[i], xhat[i], brain_mask(images[i]),
                                           default_erosion_radius(images[i].height))
                        .values);
    return out;
  }
  if (method == Method::cavga) {
    for (auto& a : training_attention(model, images, depth, batch)) {
      for (auto& v : a.values) v = 1.0 - v;
      out.push_back(std::move(a));
    }
    return out;
  }
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
    const auto end = std::min(images.size(), start + static_cast<std::size_t>(batch));
    std::vector<const Image*> picked;
    for (auto i = start; i < end; ++i) picked.push_back(&images[i]);
    Tensor<T> x = to_batch<T>(std::span<const Image* const>(picked));
    auto raw = method == Method::attention ? raw_cam_batch(model, x, depth) : raw_cam_disentangled_batch(model, x, depth);
    for (auto& g : raw) out.push_back(minmax_normalize(g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Thresholds

/// mask = values >= tau.
inline SegMask threshold_fixed(const AnomalyMap& map, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("threshold_fixed: tau must lie in [0, 1]");
  return {threshold_grid(map.values, tau), tau};
}

/// Pooled-DICE-maximizing threshold; needs labelled anomalies.
inline double threshold_operating_point(std::span<const Grid> maps, std::span<const Mask> gts) {
  if (maps.empty()) throw DomainError("threshold_operating_point: no maps");
  Pooled p = pool(maps, gts);
  return operating_point(p.scores, p.labels).threshold;
}

/// Nearest-rank q-th percentile of one grid: the ceil(q/100 * n)-th smallest value.
inline double percentile_nearest_rank(std::vector<double> v, double q) {
  if (v.empty()) throw DomainError("percentile: empty grid");
  if (!(q > 0.0 && q < 100.0)) throw DomainError("percentile: q must lie in (0, 100)");
  const auto n = v.size();
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank - 1), v.end());
  return v[rank - 1];
}

/// Mean over anomaly-free maps of each map's q-th percentile.
inline double threshold_percentile(std::span<const Grid> normal_maps, double q) {
  if (normal_maps.empty()) throw DomainError("threshold_percentile: no normal maps");
  double s = 0.0;
  for (const auto& g : normal_maps) s += percentile_nearest_rank(g.values, q);
  return s / static_cast<double>(normal_maps.size());
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalSet {
  std::vector<Image> images;
  std::vector<Mask> gts;
  std::vector<std::string> scan_ids;
};

/// Test images with masks; an unmasked image is a data error.
inline EvalSet eval_set_of(const Dataset& samples) {
  EvalSet s;
  for (const auto& x : samples) {
    if (!x.anomaly_mask) throw DataError("evaluation sample of scan " + x.scan_id + " has no ground-truth mask");
    s.images.push_back(x.image);
    s.gts.push_back(*x.anomaly_mask);
    s.scan_ids.push_back(x.scan_id);
  }
  return s;
}

/// Resolves a regime to a threshold. `normal_maps` feeds the percentile regime.
inline double resolve_threshold(const Regime& regime, std::span<const Grid> maps, std::span<const Mask> gts,
                                std::span<const Grid> normal_maps) {
  switch (regime.kind) {
    case RegimeKind::fixed: return regime.value;
    case RegimeKind::percentile: return threshold_percentile(normal_maps, regime.value);
    case RegimeKind::op: {
      if (gts.empty())
        throw DomainError(
            "the op regime needs ground-truth anomaly masks; it is not available in the unsupervised setting");
      return threshold_operating_point(maps, gts);
    }
  }
  return 0.0;
}

/// One report per regime; saliency is computed once and shared, so rank metrics agree across regimes.
template <typename T>
std::vector<EvalReport> evaluate(const Vae<T>& model, const EvalSet& test, std::span<const Image> normals,
                                 Method method, std::span<const Regime> regimes, std::int64_t depth) {
  if (test.images.empty()) throw DomainError("evaluate: empty test set");
  if (test.gts.size() != test.images.size())
    throw DomainError(
        "evaluate: ground-truth masks are required; the op regime in particular cannot run unsupervised");
  const auto maps = saliency_maps(model, test.images, method, depth);
  std::vector<Grid> normal_maps;
  const bool need_normals =
      std::any_of(regimes.begin(), regimes.end(), [](const Regime& r) { return r.kind == RegimeKind::percentile; });
  if (need_normals) {
    if (normals.empty()) throw DomainError("evaluate: percentile regime needs normal images");
    normal_maps = saliency_maps(model, normals, method, depth);
  }
  std::vector<EvalReport> out;
  for (const auto& regime : regimes) {
    const double tau = resolve_threshold(regime, maps, test.gts, normal_maps);
    out.push_back(evaluate_maps(maps, test.gts, test.scan_ids, tau, regime.label(), std::string(to_string(method)),
                                regime.kind == RegimeKind::op));
  }
  return out;
}

}  // namespace attnad

#endif  // ATTNAD_INFERENCE_HPP
