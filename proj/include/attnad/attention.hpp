#ifndef ATTNAD_ATTENTION_HPP
#define ATTNAD_ATTENTION_HPP

// Grad-CAM attention from the latent mean onto an encoder block.
//
// alpha_k is the spatial mean (over the block's own feature domain) of the
// gradient of the target with respect to channel k; the map is the
// alpha-weighted channel sum, squashed by a sigmoid for training and min-max
// normalized for inference, then bilinearly resized to the input grid.

#include <limits>

#include "attnad/model.hpp"

namespace attnad {

struct AttentionMap {
  Grid values;
  std::int64_t source_depth = 1;
};

struct CamWeights {
  std::vector<double> alpha;
};

template <typename T>
bool all_finite_tensor(const Tensor<T>& t) {
  for (T v : t.values())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

/// Weighted channel sum before squashing or resizing, plus the weights used.
template <typename T>
struct CamTerms {
  Var<T> alpha;  // (N, K)
  Var<T> cam;    // (N, 1, Hs, Ws)
};

/// Grad-CAM of `target` (summed over every element) with respect to `features`.
///
/// With `create_graph` the result remains differentiable with respect to
/// everything `target` and `features` depend on.
template <typename T>
CamTerms<T> grad_cam_terms(const Var<T>& target, const Var<T>& features, bool create_graph) {
  if (!features.requires_grad()) throw ConfigError("grad_cam: features are not connected to the graph");
  Var<T> total = sum(target);
  std::vector<Var<T>> inputs{features};
  Var<T> g = grad(total, inputs, create_graph)[0];
  if (!all_finite_tensor(g.value())) throw NumericError("grad_cam: non-finite gradients");
  GradMode mode(create_graph && grad_enabled());
  CamTerms<T> terms;
  terms.alpha = spatial_mean(g);
  terms.cam = channel_sum(mul(features, broadcast_spatial(terms.alpha, features.dim(2), features.dim(3))));
  return terms;
}

inline void check_depth(std::int64_t depth, std::int64_t blocks) {
  if (depth < 1 || depth > blocks)
    throw ConfigError("cam_depth", "depth " + std::to_string(depth) + " outside [1, " + std::to_string(blocks) + "]");
}

/// Training-time attention: sigmoid(cam) resized to (H, W). Differentiable
/// with respect to the model parameters through the gradient that forms alpha.
template <typename T>
Var<T> attention_for_training(const EncoderPass<T>& pass, std::int64_t depth, std::int64_t height, std::int64_t width) {
  check_depth(depth, static_cast<std::int64_t>(pass.features.size()));
  auto terms = grad_cam_terms(pass.mu, pass.features[static_cast<std::size_t>(depth - 1)], true);
  return resize_bilinear(sigmoid(terms.cam), height, width);
}

/// Un-squashed CAM per image, resized to the input grid (inference path).
template <typename T>
std::vector<Grid> raw_cam_batch(const Vae<T>& model, const Tensor<T>& batch, std::int64_t depth) {
  check_depth(depth, model.config().blocks());
  GradMode on(true);
  auto pass = model.encode(Var<T>::constant(batch));
  auto terms = grad_cam_terms(pass.mu, pass.features[static_cast<std::size_t>(depth - 1)], false);
  Var<T> up = resize_bilinear(terms.cam, batch.dim(2), batch.dim(3));
  std::vector<Grid> out;
  for (std::int64_t n = 0; n < batch.dim(0); ++n) out.push_back(plane_of(up.value(), n));
  return out;
}

/// Grad-CAM_D at feature resolution: one CAM per latent dimension (target =
/// that component of the mean), averaged element-wise. (N, 1, Hs, Ws).
template <typename T>
Tensor<T> disentangled_cam(const Vae<T>& model, const Tensor<T>& batch, std::int64_t depth) {
  check_depth(depth, model.config().blocks());
  GradMode on(true);
  auto pass = model.encode(Var<T>::constant(batch));
  const Var<T>& f = pass.features[static_cast<std::size_t>(depth - 1)];
  const std::int64_t n = batch.dim(0), d = pass.mu.dim(1);
  std::vector<Var<T>> inputs{f};
  std::vector<Var<T>> outs{pass.mu};
  Tensor<T> acc({n, 1, f.dim(2), f.dim(3)});
  for (std::int64_t j = 0; j < d; ++j) {
    Tensor<T> select({n, d});
    for (std::int64_t i = 0; i < n; ++i) select[i * d + j] = T(1);
    std::vector<Var<T>> seeds{Var<T>::constant(std::move(select))};
    Var<T> g = grad<T>(std::span<const Var<T>>(outs), std::span<const Var<T>>(seeds),
                       std::span<const Var<T>>(inputs), false)[0];
    if (!all_finite_tensor(g.value())) throw NumericError("grad_cam_disentangled: non-finite gradients");
    GradMode off(false);
    Var<T> cam = channel_sum(mul(f.detach(), broadcast_spatial(spatial_mean(g), f.dim(2), f.dim(3))));
    for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += cam.value()[i] / static_cast<T>(d);
  }
  return acc;
}

/// Raw Grad-CAM_D maps resized to the input grid (inference path).
template <typename T>
std::vector<Grid> raw_cam_disentangled_batch(const Vae<T>& model, const Tensor<T>& batch, std::int64_t depth) {
  Tensor<T> acc = disentangled_cam(model, batch, depth);
  GradMode off(false);
  Var<T> up = resize_bilinear(Var<T>::constant(std::move(acc)), batch.dim(2), batch.dim(3));
  std::vector<Grid> out;
  for (std::int64_t i = 0; i < batch.dim(0); ++i) out.push_back(plane_of(up.value(), i));
  return out;
}

/// Squashed Grad-CAM of a single image at depth `s` (target = sum of the latent mean).
template <typename T>
AttentionMap grad_cam(const Vae<T>& model, const Image& x, std::int64_t depth) {
  check_depth(depth, model.config().blocks());
  // Squash at feature resolution then resize, matching the training path.
  GradMode on(true);
  auto pass = model.encode(Var<T>::constant(to_batch<T>(x)));
  auto terms = grad_cam_terms(pass.mu, pass.features[static_cast<std::size_t>(depth - 1)], false);
  GradMode off(false);
  Var<T> a = resize_bilinear(sigmoid(terms.cam), x.height, x.width);
  return AttentionMap{plane_of(a.value(), 0), depth};
}

template <typename T>
AttentionMap grad_cam_disentangled(const Vae<T>& model, const Image& x, std::int64_t depth) {
  Tensor<T> acc = disentangled_cam(model, to_batch<T>(x), depth);
  GradMode off(false);
  Var<T> a = resize_bilinear(sigmoid(Var<T>::constant(std::move(acc))), x.height, x.width);
  return AttentionMap{plane_of(a.value(), 0), depth};
}

/// Channel weights alpha_k for one image.
template <typename T>
CamWeights cam_weights(const Vae<T>& model, const Image& x, std::int64_t depth) {
  check_depth(depth, model.config().blocks());
  GradMode on(true);
  auto pass = model.encode(Var<T>::constant(to_batch<T>(x)));
  auto terms = grad_cam_terms(pass.mu, pass.features[static_cast<std::size_t>(depth - 1)], false);
  CamWeights w;
  for (T v : terms.alpha.value().values()) w.alpha.push_back(static_cast<double>(v));
  return w;
}

/// (v - min) / (max - min); a constant grid maps to zeros.
inline Grid minmax_normalize(const Grid& raw) {
  Grid out = raw;
  if (raw.values.empty()) return out;
  auto [lo, hi] = std::minmax_element(raw.values.begin(), raw.values.end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  for (auto& v : out.values) v = (v - mn) / (mx - mn);
  return out;
}

}  // namespace attnad

#endif  // ATTNAD_ATTENTION_HPP
