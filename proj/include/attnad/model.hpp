#ifndef ATTNAD_MODEL_HPP
#define ATTNAD_MODEL_HPP

// Variational autoencoder with a residual, stride-2 convolutional encoder and
// a mirrored decoder (bilinear x2 upsampling followed by convolutions).

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnad/conv.hpp"
#include "attnad/image.hpp"

namespace attnad {

enum class ReconLoss { bce, l2, ssim };

inline std::string_view to_string(ReconLoss r) {
  switch (r) {
    case ReconLoss::bce: return "bce";
    case ReconLoss::l2: return "l2";
    case ReconLoss::ssim: return "ssim";
  }
  return "?";
}

inline std::optional<ReconLoss> recon_loss_from(std::string_view s) {
  for (auto r : {ReconLoss::bce, ReconLoss::l2, ReconLoss::ssim})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

/// Scale of the VAE loss. `mean` divides the whole ELBO (reconstruction sum and
/// KL) by the pixel count; `sum` keeps per-image totals.
enum class Reduction { mean, sum };

inline std::string_view to_string(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

inline std::optional<Reduction> reduction_from(std::string_view s) {
  if (s == "mean") return Reduction::mean;
  if (s == "sum") return Reduction::sum;
  return std::nullopt;
}

struct ModelConfig {
  std::int64_t latent_dim = 32;
  std::int64_t input_size = 64;
  std::vector<std::int64_t> encoder_widths{16, 32, 64, 128};
  ReconLoss recon_loss = ReconLoss::bce;
  Reduction recon_reduction = Reduction::mean;
  double beta = 1.0;
  // Recorded in checkpoints; the only implemented decoder upsampling.
  std::string decoder_upsampling = "bilinear+conv";

  std::int64_t blocks() const { return static_cast<std::int64_t>(encoder_widths.size()); }
  std::int64_t bottleneck_size() const { return input_size >> blocks(); }

  void validate() const {
    if (latent_dim < 1) throw ConfigError("model.latent_dim", "must be >= 1");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("model.beta", "must be >= 0");
    if (encoder_widths.size() < 2) throw ConfigError("model.encoder_widths", "need at least two encoder blocks");
    for (auto w : encoder_widths)
      if (w < 1) throw ConfigError("model.encoder_widths", "widths must be positive");
    if (input_size < 1 || bottleneck_size() < 1 || (bottleneck_size() << blocks()) != input_size)
      throw ConfigError("model.input_size", "must be divisible by 2^blocks");
    if (decoder_upsampling != "bilinear+conv") throw ConfigError("model.decoder_upsampling", "unsupported value");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LatentStats {
  std::vector<double> mu;
  std::vector<double> logvar;
};

/// Encoder block activations for one image: features[s-1] has shape (K_s, H_s, W_s).
struct FeatureStack {
  std::vector<Tensor<double>> blocks;
};

template <typename T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  ConvGeometry geo;

  Var<T> operator()(const Var<T>& x) const { return add_bias(conv2d(x, weight, geo), bias); }
};

template <typename T>
struct Dense {
  Var<T> weight;
  Var<T> bias;

  Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct DownBlock {
  Conv2d<T> conv1, conv2, shortcut;

  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = conv2(relu(conv1(x)));
    return relu(add(h, shortcut(x)));
  }
};

template <typename T>
struct UpBlock {
  Conv2d<T> conv1, conv2, shortcut;

  Var<T> operator()(const Var<T>& x) const {
    Var<T> up = resize_bilinear(x, x.dim(2) * 2, x.dim(3) * 2);
    Var<T> h = conv2(relu(conv1(up)));
    return relu(add(h, shortcut(up)));
  }
};

/// Result of one encoder pass over a batch.
template <typename T>
struct EncoderPass {
  Var<T> mu;        // (N, d)
  Var<T> logvar;    // (N, d)
  std::vector<Var<T>> features;  // per block, (N, K_s, H_s, W_s)
};

template <typename T>
class Vae {
 public:
  Vae() = default;

  /// Parameters drawn uniformly in +-1/sqrt(fan_in) from a seeded stream.
  explicit Vae(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const auto& w = cfg_.encoder_widths;
    std::int64_t in = 1;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i) + ".";
      DownBlock<T> b;
      b.conv1 = make_conv(p + "conv1", in, w[i], 3, {2, 1}, rng);
      b.conv2 = make_conv(p + "conv2", w[i], w[i], 3, {1, 1}, rng);
      b.shortcut = make_conv(p + "shortcut", in, w[i], 1, {2, 0}, rng);
      encoder_.push_back(std::move(b));
      in = w[i];
    }
    const std::int64_t r = cfg_.bottleneck_size();
    const std::int64_t flat = w.back() * r * r;
    mu_head_ = make_dense("mu_head", flat, cfg_.latent_dim, rng);
    logvar_head_ = make_dense("logvar_head", flat, cfg_.latent_dim, rng);
    dec_fc_ = make_dense("decoder.fc", cfg_.latent_dim, flat, rng);
    for (std::size_t i = w.size(); i-- > 0;) {
      const std::int64_t out = i > 0 ? w[i - 1] : std::max<std::int64_t>(1, w[0] / 2);
      const std::string p = "decoder." + std::to_string(w.size() - 1 - i) + ".";
      UpBlock<T> b;
      b.conv1 = make_conv(p + "conv1", w[i], out, 3, {1, 1}, rng);
      b.conv2 = make_conv(p + "conv2", out, out, 3, {1, 1}, rng);
      b.shortcut = make_conv(p + "shortcut", w[i], out, 1, {1, 0}, rng);
      decoder_.push_back(std::move(b));
    }
    const std::int64_t last = std::max<std::int64_t>(1, w[0] / 2);
    out_conv_ = make_conv("decoder.out", last, 1, 3, {1, 1}, rng);
  }

  const ModelConfig& config() const noexcept { return cfg_; }

  /// Ordered (name, parameter) list; the order is stable and used by checkpoints and optimizers.
  const std::vector<std::pair<std::string, Var<T>>>& named_parameters() const noexcept { return params_; }

  std::vector<Var<T>> parameters() const {
    std::vector<Var<T>> out;
    out.reserve(params_.size());
    for (const auto& [n, v] : params_) out.push_back(v);
    return out;
  }

  Var<T>* find_parameter(std::string_view name) {
    for (auto& [n, v] : params_)
      if (n == name) return &v;
    return nullptr;
  }

  std::int64_t parameter_count() const {
    std::int64_t c = 0;
    for (const auto& [n, v] : params_) c += v.value().size();
    return c;
  }

  EncoderPass<T> encode(const Var<T>& x) const {
    if (x.value().rank() != 4 || x.dim(1) != 1 || x.dim(2) != cfg_.input_size || x.dim(3) != cfg_.input_size)
      throw ShapeError("encode: expected (N, 1, " + std::to_string(cfg_.input_size) + ", " +
                       std::to_string(cfg_.input_size) + "), got " + shape_str(x.shape()));
    EncoderPass<T> pass;
    Var<T> h = x;
    for (const auto& b : encoder_) {
      h = b(h);
      pass.features.push_back(h);
    }
    Var<T> flat = reshape(h, {h.dim(0), h.value().size() / h.dim(0)});
    pass.mu = mu_head_(flat);
    pass.logvar = logvar_head_(flat);
    return pass;
  }

  /// Pre-sigmoid reconstruction, (N, 1, H, W).
  Var<T> decode_logits(const Var<T>& z) const {
    if (z.value().rank() != 2 || z.dim(1) != cfg_.latent_dim)
      throw ShapeError("decode: expected latent dimension " + std::to_string(cfg_.latent_dim) + ", got " +
                       shape_str(z.shape()));
    const std::int64_t r = cfg_.bottleneck_size();
    Var<T> h = relu(dec_fc_(z));
    h = reshape(h, {z.dim(0), cfg_.encoder_widths.back(), r, r});
    for (const auto& b : decoder_) h = b(h);
    return out_conv_(h);
  }

  Var<T> decode(const Var<T>& z) const { return sigmoid(decode_logits(z)); }

  // Single-image convenience wrappers, evaluated without graph recording.

  std::pair<LatentStats, FeatureStack> encode(const Image& x) const {
    GradMode off(false);
    auto pass = encode(Var<T>::constant(to_batch<T>(x)));
    LatentStats stats;
    for (auto v : pass.mu.value().values()) stats.mu.push_back(static_cast<double>(v));
    for (auto v : pass.logvar.value().values()) stats.logvar.push_back(static_cast<double>(v));
    FeatureStack fs;
    for (const auto& f : pass.features) {
      Shape s{f.dim(1), f.dim(2), f.dim(3)};
      fs.blocks.push_back(f.value().template cast<double>().reshaped(s));
    }
    return {std::move(stats), std::move(fs)};
  }

  Image decode(std::span<const double> z) const {
    GradMode off(false);
    if (static_cast<std::int64_t>(z.size()) != cfg_.latent_dim)
      throw ShapeError("decode: expected latent dimension " + std::to_string(cfg_.latent_dim) + ", got " +
                       std::to_string(z.size()));
    Tensor<T> zt({1, cfg_.latent_dim});
    for (std::size_t i = 0; i < z.size(); ++i) zt[static_cast<std::int64_t>(i)] = static_cast<T>(z[i]);
    return plane_of(decode(Var<T>::constant(std::move(zt))).value(), 0);
  }

 private:
  Conv2d<T> make_conv(const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k, ConvGeometry geo,
                      std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
    Conv2d<T> c{add_param(name + ".weight", {out, in, k, k}, bound, rng), add_param(name + ".bias", {out}, bound, rng),
                geo};
    return c;
  }

  Dense<T> make_dense(const std::string& name, std::int64_t in, std::int64_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return Dense<T>{add_param(name + ".weight", {out, in}, bound, rng), add_param(name + ".bias", {out}, bound, rng)};
  }

  Var<T> add_param(const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(u(rng));
    auto var = Var<T>::parameter(std::move(t));
    params_.emplace_back(name, var);
    return var;
  }

  ModelConfig cfg_;
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::vector<DownBlock<T>> encoder_;
  Dense<T> mu_head_, logvar_head_, dec_fc_;
  std::vector<UpBlock<T>> decoder_;
  Conv2d<T> out_conv_;
};

// ---------------------------------------------------------------------------
// Latent sampling and loss terms

/// z = mu + exp(logvar / 2) * noise.
template <typename T>
Var<T> reparameterize(const Var<T>& mu, const Var<T>& logvar, const Var<T>& noise) {
  require_same_shape(mu.shape(), noise.shape(), "reparameterize");
  return add(mu, mul(exp(mul_scalar(logvar, T(0.5))), noise));
}

inline std::vector<double> reparameterize(const LatentStats& stats, std::span<const double> noise) {
  if (stats.mu.size() != noise.size() || stats.logvar.size() != noise.size())
    throw ShapeError("reparameterize: noise dimension " + std::to_string(noise.size()) + " vs latent " +
                     std::to_string(stats.mu.size()));
  std::vector<double> z(noise.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = stats.mu[i] + std::exp(stats.logvar[i] / 2.0) * noise[i];
  return z;
}

/// KL(q || N(0, I)) per sample, (N).
template <typename T>
Var<T> kl_divergence(const Var<T>& mu, const Var<T>& logvar) {
  Var<T> inner = sub(add_scalar(logvar, T(1)), add(square(mu), exp(logvar)));
  return mul_scalar(sum_per_sample(inner), T(-0.5));
}

inline double kl_divergence(const LatentStats& stats) {
  if (stats.mu.size() != stats.logvar.size()) throw ShapeError("kl_divergence: mu/logvar dimension mismatch");
  if (!all_finite(stats.mu) || !all_finite(stats.logvar)) throw NumericError("kl_divergence: non-finite statistics");
  double s = 0.0;
  for (std::size_t i = 0; i < stats.mu.size(); ++i)
    s += 1.0 + stats.logvar[i] - stats.mu[i] * stats.mu[i] - std::exp(stats.logvar[i]);
  return -0.5 * s;
}

inline constexpr double kBceEpsilon = 1e-6;
inline constexpr std::int64_t kSsimWindow = 11;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Per-sample structural similarity, mean over valid windows. Inputs (N, 1, H, W).
template <typename T>
Var<T> ssim(const Var<T>& x, const Var<T>& y) {
  const std::int64_t k = std::min({kSsimWindow, x.dim(2), x.dim(3)});
  Var<T> box = Var<T>::constant(Tensor<T>({1, 1, k, k}, static_cast<T>(1.0 / double(k * k))));
  auto filt = [&](const Var<T>& v) { return conv2d(v, box, ConvGeometry{1, 0}); };
  Var<T> mx = filt(x), my = filt(y);
  Var<T> sxx = sub(filt(square(x)), square(mx));
  Var<T> syy = sub(filt(square(y)), square(my));
  Var<T> sxy = sub(filt(mul(x, y)), mul(mx, my));
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  Var<T> num = mul(add_scalar(mul_scalar(mul(mx, my), T(2)), c1), add_scalar(mul_scalar(sxy, T(2)), c2));
  Var<T> den = mul(add_scalar(add(square(mx), square(my)), c1), add_scalar(add(sxx, syy), c2));
  return mean_per_sample(div(num, den));
}

/// Per-sample reconstruction loss, (N).
///
/// bce and l2 reduce over pixels by `reduction` (mean by default, so bce of
/// x = 1 against 0.5 is log 2); ssim is 1 - mean SSIM. `xhat` holds
/// probabilities in [0,1].
template <typename T>
Var<T> reconstruction_loss(const Var<T>& x, const Var<T>& xhat, ReconLoss kind,
                           Reduction reduction = Reduction::mean) {
  require_same_shape(x.shape(), xhat.shape(), "reconstruction_loss");
  auto reduce = [reduction](const Var<T>& v) {
    return reduction == Reduction::mean ? mean_per_sample(v) : sum_per_sample(v);
  };
  switch (kind) {
    case ReconLoss::bce: {
      Var<T> p = clamp(xhat, static_cast<T>(kBceEpsilon), static_cast<T>(1.0 - kBceEpsilon));
      Var<T> ll = add(mul(x, log(p)), mul(add_scalar(neg(x), T(1)), log(add_scalar(neg(p), T(1)))));
      return neg(reduce(ll));
    }
    case ReconLoss::l2: return reduce(square(sub(x, xhat)));
    case ReconLoss::ssim: return add_scalar(neg(ssim(x, xhat)), T(1));
  }
  throw ConfigError("model.recon_loss", "unknown kind");
}

inline double reconstruction_loss(const Image& x, const Image& xhat, ReconLoss kind,
                                  Reduction reduction = Reduction::mean) {
  require_same_size(x, xhat, "reconstruction_loss");
  GradMode off(false);
  auto xv = Var<double>::constant(to_batch<double>(x));
  auto yv = Var<double>::constant(to_batch<double>(xhat));
  return reconstruction_loss(xv, yv, kind, reduction).item();
}

/// reconstruction + beta * KL, per sample.
/// Under Reduction::mean the KL term is divided by the pixel count as well.
template <typename T>
Var<T> vae_loss(const Var<T>& x, const Var<T>& xhat, const Var<T>& mu, const Var<T>& logvar,
                const ModelConfig& cfg) {
  const double pixels = static_cast<double>(x.dim(2) * x.dim(3));
  const double kl_weight = cfg.recon_reduction == Reduction::mean ? cfg.beta / pixels : cfg.beta;
  return add(reconstruction_loss(x, xhat, cfg.recon_loss, cfg.recon_reduction),
             mul_scalar(kl_divergence(mu, logvar), static_cast<T>(kl_weight)));
}

inline double vae_loss(const Image& x, const Image& xhat, const LatentStats& stats, const ModelConfig& cfg) {
  const double pixels = static_cast<double>(x.size());
  const double kl_weight = cfg.recon_reduction == Reduction::mean ? cfg.beta / pixels : cfg.beta;
  return reconstruction_loss(x, xhat, cfg.recon_loss, cfg.recon_reduction) + kl_weight * kl_divergence(stats);
}

}  // namespace attnad

#endif  // ATTNAD_MODEL_HPP
