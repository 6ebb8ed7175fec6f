#ifndef ATTNAD_TRAINING_HPP
#define ATTNAD_TRAINING_HPP

// Two-phase training: plain VAE warm-up, then the VAE loss plus the weighted
// attention size regularizer. The regularizer is averaged over the batch and
// multiplied by lambda.

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>

#include "attnad/attention.hpp"
#include "attnad/constraints.hpp"
#include "attnad/optim.hpp"

namespace attnad {

struct TrainConfig {
  std::int64_t warmup_steps = 400;
  std::int64_t total_steps = 4000;
  std::int64_t batch_size = 32;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  bool constrained = true;  // false trains the plain VAE for all steps
  ConstraintConfig constraint;
  std::int64_t cam_depth = 1;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // global-norm clipping when > 0
  std::optional<double> t_final;  // linear schedule of t over the constrained phase

  void validate() const {
    if (warmup_steps < 0) throw ConfigError("train.warmup_steps", "must be >= 0");
    if (total_steps < warmup_steps) throw ConfigError("train.total_steps", "must be >= warmup_steps");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1", "must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2", "must lie in [0, 1)");
    if (grad_clip < 0.0) throw ConfigError("train.grad_clip", "must be >= 0");
    if (t_final && !(*t_final > 0.0)) throw ConfigError("train.t_final", "must be > 0");
    if (cam_depth < 1) throw ConfigError("train.cam_depth", "must be >= 1");
    constraint.validate();
  }

  /// Barrier sharpness in effect at `step`.
  double sharpness_at(std::int64_t step) const {
    if (!t_final || total_steps <= warmup_steps) return constraint.t;
    const double frac = std::clamp(double(step - warmup_steps) / double(total_steps - warmup_steps), 0.0, 1.0);
    return constraint.t + frac * (*t_final - constraint.t);
  }
};

struct TrainRecord {
  std::int64_t step = 0;
  bool constrained = false;
  double vae_loss = 0.0;
  double size_loss = 0.0;
  double coverage = 0.0;  // batch mean of mean(a); 0 during warm-up
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
};

/// Components of one evaluation of the objective on a batch.
template <typename T>
struct LossTerms {
  Var<T> total;
  Var<T> vae;           // batch mean of reconstruction + beta * KL
  Var<T> size;          // batch mean of the unweighted regularizer (undefined during warm-up)
  Var<T> attention;     // (N, 1, H, W) squashed attention (undefined during warm-up)
};

/// Total objective on a batch: mean VAE loss + lambda * mean size regularizer.
/// With `constrained == false` (warm-up) the regularizer is not built at all.
template <typename T>
LossTerms<T> total_loss(const Vae<T>& model, const Tensor<T>& batch, const Tensor<T>& noise,
                        const ConstraintConfig& constraint, std::int64_t cam_depth, bool constrained) {
  LossTerms<T> out;
  Var<T> x = Var<T>::constant(batch);
  auto pass = model.encode(x);
  Var<T> z = reparameterize(pass.mu, pass.logvar, Var<T>::constant(noise));
  Var<T> xhat = model.decode(z);
  out.vae = mean(vae_loss(x, xhat, pass.mu, pass.logvar, model.config()));
  out.total = out.vae;
  if (constrained) {
    out.attention = attention_for_training(pass, cam_depth, batch.dim(2), batch.dim(3));
    out.size = mean(size_regularizer(out.attention, constraint));
    out.total = add(out.vae, mul_scalar(out.size, static_cast<T>(constraint.lambda)));
  }
  return out;
}

/// Model, optimizer state and step counter; enough to resume a run.
template <typename T>
struct TrainState {
  Vae<T> model;
  Adam<T> optimizer;
  std::int64_t step = 0;
};

template <typename T>
TrainState<T> make_train_state(const ModelConfig& model_cfg, const TrainConfig& cfg) {
  TrainState<T> s;
  s.model = Vae<T>(model_cfg, cfg.seed);
  s.optimizer = Adam<T>(s.model.parameters(), AdamConfig{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
  return s;
}

struct TrainOutcome {
  bool aborted = false;
  std::string error;
  TrainLog log;
};

namespace detail {

/// Deterministic example order: a fresh permutation per epoch from the run seed.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eed0u};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

template <typename T>
Tensor<T> step_noise(std::int64_t n, std::int64_t d, std::uint64_t seed, std::int64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), 0x401e5u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<T> t({n, d});
  for (auto& v : t.values()) v = static_cast<T>(normal(rng));
  return t;
}

template <typename T>
bool finite_all(const std::vector<Var<T>>& grads) {
  for (const auto& g : grads)
    for (T v : g.value().values())
      if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace detail

/// Runs optimizer steps from `state.step` up to `cfg.total_steps` on normal
/// images only. Steps below `warmup_steps` (or all steps when
/// `cfg.constrained` is false) optimize the plain VAE loss.
///
/// A non-finite loss or gradient stops the run before the offending update is
/// applied, so `state` always holds the last good parameters.
template <typename T>
TrainOutcome train(TrainState<T>& state, const TrainConfig& cfg, std::span<const Image> images,
                   const std::function<void(const TrainRecord&)>& on_step = {}) {
  cfg.validate();
  if (images.empty()) throw ConfigError("dataset", "no training images");
  check_depth(cfg.cam_depth, state.model.config().blocks());
  const auto n = images.size();
  const auto batch = static_cast<std::size_t>(std::min<std::int64_t>(cfg.batch_size, static_cast<std::int64_t>(n)));
  const auto per_epoch = static_cast<std::int64_t>(n / batch);
  auto params = state.model.parameters();
  TrainOutcome outcome;

  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order;
  std::vector<const Image*> picked(batch);
  while (state.step < cfg.total_steps) {
    const std::int64_t step = state.step;
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      order = detail::epoch_order(n, cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const auto offset = static_cast<std::size_t>(step % per_epoch) * batch;
    for (std::size_t i = 0; i < batch; ++i) picked[i] = &images[order[offset + i]];
    Tensor<T> x = to_batch<T>(std::span<const Image* const>(picked));
    Tensor<T> noise = detail::step_noise<T>(static_cast<std::int64_t>(batch), state.model.config().latent_dim,
                                            cfg.seed, step);

    const bool constrained = cfg.constrained && step >= cfg.warmup_steps;
    ConstraintConfig cc = cfg.constraint;
    cc.t = cfg.sharpness_at(step);
    LossTerms<T> terms = total_loss(state.model, x, noise, cc, cfg.cam_depth, constrained);

    TrainRecord rec;
    rec.step = step;
    rec.constrained = constrained;
    rec.vae_loss = static_cast<double>(terms.vae.item());
    if (constrained) {
      rec.size_loss = static_cast<double>(terms.size.item());
      double cov = 0.0;
      for (T v : terms.attention.value().values()) cov += static_cast<double>(v);
      rec.coverage = cov / static_cast<double>(terms.attention.value().size());
    }
    const double total = static_cast<double>(terms.total.item());
    if (!std::isfinite(total)) {
      outcome.aborted = true;
      outcome.error = NumericError("non-finite training loss", step).what();
      return outcome;
    }
    auto grads = grad(terms.total, params, false);
    if (!detail::finite_all(grads)) {
      outcome.aborted = true;
      outcome.error = NumericError("non-finite gradient", step).what();
      return outcome;
    }
    if (cfg.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads)
        for (T v : g.value().values()) sq += static_cast<double>(v) * static_cast<double>(v);
      const double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) {
        const T scale = static_cast<T>(cfg.grad_clip / norm);
        for (auto& g : grads)
          for (auto& v : g.mutable_value().values()) v *= scale;
      }
    }
    state.optimizer.step(grads);
    ++state.step;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    outcome.log.records.push_back(rec);
    if (on_step) on_step(rec);
  }
  return outcome;
}

/// Squashed attention of every image, in batches, evaluated without graph
/// recording beyond what Grad-CAM needs.
template <typename T>
std::vector<Grid> training_attention(const Vae<T>& model, std::span<const Image> images, std::int64_t depth,
                                     std::int64_t batch = 32) {
  std::vector<Grid> out;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
    const auto end = std::min(images.size(), start + static_cast<std::size_t>(batch));
    std::vector<const Image*> picked;
    for (auto i = start; i < end; ++i) picked.push_back(&images[i]);
    Tensor<T> x = to_batch<T>(std::span<const Image* const>(picked));
    GradMode on(true);
    auto pass = model.encode(Var<T>::constant(x));
    auto terms = grad_cam_terms(pass.mu, pass.features[static_cast<std::size_t>(depth - 1)], false);
    GradMode off(false);
    Var<T> a = resize_bilinear(sigmoid(terms.cam), x.dim(2), x.dim(3));
    for (std::int64_t i = 0; i < x.dim(0); ++i) out.push_back(plane_of(a.value(), i));
  }
  return out;
}

}  // namespace attnad

#endif  // ATTNAD_TRAINING_HPP
