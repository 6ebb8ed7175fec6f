#include <gtest/gtest.h>

#include <random>

#include "attnad/model.hpp"
#include "grad_check.hpp"

namespace attnad {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_size = 8;
  c.latent_dim = 4;
  c.encoder_widths = {2, 3};
  return c;
}

Image ramp_image(std::int64_t n) {
  Image x(n, n);
  for (std::int64_t y = 0; y < n; ++y)
    for (std::int64_t c = 0; c < n; ++c) x(y, c) = 0.1 + 0.8 * double((y * 7 + c * 3) % n) / double(n);
  return x;
}

TEST(Kl, ClosedForms) {
  EXPECT_DOUBLE_EQ(kl_divergence(LatentStats{{0.0, 0.0}, {0.0, 0.0}}), 0.0);
  EXPECT_DOUBLE_EQ(kl_divergence(LatentStats{{1.0}, {0.0}}), 0.5);
  EXPECT_NEAR(kl_divergence(LatentStats{{0.0}, {std::log(4.0)}}), 0.5 * (4.0 - std::log(4.0) - 1.0), 1e-15);
  EXPECT_NEAR(kl_divergence(LatentStats{{0.0}, {std::log(4.0)}}), 0.8069, 1e-4);
  EXPECT_THROW(kl_divergence(LatentStats{{0.0}, {0.0, 0.0}}), ShapeError);
  EXPECT_THROW(kl_divergence(LatentStats{{NAN}, {0.0}}), NumericError);
}

TEST(Kl, BatchFormMatchesScalar) {
  Tensor<double> mu({2, 3}, {0.1, -0.4, 2.0, 0.0, 0.5, -1.0});
  Tensor<double> lv({2, 3}, {0.3, -1.0, 0.2, 1.5, 0.0, -0.2});
  auto kl = kl_divergence(Var<double>::constant(mu), Var<double>::constant(lv)).value();
  EXPECT_NEAR(kl[0], kl_divergence(LatentStats{{0.1, -0.4, 2.0}, {0.3, -1.0, 0.2}}), 1e-14);
  EXPECT_NEAR(kl[1], kl_divergence(LatentStats{{0.0, 0.5, -1.0}, {1.5, 0.0, -0.2}}), 1e-14);
}

TEST(Reparameterize, Examples) {
  LatentStats s{{0.5, -1.0, 2.0}, {0.0, 0.0, 0.0}};
  EXPECT_EQ(reparameterize(s, std::vector<double>{0, 0, 0}), s.mu);
  EXPECT_EQ(reparameterize(s, std::vector<double>{1, 0, 0}), (std::vector<double>{1.5, -1.0, 2.0}));
  LatentStats t{{0.0, 0.0}, {2.0 * std::log(3.0), 2.0 * std::log(3.0)}};
  auto z = reparameterize(t, std::vector<double>{1, 1});
  EXPECT_NEAR(z[0], 3.0, 1e-14);
  EXPECT_NEAR(z[1], 3.0, 1e-14);
  EXPECT_THROW(reparameterize(s, std::vector<double>{1, 1}), ShapeError);
}

TEST(Reconstruction, Examples) {
  Image ones(4, 4, 1.0), half(4, 4, 0.5), x = ramp_image(16);
  EXPECT_NEAR(reconstruction_loss(ones, half, ReconLoss::bce), std::log(2.0), 1e-12);
  EXPECT_NEAR(reconstruction_loss(ones, half, ReconLoss::bce, Reduction::sum), 16.0 * std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(reconstruction_loss(x, x, ReconLoss::l2), 0.0);
  EXPECT_NEAR(reconstruction_loss(x, x, ReconLoss::ssim), 0.0, 1e-12);
  Image y = x;
  y(3, 3) += 0.2;
  EXPECT_NEAR(reconstruction_loss(x, y, ReconLoss::l2), 0.04 / 256.0, 1e-15);
  EXPECT_GT(reconstruction_loss(x, y, ReconLoss::ssim), 0.0);
  EXPECT_THROW(reconstruction_loss(x, ones, ReconLoss::l2), ShapeError);
}

TEST(Reconstruction, MeanReductionScalesKlByPixels) {
  ModelConfig cfg = tiny_config();
  Image x(8, 8, 1.0), xhat(8, 8, 0.5);
  LatentStats s{{1.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.0}};
  EXPECT_NEAR(vae_loss(x, xhat, s, cfg), std::log(2.0) + 0.5 / 64.0, 1e-12);
  cfg.recon_reduction = Reduction::sum;
  cfg.beta = 2.0;
  EXPECT_NEAR(vae_loss(x, xhat, s, cfg), 64.0 * std::log(2.0) + 1.0, 1e-10);
}

TEST(Reconstruction, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  Tensor<double> x = testing::random_tensor({2, 1, 12, 12}, rng, 0.0, 1.0);
  for (auto kind : {ReconLoss::bce, ReconLoss::l2, ReconLoss::ssim}) {
    testing::Fn fn = [&x, kind](const std::vector<Var<double>>& v) {
      return sum(reconstruction_loss(Var<double>::constant(x), sigmoid(v[0]), kind));
    };
    auto r = testing::check_gradient(fn, {testing::random_tensor({2, 1, 12, 12}, rng)}, 1e-5, 60);
    EXPECT_LT(r.max_rel_error, 1e-5) << to_string(kind);
  }
}

TEST(Vae, FeatureSizesAndOutputShape) {
  ModelConfig cfg;
  Vae<float> model(cfg, 1);
  Image x(64, 64, 0.3);
  auto [stats, features] = model.encode(x);
  ASSERT_EQ(features.blocks.size(), 4u);
  const std::int64_t sizes[] = {32, 16, 8, 4};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(features.blocks[i].dim(1), sizes[i]);
    EXPECT_EQ(features.blocks[i].dim(2), sizes[i]);
    EXPECT_EQ(features.blocks[i].dim(0), cfg.encoder_widths[i]);
  }
  EXPECT_EQ(stats.mu.size(), 32u);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  std::vector<double> z(32);
  for (auto& v : z) v = 3.0 * n01(rng);
  Image out = model.decode(z);
  EXPECT_EQ(out.height, 64);
  EXPECT_EQ(out.width, 64);
  for (double v : out.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(model.decode(z), out);
}

TEST(Vae, ZeroProjectionGivesZeroMean) {
  Vae<double> model(tiny_config(), 4);
  for (const char* name : {"mu_head.weight", "mu_head.bias"}) {
    Var<double>* p = model.find_parameter(name);
    ASSERT_NE(p, nullptr);
    for (auto& v : p->mutable_value().values()) v = 0.0;
  }
  auto [stats, f] = model.encode(Image(8, 8, 0.0));
  for (double m : stats.mu) EXPECT_EQ(m, 0.0);
}

TEST(Vae, DeterministicAcrossCallsAndConstruction) {
  Vae<double> a(tiny_config(), 9), b(tiny_config(), 9), c(tiny_config(), 10);
  Image x = ramp_image(8);
  auto s1 = a.encode(x).first, s2 = a.encode(x).first, s3 = b.encode(x).first, s4 = c.encode(x).first;
  EXPECT_EQ(s1.mu, s2.mu);
  EXPECT_EQ(s1.mu, s3.mu);
  EXPECT_EQ(s1.logvar, s3.logvar);
  EXPECT_NE(s1.mu, s4.mu);
}

TEST(Vae, RejectsWrongShapes) {
  Vae<double> model(tiny_config());
  EXPECT_THROW(model.encode(Image(16, 16)), ShapeError);
  EXPECT_THROW(model.decode(std::vector<double>{1.0, 2.0}), ShapeError);
  ModelConfig bad = tiny_config();
  bad.input_size = 6;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.latent_dim = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Vae, ElboGradientMatchesFiniteDifferences) {
  ModelConfig cfg = tiny_config();
  Vae<double> model(cfg, 5);
  std::mt19937_64 rng(12);
  Tensor<double> x = testing::random_tensor({2, 1, 8, 8}, rng, 0.05, 0.95);
  Tensor<double> noise = testing::random_tensor({2, 4}, rng);
  auto params = model.parameters();
  auto loss_of = [&]() {
    Var<double> xv = Var<double>::constant(x);
    auto pass = model.encode(xv);
    Var<double> z = reparameterize(pass.mu, pass.logvar, Var<double>::constant(noise));
    return mean(vae_loss(xv, model.decode(z), pass.mu, pass.logvar, cfg));
  };
  auto grads = grad(loss_of(), params, false);
  std::uniform_int_distribution<int> pick_param(0, static_cast<int>(params.size()) - 1);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto pi = static_cast<std::size_t>(pick_param(rng));
    std::uniform_int_distribution<std::int64_t> pick(0, params[pi].value().size() - 1);
    const auto j = pick(rng);
    const double base = params[pi].value()[j], h = 1e-5;
    params[pi].mutable_value()[j] = base + h;
    const double up = loss_of().item();
    params[pi].mutable_value()[j] = base - h;
    const double down = loss_of().item();
    params[pi].mutable_value()[j] = base;
    const double fd = (up - down) / (2 * h), an = grads[pi].value()[j];
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
  }
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
}  // namespace attnad
