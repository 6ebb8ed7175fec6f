#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "attnad/checkpoint.hpp"
#include "attnad/training.hpp"
#include "grad_check.hpp"

namespace attnad {
namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.input_size = 8;
  c.latent_dim = 4;
  c.encoder_widths = {2, 3};
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.warmup_steps = 2;
  t.total_steps = 5;
  t.batch_size = 3;
  t.learning_rate = 1e-3;
  t.seed = 21;
  return t;
}

std::vector<Image> tiny_images(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) {
    Image x(8, 8);
    for (auto& v : x.values) v = u(rng);
    out.push_back(std::move(x));
  }
  return out;
}

Tensor<double> batch_of(const std::vector<Image>& images) {
  std::vector<const Image*> p;
  for (const auto& x : images) p.push_back(&x);
  return to_batch<double>(std::span<const Image* const>(p));
}

TEST(TotalLoss, LambdaZeroEqualsVaeLoss) {
  Vae<double> model(tiny_model(), 1);
  auto images = tiny_images(3, 1);
  Tensor<double> x = batch_of(images), noise({3, 4}, 0.3);
  ConstraintConfig c;
  c.lambda = 0.0;
  auto on = total_loss(model, x, noise, c, 1, true);
  auto off = total_loss(model, x, noise, c, 1, false);
  EXPECT_EQ(on.total.item(), on.vae.item());
  EXPECT_EQ(off.total.item(), off.vae.item());
  EXPECT_EQ(on.vae.item(), off.vae.item());
}

TEST(TotalLoss, AddsLambdaTimesBatchMeanRegularizer) {
  Vae<double> model(tiny_model(), 2);
  Tensor<double> x = batch_of(tiny_images(4, 2)), noise({4, 4}, -0.1);
  ConstraintConfig c;
  auto terms = total_loss(model, x, noise, c, 2, true);
  auto per_image = barrier_size_loss(terms.attention, c).value();
  double m = 0.0;
  for (std::int64_t i = 0; i < per_image.size(); ++i) m += per_image[i];
  m /= double(per_image.size());
  EXPECT_NEAR(terms.size.item(), m, 1e-14);
  EXPECT_NEAR(terms.total.item(), terms.vae.item() + 10.0 * m, 1e-12);
}

TEST(TotalLoss, FullCoverageBarrierTerm) {
  // Attention of all ones: f_c = -0.2, psi = -log(0.2)/20 = 0.08047.
  std::vector<double> ones(64, 1.0);
  const double term = 10.0 * barrier_size_loss(ones, ConstraintConfig{});
  EXPECT_NEAR(term, 10.0 * 0.08047, 1e-4);
  EXPECT_NEAR(term, -std::log(0.2) / 2.0, 1e-15);
}

TEST(TotalLoss, DoubleBackpropGradientMatchesFiniteDifferences) {
  ModelConfig cfg = tiny_model();
  Vae<double> model(cfg, 3);
  std::mt19937_64 rng(3);
  Tensor<double> x = testing::random_tensor({2, 1, 8, 8}, rng, 0.05, 0.95);
  Tensor<double> noise = testing::random_tensor({2, 4}, rng);
  ConstraintConfig c;
  auto objective = [&]() { return total_loss(model, x, noise, c, 1, true).total; };
  std::vector<Var<double>> enc;
  for (const auto& [name, v] : model.named_parameters())
    if (name.rfind("encoder.", 0) == 0) enc.push_back(v);
  auto grads = grad(objective(), enc, false);
  double worst = 0.0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    std::uniform_int_distribution<std::int64_t> pick(0, enc[i].value().size() - 1);
    for (int s = 0; s < 4; ++s) {
      const auto j = pick(rng);
      const double base = enc[i].value()[j], h = 1e-6;
      enc[i].mutable_value()[j] = base + h;
      const double up = objective().item();
      enc[i].mutable_value()[j] = base - h;
      const double down = objective().item();
      enc[i].mutable_value()[j] = base;
      const double fd = (up - down) / (2 * h), an = grads[i].value()[j];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Train, WarmupIgnoresTheRegularizer) {
  auto images = tiny_images(6, 4);
  TrainConfig a = tiny_train();
  a.warmup_steps = 3;
  a.total_steps = 3;
  TrainConfig b = a;
  b.constraint.lambda = 1000.0;
  b.constraint.p = 0.0;
  auto sa = make_train_state<double>(tiny_model(), a), sb = make_train_state<double>(tiny_model(), b);
  auto oa = train(sa, a, images), ob = train(sb, b, images);
  ASSERT_FALSE(oa.aborted);
  for (std::size_t i = 0; i < sa.model.named_parameters().size(); ++i)
    EXPECT_EQ(testing::values_of(sa.model.named_parameters()[i].second.value()),
              testing::values_of(sb.model.named_parameters()[i].second.value()));
  for (const auto& r : ob.log.records) {
    EXPECT_FALSE(r.constrained);
    EXPECT_EQ(r.size_loss, 0.0);
  }
}

TEST(Train, LogHasOneRecordPerStepAndSwitchesPhase) {
  auto images = tiny_images(7, 5);
  TrainConfig cfg = tiny_train();
  auto s = make_train_state<double>(tiny_model(), cfg);
  auto out = train(s, cfg, images);
  ASSERT_FALSE(out.aborted) << out.error;
  ASSERT_EQ(out.log.records.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(out.log.records[i].step, static_cast<std::int64_t>(i));
    EXPECT_EQ(out.log.records[i].constrained, i >= 2);
    EXPECT_TRUE(std::isfinite(out.log.records[i].vae_loss));
  }
  EXPECT_GT(out.log.records[4].coverage, 0.0);
  EXPECT_EQ(s.step, 5);
}

TEST(Train, UnconstrainedRunIsPureVae) {
  auto images = tiny_images(6, 6);
  TrainConfig cfg = tiny_train();
  cfg.constrained = false;
  auto s = make_train_state<double>(tiny_model(), cfg);
  for (const auto& r : train(s, cfg, images).log.records) EXPECT_FALSE(r.constrained);
}

TEST(Train, SameSeedSameLosses) {
  auto images = tiny_images(9, 7);
  TrainConfig cfg = tiny_train();
  auto s1 = make_train_state<float>(tiny_model(), cfg), s2 = make_train_state<float>(tiny_model(), cfg);
  auto l1 = train(s1, cfg, images).log, l2 = train(s2, cfg, images).log;
  ASSERT_EQ(l1.records.size(), l2.records.size());
  for (std::size_t i = 0; i < l1.records.size(); ++i) {
    EXPECT_EQ(l1.records[i].vae_loss, l2.records[i].vae_loss);
    EXPECT_EQ(l1.records[i].size_loss, l2.records[i].size_loss);
  }
}

TEST(Train, ResumeFromCheckpointIsBitExact) {
  auto images = tiny_images(8, 8);
  TrainConfig cfg = tiny_train();
  cfg.total_steps = 6;
  auto full = make_train_state<double>(tiny_model(), cfg);
  auto full_log = train(full, cfg, images).log;

  TrainConfig half = cfg;
  half.total_steps = 3;
  auto part = make_train_state<double>(tiny_model(), cfg);
  train(part, half, images);
  const auto path = std::filesystem::temp_directory_path() / "attnad_resume_test.ckpt";
  save_checkpoint(path, part);
  auto resumed = load_checkpoint<double>(path);
  std::filesystem::remove(path);
  EXPECT_EQ(resumed.step, 3);
  auto rest = train(resumed, cfg, images).log;
  ASSERT_EQ(rest.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rest.records[i].vae_loss, full_log.records[i + 3].vae_loss);
  for (std::size_t i = 0; i < full.model.named_parameters().size(); ++i)
    EXPECT_EQ(testing::values_of(full.model.named_parameters()[i].second.value()),
              testing::values_of(resumed.model.named_parameters()[i].second.value()));
}

TEST(Train, RejectsBadInputs) {
  TrainConfig cfg = tiny_train();
  auto s = make_train_state<double>(tiny_model(), cfg);
  EXPECT_THROW(train(s, cfg, std::vector<Image>{}), ConfigError);
  cfg.total_steps = 1;
  EXPECT_THROW(train(s, cfg, tiny_images(3, 9)), ConfigError);
  cfg = tiny_train();
  cfg.cam_depth = 3;
  EXPECT_THROW(train(s, cfg, tiny_images(3, 9)), ConfigError);
}

TEST(Train, NonFiniteInputAbortsWithStep) {
  auto images = tiny_images(3, 10);
  for (auto& x : images) x.values[5] = std::nan("");
  TrainConfig cfg = tiny_train();
  auto s = make_train_state<double>(tiny_model(), cfg);
  const auto before = testing::values_of(s.model.named_parameters()[0].second.value());
  auto out = train(s, cfg, images);
  EXPECT_TRUE(out.aborted);
  EXPECT_NE(out.error.find("step 0"), std::string::npos) << out.error;
  EXPECT_TRUE(out.log.records.empty());
  EXPECT_EQ(testing::values_of(s.model.named_parameters()[0].second.value()), before);
}

TEST(TrainConfig, SharpnessSchedule) {
  TrainConfig cfg;
  cfg.warmup_steps = 10;
  cfg.total_steps = 20;
  EXPECT_EQ(cfg.sharpness_at(15), 20.0);
  cfg.t_final = 40.0;
  EXPECT_EQ(cfg.sharpness_at(5), 20.0);
  EXPECT_DOUBLE_EQ(cfg.sharpness_at(15), 30.0);
  EXPECT_DOUBLE_EQ(cfg.sharpness_at(20), 40.0);
}

}  // namespace
}  // namespace attnad
