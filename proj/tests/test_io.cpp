#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "attnad/checkpoint.hpp"
#include "attnad/png.hpp"
#include "grad_check.hpp"

namespace attnad {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("attnad_io_" + name); }

ModelConfig tiny_model() {
  ModelConfig c;
  c.input_size = 8;
  c.latent_dim = 3;
  c.encoder_widths = {2, 2};
  return c;
}

template <typename T>
void expect_same_state(const TrainState<T>& a, const TrainState<T>& b) {
  EXPECT_EQ(a.step, b.step);
  EXPECT_EQ(a.optimizer.steps(), b.optimizer.steps());
  const auto& pa = a.model.named_parameters();
  const auto& pb = b.model.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(testing::values_of(pa[i].second.value()), testing::values_of(pb[i].second.value()));
    EXPECT_EQ(testing::values_of(a.optimizer.first_moments()[i]), testing::values_of(b.optimizer.first_moments()[i]));
    EXPECT_EQ(testing::values_of(a.optimizer.second_moments()[i]),
              testing::values_of(b.optimizer.second_moments()[i]));
  }
}

template <typename T>
TrainState<T> trained_state() {
  TrainConfig cfg;
  cfg.warmup_steps = 1;
  cfg.total_steps = 3;
  cfg.batch_size = 2;
  cfg.seed = 4;
  std::vector<Image> images(4, Image(8, 8, 0.4));
  for (std::size_t i = 0; i < images.size(); ++i) images[i].values[i * 3] = 0.9;
  auto s = make_train_state<T>(tiny_model(), cfg);
  train(s, cfg, images);
  return s;
}

TEST(Checkpoint, BitExactRoundTripDouble) {
  auto s = trained_state<double>();
  const auto path = scratch("double.ckpt");
  save_checkpoint(path, s);
  expect_same_state(s, load_checkpoint<double>(path));
  auto info = checkpoint_info(path);
  EXPECT_EQ(info["dtype"], "float64");
  EXPECT_EQ(info["step"], 3);
  EXPECT_EQ(info["model"]["latent_dim"], 3);
  fs::remove(path);
}

TEST(Checkpoint, BitExactRoundTripFloat) {
  auto s = trained_state<float>();
  const auto path = scratch("float.ckpt");
  save_checkpoint(path, s);
  expect_same_state(s, load_checkpoint<float>(path));
  EXPECT_THROW(load_checkpoint<double>(path), DataError);
  fs::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto path = scratch("bad.ckpt");
  std::ofstream(path, std::ios::binary) << "NOTACKPT";
  EXPECT_THROW(load_checkpoint<double>(path), DataError);
  EXPECT_THROW(load_checkpoint<double>(scratch("absent.ckpt")), DataError);

  auto s = trained_state<double>();
  save_checkpoint(path, s);
  const auto full = fs::file_size(path);
  fs::resize_file(path, full - 16);
  EXPECT_THROW(load_checkpoint<double>(path), DataError);
  fs::remove(path);
}

TEST(Png, SixteenBitRoundTripIsExactForQuantizedValues) {
  const auto path = scratch("img16.png");
  Image x(5, 7);
  for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] = double((i * 9173) % 65536) / 65535.0;
  write_image_png(path, x, 16);
  EXPECT_EQ(read_image_png(path), x);
  auto px = read_png(path);
  EXPECT_EQ(px.bit_depth, 16);
  fs::remove(path);
}

TEST(Png, EightBitAndMasks) {
  const auto path = scratch("img8.png");
  Image x(2, 2, std::vector<double>{0.0, 1.0, 0.5, 2.0});
  write_image_png(path, x, 8);
  auto back = read_image_png(path);
  EXPECT_EQ(back.values[0], 0.0);
  EXPECT_EQ(back.values[1], 1.0);
  EXPECT_EQ(back.values[3], 1.0);  // clamped
  EXPECT_NEAR(back.values[2], 128.0 / 255.0, 1e-15);
  Mask m(3, 2);
  m.bits = {1, 0, 0, 1, 1, 0};
  write_mask_png(path, m);
  EXPECT_EQ(read_mask_png(path), m);
  fs::remove(path);
  EXPECT_THROW(read_png(scratch("nope.png")), DataError);
}

TEST(Config, DefaultsRoundTrip) {
  ExperimentConfig c;
  auto j = to_json(c);
  auto back = experiment_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_EQ(back.train.constraint.p, 0.2);
  EXPECT_EQ(back.train.constraint.t, 20.0);
  EXPECT_EQ(back.train.constraint.lambda, 10.0);
  EXPECT_EQ(back.train.learning_rate, 1e-4);
  EXPECT_EQ(back.train.warmup_steps, 400);
}

TEST(Config, UnknownKeysNameTheirPath) {
  auto expect_field = [](const nlohmann::json& j, const std::string& field) {
    try {
      experiment_from_json(j);
      FAIL() << "accepted " << j.dump();
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.field(), field);
    }
  };
  expect_field({{"bogus", 1}}, "bogus");
  expect_field({{"train", {{"constraint", {{"tt", 3}}}}}}, "train.constraint.tt");
  expect_field({{"model", {{"latent", 3}}}}, "model.latent");
  expect_field({{"data", {{"synth", {{"size", 3}}}}}}, "data.synth.size");
  expect_field({{"train", {{"constraint", {{"p", 1.5}}}}}}, "train.constraint.p");
  expect_field({{"train", {{"constraint", {{"kind", "l3"}}}}}}, "train.constraint.kind");
  expect_field({{"train", {{"batch_size", "big"}}}}, "train.batch_size");
  expect_field({{"data", {{"manifest", "m.json"}, {"synth", nlohmann::json::object()}}}}, "data");
  expect_field({{"eval", {{"regimes", {"fixed:2"}}}}}, "eval.regimes");
}

TEST(Config, PartialOverridesKeepDefaults) {
  auto c = experiment_from_json(nlohmann::json::parse(R"({
    "data": {"synth": {"image_size": 32, "seed": 9}},
    "model": {"input_size": 32, "encoder_widths": [8, 16]},
    "train": {"total_steps": 10, "warmup_steps": 2, "constraint": {"kind": "l2_image", "p": 0.0}}
  })"));
  EXPECT_EQ(c.synth->image_size, 32);
  EXPECT_EQ(c.synth->seed, 9u);
  EXPECT_EQ(c.synth->slices_per_scan, SynthConfig{}.slices_per_scan);
  EXPECT_EQ(c.train.constraint.kind, ConstraintKind::l2_image);
  EXPECT_EQ(c.train.constraint.t, 20.0);
  EXPECT_EQ(c.model.latent_dim, 32);
}

TEST(Config, LoadsFromFile) {
  const auto path = scratch("cfg.json");
  std::ofstream(path) << R"({"data": {"manifest": "x/manifest.json"}, "repetitions": 1})";
  auto c = load_experiment(path);
  EXPECT_EQ(*c.manifest, "x/manifest.json");
  EXPECT_FALSE(c.synth.has_value());
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(load_experiment(path), ConfigError);
  fs::remove(path);
}

}  // namespace
}  // namespace attnad
