#ifndef ATTNAD_CONFIG_HPP
#define ATTNAD_CONFIG_HPP

// JSON (de)serialization of every configuration record and the experiment
// document. Unknown keys are rejected with the dotted path of the key.

#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "attnad/inference.hpp"

namespace attnad {

using Json = nlohmann::ordered_json;

namespace detail {

/// Reads fields of one JSON object and rejects keys that were never consumed.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key), "has the wrong type");
    }
  }

  /// Present, non-null sub-object or nullptr.
  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// ConstraintConfig

inline Json to_json(const ConstraintConfig& c) {
  return Json{{"p", c.p}, {"t", c.t}, {"lambda", c.lambda}, {"kind", to_string(c.kind)}};
}

inline ConstraintConfig constraint_from_json(const nlohmann::json& j, const std::string& path = "train.constraint") {
  ConstraintConfig c;
  detail::ObjectReader r(j, path);
  r.read("p", c.p);
  r.read("t", c.t);
  r.read("lambda", c.lambda);
  std::string kind(to_string(c.kind));
  r.read("kind", kind);
  auto k = constraint_kind_from(kind);
  if (!k) throw ConfigError(r.field("kind"), "unknown constraint kind \"" + kind + "\"");
  c.kind = *k;
  r.finish();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// ModelConfig

inline Json to_json(const ModelConfig& m) {
  return Json{{"latent_dim", m.latent_dim},
              {"input_size", m.input_size},
              {"encoder_widths", m.encoder_widths},
              {"recon_loss", to_string(m.recon_loss)},
              {"recon_reduction", to_string(m.recon_reduction)},
              {"beta", m.beta},
              {"decoder_upsampling", m.decoder_upsampling}};
}

inline ModelConfig model_from_json(const nlohmann::json& j, const std::string& path = "model") {
  ModelConfig m;
  detail::ObjectReader r(j, path);
  r.read("latent_dim", m.latent_dim);
  r.read("input_size", m.input_size);
  r.read("encoder_widths", m.encoder_widths);
  std::string loss(to_string(m.recon_loss)), reduction(to_string(m.recon_reduction));
  r.read("recon_loss", loss);
  r.read("recon_reduction", reduction);
  r.read("beta", m.beta);
  r.read("decoder_upsampling", m.decoder_upsampling);
  r.finish();
  auto l = recon_loss_from(loss);
  if (!l) throw ConfigError(r.field("recon_loss"), "unknown reconstruction loss \"" + loss + "\"");
  m.recon_loss = *l;
  auto red = reduction_from(reduction);
  if (!red) throw ConfigError(r.field("recon_reduction"), "must be \"mean\" or \"sum\"");
  m.recon_reduction = *red;
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// TrainConfig

inline Json to_json(const TrainConfig& t) {
  return Json{{"warmup_steps", t.warmup_steps},
              {"total_steps", t.total_steps},
              {"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},
              {"constrained", t.constrained},
              {"constraint", to_json(t.constraint)},
              {"cam_depth", t.cam_depth},
              {"seed", t.seed},
              {"grad_clip", t.grad_clip},
              {"t_final", t.t_final ? Json(*t.t_final) : Json(nullptr)}};
}

inline TrainConfig train_from_json(const nlohmann::json& j, const std::string& path = "train") {
  TrainConfig t;
  detail::ObjectReader r(j, path);
  r.read("warmup_steps", t.warmup_steps);
  r.read("total_steps", t.total_steps);
  r.read("batch_size", t.batch_size);
  r.read("learning_rate", t.learning_rate);
  r.read("adam_beta1", t.adam_beta1);
  r.read("adam_beta2", t.adam_beta2);
  r.read("constrained", t.constrained);
  if (const auto* c = r.child("constraint")) t.constraint = constraint_from_json(*c, r.field("constraint"));
  r.read("cam_depth", t.cam_depth);
  r.read("seed", t.seed);
  r.read("grad_clip", t.grad_clip);
  if (const auto* tf = r.child("t_final")) {
    if (!tf->is_number()) throw ConfigError(r.field("t_final"), "has the wrong type");
    t.t_final = tf->get<double>();
  }
  r.finish();
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// SynthConfig

inline Json to_json(const SynthConfig& s) {
  return Json{{"n_train_scans", s.n_train_scans},
              {"n_val_scans", s.n_val_scans},
              {"n_test_scans", s.n_test_scans},
              {"slices_per_scan", s.slices_per_scan},
              {"image_size", s.image_size},
              {"blobs_min", s.blobs_min},
              {"blobs_max", s.blobs_max},
              {"radius_min", s.radius_min},
              {"radius_max", s.radius_max},
              {"shift_min", s.shift_min},
              {"shift_max", s.shift_max},
              {"smoothness", s.smoothness},
              {"structure_contrast", s.structure_contrast},
              {"structure_scale", s.structure_scale},
              {"structure_width", s.structure_width},
              {"anatomy_fraction", s.anatomy_fraction},
              {"seed", s.seed}};
}

inline SynthConfig synth_from_json(const nlohmann::json& j, const std::string& path = "data.synth") {
  SynthConfig s;
  detail::ObjectReader r(j, path);
  r.read("n_train_scans", s.n_train_scans);
  r.read("n_val_scans", s.n_val_scans);
  r.read("n_test_scans", s.n_test_scans);
  r.read("slices_per_scan", s.slices_per_scan);
  r.read("image_size", s.image_size);
  r.read("blobs_min", s.blobs_min);
  r.read("blobs_max", s.blobs_max);
  r.read("radius_min", s.radius_min);
  r.read("radius_max", s.radius_max);
  r.read("shift_min", s.shift_min);
  r.read("shift_max", s.shift_max);
  r.read("smoothness", s.smoothness);
  r.read("structure_contrast", s.structure_contrast);
  r.read("structure_scale", s.structure_scale);
  r.read("structure_width", s.structure_width);
  r.read("anatomy_fraction", s.anatomy_fraction);
  r.read("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Experiment

struct EvalConfig {
  std::vector<std::string> regimes{"fixed:0.5", "op", "percentile:85", "percentile:90", "percentile:95",
                                   "percentile:98"};
  std::vector<std::string> methods{"attention", "residual"};
  std::int64_t qualitative = 4;       // panels written for the first k test images
  std::int64_t normal_images = 64;    // training images used for percentile thresholds
  double min_anomaly_fraction = 1e-4;

  std::vector<Regime> parsed_regimes() const {
    std::vector<Regime> out;
    for (const auto& s : regimes) out.push_back(Regime::parse(s));
    return out;
  }

  std::vector<Method> parsed_methods() const {
    std::vector<Method> out;
    for (const auto& s : methods) {
      auto m = method_from(s);
      if (!m) throw ConfigError("eval.methods", "unknown method \"" + s + "\"");
      out.push_back(*m);
    }
    return out;
  }

  void validate() const {
    if (regimes.empty()) throw ConfigError("eval.regimes", "list at least one regime");
    if (methods.empty()) throw ConfigError("eval.methods", "list at least one method");
    parsed_regimes();
    parsed_methods();
    if (qualitative < 0) throw ConfigError("eval.qualitative", "must be >= 0");
    if (normal_images < 1) throw ConfigError("eval.normal_images", "must be >= 1");
    if (!(min_anomaly_fraction >= 0.0 && min_anomaly_fraction < 1.0))
      throw ConfigError("eval.min_anomaly_fraction", "must lie in [0, 1)");
  }
};

inline Json to_json(const EvalConfig& e) {
  return Json{{"regimes", e.regimes},
              {"methods", e.methods},
              {"qualitative", e.qualitative},
              {"normal_images", e.normal_images},
              {"min_anomaly_fraction", e.min_anomaly_fraction}};
}

inline EvalConfig eval_from_json(const nlohmann::json& j, const std::string& path = "eval") {
  EvalConfig e;
  detail::ObjectReader r(j, path);
  r.read("regimes", e.regimes);
  r.read("methods", e.methods);
  r.read("qualitative", e.qualitative);
  r.read("normal_images", e.normal_images);
  r.read("min_anomaly_fraction", e.min_anomaly_fraction);
  r.finish();
  e.validate();
  return e;
}

/// Exactly one of `synth` and `manifest` describes the data.
struct ExperimentConfig {
  std::optional<SynthConfig> synth = SynthConfig{};
  std::optional<std::string> manifest;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::string output_dir = "runs";
  std::int64_t repetitions = 3;

  void validate() const {
    if (synth.has_value() == manifest.has_value())
      throw ConfigError("data", "give exactly one of \"synth\" and \"manifest\"");
    if (synth) {
      synth->validate();
      if (synth->image_size != model.input_size)
        throw ConfigError("model.input_size", "must equal data.synth.image_size");
    }
    model.validate();
    train.validate();
    check_depth(train.cam_depth, model.blocks());
    eval.validate();
    if (repetitions < 1) throw ConfigError("repetitions", "must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  }
};

inline Json to_json(const ExperimentConfig& c) {
  Json data = Json::object();
  if (c.synth) data["synth"] = to_json(*c.synth);
  if (c.manifest) data["manifest"] = *c.manifest;
  return Json{{"data", data},           {"model", to_json(c.model)}, {"train", to_json(c.train)},
              {"eval", to_json(c.eval)}, {"output_dir", c.output_dir}, {"repetitions", c.repetitions}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::ObjectReader r(j, "");
  if (const auto* d = r.child("data")) {
    detail::ObjectReader dr(*d, "data");
    c.synth.reset();
    if (const auto* s = dr.child("synth")) c.synth = synth_from_json(*s);
    if (const auto* m = dr.child("manifest")) {
      if (!m->is_string()) throw ConfigError("data.manifest", "must be a path string");
      c.manifest = m->get<std::string>();
    }
    dr.finish();
  }
  if (const auto* m = r.child("model")) c.model = model_from_json(*m);
  if (const auto* t = r.child("train")) c.train = train_from_json(*t);
  if (const auto* e = r.child("eval")) c.eval = eval_from_json(*e);
  r.read("output_dir", c.output_dir);
  r.read("repetitions", c.repetitions);
  r.finish();
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", "invalid JSON in " + path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

}  // namespace attnad

#endif  // ATTNAD_CONFIG_HPP
