#ifndef ATTNAD_PIPELINE_HPP
#define ATTNAD_PIPELINE_HPP

// End-to-end helpers shared by the command-line tool, the acceptance driver
// and the demo: data preparation, seeded training runs and evaluation of a
// set of methods under a set of threshold regimes.

#include <chrono>

#include "attnad/checkpoint.hpp"
#include "attnad/config.hpp"
#include "attnad/inference.hpp"

namespace attnad::pipeline {

/// Precision used for every experiment run. Tests use double where they compare against finite differences.
using Real = float;

inline Dataset load_data(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.synth) return generate_synthetic(*cfg.synth);
  return load_dataset(*cfg.manifest);
}

struct Prepared {
  std::vector<Image> train;
  EvalSet test;                // gts empty when the test split carries no masks
  std::vector<Image> normals;  // first training images, for percentile thresholds
};

/// Splits, filters test slices with tiny anomalies and picks the normal reference set.
inline Prepared prepare(const Dataset& data, const EvalConfig& eval) {
  Prepared p;
  p.train = images_of(select_split(data, Split::train));
  if (p.train.empty()) throw DataError("dataset has no training images");
  const Dataset test = select_split(data, Split::test);
  if (test.empty()) throw DataError("dataset has no test images");
  const auto masked = std::count_if(test.begin(), test.end(), [](const Sample& s) { return s.anomaly_mask.has_value(); });
  if (masked == 0) {
    for (const auto& s : test) {
      p.test.images.push_back(s.image);
      p.test.scan_ids.push_back(s.scan_id);
    }
  } else if (static_cast<std::size_t>(masked) != test.size()) {
    throw DataError("test split mixes images with and without ground-truth masks");
  } else {
    p.test = eval_set_of(filter_small_anomalies(test, eval.min_anomaly_fraction));
    if (p.test.images.empty()) throw DataError("no test image passes the minimum anomaly fraction");
  }
  const auto k = std::min<std::size_t>(p.train.size(), static_cast<std::size_t>(eval.normal_images));
  p.normals.assign(p.train.begin(), p.train.begin() + static_cast<std::ptrdiff_t>(k));
  return p;
}

/// Short label of a training setup: the constraint kind, or "none" for the plain VAE.
inline std::string training_tag(const TrainConfig& t) {
  return t.constrained ? std::string(to_string(t.constraint.kind)) : "none";
}

/// Metadata stored in checkpoints so evaluation can recover how a model was trained.
inline Json run_info(const TrainConfig& t) { return Json{{"tag", training_tag(t)}, {"train", to_json(t)}}; }

struct RunResult {
  TrainState<Real> state;
  TrainOutcome outcome;
  double seconds = 0.0;
};

/// Trains from scratch, or continues `resume` when given.
inline RunResult run_training(const ModelConfig& model, const TrainConfig& train_cfg, std::span<const Image> images,
                              const std::function<void(const TrainRecord&)>& on_step = {},
                              std::optional<TrainState<Real>> resume = std::nullopt) {
  RunResult r;
  r.state = resume ? std::move(*resume) : make_train_state<Real>(model, train_cfg);
  const auto t0 = std::chrono::steady_clock::now();
  r.outcome = train(r.state, train_cfg, images, on_step);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct Satisfaction {
  double fraction = 0.0;       // share of images with f_c <= slack
  double mean_coverage = 0.0;  // mean of mean(a)
};

/// How many images meet the size constraint (1 - mean(a)) - p <= slack under the training attention.
template <typename T>
Satisfaction constraint_satisfaction(const Vae<T>& model, std::span<const Image> images, std::int64_t depth, double p,
                                     double slack = 0.05) {
  if (images.empty()) throw DomainError("constraint_satisfaction: no images");
  Satisfaction s;
  std::int64_t ok = 0;
  for (const auto& a : training_attention(model, images, depth)) {
    double m = 0.0;
    for (double v : a.values) m += v;
    m /= static_cast<double>(a.values.size());
    s.mean_coverage += m;
    if ((1.0 - m) - p <= slack) ++ok;
  }
  s.fraction = static_cast<double>(ok) / static_cast<double>(images.size());
  s.mean_coverage /= static_cast<double>(images.size());
  return s;
}

/// Throws unless the test split carries masks; the op regime gets its own message.
inline void require_ground_truth(const Prepared& data, std::span<const Regime> regimes) {
  if (!data.test.gts.empty()) return;
  const bool wants_op =
      std::any_of(regimes.begin(), regimes.end(), [](const Regime& r) { return r.kind == RegimeKind::op; });
  if (wants_op)
    throw DomainError(
        "the op regime needs ground-truth anomaly masks; it is not available in the unsupervised setting");
  throw DomainError("evaluation metrics need ground-truth anomaly masks in the test split");
}

/// Reports for every (method, regime) pair; method labels read "<tag>/<method>".
template <typename T>
std::vector<EvalReport> evaluate_methods(const Vae<T>& model, const Prepared& data, std::span<const Method> methods,
                                         std::span<const Regime> regimes, std::int64_t depth, const std::string& tag) {
  require_ground_truth(data, regimes);
  std::vector<EvalReport> out;
  for (Method m : methods) {
    for (auto& r : evaluate(model, data.test, data.normals, m, regimes, depth)) {
      r.method = tag + "/" + r.method;
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace attnad::pipeline

#endif  // ATTNAD_PIPELINE_HPP
