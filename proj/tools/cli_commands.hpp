#ifndef ATTNAD_TOOLS_CLI_COMMANDS_HPP
#define ATTNAD_TOOLS_CLI_COMMANDS_HPP

// Command implementations behind the `attnad` executable. Kept in a header so
// the test suite can drive them without spawning processes.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "attnad/attnad.hpp"

namespace attnad::cli {

namespace fs = std::filesystem;
using pipeline::Real;

/// An output path exists and --force was not given.
class OverwriteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Options every command accepts.
struct Common {
  std::optional<fs::path> config;
  std::vector<std::string> sets;  // "dotted.path=value" overrides
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  bool force = false;
  bool quiet = false;
};

// ---------------------------------------------------------------------------
// Configuration

/// Parses the right-hand side of --set: JSON when it parses, a bare string otherwise.
inline nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set", "expected path=value, got \"" + assignment + "\"");
  const std::string path = assignment.substr(0, eq);
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set", "empty component in \"" + path + "\"");
    if (!node->is_object()) throw ConfigError(path, "parent is not an object");
    if (dot == std::string::npos) {
      (*node)[key] = parse_override_value(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

/// Config file (or defaults), then --set overrides, then --seed. Validated.
inline ExperimentConfig resolve_config(const Common& c, bool seed_targets_data = false) {
  nlohmann::json doc = nlohmann::json::object();
  if (c.config) {
    std::ifstream in(*c.config);
    if (!in) throw ConfigError("config", "cannot open " + c.config->string());
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config", "invalid JSON in " + c.config->string() + ": " + e.what());
    }
  }
  for (const auto& s : c.sets) apply_override(doc, s);
  ExperimentConfig cfg = experiment_from_json(doc);
  if (c.seed) {
    if (seed_targets_data) {
      if (!cfg.synth) throw ConfigError("data.synth", "--seed needs a synthetic data section");
      cfg.synth->seed = *c.seed;
    } else {
      cfg.train.seed = *c.seed;
    }
  }
  cfg.validate();
  return cfg;
}

/// --out when given, otherwise the configured output directory under $ATTNAD_OUT_ROOT (when set).
inline fs::path output_root(const Common& c, const ExperimentConfig& cfg) {
  if (c.out) return *c.out;
  fs::path dir(cfg.output_dir);
  if (dir.is_relative())
    if (const char* root = std::getenv("ATTNAD_OUT_ROOT"); root && *root) return fs::path(root) / dir;
  return dir;
}

/// Creates `dir`; refuses a non-empty existing directory unless `force`.
inline void claim_output(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw OverwriteError(dir.string() + " exists and is not a directory");
    if (!force && !fs::is_empty(dir))
      throw OverwriteError(dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

inline void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

/// File-name friendly form of a label: "percentile:95" -> "percentile-95", "none/residual" -> "none-residual".
inline std::string slug(std::string s) {
  for (char& ch : s)
    if (ch == ':' || ch == '/' || ch == ' ') ch = '-';
  return s;
}

/// Writes a report and checks it against the schema.
inline void write_report(const fs::path& path, const EvalReport& r) {
  const auto j = to_json(r);
  if (auto errs = report_schema_errors(j); !errs.empty())
    throw DataError("report " + path.string() + " violates the schema: " + errs.front());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// synth

/// Exports the synthetic dataset to <out>/; returns the manifest path.
inline fs::path cmd_synth(const Common& c, std::ostream& log = std::cout) {
  const ExperimentConfig cfg = resolve_config(c, true);
  if (!cfg.synth) throw ConfigError("data.synth", "synth needs a synthetic data section");
  const fs::path dir = output_root(c, cfg);
  claim_output(dir, c.force);
  const Dataset ds = generate_synthetic(*cfg.synth);
  const fs::path manifest = export_dataset(ds, dir);
  write_json(dir / "config.resolved.json", to_json(cfg));
  log << manifest.string() << '\n';
  return manifest;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::optional<std::string> constraint;  // kind name or "none"
  std::optional<fs::path> resume;
  std::int64_t log_every = 100;
};

inline void apply_constraint_option(TrainConfig& t, const std::optional<std::string>& kind) {
  if (!kind) return;
  if (*kind == "none") {
    t.constrained = false;
    return;
  }
  auto k = constraint_kind_from(*kind);
  if (!k) throw ConfigError("--constraint", "unknown constraint kind \"" + *kind + "\"");
  t.constrained = true;
  t.constraint.kind = *k;
}

inline Json record_json(const TrainRecord& r) {
  return Json{{"step", r.step},         {"constrained", r.constrained}, {"vae_loss", r.vae_loss},
              {"size_loss", r.size_loss}, {"coverage", r.coverage},       {"wall_ms", r.wall_ms}};
}

/// One training run into `dir`: model.ckpt, train_log.ndjson, summary.json. Returns false when aborted.
inline bool train_one(const ExperimentConfig& cfg, const TrainConfig& tc, const pipeline::Prepared& data,
                      const fs::path& dir, std::optional<TrainState<Real>> resume, std::int64_t log_every,
                      std::ostream& log, bool quiet) {
  fs::create_directories(dir);
  std::ofstream ndjson(dir / "train_log.ndjson", resume ? std::ios::app : std::ios::trunc);
  if (!ndjson) throw DataError("cannot write " + (dir / "train_log.ndjson").string());
  auto on_step = [&](const TrainRecord& r) {
    ndjson << record_json(r).dump() << '\n';
    if (!quiet && log_every > 0 && (r.step % log_every == 0 || r.step + 1 == tc.total_steps))
      log << "  step " << r.step << "  vae " << r.vae_loss << "  size " << r.size_loss << "  coverage " << r.coverage
          << '\n';
  };
  auto run = pipeline::run_training(cfg.model, tc, data.train, on_step, std::move(resume));
  save_checkpoint(dir / "model.ckpt", run.state, pipeline::run_info(tc));
  Json summary{{"tag", pipeline::training_tag(tc)},
               {"seed", tc.seed},
               {"steps", run.state.step},
               {"seconds", run.seconds},
               {"aborted", run.outcome.aborted},
               {"error", run.outcome.error}};
  if (tc.constrained) {
    const auto sat =
        pipeline::constraint_satisfaction(run.state.model, data.train, tc.cam_depth, tc.constraint.p);
    summary["constraint_satisfied_fraction"] = sat.fraction;
    summary["mean_coverage"] = sat.mean_coverage;
  }
  write_json(dir / "summary.json", summary);
  if (run.outcome.aborted) log << "training aborted: " << run.outcome.error << '\n';
  return !run.outcome.aborted;
}

/// Trains `repetitions` models with seeds s, s+1, ... into <out>/rep<i>/, or continues one checkpoint
/// into <out>/ (step numbering carries on; the log is appended). Every run writes its artifacts before a
/// NumericError reports runs that stopped on non-finite values. Returns the number of runs.
inline std::int64_t cmd_train(const Common& c, const TrainOptions& o, std::ostream& log = std::cout) {
  ExperimentConfig cfg = resolve_config(c);
  apply_constraint_option(cfg.train, o.constraint);
  cfg.validate();
  const fs::path dir = output_root(c, cfg);
  claim_output(dir, c.force || o.resume.has_value());
  write_json(dir / "config.resolved.json", to_json(cfg));
  const auto data = pipeline::prepare(pipeline::load_data(cfg), cfg.eval);

  std::int64_t ok = 0;
  if (o.resume) {
    auto state = load_checkpoint<Real>(*o.resume);
    if (state.model.config() != cfg.model)
      throw ConfigError("model", "checkpoint model does not match the configured model");
    if (!c.quiet) log << "resuming " << o.resume->string() << " at step " << state.step << '\n';
    if (!train_one(cfg, cfg.train, data, dir, std::move(state), o.log_every, log, c.quiet))
      throw NumericError("resumed run aborted on non-finite values");
    return 1;
  }
  for (std::int64_t r = 0; r < cfg.repetitions; ++r) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + static_cast<std::uint64_t>(r);
    if (!c.quiet) log << "run " << r << " (" << pipeline::training_tag(tc) << ", seed " << tc.seed << ")\n";
    ok += train_one(cfg, tc, data, dir / ("rep" + std::to_string(r)), std::nullopt, o.log_every, log, c.quiet);
  }
  if (ok < cfg.repetitions)
    throw NumericError(std::to_string(cfg.repetitions - ok) + " of " + std::to_string(cfg.repetitions) +
                       " runs aborted on non-finite values");
  return cfg.repetitions;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  fs::path checkpoint;  // model.ckpt, or a directory holding rep*/model.ckpt
  std::vector<std::string> regimes;  // empty: from config
  std::vector<std::string> methods;  // empty: from config
};

/// Checkpoints named by `p`: the file itself, or rep*/model.ckpt under a directory in rep order.
inline std::vector<fs::path> find_checkpoints(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("checkpoint path does not exist: " + p.string());
  if (!fs::is_directory(p)) return {p};
  if (fs::exists(p / "model.ckpt")) return {p / "model.ckpt"};
  std::vector<std::pair<int, fs::path>> found;
  for (const auto& e : fs::directory_iterator(p)) {
    const auto name = e.path().filename().string();
    if (e.is_directory() && name.starts_with("rep") && fs::exists(e.path() / "model.ckpt")) {
      try {
        found.emplace_back(std::stoi(name.substr(3)), e.path() / "model.ckpt");
      } catch (const std::exception&) {
      }
    }
  }
  if (found.empty()) throw DataError("no model.ckpt under " + p.string());
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& f : found) out.push_back(f.second);
  return out;
}

/// Training settings recorded in a checkpoint, falling back to the configuration.
inline TrainConfig checkpoint_training(const fs::path& ckpt, const TrainConfig& fallback) {
  const auto info = checkpoint_info(ckpt);
  if (info.contains("run") && info["run"].is_object() && info["run"].contains("train"))
    return train_from_json(info["run"]["train"]);
  return fallback;
}

/// Side-by-side 8-bit panel: input | saliency | predicted mask | ground truth.
inline Grid panel(const Image& x, const Grid& saliency, const Mask& pred, const Mask* gt) {
  const auto h = x.height, w = x.width;
  Grid out(h, 4 * w);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t i = 0; i < w; ++i) {
      const auto k = static_cast<std::size_t>(y * w + i);
      auto at = [&](int col) -> double& { return out.values[static_cast<std::size_t>(y * 4 * w + col * w + i)]; };
      at(0) = x.values[k];
      at(1) = saliency.values[k];
      at(2) = pred.bits[k];
      at(3) = gt ? gt->bits[k] : 0.0;
    }
  return out;
}

/// Reports, saliency maps and qualitative panels of one model into `dir`.
inline std::vector<EvalReport> eval_one(const fs::path& ckpt, const ExperimentConfig& cfg,
                                        const pipeline::Prepared& data, std::span<const Method> methods,
                                        std::span<const Regime> regimes, const fs::path& dir) {
  fs::create_directories(dir);
  const auto state = load_checkpoint<Real>(ckpt);
  const TrainConfig tc = checkpoint_training(ckpt, cfg.train);
  const std::string tag = pipeline::training_tag(tc);
  auto reports = pipeline::evaluate_methods(state.model, data, methods, regimes, tc.cam_depth, tag);
  for (const auto& r : reports)
    write_report(dir / ("report_" + slug(r.method) + "_" + slug(r.threshold_regime) + ".json"), r);

  // Qualitative output uses the first regime's threshold.
  const auto k = std::min<std::size_t>(data.test.images.size(), static_cast<std::size_t>(cfg.eval.qualitative));
  if (k == 0) return reports;
  fs::create_directories(dir / "saliency");
  fs::create_directories(dir / "panels");
  const std::span<const Image> first(data.test.images.data(), k);
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const std::string label = tag + "/" + std::string(to_string(methods[mi]));
    const auto maps = saliency_maps(state.model, first, methods[mi], tc.cam_depth);
    const EvalReport& rep = reports[mi * regimes.size()];
    for (std::size_t i = 0; i < k; ++i) {
      const std::string stem = slug(label) + "_" + std::to_string(i);
      write_image_png(dir / "saliency" / (stem + ".png"), maps[i], 16);
      write_json(dir / "saliency" / (stem + ".json"),
                 Json{{"method", label},
                      {"test_index", i},
                      {"scan_id", data.test.scan_ids[i]},
                      {"encoding", "16-bit grayscale, value = level / 65535"},
                      {"threshold_regime", rep.threshold_regime},
                      {"threshold", rep.threshold}});
      const Mask pred = threshold_grid(maps[i], rep.threshold);
      const Mask* gt = data.test.gts.empty() ? nullptr : &data.test.gts[i];
      write_image_png(dir / "panels" / (stem + ".png"), panel(data.test.images[i], maps[i], pred, gt), 8);
    }
  }
  return reports;
}

/// Evaluates every checkpoint named by the options; <out>/rep<i>/ per checkpoint when there are several.
inline std::vector<EvalReport> cmd_eval(const Common& c, const EvalOptions& o, std::ostream& log = std::cout) {
  ExperimentConfig cfg = resolve_config(c);
  if (!o.regimes.empty()) cfg.eval.regimes = o.regimes;
  if (!o.methods.empty()) cfg.eval.methods = o.methods;
  cfg.validate();
  const auto ckpts = find_checkpoints(o.checkpoint);
  const fs::path dir = output_root(c, cfg);
  const auto regimes = cfg.eval.parsed_regimes();
  const auto methods = cfg.eval.parsed_methods();
  const auto data = pipeline::prepare(pipeline::load_data(cfg), cfg.eval);
  pipeline::require_ground_truth(data, regimes);
  claim_output(dir, c.force);
  write_json(dir / "config.resolved.json", to_json(cfg));
  std::vector<EvalReport> all;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    const fs::path sub = ckpts.size() == 1 ? dir : dir / ("rep" + std::to_string(i));
    auto reps = eval_one(ckpts[i], cfg, data, methods, regimes, sub);
    if (!c.quiet)
      for (const auto& r : reps)
        log << std::left << std::setw(34) << r.method << std::setw(16) << r.threshold_regime << " auroc "
            << std::fixed << std::setprecision(4) << r.auroc << "  auprc " << r.auprc << "  dice " << r.dice_dataset
            << std::defaultfloat << '\n';
    all.insert(all.end(), reps.begin(), reps.end());
  }
  return all;
}

// ---------------------------------------------------------------------------
// ablate

inline const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes{"p", "t", "lambda", "cam_depth", "constraint_kind", "recon_loss",
                                             "latent_dim"};
  return axes;
}

inline std::vector<std::string> default_grid(const std::string& axis) {
  if (axis == "p") return {"0", "0.05", "0.1", "0.15", "0.2", "0.25", "0.3"};
  if (axis == "t") return {"10", "15", "20", "25", "50"};
  if (axis == "lambda") return {"0.01", "0.1", "1", "10", "100"};
  if (axis == "cam_depth") return {"1", "2", "3", "4"};
  if (axis == "constraint_kind") return {"log_barrier", "l2_image", "l2_pixel", "l1_expansion"};
  if (axis == "recon_loss") return {"bce", "l2", "ssim"};
  if (axis == "latent_dim") return {"32", "128"};
  throw ConfigError("--axis", "unknown ablation axis \"" + axis + "\"");
}

/// Categorical axes give one table row per value, numeric axes one column per value.
inline bool axis_is_categorical(const std::string& axis) { return axis == "constraint_kind" || axis == "recon_loss"; }

/// The configuration of one sweep cell.
inline ExperimentConfig ablation_cell(ExperimentConfig cfg, const std::string& axis, const std::string& value) {
  auto number = [&]() {
    try {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("--values", "\"" + value + "\" is not a number for axis " + axis);
    }
  };
  auto integer = [&]() {
    const double v = number();
    if (v != std::floor(v)) throw ConfigError("--values", "\"" + value + "\" is not an integer for axis " + axis);
    return static_cast<std::int64_t>(v);
  };
  if (axis == "p") cfg.train.constraint.p = number();
  else if (axis == "t") cfg.train.constraint.t = number();
  else if (axis == "lambda") cfg.train.constraint.lambda = number();
  else if (axis == "cam_depth") cfg.train.cam_depth = integer();
  else if (axis == "latent_dim") cfg.model.latent_dim = integer();
  else if (axis == "constraint_kind") apply_constraint_option(cfg.train, value);
  else if (axis == "recon_loss") {
    auto l = recon_loss_from(value);
    if (!l) throw ConfigError("--values", "unknown reconstruction loss \"" + value + "\"");
    cfg.model.recon_loss = *l;
  } else {
    throw ConfigError("--axis", "unknown ablation axis \"" + axis + "\"");
  }
  cfg.validate();
  return cfg;
}

struct AblateOptions {
  std::string axis;
  std::vector<std::string> values;  // empty: default grid
  std::optional<std::string> cell;  // run only this value
  bool collect = false;             // only assemble the table from cells on disk
  std::string method = "attention";
};

struct AblationCell {
  std::string value;
  EvalReport report;  // averaged over repetitions
};

/// Regime used in the table: the operating point when configured, otherwise the first regime.
inline std::string table_regime(const EvalConfig& e) {
  for (const auto& r : e.regimes)
    if (r == "op") return r;
  return Regime::parse(e.regimes.front()).label();
}

/// Trains and evaluates every repetition of one cell into `dir`; returns the averaged report.
inline EvalReport run_cell(const ExperimentConfig& cfg, const pipeline::Prepared& data, Method method,
                           const fs::path& dir, std::ostream& log, bool quiet) {
  const auto regimes = cfg.eval.parsed_regimes();
  const std::string wanted = table_regime(cfg.eval);
  std::vector<EvalReport> picked;
  for (std::int64_t r = 0; r < cfg.repetitions; ++r) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + static_cast<std::uint64_t>(r);
    const fs::path sub = dir / ("rep" + std::to_string(r));
    fs::create_directories(sub);
    auto run = pipeline::run_training(cfg.model, tc, data.train);
    if (run.outcome.aborted) throw NumericError("cell " + dir.filename().string() + ": " + run.outcome.error);
    const Method ms[] = {method};
    for (const auto& rep : pipeline::evaluate_methods(run.state.model, data, ms, regimes, tc.cam_depth,
                                                      pipeline::training_tag(tc))) {
      write_report(sub / ("report_" + slug(rep.threshold_regime) + ".json"), rep);
      if (rep.threshold_regime == wanted) picked.push_back(rep);
    }
    if (!quiet) log << "  " << dir.filename().string() << " rep " << r << " auprc " << picked.back().auprc << '\n';
  }
  const auto avg = average_reports(picked);
  write_report(dir / "report_mean.json", avg);
  return avg;
}

inline void write_ablation_table(const fs::path& dir, const std::string& axis, const std::vector<AblationCell>& cells) {
  Json j{{"axis", axis}, {"cells", Json::array()}};
  for (const auto& c : cells)
    j["cells"].push_back(Json{{"value", c.value},
                              {"method", c.report.method},
                              {"threshold_regime", c.report.threshold_regime},
                              {"auprc", c.report.auprc},
                              {"dice", c.report.dice_dataset},
                              {"auroc", c.report.auroc},
                              {"repetitions", c.report.repetitions}});
  write_json(dir / ("ablation_" + axis + ".json"), j);

  std::ofstream csv(dir / ("ablation_" + axis + ".csv"), std::ios::trunc);
  csv << std::setprecision(6);
  if (axis_is_categorical(axis)) {
    csv << axis << ",auprc,dice\n";
    for (const auto& c : cells) csv << c.value << ',' << c.report.auprc << ',' << c.report.dice_dataset << '\n';
  } else {
    csv << "metric";
    for (const auto& c : cells) csv << ',' << axis << '=' << c.value;
    csv << "\nauprc";
    for (const auto& c : cells) csv << ',' << c.report.auprc;
    csv << "\ndice";
    for (const auto& c : cells) csv << ',' << c.report.dice_dataset;
    csv << '\n';
  }
  if (!csv) throw DataError("failed writing ablation table under " + dir.string());
}

/// Runs a sweep along one axis; each cell owns <out>/cells/<value>/ so cells can run as separate processes.
inline std::vector<AblationCell> cmd_ablate(const Common& c, const AblateOptions& o, std::ostream& log = std::cout) {
  const auto& axes = ablation_axes();
  if (std::find(axes.begin(), axes.end(), o.axis) == axes.end())
    throw ConfigError("--axis", "unknown ablation axis \"" + o.axis + "\"");
  const ExperimentConfig base = resolve_config(c);
  auto method = method_from(o.method);
  if (!method) throw ConfigError("--method", "unknown method \"" + o.method + "\"");
  std::vector<std::string> values = o.values.empty() ? default_grid(o.axis) : o.values;
  if (o.cell) values = {*o.cell};
  for (const auto& v : values) ablation_cell(base, o.axis, v);  // validate every cell before any work

  const fs::path dir = output_root(c, base);
  fs::create_directories(dir / "cells");
  std::vector<AblationCell> cells;
  if (o.collect) {
    for (const auto& v : values) {
      const fs::path f = dir / "cells" / slug(v) / "report_mean.json";
      if (!fs::exists(f)) throw DataError("cell " + v + " has no results at " + f.string());
      cells.push_back({v, report_from_json(read_json(f))});
    }
  } else {
    for (const auto& v : values) claim_output(dir / "cells" / slug(v), c.force);
    if (!o.cell) {
      for (const char* ext : {".csv", ".json"})
        if (fs::exists(dir / ("ablation_" + o.axis + ext)) && !c.force)
          throw OverwriteError((dir / ("ablation_" + o.axis + ext)).string() + " exists; pass --force to overwrite");
    }
    write_json(dir / "config.resolved.json", to_json(base));
    const auto data = pipeline::prepare(pipeline::load_data(base), base.eval);
    for (const auto& v : values) {
      const auto cfg = ablation_cell(base, o.axis, v);
      const fs::path cdir = dir / "cells" / slug(v);
      write_json(cdir / "config.resolved.json", to_json(cfg));
      if (!c.quiet) log << o.axis << " = " << v << '\n';
      cells.push_back({v, run_cell(cfg, data, *method, cdir, log, c.quiet)});
    }
  }
  if (!o.cell) write_ablation_table(dir, o.axis, cells);
  return cells;
}

// ---------------------------------------------------------------------------
// report

struct ReportRow {
  std::string method;
  std::string regime;
  EvalReport mean;
  double auprc_std = 0.0;
  double dice_std = 0.0;
};

/// Every evaluation report under `root`, recursively; other JSON files are skipped.
inline std::vector<EvalReport> collect_reports(const fs::path& root) {
  if (!fs::exists(root)) throw DataError("report input does not exist: " + root.string());
  std::vector<fs::path> files;
  if (fs::is_directory(root)) {
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "report_mean.json")
        files.push_back(e.path());
  } else {
    files.push_back(root);
  }
  std::sort(files.begin(), files.end());
  std::vector<EvalReport> out;
  for (const auto& f : files) {
    const auto j = read_json(f);
    if (!j.is_object() || j.value("schema", "") != kReportSchema) continue;
    if (auto errs = report_schema_errors(j); !errs.empty())
      throw DataError(f.string() + " violates the report schema: " + errs.front());
    out.push_back(report_from_json(j));
  }
  if (out.empty()) throw DataError("no evaluation reports under " + root.string());
  return out;
}

/// Groups by (method, regime) and averages repetitions; rows keep first-seen order.
inline std::vector<ReportRow> summarize(const std::vector<EvalReport>& reports) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<EvalReport>> groups;
  for (const auto& r : reports) {
    auto key = std::make_pair(r.method, r.threshold_regime);
    if (!groups.count(key)) keys.push_back(key);
    groups[key].push_back(r);
  }
  std::vector<ReportRow> rows;
  for (const auto& key : keys) {
    const auto& g = groups[key];
    ReportRow row{key.first, key.second, average_reports(g)};
    for (const auto& r : g) {
      row.auprc_std += (r.auprc - row.mean.auprc) * (r.auprc - row.mean.auprc);
      row.dice_std += (r.dice_dataset - row.mean.dice_dataset) * (r.dice_dataset - row.mean.dice_dataset);
    }
    row.auprc_std = std::sqrt(row.auprc_std / static_cast<double>(g.size()));
    row.dice_std = std::sqrt(row.dice_std / static_cast<double>(g.size()));
    rows.push_back(row);
  }
  return rows;
}

/// Markdown table in the layout of the method comparison: one row per method and regime.
inline std::string render_table(const std::vector<ReportRow>& rows) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3);
  s << "| Method | Threshold | AUROC | AUPRC | [DICE] | DICE per scan | Runs |\n";
  s << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows)
    s << "| " << r.method << " | " << r.regime << (r.mean.uses_anomalous_images ? " *" : "") << " | " << r.mean.auroc
      << " | " << r.mean.auprc << " ± " << r.auprc_std << " | " << r.mean.dice_dataset << " ± " << r.dice_std
      << " | " << r.mean.dice_per_scan_mean << " ± " << r.mean.dice_per_scan_std << " | " << r.mean.repetitions
      << " |\n";
  s << "\n* threshold fit on anomalous test images\n";
  return s.str();
}

struct ReportOptions {
  fs::path input;
};

/// Prints the table; with --out also writes table.md, table.csv and averaged reports.
inline std::vector<ReportRow> cmd_report(const Common& c, const ReportOptions& o, std::ostream& log = std::cout) {
  const auto rows = summarize(collect_reports(o.input));
  const std::string table = render_table(rows);
  log << table;
  if (c.out) {
    claim_output(*c.out, c.force);
    std::ofstream(*c.out / "table.md", std::ios::trunc) << table;
    std::ofstream csv(*c.out / "table.csv", std::ios::trunc);
    csv << std::setprecision(6)
        << "method,threshold_regime,auroc,auprc,auprc_std,dice,dice_std,dice_per_scan_mean,dice_per_scan_std,runs\n";
    for (const auto& r : rows) {
      csv << r.method << ',' << r.regime << ',' << r.mean.auroc << ',' << r.mean.auprc << ',' << r.auprc_std << ','
          << r.mean.dice_dataset << ',' << r.dice_std << ',' << r.mean.dice_per_scan_mean << ','
          << r.mean.dice_per_scan_std << ',' << r.mean.repetitions << '\n';
      write_report(*c.out / ("mean_" + slug(r.method) + "_" + slug(r.regime) + ".json"), r.mean);
    }
  }
  return rows;
}

}  // namespace attnad::cli

#endif  // ATTNAD_TOOLS_CLI_COMMANDS_HPP
