// attnad: synth | train | eval | ablate | report

#include <CLI11.hpp>

#include "cli_commands.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kRefused = 3 };

void add_common(CLI::App* sub, attnad::cli::Common& c) {
  sub->add_option("--config,-c", c.config, "experiment configuration (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "override a configuration field, e.g. --set train.constraint.p=0.1");
  sub->add_option("--seed", c.seed, "seed (data seed for synth, training seed otherwise)");
  sub->add_option("--out,-o", c.out, "output directory (default: output_dir, under $ATTNAD_OUT_ROOT when set)");
  sub->add_flag("--force", c.force, "overwrite existing outputs");
  sub->add_flag("--quiet,-q", c.quiet, "less progress output");
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = attnad::cli;
  CLI::App app{"Constrained unsupervised anomaly localization with VAE attention maps"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "attnad 0.1.0");

  cli::Common common;

  auto* synth = app.add_subcommand("synth", "write the synthetic benchmark and its manifest");
  add_common(synth, common);

  cli::TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "train one model per repetition (seeds s, s+1, ...)");
  add_common(train, common);
  train->add_option("--constraint", train_opts.constraint,
                    "log_barrier | l2_image | l2_pixel | l1_expansion | none (plain VAE)");
  train->add_option("--resume", train_opts.resume, "continue training from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--log-every", train_opts.log_every, "progress interval in steps")->capture_default_str();

  cli::EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "score a trained model under every threshold regime");
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_opts.checkpoint, "model.ckpt or a train output directory")->required();
  eval->add_option("--regime", eval_opts.regimes, "fixed:<tau> | op | percentile:<q> (repeatable)");
  eval->add_option("--method", eval_opts.methods, "attention | attention_disentangled | residual | cavga");

  cli::AblateOptions ablate_opts;
  auto* ablate = app.add_subcommand("ablate", "sweep one hyperparameter and tabulate AUPRC and DICE");
  add_common(ablate, common);
  ablate->add_option("--axis", ablate_opts.axis, "p | t | lambda | cam_depth | constraint_kind | recon_loss | latent_dim")
      ->required();
  ablate->add_option("--values", ablate_opts.values, "grid values (default: the standard grid)")->delimiter(',');
  ablate->add_option("--cell", ablate_opts.cell, "run a single grid value (for parallel workers)");
  ablate->add_flag("--collect", ablate_opts.collect, "only assemble the table from finished cells");
  ablate->add_option("--method", ablate_opts.method, "saliency method scored in the table")->capture_default_str();

  cli::ReportOptions report_opts;
  auto* report = app.add_subcommand("report", "average repetitions and print a method comparison table");
  add_common(report, common);
  report->add_option("--in", report_opts.input, "directory (searched recursively) or report file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) {
      cli::cmd_synth(common);
    } else if (*train) {
      cli::cmd_train(common, train_opts);
    } else if (*eval) {
      cli::cmd_eval(common, eval_opts);
    } else if (*ablate) {
      cli::cmd_ablate(common, ablate_opts);
    } else if (*report) {
      cli::cmd_report(common, report_opts);
    }
  } catch (const cli::OverwriteError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRefused;
  } catch (const attnad::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
