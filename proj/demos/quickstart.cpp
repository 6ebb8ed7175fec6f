// Trains a small constrained VAE on the synthetic benchmark, then compares
// its attention maps with the reconstruction residual of the same model.
//
//   quickstart [output-dir]

#include <iostream>

#include "attnad/attnad.hpp"

using namespace attnad;

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "quickstart_out";
  std::filesystem::create_directories(out);

  SynthConfig synth;
  synth.image_size = 32;
  synth.radius_min = 2.0;
  synth.radius_max = 5.0;
  const Dataset data = generate_synthetic(synth);

  EvalConfig eval;
  eval.regimes = {"fixed:0.5", "op", "percentile:95"};
  const auto prepared = pipeline::prepare(data, eval);
  std::cout << prepared.train.size() << " normal training slices, " << prepared.test.images.size()
            << " anomalous test slices\n";

  ModelConfig model;
  model.input_size = 32;
  model.encoder_widths = {8, 16, 32};

  TrainConfig train;
  train.warmup_steps = 200;
  train.total_steps = 600;
  train.batch_size = 16;
  train.constraint.kind = ConstraintKind::log_barrier;  // p = 0.2, t = 20, lambda = 10

  auto run = pipeline::run_training(model, train, prepared.train, [&](const TrainRecord& r) {
    if (r.step % 100 == 0)
      std::cout << "step " << r.step << (r.constrained ? "  constrained" : "  warm-up    ") << "  vae " << r.vae_loss
                << "  size " << r.size_loss << '\n';
  });
  if (run.outcome.aborted) {
    std::cerr << run.outcome.error << '\n';
    return 1;
  }
  const auto sat = pipeline::constraint_satisfaction(run.state.model, prepared.train, train.cam_depth,
                                                     train.constraint.p);
  std::cout << "trained in " << run.seconds << " s; " << 100.0 * sat.fraction
            << "% of training images meet the size constraint (mean attention " << sat.mean_coverage << ")\n\n";

  const std::vector<Method> methods{Method::attention, Method::residual};
  const auto regimes = eval.parsed_regimes();
  for (const auto& r : pipeline::evaluate_methods(run.state.model, prepared, methods, regimes, train.cam_depth,
                                                  pipeline::training_tag(train)))
    std::cout << r.method << "  " << r.threshold_regime << "  AUROC " << r.auroc << "  AUPRC " << r.auprc
              << "  DICE " << r.dice_dataset << '\n';

  const std::span<const Image> first(prepared.test.images.data(), 4);
  const auto maps = saliency_maps(run.state.model, first, Method::attention, train.cam_depth);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    write_image_png(out / ("input_" + std::to_string(i) + ".png"), first[i], 8);
    write_image_png(out / ("attention_" + std::to_string(i) + ".png"), maps[i], 8);
    write_mask_png(out / ("truth_" + std::to_string(i) + ".png"), prepared.test.gts[i]);
  }
  std::cout << "\nimages written to " << out.string() << '\n';
}
