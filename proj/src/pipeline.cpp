#include "revcd/pipeline.hpp"

#include "revcd/error.hpp"

namespace revcd {

GzslDataset resolve_dataset(const RunConfig& config) {
  if (config.dataset == "synthetic") return generate_synthetic(config.synthetic);
  if (config.dataset.empty()) throw ConfigError("no dataset given (use --dataset DIR or --synthetic default)");
  if (!std::filesystem::exists(config.dataset)) throw ConfigError("dataset path does not exist: " + config.dataset);
  return load_dataset(config.dataset);
}

DenoiserConfig model_config_for(const RunConfig& config, const GzslDataset& ds) {
  DenoiserConfig m = config.model;
  m.d_s = ds.d_s();
  m.d_x = ds.d_x();
  m.n_seen_classes = ds.seen_classes.size();
  m.max_t = config.schedule.steps;
  m.validate();
  return m;
}

GuidanceConfig guidance_for(const RunConfig& config) {
  GuidanceConfig g = config.guidance;
  g.seed = config.seed;
  return g;
}

std::vector<SweepRow> lambda3_sweep(const GzslDataset& ds, const RunConfig& config, std::span<const double> grid,
                                    const TrainHooks& hooks) {
  if (grid.empty()) throw ConfigError("lambda3 grid is empty");
  for (double v : grid)
    if (!(v >= 0.0)) throw ConfigError("lambda3 grid values must be >= 0");
  std::vector<SweepRow> rows;
  for (double lambda3 : grid) {
    RunConfig run = config;
    run.loss.lambda3 = lambda3;
    Trainer trainer(model_config_for(run, ds), run.effective_train());
    trainer.train(ds, hooks);
    const auto sampler = diffusion_sampler(trainer.model(), trainer.schedule(), guidance_for(run), run.n_draws);
    rows.push_back({lambda3, evaluate(ds, sampler)});
  }
  return rows;
}

}  // namespace revcd
