#pragma once

#include <span>
#include <vector>

#include "revcd/config.hpp"
#include "revcd/dataset.hpp"
#include "revcd/training.hpp"
#include "revcd/zsl_eval.hpp"

namespace revcd {

// Dataset named by the config: an RZD directory, or the synthetic generator
// when `dataset` is "synthetic".
GzslDataset resolve_dataset(const RunConfig& config);

// Model dims taken from the data; widths and rates from the config.
DenoiserConfig model_config_for(const RunConfig& config, const GzslDataset& ds);

GuidanceConfig guidance_for(const RunConfig& config);

struct SweepRow {
  double lambda3 = 0;
  GzslMetrics metrics;
};

// Trains and evaluates one model per grid value, every run starting from
// the same seed so rows differ only in lambda3.
std::vector<SweepRow> lambda3_sweep(const GzslDataset& ds, const RunConfig& config, std::span<const double> grid,
                                    const TrainHooks& hooks = {});

}  // namespace revcd
