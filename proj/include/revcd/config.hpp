#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "revcd/dataset.hpp"
#include "revcd/model.hpp"
#include "revcd/sampling.hpp"
#include "revcd/training.hpp"

namespace revcd {

// Effective configuration of one CLI invocation. Keys of the JSON form:
//   dataset            path to an RZD v1 directory, or "synthetic" for the generator
//   synthetic          {n_seen, n_unseen, d_s, d_x, per_class, noise_sigma, seed}
//   schedule           {T, beta_start, beta_end}
//   model              {hidden, d_t, d_c, n_heads, n_tokens, d_ff, dropout}
//   loss               {lambda1, lambda2, lambda3, w_mode, p_conditional}
//   train              {epochs, batch_size, lr, checkpoint_interval, max_steps, log_interval}
//   guidance           {g, noise_mode, steps, n_draws}
//   output_dir, seed, deterministic
// d_s, d_x and the class count come from the data, not from this file.
struct RunConfig {
  std::string dataset;
  SyntheticSpec synthetic;
  ScheduleConfig schedule;
  DenoiserConfig model;
  LossWeights loss;
  TrainConfig train;
  GuidanceConfig guidance;
  int n_draws = 1;
  std::string output_dir = "revcd_out";
  std::uint64_t seed = 0;
  bool deterministic = false;

  // Defaults sized for the built-in synthetic dataset.
  static RunConfig synthetic_defaults();

  void validate() const;
  // Copies the shared fields (schedule, loss, seed) into `train`.
  TrainConfig effective_train() const;
};

nlohmann::json to_json(const RunConfig& c);
// Unknown keys are rejected so typos do not silently fall back to defaults.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScheduleConfig& c);
ScheduleConfig schedule_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec base = {});

std::string to_string(WeightMode mode);
WeightMode weight_mode_from_string(const std::string& name);

}  // namespace revcd
