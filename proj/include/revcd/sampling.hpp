#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "revcd/model.hpp"
#include "revcd/schedule.hpp"
#include "revcd/tensor.hpp"

namespace revcd {

// Scale of the noise added after each reverse step.
//   posterior_sqrt: sqrt(posterior_var[t])
//   beta_sqrt:      sqrt(beta[t])
//   beta_literal:   beta[t]
enum class NoiseMode { posterior_sqrt, beta_sqrt, beta_literal };

std::string to_string(NoiseMode mode);
NoiseMode noise_mode_from_string(const std::string& name);

struct GuidanceConfig {
  double g = 1.0;
  NoiseMode noise_mode = NoiseMode::posterior_sqrt;
  // Reverse steps; 0 means the full schedule length.
  int steps = 0;
  std::uint64_t seed = 0;
  // Skip the null-condition pass entirely (guidance disabled).
  bool conditional_only = false;

  void validate(int schedule_steps) const;
  friend bool operator==(const GuidanceConfig&, const GuidanceConfig&) = default;
};

// (1 + g) * cond - g * uncond
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& pred_cond, const Tensor<T>& pred_uncond, double g);

// One ancestral step s_t -> s_{t-1} with the clean-sample posterior mean.
// The estimate is clipped to [-1, 1] first; z is ignored at t = 1.
template <typename T>
Tensor<T> reverse_step(const Tensor<T>& s_t, const Tensor<T>& s0_hat, int t, const NoiseSchedule& schedule,
                       NoiseMode mode, const Tensor<T>& z);

struct SampleResult {
  Tensor<float> semantics;  // [b x d_s], in [0,1]
  // When requested: the state after each reverse step, unmapped and clamped
  // to [0,1]. Entry 0 is the initial noise at t = steps, the last entry t = 0.
  std::vector<Tensor<float>> trajectory;
  std::vector<int> trajectory_t;
};

// Guided ancestral sampling from s_T ~ N(0, I). Row r draws its noise from
// Rng(seed).fork(r), so results do not depend on how rows are batched.
SampleResult sample(const Denoiser<float>& model, const Tensor<float>& x, const NoiseSchedule& schedule,
                    const GuidanceConfig& guidance, bool keep_trajectory = false);

// Max |eps(combine(c, u)) - combine(eps(c), eps(u))| over entries. The
// combination coefficients default to (1 + g, -g); other pairs are accepted
// so a deliberately broken combination can be checked to fail.
template <typename T>
double cfg_equivalence_check(const Tensor<T>& s_t, const Tensor<T>& pred_cond, const Tensor<T>& pred_uncond, double g,
                             int t, const NoiseSchedule& schedule,
                             std::optional<std::pair<double, double>> coefficients = std::nullopt);

}  // namespace revcd
