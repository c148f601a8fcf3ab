#pragma once

#include <span>
#include <vector>

#include "revcd/tensor.hpp"

namespace revcd {

// Variance schedule tables for t in [1, T]. alpha_bar(0) == 1 is an anchor
// so the first reverse step collapses onto the clean sample.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  // Builds the schedule implied by a strictly decreasing alpha_bar sequence
  // (entries for t = 1..T). Used to respace a schedule for shorter sampling.
  static NoiseSchedule from_alpha_bar(std::span<const double> alpha_bar);

  int steps() const noexcept { return static_cast<int>(beta_.size()) - 1; }
  double beta(int t) const { return beta_.at(check(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;
  double posterior_var(int t) const { return posterior_var_.at(check(t)); }

  // Evenly spaced subsequence of `count` timesteps ending at T, with the
  // matching respaced schedule.
  struct Respaced;
  Respaced respace(int count) const;

 private:
  NoiseSchedule() = default;
  void fill_derived();
  int check(int t) const;

  // index 0 unused for beta/posterior_var; alpha_bar_[0] == 1
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  std::vector<double> posterior_var_;
};

struct NoiseSchedule::Respaced {
  NoiseSchedule schedule;
  // model_t[k] is the original timestep for respaced step k (1-based; index 0 unused)
  std::vector<int> model_t;
};

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct TimeEmbeddingSpec {
  int dim = 32;
  int max_t = 1000;
  std::vector<double> frequencies;

  // f_i = 10000^(-2i/d)
  static TimeEmbeddingSpec standard(int dim, int max_t);
};

// [cos(t f_0), sin(t f_0), ..., cos(t f_{d/2-1}), sin(t f_{d/2-1})]
template <typename T>
Tensor<T> time_embedding(int t, const TimeEmbeddingSpec& spec);
// One embedding row per timestep.
template <typename T>
Tensor<T> time_embedding_batch(std::span<const int> t, const TimeEmbeddingSpec& spec);

// KL(q(s_T | s0) || N(0, I)) in closed form, summed over dimensions.
// Diagnostic only: it has no trainable parameters.
double prior_kl_diagnostic(const NoiseSchedule& schedule, std::span<const double> s0);

}  // namespace revcd
