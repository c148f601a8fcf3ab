#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "revcd/autodiff.hpp"
#include "revcd/schedule.hpp"
#include "revcd/tensor.hpp"

namespace revcd {

enum class WeightMode { unit, analytic };

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 0.01;
  WeightMode w_mode = WeightMode::unit;
  // Probability of replacing a row's visual condition with the null embedding.
  double p_conditional = 0.1;

  void validate() const;
};

// s in [0,1] -> 2s - 1. Values outside [0,1] are clamped; `clamped` (if
// given) receives the number of entries further than 1e-6 outside.
template <typename T>
Tensor<T> precondition(const Tensor<T>& s, std::size_t* clamped = nullptr);
// s' -> (s' + 1) / 2
template <typename T>
Tensor<T> unmap(const Tensor<T>& s);

// Row-wise s_t = sqrt(abar_t) s0 + sqrt(1 - abar_t) eps. t may be 0 (abar_0 = 1).
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& s0, std::span<const int> t, const Tensor<T>& eps,
                        const NoiseSchedule& schedule);

template <typename T>
struct PosteriorMoments {
  Tensor<T> mean;
  std::vector<double> variance;  // per row
};

// Mean/variance of q(s_{t-1} | s_t, s0), clean-sample form.
template <typename T>
PosteriorMoments<T> posterior_mean_var(const Tensor<T>& s_t, const Tensor<T>& s0, std::span<const int> t,
                                       const NoiseSchedule& schedule);
// Same mean written in terms of the source noise.
template <typename T>
Tensor<T> posterior_mean_from_eps(const Tensor<T>& s_t, const Tensor<T>& eps, std::span<const int> t,
                                  const NoiseSchedule& schedule);

// eps_hat = (s_t - sqrt(abar_t) s0_hat) / sqrt(1 - abar_t); requires t >= 1.
template <typename T>
Tensor<T> eps_from_x0(const Tensor<T>& s_t, const Tensor<T>& s0_hat, std::span<const int> t,
                      const NoiseSchedule& schedule);
template <typename T>
Var<T> eps_from_x0(const Tensor<T>& s_t, Var<T> s0_hat, std::span<const int> t, const NoiseSchedule& schedule);

// w_t and w'_t. In analytic mode the t = 1 posterior variance (exactly 0)
// is replaced by beta_1 so the weight stays finite.
double reconstruction_weight(int t, WeightMode mode, const NoiseSchedule& schedule);
double noise_weight(int t, WeightMode mode, const NoiseSchedule& schedule);

// Batch mean of w_t * ||s0 - s0_hat||^2.
template <typename T>
Var<T> loss_reconstruction(const Tensor<T>& s0, Var<T> s0_hat, std::span<const int> t, const LossWeights& weights,
                           const NoiseSchedule& schedule);
template <typename T>
T loss_reconstruction(const Tensor<T>& s0, const Tensor<T>& s0_hat, std::span<const int> t,
                      const LossWeights& weights, const NoiseSchedule& schedule);

// Batch mean of w'_t * ||eps - eps_from_x0(s_t, s0_hat)||^2.
template <typename T>
Var<T> loss_noise(const Tensor<T>& eps, const Tensor<T>& s_t, Var<T> s0_hat, std::span<const int> t,
                  const LossWeights& weights, const NoiseSchedule& schedule);
template <typename T>
T loss_noise(const Tensor<T>& eps, const Tensor<T>& s_t, const Tensor<T>& s0_hat, std::span<const int> t,
             const LossWeights& weights, const NoiseSchedule& schedule);

template <typename T>
Var<T> total_loss(Var<T> rec, Var<T> noise, Var<T> cls, const LossWeights& weights);
double total_loss(double rec, double noise, double cls, const LossWeights& weights);

}  // namespace revcd
