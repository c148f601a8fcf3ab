#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "revcd/tensor.hpp"

namespace revcd {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are allocated lazily on the
// first step and keep the order of the parameter list.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads);

  const AdamConfig& config() const noexcept { return config_; }
  void set_lr(double lr) noexcept { config_.lr = lr; }
  std::int64_t steps() const noexcept { return steps_; }

  // Restoring from a checkpoint.
  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }
  void set_steps(std::int64_t s) noexcept { steps_ = s; }

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace revcd
