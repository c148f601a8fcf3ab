#include "revcd/schedule.hpp"

#include <cmath>
#include <string>

namespace revcd {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule: T must be >= 1, got " + std::to_string(steps));
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) + ", " +
                      std::to_string(beta_end));
  NoiseSchedule s;
  s.beta_.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    s.beta_[t] = beta_start + (beta_end - beta_start) * frac;
  }
  s.beta_[steps] = beta_end;
  if (steps == 1) s.beta_[1] = beta_start;
  s.fill_derived();
  return s;
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::span<const double> alpha_bar) {
  if (alpha_bar.empty()) throw ConfigError("schedule: empty alpha_bar sequence");
  NoiseSchedule s;
  s.beta_.assign(alpha_bar.size() + 1, 0.0);
  double prev = 1.0;
  for (std::size_t t = 1; t <= alpha_bar.size(); ++t) {
    const double ab = alpha_bar[t - 1];
    if (!(ab > 0.0 && ab < prev)) throw ConfigError("schedule: alpha_bar must be strictly decreasing in (0, 1)");
    s.beta_[t] = 1.0 - ab / prev;
    prev = ab;
  }
  s.fill_derived();
  // keep the caller's alpha_bar values exactly instead of the re-multiplied ones
  for (std::size_t t = 1; t <= alpha_bar.size(); ++t) s.alpha_bar_[t] = alpha_bar[t - 1];
  for (std::size_t t = 1; t < s.beta_.size(); ++t)
    s.posterior_var_[t] = s.beta_[t] * (1.0 - s.alpha_bar_[t - 1]) / (1.0 - s.alpha_bar_[t]);
  return s;
}

void NoiseSchedule::fill_derived() {
  const std::size_t n = beta_.size();
  alpha_bar_.assign(n, 1.0);
  posterior_var_.assign(n, 0.0);
  for (std::size_t t = 1; t < n; ++t) {
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t]);
    posterior_var_[t] = beta_[t] * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]);
  }
}

int NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps())
    throw ShapeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  return t;
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps())
    throw ShapeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
  return alpha_bar_[t];
}

NoiseSchedule::Respaced NoiseSchedule::respace(int count) const {
  const int total = steps();
  if (count < 1 || count > total)
    throw ConfigError("sampling steps must be in [1, " + std::to_string(total) + "], got " + std::to_string(count));
  Respaced out{*this, {}};
  out.model_t.assign(static_cast<std::size_t>(count) + 1, 0);
  if (count == total) {
    for (int t = 1; t <= total; ++t) out.model_t[t] = t;
    return out;
  }
  std::vector<double> ab(count);
  for (int k = 1; k <= count; ++k) {
    // evenly spaced, last one pinned to T
    const int t = static_cast<int>(std::lround(static_cast<double>(k) * total / count));
    out.model_t[k] = t;
    ab[k - 1] = alpha_bar_[t];
  }
  out.schedule = from_alpha_bar(ab);
  return out;
}

TimeEmbeddingSpec TimeEmbeddingSpec::standard(int dim, int max_t) {
  if (dim <= 0 || dim % 2 != 0) throw ConfigError("time embedding dim must be positive and even, got " + std::to_string(dim));
  TimeEmbeddingSpec spec;
  spec.dim = dim;
  spec.max_t = max_t;
  spec.frequencies.resize(dim / 2);
  for (int i = 0; i < dim / 2; ++i) spec.frequencies[i] = std::pow(10000.0, -2.0 * i / dim);
  return spec;
}

template <typename T>
Tensor<T> time_embedding(int t, const TimeEmbeddingSpec& spec) {
  if (t < 0 || t > spec.max_t)
    throw ShapeError("time embedding: t=" + std::to_string(t) + " outside [0, " + std::to_string(spec.max_t) + "]");
  Tensor<T> out({static_cast<std::size_t>(spec.dim)});
  for (std::size_t i = 0; i < spec.frequencies.size(); ++i) {
    const double arg = static_cast<double>(t) * spec.frequencies[i];
    out[2 * i] = static_cast<T>(std::cos(arg));
    out[2 * i + 1] = static_cast<T>(std::sin(arg));
  }
  return out;
}

template <typename T>
Tensor<T> time_embedding_batch(std::span<const int> t, const TimeEmbeddingSpec& spec) {
  Tensor<T> out({t.size(), static_cast<std::size_t>(spec.dim)});
  for (std::size_t r = 0; r < t.size(); ++r) {
    auto e = time_embedding<T>(t[r], spec);
    std::copy(e.data().begin(), e.data().end(), out.row(r).begin());
  }
  return out;
}

double prior_kl_diagnostic(const NoiseSchedule& schedule, std::span<const double> s0) {
  const double ab = schedule.alpha_bar(schedule.steps());
  const double var = 1.0 - ab;
  double kl = 0.0;
  for (double v : s0) {
    const double mean = std::sqrt(ab) * v;
    kl += 0.5 * (var + mean * mean - 1.0 - std::log(var));
  }
  return kl;
}

template Tensor<float> time_embedding(int, const TimeEmbeddingSpec&);
template Tensor<double> time_embedding(int, const TimeEmbeddingSpec&);
template Tensor<float> time_embedding_batch(std::span<const int>, const TimeEmbeddingSpec&);
template Tensor<double> time_embedding_batch(std::span<const int>, const TimeEmbeddingSpec&);

}  // namespace revcd
