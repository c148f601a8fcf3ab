#include "revcd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>

#include "revcd/error.hpp"

namespace revcd {

void LossWeights::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw ConfigError("loss weights must be non-negative");
  if (!(p_conditional >= 0.0 && p_conditional < 1.0))
    throw ConfigError("p_conditional must be in [0, 1), got " + std::to_string(p_conditional));
}

template <typename T>
Tensor<T> precondition(const Tensor<T>& s, std::size_t* clamped) {
  Tensor<T> out = s;
  std::size_t n_far = 0;
  for (auto& v : out.data()) {
    if (v < T(0) || v > T(1)) {
      if (v < T(-1e-6) || v > T(1 + 1e-6)) ++n_far;
      v = std::clamp(v, T(0), T(1));
    }
    v = T(2) * v - T(1);
  }
  if (clamped) *clamped = n_far;
  if (n_far > 0 && !clamped)
    std::cerr << "warning: precondition clamped " << n_far << " values outside [0, 1]\n";
  return out;
}

template <typename T>
Tensor<T> unmap(const Tensor<T>& s) {
  Tensor<T> out = s;
  for (auto& v : out.data()) v = (v + T(1)) / T(2);
  return out;
}

namespace {

template <typename T>
void require_rows(const Tensor<T>& a, std::span<const int> t, const char* op) {
  if (a.rank() != 2 || a.rows() != t.size())
    throw ShapeError(std::string(op) + ": " + std::to_string(t.size()) + " timesteps for tensor " +
                     dims_to_string(a.dims()));
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.dims() != b.dims())
    throw ShapeError(std::string(op) + ": dims differ " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
}

void require_positive_t(std::span<const int> t, const NoiseSchedule& schedule, const char* op) {
  for (int v : t)
    if (v < 1 || v > schedule.steps())
      throw ShapeError(std::string(op) + ": timestep " + std::to_string(v) + " outside [1, " +
                       std::to_string(schedule.steps()) + "]");
}

}  // namespace

template <typename T>
Tensor<T> forward_noise(const Tensor<T>& s0, std::span<const int> t, const Tensor<T>& eps,
                        const NoiseSchedule& schedule) {
  require_same(s0, eps, "forward_noise");
  require_rows(s0, t, "forward_noise");
  Tensor<T> out(s0.dims());
  for (std::size_t r = 0; r < s0.rows(); ++r) {
    const double ab = schedule.alpha_bar(t[r]);
    const T a = static_cast<T>(std::sqrt(ab));
    const T b = static_cast<T>(std::sqrt(1.0 - ab));
    auto x = s0.row(r);
    auto e = eps.row(r);
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] = a * x[c] + b * e[c];
  }
  return out;
}

template <typename T>
PosteriorMoments<T> posterior_mean_var(const Tensor<T>& s_t, const Tensor<T>& s0, std::span<const int> t,
                                       const NoiseSchedule& schedule) {
  require_same(s_t, s0, "posterior_mean_var");
  require_rows(s_t, t, "posterior_mean_var");
  require_positive_t(t, schedule, "posterior_mean_var");
  PosteriorMoments<T> out{Tensor<T>(s_t.dims()), std::vector<double>(t.size())};
  for (std::size_t r = 0; r < s_t.rows(); ++r) {
    const double a = schedule.alpha(t[r]);
    const double ab = schedule.alpha_bar(t[r]);
    const double ab_prev = schedule.alpha_bar(t[r] - 1);
    const T coef_t = static_cast<T>(std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab));
    const T coef_0 = static_cast<T>(std::sqrt(ab_prev) * (1.0 - a) / (1.0 - ab));
    auto xt = s_t.row(r);
    auto x0 = s0.row(r);
    auto m = out.mean.row(r);
    for (std::size_t c = 0; c < m.size(); ++c) m[c] = coef_t * xt[c] + coef_0 * x0[c];
    out.variance[r] = schedule.posterior_var(t[r]);
  }
  return out;
}

template <typename T>
Tensor<T> posterior_mean_from_eps(const Tensor<T>& s_t, const Tensor<T>& eps, std::span<const int> t,
                                  const NoiseSchedule& schedule) {
  require_same(s_t, eps, "posterior_mean_from_eps");
  require_rows(s_t, t, "posterior_mean_from_eps");
  require_positive_t(t, schedule, "posterior_mean_from_eps");
  Tensor<T> out(s_t.dims());
  for (std::size_t r = 0; r < s_t.rows(); ++r) {
    const double a = schedule.alpha(t[r]);
    const double ab = schedule.alpha_bar(t[r]);
    const T inv_sqrt_a = static_cast<T>(1.0 / std::sqrt(a));
    const T k = static_cast<T>((1.0 - a) / (std::sqrt(1.0 - ab) * std::sqrt(a)));
    auto xt = s_t.row(r);
    auto e = eps.row(r);
    auto m = out.row(r);
    for (std::size_t c = 0; c < m.size(); ++c) m[c] = inv_sqrt_a * xt[c] - k * e[c];
  }
  return out;
}

template <typename T>
Tensor<T> eps_from_x0(const Tensor<T>& s_t, const Tensor<T>& s0_hat, std::span<const int> t,
                      const NoiseSchedule& schedule) {
  require_same(s_t, s0_hat, "eps_from_x0");
  require_rows(s_t, t, "eps_from_x0");
  require_positive_t(t, schedule, "eps_from_x0");
  Tensor<T> out(s_t.dims());
  for (std::size_t r = 0; r < s_t.rows(); ++r) {
    const double ab = schedule.alpha_bar(t[r]);
    const T a = static_cast<T>(std::sqrt(ab));
    const T inv = static_cast<T>(1.0 / std::sqrt(1.0 - ab));
    auto xt = s_t.row(r);
    auto x0 = s0_hat.row(r);
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] = (xt[c] - a * x0[c]) * inv;
  }
  return out;
}

template <typename T>
Var<T> eps_from_x0(const Tensor<T>& s_t, Var<T> s0_hat, std::span<const int> t, const NoiseSchedule& schedule) {
  require_same(s_t, s0_hat.value(), "eps_from_x0");
  require_rows(s_t, t, "eps_from_x0");
  require_positive_t(t, schedule, "eps_from_x0");
  Tensor<T> sqrt_ab({t.size()});
  Tensor<T> inv({t.size()});
  for (std::size_t r = 0; r < t.size(); ++r) {
    const double ab = schedule.alpha_bar(t[r]);
    sqrt_ab[r] = static_cast<T>(std::sqrt(ab));
    inv[r] = static_cast<T>(1.0 / std::sqrt(1.0 - ab));
  }
  Tape<T>& tape = *s0_hat.tape;
  auto diff = ad::sub(tape.constant(s_t), ad::row_scale(s0_hat, sqrt_ab));
  return ad::row_scale(diff, inv);
}

double reconstruction_weight(int t, WeightMode mode, const NoiseSchedule& schedule) {
  if (mode == WeightMode::unit) return 1.0;
  const double a = schedule.alpha(t);
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t - 1);
  const double var = t == 1 ? schedule.beta(1) : schedule.posterior_var(t);
  return ab_prev * (1.0 - a) * (1.0 - a) / (2.0 * var * (1.0 - ab) * (1.0 - ab));
}

double noise_weight(int t, WeightMode mode, const NoiseSchedule& schedule) {
  if (mode == WeightMode::unit) return 1.0;
  const double a = schedule.alpha(t);
  const double ab = schedule.alpha_bar(t);
  const double var = t == 1 ? schedule.beta(1) : schedule.posterior_var(t);
  return (1.0 - a) * (1.0 - a) / (2.0 * var * (1.0 - ab) * a);
}

namespace {

// mean_r( w[r] * ||diff_r||^2 )
template <typename T>
Var<T> weighted_batch_sq(Var<T> diff, std::span<const int> t, WeightMode mode, const NoiseSchedule& schedule,
                         double (*weight)(int, WeightMode, const NoiseSchedule&)) {
  const std::size_t b = t.size();
  Tensor<T> w({b});
  for (std::size_t r = 0; r < b; ++r) w[r] = static_cast<T>(weight(t[r], mode, schedule) / static_cast<double>(b));
  return ad::sum(ad::row_scale(ad::hadamard(diff, diff), w));
}

}  // namespace

template <typename T>
Var<T> loss_reconstruction(const Tensor<T>& s0, Var<T> s0_hat, std::span<const int> t, const LossWeights& weights,
                           const NoiseSchedule& schedule) {
  require_same(s0, s0_hat.value(), "loss_reconstruction");
  require_rows(s0, t, "loss_reconstruction");
  require_positive_t(t, schedule, "loss_reconstruction");
  auto diff = ad::sub(s0_hat.tape->constant(s0), s0_hat);
  return weighted_batch_sq(diff, t, weights.w_mode, schedule, &reconstruction_weight);
}

template <typename T>
T loss_reconstruction(const Tensor<T>& s0, const Tensor<T>& s0_hat, std::span<const int> t,
                      const LossWeights& weights, const NoiseSchedule& schedule) {
  Tape<T> tape(false);
  return loss_reconstruction(s0, tape.constant(s0_hat), t, weights, schedule).value().item();
}

template <typename T>
Var<T> loss_noise(const Tensor<T>& eps, const Tensor<T>& s_t, Var<T> s0_hat, std::span<const int> t,
                  const LossWeights& weights, const NoiseSchedule& schedule) {
  require_same(eps, s_t, "loss_noise");
  auto eps_hat = eps_from_x0(s_t, s0_hat, t, schedule);
  auto diff = ad::sub(s0_hat.tape->constant(eps), eps_hat);
  return weighted_batch_sq(diff, t, weights.w_mode, schedule, &noise_weight);
}

template <typename T>
T loss_noise(const Tensor<T>& eps, const Tensor<T>& s_t, const Tensor<T>& s0_hat, std::span<const int> t,
             const LossWeights& weights, const NoiseSchedule& schedule) {
  Tape<T> tape(false);
  return loss_noise(eps, s_t, tape.constant(s0_hat), t, weights, schedule).value().item();
}

template <typename T>
Var<T> total_loss(Var<T> rec, Var<T> noise, Var<T> cls, const LossWeights& weights) {
  auto a = ad::scale(rec, static_cast<T>(weights.lambda1));
  auto b = ad::scale(noise, static_cast<T>(weights.lambda2));
  auto c = ad::scale(cls, static_cast<T>(weights.lambda3));
  return ad::add(ad::add(a, b), c);
}

double total_loss(double rec, double noise, double cls, const LossWeights& weights) {
  if (!std::isfinite(rec) || !std::isfinite(noise) || !std::isfinite(cls))
    throw NumericError("total_loss: non-finite loss component");
  return weights.lambda1 * rec + weights.lambda2 * noise + weights.lambda3 * cls;
}

#define REVCD_INSTANTIATE_DIFFUSION(T)                                                                             \
  template Tensor<T> precondition(const Tensor<T>&, std::size_t*);                                                 \
  template Tensor<T> unmap(const Tensor<T>&);                                                                      \
  template Tensor<T> forward_noise(const Tensor<T>&, std::span<const int>, const Tensor<T>&, const NoiseSchedule&); \
  template PosteriorMoments<T> posterior_mean_var(const Tensor<T>&, const Tensor<T>&, std::span<const int>,        \
                                                  const NoiseSchedule&);                                           \
  template Tensor<T> posterior_mean_from_eps(const Tensor<T>&, const Tensor<T>&, std::span<const int>,             \
                                             const NoiseSchedule&);                                                \
  template Tensor<T> eps_from_x0(const Tensor<T>&, const Tensor<T>&, std::span<const int>, const NoiseSchedule&);  \
  template Var<T> eps_from_x0(const Tensor<T>&, Var<T>, std::span<const int>, const NoiseSchedule&);               \
  template Var<T> loss_reconstruction(const Tensor<T>&, Var<T>, std::span<const int>, const LossWeights&,          \
                                      const NoiseSchedule&);                                                       \
  template T loss_reconstruction(const Tensor<T>&, const Tensor<T>&, std::span<const int>, const LossWeights&,     \
                                 const NoiseSchedule&);                                                            \
  template Var<T> loss_noise(const Tensor<T>&, const Tensor<T>&, Var<T>, std::span<const int>, const LossWeights&, \
                             const NoiseSchedule&);                                                                \
  template T loss_noise(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const int>,                \
                        const LossWeights&, const NoiseSchedule&);                                                 \
  template Var<T> total_loss(Var<T>, Var<T>, Var<T>, const LossWeights&);

REVCD_INSTANTIATE_DIFFUSION(float)
REVCD_INSTANTIATE_DIFFUSION(double)
#undef REVCD_INSTANTIATE_DIFFUSION

}  // namespace revcd
