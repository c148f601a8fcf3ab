#include "revcd/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "revcd/diffusion.hpp"
#include "revcd/error.hpp"
#include "revcd/rng.hpp"

namespace revcd {

std::string to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::posterior_sqrt: return "posterior_sqrt";
    case NoiseMode::beta_sqrt: return "beta_sqrt";
    case NoiseMode::beta_literal: return "beta_literal";
  }
  return "posterior_sqrt";
}

NoiseMode noise_mode_from_string(const std::string& name) {
  if (name == "posterior_sqrt") return NoiseMode::posterior_sqrt;
  if (name == "beta_sqrt") return NoiseMode::beta_sqrt;
  if (name == "beta_literal") return NoiseMode::beta_literal;
  throw ConfigError("unknown noise mode \"" + name + "\" (expected posterior_sqrt, beta_sqrt or beta_literal)");
}

void GuidanceConfig::validate(int schedule_steps) const {
  if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("guidance strength g must be finite and >= 0");
  if (steps < 0 || steps > schedule_steps)
    throw ConfigError("sampling steps " + std::to_string(steps) + " outside [0, " + std::to_string(schedule_steps) + "]");
}

template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& pred_cond, const Tensor<T>& pred_uncond, double g) {
  if (pred_cond.dims() != pred_uncond.dims())
    throw ShapeError("cfg_combine: dims differ " + dims_to_string(pred_cond.dims()) + " vs " +
                     dims_to_string(pred_uncond.dims()));
  // g = 0 must reproduce the conditional prediction bit for bit, -0.0 included.
  if (g == 0.0) return pred_cond;
  Tensor<T> out(pred_cond.dims());
  const T a = static_cast<T>(1.0 + g);
  const T b = static_cast<T>(g);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * pred_cond[i] - b * pred_uncond[i];
  return out;
}

template <typename T>
Tensor<T> reverse_step(const Tensor<T>& s_t, const Tensor<T>& s0_hat, int t, const NoiseSchedule& schedule,
                       NoiseMode mode, const Tensor<T>& z) {
  if (t < 1 || t > schedule.steps())
    throw ShapeError("reverse_step: timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(schedule.steps()) + "]");
  if (z.dims() != s_t.dims()) throw ShapeError("reverse_step: noise dims differ from state dims");
  Tensor<T> clipped = s0_hat;
  for (auto& v : clipped.data()) v = std::clamp(v, T(-1), T(1));
  std::vector<int> tv(s_t.rows(), t);
  auto moments = posterior_mean_var(s_t, clipped, tv, schedule);
  if (t == 1) return std::move(moments.mean);
  double sigma = 0.0;
  switch (mode) {
    case NoiseMode::posterior_sqrt: sigma = std::sqrt(schedule.posterior_var(t)); break;
    case NoiseMode::beta_sqrt: sigma = std::sqrt(schedule.beta(t)); break;
    case NoiseMode::beta_literal: sigma = schedule.beta(t); break;
  }
  Tensor<T> out = std::move(moments.mean);
  const T s = static_cast<T>(sigma);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * z[i];
  return out;
}

namespace {

constexpr std::size_t kSampleChunk = 256;

Tensor<float> unit_interval(const Tensor<float>& s) {
  Tensor<float> out = unmap(s);
  for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace

SampleResult sample(const Denoiser<float>& model, const Tensor<float>& x, const NoiseSchedule& schedule,
                    const GuidanceConfig& guidance, bool keep_trajectory) {
  guidance.validate(schedule.steps());
  const auto& cfg = model.config();
  if (x.rank() != 2 || x.cols() != cfg.d_x)
    throw ShapeError("sample: expected features [b x " + std::to_string(cfg.d_x) + "], got " + dims_to_string(x.dims()));
  if (schedule.steps() > cfg.max_t)
    throw ConfigError("sample: schedule has " + std::to_string(schedule.steps()) + " steps but the model embeds t <= " +
                      std::to_string(cfg.max_t));

  const int steps = guidance.steps == 0 ? schedule.steps() : guidance.steps;
  std::vector<int> model_t(static_cast<std::size_t>(steps) + 1);
  std::optional<NoiseSchedule> respaced;
  if (steps < schedule.steps()) {
    auto r = schedule.respace(steps);
    respaced = std::move(r.schedule);
    model_t = std::move(r.model_t);
  } else {
    for (int k = 0; k <= steps; ++k) model_t[static_cast<std::size_t>(k)] = k;
  }
  const NoiseSchedule& sched = respaced ? *respaced : schedule;

  const std::size_t n = x.rows();
  const std::size_t d = cfg.d_s;
  SampleResult result;
  result.semantics = Tensor<float>({n, d});
  if (keep_trajectory) {
    result.trajectory.assign(static_cast<std::size_t>(steps) + 1, Tensor<float>({n, d}));
    for (int k = steps; k >= 0; --k) result.trajectory_t.push_back(k);
  }

  // Inference never mutates the model; the tape API just takes it non-const.
  auto& net = const_cast<Denoiser<float>&>(model);
  Tape<float> tape(false);
  const auto bound = net.bind(tape, false);
  const std::size_t mark = tape.size();

  Rng root(guidance.seed);
  for (std::size_t begin = 0; begin < n; begin += kSampleChunk) {
    const std::size_t rows = std::min(kSampleChunk, n - begin);
    std::vector<std::size_t> idx(rows);
    for (std::size_t i = 0; i < rows; ++i) idx[i] = begin + i;
    std::vector<Rng> rngs;
    rngs.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) rngs.push_back(root.fork(begin + i));

    const Tensor<float> cond = net.encode_condition(bound, tape.constant(x.rows_subset(idx))).value();
    const std::vector<std::uint8_t> all_null(rows, 1);
    tape.truncate(mark);

    Tensor<float> s({rows, d});
    for (std::size_t i = 0; i < rows; ++i)
      for (auto& v : s.row(i)) v = static_cast<float>(rngs[i].normal());

    auto record = [&](std::size_t slot) {
      if (!keep_trajectory) return;
      const Tensor<float> u = unit_interval(s);
      auto& dst = result.trajectory[slot];
      std::copy(u.data().begin(), u.data().end(), dst.row(begin).begin());
    };
    record(0);

    for (int k = steps; k >= 1; --k) {
      const std::vector<int> tv(rows, model_t[static_cast<std::size_t>(k)]);
      const auto s_var = tape.constant(s);
      const auto c_var = tape.constant(cond);
      Tensor<float> s0_hat = net.denoise(bound, s_var, tv, c_var, {}, false, nullptr).value();
      if (!guidance.conditional_only) {
        const Tensor<float> uncond = net.denoise(bound, s_var, tv, c_var, all_null, false, nullptr).value();
        s0_hat = cfg_combine(s0_hat, uncond, guidance.g);
      }
      tape.truncate(mark);

      Tensor<float> z({rows, d});
      if (k > 1)
        for (std::size_t i = 0; i < rows; ++i)
          for (auto& v : z.row(i)) v = static_cast<float>(rngs[i].normal());
      s = reverse_step(s, s0_hat, k, sched, guidance.noise_mode, z);
      if (!s.all_finite()) throw NumericError("sample: non-finite state at step " + std::to_string(k));
      record(static_cast<std::size_t>(steps - k + 1));
    }
    const Tensor<float> u = unit_interval(s);
    std::copy(u.data().begin(), u.data().end(), result.semantics.row(begin).begin());
  }
  return result;
}

template <typename T>
double cfg_equivalence_check(const Tensor<T>& s_t, const Tensor<T>& pred_cond, const Tensor<T>& pred_uncond, double g,
                             int t, const NoiseSchedule& schedule,
                             std::optional<std::pair<double, double>> coefficients) {
  if (t < 2) throw ShapeError("cfg_equivalence_check: requires t >= 2");
  if (s_t.dims() != pred_cond.dims() || s_t.dims() != pred_uncond.dims())
    throw ShapeError("cfg_equivalence_check: dims differ");
  const auto [a, b] = coefficients.value_or(std::pair<double, double>{1.0 + g, -g});
  auto combine = [&](const Tensor<T>& c, const Tensor<T>& u) {
    Tensor<T> out(c.dims());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * c[i] + b * u[i]);
    return out;
  };
  std::vector<int> tv(s_t.rows(), t);
  const auto via_x0 = eps_from_x0(s_t, combine(pred_cond, pred_uncond), tv, schedule);
  const auto via_eps =
      combine(eps_from_x0(s_t, pred_cond, tv, schedule), eps_from_x0(s_t, pred_uncond, tv, schedule));
  double dev = 0.0;
  for (std::size_t i = 0; i < via_x0.size(); ++i)
    dev = std::max(dev, std::abs(static_cast<double>(via_x0[i]) - static_cast<double>(via_eps[i])));
  return dev;
}

#define REVCD_INSTANTIATE_SAMPLING(T)                                                                              \
  template Tensor<T> cfg_combine(const Tensor<T>&, const Tensor<T>&, double);                                      \
  template Tensor<T> reverse_step(const Tensor<T>&, const Tensor<T>&, int, const NoiseSchedule&, NoiseMode,        \
                                  const Tensor<T>&);                                                               \
  template double cfg_equivalence_check(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double, int,         \
                                        const NoiseSchedule&, std::optional<std::pair<double, double>>);
REVCD_INSTANTIATE_SAMPLING(float)
REVCD_INSTANTIATE_SAMPLING(double)

}  // namespace revcd
