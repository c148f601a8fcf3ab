#include "revcd/verify.hpp"

#include <cmath>
#include <cstdio>

#include "revcd/rng.hpp"
#include "revcd/sampling.hpp"
#include "revcd/schedule.hpp"
#include "revcd/training.hpp"

namespace revcd {

GradCheckOptions GradCheckOptions::small() {
  GradCheckOptions o;
  o.model.d_s = 8;
  o.model.d_x = 16;
  o.model.hidden = {32, 16, 8};
  o.model.d_t = 8;
  o.model.d_c = 8;
  o.model.n_heads = 2;
  o.model.n_tokens = 4;
  o.model.d_ff = 16;
  o.model.dropout = 0.1;
  o.model.n_seen_classes = 3;
  o.model.max_t = o.steps;
  o.weights.lambda1 = o.weights.lambda2 = o.weights.lambda3 = 1.0;
  o.weights.p_conditional = 0.3;
  return o;
}

GradCheckResult check_model_gradients(const GradCheckOptions& o) {
  const auto schedule = NoiseSchedule::linear(o.steps, 1e-4, 0.02);
  DenoiserConfig cfg = o.model;
  cfg.max_t = std::max(cfg.max_t, o.steps);
  Denoiser<double> model(cfg, o.seed);

  Rng data_rng = Rng(o.seed).fork(1);
  Tensor<double> s({o.batch, cfg.d_s});
  for (auto& v : s.data()) v = data_rng.uniform();
  Tensor<double> x = sample_gaussian<double>({o.batch, cfg.d_x}, data_rng);
  std::vector<std::size_t> labels(o.batch);
  for (auto& l : labels) l = data_rng.uniform_int(cfg.n_seen_classes);
  auto batch = draw_step_batch(s, x, labels, schedule, o.weights.p_conditional, data_rng);
  // Exercise both the conditional and the null path.
  batch.null_mask[0] = 1;
  batch.null_mask[1] = 0;
  const Rng dropout_rng = Rng(o.seed).fork(2);

  auto loss_at = [&]() {
    Tape<double> tape(false);
    const auto bound = model.bind(tape, false);
    Rng r = dropout_rng;
    return forward_losses(model, bound, batch, o.weights, schedule, true, &r).total.value().item();
  };

  Tape<double> tape;
  const auto bound = model.bind(tape, true);
  Rng r = dropout_rng;
  const auto total = forward_losses(model, bound, batch, o.weights, schedule, true, &r).total;
  tape.backward(total);
  // Roundoff in (up - down) grows with |loss|; exactly-zero gradients (e.g.
  // biases feeding batch norm) would otherwise be judged on noise alone.
  const double floor = o.floor * std::max(1.0, std::abs(total.value().item()));

  GradCheckResult result;
  auto& params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& grad = tape.grad(bound.p[i]);
    auto& p = params[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double orig = p[j];
      p[j] = orig + o.h;
      const double up = loss_at();
      p[j] = orig - o.h;
      const double down = loss_at();
      p[j] = orig;
      const double numeric = (up - down) / (2.0 * o.h);
      const double analytic = grad[j];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = params.name(i) + "[" + std::to_string(j) + "]";
      }
    }
  }
  return result;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

SuiteResult kernels_suite(bool negate) {
  Rng rng(11);
  const auto a = sample_gaussian<double>({5, 7}, rng);
  const auto b = sample_gaussian<double>({7, 3}, rng);
  auto c = kernels::matmul(a, b);
  if (negate) c[4] += 1e-6;
  double dev = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 7; ++k) ref += a(i, k) * b(k, j);
      dev = std::max(dev, std::abs(ref - c(i, j)));
    }
  const auto zero = kernels::elementwise(kernels::Elementwise::add, a, Tensor<double>::scalar(0.0));
  const bool identity = zero == a;
  return {"kernels", dev <= 1e-12 && identity, "matmul max |dev| " + fmt("%.3g", dev)};
}

SuiteResult gradient_suite(bool negate) {
  auto o = GradCheckOptions::small();
  // A step size far too large for central differences to be accurate.
  if (negate) o.h = 0.5;
  const auto r = check_model_gradients(o);
  return {"gradient", r.max_rel_error <= 1e-4,
          "max rel error " + fmt("%.3g", r.max_rel_error) + " over " + std::to_string(r.checked) + " scalars (worst " +
              r.worst + ")"};
}

SuiteResult schedule_suite(bool negate) {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  double dev = 0.0;
  bool bounds = true;
  double prod = 1.0;
  for (int t = 1; t <= s.steps(); ++t) {
    prod *= negate ? s.alpha(t > 1 ? t - 1 : t) : s.alpha(t);
    dev = std::max(dev, std::abs(prod - s.alpha_bar(t)));
    bounds = bounds && s.posterior_var(t) >= 0.0 && s.posterior_var(t) <= s.beta(t);
  }
  const auto t4 = NoiseSchedule::linear(4, 0.1, 0.4);
  const double expected[] = {0.9, 0.72, 0.504, 0.3024};
  for (int t = 1; t <= 4; ++t) dev = std::max(dev, std::abs(t4.alpha_bar(t) - expected[t - 1]));
  return {"schedule", dev <= 1e-12 && bounds && s.posterior_var(1) == 0.0,
          "alpha_bar max |dev| " + fmt("%.3g", dev)};
}

SuiteResult posterior_suite(bool negate) {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  Rng rng(13);
  double dev = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int t = 2 + static_cast<int>(rng.uniform_int(999));
    const std::vector<int> tv{t};
    const auto s_t = sample_gaussian<double>({1, 8}, rng);
    const auto s0_hat = sample_gaussian<double>({1, 8}, rng);
    auto eps = eps_from_x0(s_t, s0_hat, tv, s);
    if (negate) eps[0] += 1e-6;
    const auto a = posterior_mean_var(s_t, s0_hat, tv, s).mean;
    const auto b = posterior_mean_from_eps(s_t, eps, tv, s);
    for (std::size_t k = 0; k < a.size(); ++k) dev = std::max(dev, std::abs(a[k] - b[k]));
  }
  return {"posterior", dev <= 1e-10, "clean-sample vs noise form max |dev| " + fmt("%.3g", dev)};
}

SuiteResult cfg_suite(bool negate) {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  Rng rng(17);
  double dev = 0.0;
  for (double g : {0.0, 0.5, 1.0, 4.0}) {
    for (int i = 0; i < 20; ++i) {
      const int t = 2 + static_cast<int>(rng.uniform_int(999));
      const auto s_t = sample_gaussian<double>({4, 8}, rng);
      const auto c = sample_gaussian<double>({4, 8}, rng);
      const auto u = sample_gaussian<double>({4, 8}, rng);
      std::optional<std::pair<double, double>> coeff;
      // Coefficients that do not sum to one break the equivalence.
      if (negate) coeff = std::pair<double, double>{g + 1.0, g};
      dev = std::max(dev, cfg_equivalence_check(s_t, c, u, g, t, s, coeff));
    }
  }
  const auto lit = cfg_combine(Tensor<double>::vector({1, 0}), Tensor<double>::vector({0, 1}), 2.0);
  const bool hand = lit == Tensor<double>::vector({3, -2});
  return {"cfg", dev <= 1e-10 && hand, "guidance combination max |dev| " + fmt("%.3g", dev)};
}

SuiteResult prior_kl_suite(bool negate) {
  const auto s = negate ? NoiseSchedule::linear(100, 1e-4, 0.02) : NoiseSchedule::linear(1000, 1e-4, 0.02);
  Rng rng(19);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> s0(85);
    for (auto& v : s0) v = 2.0 * rng.uniform() - 1.0;
    if (i == 0) std::fill(s0.begin(), s0.end(), 1.0);
    worst = std::max(worst, prior_kl_diagnostic(s, s0) / 85.0);
  }
  return {"prior_kl", worst <= 1e-2, "max KL per dimension " + fmt("%.3g", worst)};
}

}  // namespace

std::vector<SuiteResult> run_verify_suites(const std::set<std::string>& negate) {
  auto neg = [&](const char* name) { return negate.count(name) > 0; };
  return {kernels_suite(neg("kernels")),     gradient_suite(neg("gradient")), schedule_suite(neg("schedule")),
          posterior_suite(neg("posterior")), cfg_suite(neg("cfg")),           prior_kl_suite(neg("prior_kl"))};
}

}  // namespace revcd
