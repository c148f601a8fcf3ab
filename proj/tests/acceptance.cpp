// Acceptance runner: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "revcd/config.hpp"
#include "revcd/diffusion.hpp"
#include "revcd/pipeline.hpp"
#include "revcd/sampling.hpp"
#include "revcd/schedule.hpp"
#include "revcd/training.hpp"
#include "revcd/verify.hpp"
#include "revcd/zsl_eval.hpp"

using namespace revcd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct Outcome {
  bool passed;
  std::string detail;
};

const NoiseSchedule& default_schedule() {
  static const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  return s;
}

Outcome a1_kernels() {
  const auto start = Clock::now();
  const auto& s = default_schedule();
  const int t = 50;
  const std::vector<double> s0{-1.0, -0.3, 0.0, 0.6, 1.0};
  const std::size_t d = s0.size(), chains = 100000;
  std::vector<double> sum(d, 0.0), sum_sq(d, 0.0);
  Rng root(2024);
  for (std::size_t c = 0; c < chains; ++c) {
    Rng rng = root.fork(c);
    for (std::size_t k = 0; k < d; ++k) {
      double x = s0[k];
      for (int u = 1; u <= t; ++u) x = std::sqrt(1.0 - s.beta(u)) * x + std::sqrt(s.beta(u)) * rng.normal();
      sum[k] += x;
      sum_sq[k] += x * x;
    }
  }
  const double ab = s.alpha_bar(t);
  double mean_dev = 0.0, var_rel = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double mean = sum[k] / chains;
    const double var = sum_sq[k] / chains - mean * mean;
    mean_dev = std::max(mean_dev, std::abs(mean - std::sqrt(ab) * s0[k]));
    var_rel = std::max(var_rel, std::abs(var / (1.0 - ab) - 1.0));
  }

  Rng rng(7);
  double post_dev = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const int tt = 2 + static_cast<int>(rng.uniform_int(999));
    const std::vector<int> tv{tt};
    const auto s_t = sample_gaussian<double>({1, 8}, rng);
    auto s0_hat = sample_gaussian<double>({1, 8}, rng);
    for (auto& v : s0_hat.data()) v = std::clamp(v, -1.0, 1.0);
    const auto a = posterior_mean_var(s_t, s0_hat, tv, s).mean;
    const auto b = posterior_mean_from_eps(s_t, eps_from_x0(s_t, s0_hat, tv, s), tv, s);
    for (std::size_t k = 0; k < a.size(); ++k) post_dev = std::max(post_dev, std::abs(a[k] - b[k]));
  }
  const double secs = seconds_since(start);
  return {mean_dev <= 1e-2 && var_rel <= 0.02 && post_dev <= 1e-10 && secs <= 30.0,
          "MC mean |dev| " + fmt("%.2e", mean_dev) + ", var rel dev " + fmt("%.2e", var_rel) +
              ", posterior forms |dev| " + fmt("%.2e", post_dev) + ", " + fmt("%.1f s", secs)};
}

Outcome a2_gradients() {
  const auto start = Clock::now();
  const auto r = check_model_gradients(GradCheckOptions::small());
  const double secs = seconds_since(start);
  return {r.max_rel_error <= 1e-4 && secs <= 60.0,
          "max rel error " + fmt("%.2e", r.max_rel_error) + " over " + std::to_string(r.checked) + " scalars, " +
              fmt("%.1f s", secs)};
}

Outcome a3_cfg() {
  const auto start = Clock::now();
  DenoiserConfig m;
  m.d_s = 8;
  m.d_x = 16;
  m.hidden = {32, 16, 8};
  m.d_t = 8;
  m.d_c = 8;
  m.n_heads = 2;
  m.n_tokens = 4;
  m.d_ff = 16;
  m.n_seen_classes = 3;
  m.max_t = 50;
  const Denoiser<float> model(m, 3);
  const auto sched = NoiseSchedule::linear(50, 1e-4, 0.02);
  Rng rng(5);
  const auto x = sample_gaussian<float>({16, m.d_x}, rng);
  GuidanceConfig g;
  g.g = 0.0;
  g.seed = 9;
  GuidanceConfig cond = g;
  cond.conditional_only = true;
  const bool identical = sample(model, x, sched, g).semantics == sample(model, x, sched, cond).semantics;

  double dev = 0.0;
  for (double gv : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    for (int i = 0; i < 20; ++i) {
      const int t = 2 + static_cast<int>(rng.uniform_int(999));
      const auto s_t = sample_gaussian<double>({4, 8}, rng);
      const auto c = sample_gaussian<double>({4, 8}, rng);
      const auto u = sample_gaussian<double>({4, 8}, rng);
      dev = std::max(dev, cfg_equivalence_check(s_t, c, u, gv, t, default_schedule()));
    }
  }

  // (1 + g) c - g u with c = [1, 0, 2], u = [0, 1, 2].
  const auto c = Tensor<double>::vector({1, 0, 2});
  const auto u = Tensor<double>::vector({0, 1, 2});
  const bool hand = cfg_combine(c, u, 0.0) == Tensor<double>::vector({1, 0, 2}) &&
                    cfg_combine(c, u, 0.5) == Tensor<double>::vector({1.5, -0.5, 2}) &&
                    cfg_combine(c, u, 2.0) == Tensor<double>::vector({3, -2, 2});
  const double secs = seconds_since(start);
  return {identical && dev <= 1e-10 && hand && secs <= 5.0,
          std::string("g=0 vs conditional-only ") + (identical ? "bit-identical" : "DIFFERENT") +
              ", equivalence |dev| " + fmt("%.2e", dev) + ", hand arithmetic " + (hand ? "ok" : "WRONG") + ", " +
              fmt("%.1f s", secs)};
}

struct SyntheticRun {
  GzslMetrics gzsl;
  GzslMetrics zsl;
  double seconds = 0;
  Trainer trainer;
};

RunConfig synthetic_run_config(std::uint64_t seed) {
  auto c = RunConfig::synthetic_defaults();
  c.dataset = "synthetic";
  c.seed = seed;
  c.deterministic = true;
  c.train.log_interval = 0;
  c.validate();
  return c;
}

SyntheticRun train_and_eval(const GzslDataset& ds, const RunConfig& c) {
  const auto start = Clock::now();
  Trainer trainer(model_config_for(c, ds), c.effective_train());
  trainer.train(ds);
  const auto sampler = diffusion_sampler(trainer.model(), trainer.schedule(), guidance_for(c), c.n_draws);
  auto gzsl = evaluate(ds, sampler, SearchMode::gzsl);
  auto zsl = evaluate(ds, sampler, SearchMode::zsl);
  return {std::move(gzsl), std::move(zsl), seconds_since(start), std::move(trainer)};
}

const std::vector<std::uint64_t> kSeeds{0, 1, 2};

Outcome a4_synthetic(const GzslDataset& ds, std::vector<SyntheticRun>& runs) {
  std::vector<double> zsl, s, h;
  double slowest = 0;
  for (auto seed : kSeeds) {
    runs.push_back(train_and_eval(ds, synthetic_run_config(seed)));
    const auto& r = runs.back();
    zsl.push_back(r.zsl.zsl_unseen);
    s.push_back(r.gzsl.S);
    h.push_back(r.gzsl.H);
    slowest = std::max(slowest, r.seconds);
    std::printf("  A4 seed %llu: zsl_unseen=%.3f S=%.3f U=%.3f H=%.3f (%.1f s)\n",
                static_cast<unsigned long long>(seed), r.zsl.zsl_unseen, r.gzsl.S, r.gzsl.U, r.gzsl.H, r.seconds);
    std::fflush(stdout);
  }
  const double mz = median(zsl), ms = median(s), mh = median(h);
  return {mz >= 0.8 && ms >= 0.9 && mh >= 0.6 && slowest <= 300.0,
          "median ZSL unseen " + fmt("%.3f", mz) + " (>= 0.8), S " + fmt("%.3f", ms) + " (>= 0.9), H " +
              fmt("%.3f", mh) + " (>= 0.6), slowest run " + fmt("%.1f s", slowest)};
}

Outcome a5_trajectory(const GzslDataset& ds, const SyntheticRun& run) {
  const auto c = synthetic_run_config(kSeeds.front());
  std::vector<std::uint32_t> rows = ds.test_seen;
  rows.insert(rows.end(), ds.test_unseen.begin(), ds.test_unseen.end());
  const std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor<float> truth({rows.size(), ds.d_s()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto a = ds.attributes.row(ds.labels[rows[i]]);
    std::copy(a.begin(), a.end(), truth.row(i).begin());
  }
  const auto result = sample(run.trainer.model(), ds.features.rows_subset(idx), run.trainer.schedule(),
                             guidance_for(c), true);
  const auto dist = trajectory_distances(result.trajectory, truth);
  const std::size_t decile = std::max<std::size_t>(1, dist.size() / 10);
  double first = 0, last = 0;
  for (std::size_t k = 0; k < decile; ++k) {
    first += dist[k];
    last += dist[dist.size() - 1 - k];
  }
  first /= decile;
  last /= decile;
  const double drop = dist.front() - dist.back();

  // Per-split endpoints, reported for diagnosis only.
  auto split_drop = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> sub(end - begin);
    for (std::size_t i = 0; i < sub.size(); ++i) sub[i] = begin + i;
    const std::vector<Tensor<float>> ends{result.trajectory.front().rows_subset(sub),
                                          result.trajectory.back().rows_subset(sub)};
    const auto d = trajectory_distances(ends, truth.rows_subset(sub));
    return fmt("%.3f", d[0]) + "->" + fmt("%.3f", d[1]);
  };
  const std::size_t n_seen = ds.test_seen.size();
  return {drop >= 0.3 && last < first,
          "distance t=T " + fmt("%.3f", dist.front()) + " -> t=0 " + fmt("%.3f", dist.back()) + " (drop " +
              fmt("%.3f", drop) + ", >= 0.3), first/last decile " + fmt("%.3f", first) + "/" + fmt("%.3f", last) +
              "; seen rows " + split_drop(0, n_seen) + ", unseen rows " + split_drop(n_seen, rows.size())};
}

Outcome a6_metrics() {
  const double a = harmonic_mean(87.5, 32.3), b = harmonic_mean(66.9, 43.4), c = harmonic_mean(94.5, 42.4);
  return {std::abs(a - 47.2) <= 0.05 && std::abs(b - 52.6) <= 0.05 && std::abs(c - 58.54) <= 0.05,
          "H(87.5,32.3)=" + fmt("%.3f", a) + " H(66.9,43.4)=" + fmt("%.3f", b) + " H(94.5,42.4)=" + fmt("%.3f", c)};
}

Outcome a7_sweep(const GzslDataset& ds) {
  const std::vector<double> grid{0.0, 0.01, 0.1, 1.0};
  std::vector<std::vector<double>> seen(grid.size());
  for (auto seed : kSeeds) {
    const auto rows = lambda3_sweep(ds, synthetic_run_config(seed), grid);
    for (std::size_t i = 0; i < rows.size(); ++i) seen[i].push_back(rows[i].metrics.S);
    std::printf("  A7 seed %llu: S =", static_cast<unsigned long long>(seed));
    for (const auto& r : rows) std::printf(" %.3f", r.metrics.S);
    std::printf("\n");
    std::fflush(stdout);
  }
  std::string detail = "median S over lambda3 {0, 0.01, 0.1, 1}:";
  for (const auto& v : seen) detail += " " + fmt("%.3f", median(v));
  return {median(seen.back()) >= median(seen.front()), detail};
}

Outcome a8_prior_kl() {
  Rng rng(31);
  double worst = 0.0;
  const std::size_t d = 85;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> s0(d);
    for (auto& v : s0) v = 2.0 * rng.uniform() - 1.0;
    // Corners of the box are the worst case.
    if (i == 0) std::fill(s0.begin(), s0.end(), 1.0);
    if (i == 1) std::fill(s0.begin(), s0.end(), -1.0);
    worst = std::max(worst, prior_kl_diagnostic(default_schedule(), s0) / static_cast<double>(d));
  }
  return {worst <= 1e-2, "max KL per dimension " + fmt("%.2e", worst) + " (<= 1e-2)"};
}

Outcome a9_resume(const GzslDataset& ds) {
  auto c = synthetic_run_config(4);
  c.train.batch_size = 32;
  auto tc = c.effective_train();
  const auto model_cfg = model_config_for(c, ds);

  tc.max_steps = 20;
  Trainer straight(model_cfg, tc);
  straight.train(ds);

  tc.max_steps = 10;
  Trainer first(model_cfg, tc);
  first.train(ds);
  const auto ckpt = parse_checkpoint(serialize_checkpoint(first.checkpoint()));
  tc.max_steps = 20;
  Trainer resumed(model_cfg, tc);
  resumed.restore(ckpt);
  resumed.train(ds);

  const auto a = straight.checkpoint(), b = resumed.checkpoint();
  const bool same = a.tensors == b.tensors && a.step == b.step && a.rng == b.rng;
  return {same && a.step == 20,
          std::string("10 + 10 steps vs 20 steps: ") + (same ? "bit-identical" : "DIFFERENT") + " over " +
              std::to_string(a.tensors.size()) + " tensors"};
}

}  // namespace

int main() {
  bool all = true;
  auto report = [&](const char* id, const std::function<Outcome()>& f) {
    Outcome o{false, ""};
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.passed ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
    all = all && o.passed;
  };

  report("A1", a1_kernels);
  report("A2", a2_gradients);
  report("A3", a3_cfg);

  const auto ds = generate_synthetic(synthetic_run_config(0).synthetic);
  std::vector<SyntheticRun> runs;
  report("A4", [&] { return a4_synthetic(ds, runs); });
  report("A5", [&] {
    if (runs.empty()) return Outcome{false, "no A4 model"};
    return a5_trajectory(ds, runs.front());
  });
  report("A6", a6_metrics);
  report("A7", [&] { return a7_sweep(ds); });
  report("A8", a8_prior_kl);
  report("A9", [&] { return a9_resume(ds); });
  return all ? 0 : 1;
}
