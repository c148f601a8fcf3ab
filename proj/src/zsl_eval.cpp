#include "revcd/zsl_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "revcd/error.hpp"
#include "revcd/rng.hpp"

namespace revcd {

ClassPrototypes ClassPrototypes::from_dataset(const GzslDataset& ds) {
  ClassPrototypes p;
  p.attributes = ds.attributes;
  p.class_ids.resize(ds.n_classes());
  for (std::size_t i = 0; i < p.class_ids.size(); ++i) p.class_ids[i] = static_cast<std::uint32_t>(i);
  p.seen = ds.seen_classes;
  p.unseen = ds.unseen_classes;
  p.validate();
  return p;
}

void ClassPrototypes::validate() const {
  if (attributes.rank() != 2 || attributes.rows() != class_ids.size())
    throw ValidationError("prototypes: " + std::to_string(class_ids.size()) + " class ids for attribute matrix " +
                          dims_to_string(attributes.dims()));
  std::set<std::uint32_t> ids(class_ids.begin(), class_ids.end());
  for (auto id : seen)
    if (!ids.count(id)) throw ValidationError("prototypes: seen class " + std::to_string(id) + " has no attributes");
  for (auto id : unseen) {
    if (!ids.count(id)) throw ValidationError("prototypes: unseen class " + std::to_string(id) + " has no attributes");
    if (std::find(seen.begin(), seen.end(), id) != seen.end())
      throw ValidationError("prototypes: class " + std::to_string(id) + " is both seen and unseen");
  }
  for (std::size_t r = 0; r < attributes.rows(); ++r) {
    const auto row = attributes.row(r);
    if (std::all_of(row.begin(), row.end(), [](float v) { return v == 0.0f; }))
      throw ValidationError("prototypes: class " + std::to_string(class_ids[r]) + " has an all-zero attribute vector");
  }
}

SearchMode search_mode_from_string(const std::string& name) {
  if (name == "zsl") return SearchMode::zsl;
  if (name == "gzsl") return SearchMode::gzsl;
  throw ConfigError("unknown mode \"" + name + "\" (expected zsl or gzsl)");
}

std::string to_string(SearchMode mode) { return mode == SearchMode::zsl ? "zsl" : "gzsl"; }

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_distance: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ShapeError("cosine_distance: zero-norm input");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::uint32_t nn_classify(std::span<const float> s_hat, const ClassPrototypes& prototypes, SearchMode mode) {
  std::set<std::uint32_t> allowed(prototypes.unseen.begin(), prototypes.unseen.end());
  if (mode == SearchMode::gzsl) allowed.insert(prototypes.seen.begin(), prototypes.seen.end());
  if (allowed.empty()) throw ValidationError("nn_classify: empty search space");
  double best = 0.0;
  std::uint32_t best_id = 0;
  bool found = false;
  for (std::size_t r = 0; r < prototypes.class_ids.size(); ++r) {
    const auto id = prototypes.class_ids[r];
    if (!allowed.count(id)) continue;
    const double d = cosine_distance(s_hat, prototypes.attributes.row(r));
    if (!found || d < best || (d == best && id < best_id)) {
      best = d;
      best_id = id;
      found = true;
    }
  }
  return best_id;
}

std::vector<ClassAccuracy> class_accuracies(std::span<const std::uint32_t> predictions,
                                            std::span<const std::uint32_t> truths,
                                            std::span<const std::uint32_t> classes) {
  if (predictions.size() != truths.size())
    throw ShapeError("class_accuracies: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(truths.size()) + " truths");
  if (classes.empty()) throw ShapeError("class_accuracies: empty class set");
  std::map<std::uint32_t, ClassAccuracy> acc;
  for (auto c : classes) acc[c] = ClassAccuracy{c};
  for (std::size_t i = 0; i < truths.size(); ++i) {
    auto it = acc.find(truths[i]);
    if (it == acc.end())
      throw ShapeError("class_accuracies: truth " + std::to_string(truths[i]) + " outside the class set");
    ++it->second.n;
    it->second.correct += predictions[i] == truths[i];
  }
  std::vector<ClassAccuracy> out;
  for (const auto& [id, a] : acc)
    if (a.n > 0) out.push_back(a);
  return out;
}

double per_class_accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> truths,
                          std::span<const std::uint32_t> classes) {
  const auto acc = class_accuracies(predictions, truths, classes);
  if (acc.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& a : acc) sum += a.accuracy();
  return sum / static_cast<double>(acc.size());
}

double harmonic_mean(double s, double u) { return s + u == 0.0 ? 0.0 : 2.0 * s * u / (s + u); }

Sampler diffusion_sampler(const Denoiser<float>& model, const NoiseSchedule& schedule, GuidanceConfig guidance,
                          int n_draws) {
  if (n_draws < 1) throw ConfigError("n_draws must be >= 1");
  return [&model, &schedule, guidance, n_draws](const Tensor<float>& x, std::span<const std::uint32_t>) {
    Tensor<float> mean;
    for (int d = 0; d < n_draws; ++d) {
      GuidanceConfig g = guidance;
      if (d > 0) g.seed = mix64(guidance.seed + static_cast<std::uint64_t>(d));
      auto s = sample(model, x, schedule, g).semantics;
      if (d == 0) {
        mean = std::move(s);
      } else {
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s[i];
      }
    }
    if (n_draws > 1)
      for (auto& v : mean.data()) v /= static_cast<float>(n_draws);
    return mean;
  };
}

Sampler oracle_sampler(const GzslDataset& ds) {
  return [&ds](const Tensor<float>& x, std::span<const std::uint32_t> rows) {
    Tensor<float> out({x.rows(), ds.d_s()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto a = ds.attributes.row(ds.labels[rows[i]]);
      std::copy(a.begin(), a.end(), out.row(i).begin());
    }
    return out;
  };
}

Sampler constant_sampler(std::vector<float> value) {
  return [value = std::move(value)](const Tensor<float>& x, std::span<const std::uint32_t>) {
    Tensor<float> out({x.rows(), value.size()});
    for (std::size_t i = 0; i < x.rows(); ++i) std::copy(value.begin(), value.end(), out.row(i).begin());
    return out;
  };
}

namespace {
constexpr std::uint32_t kNoClass = 0xffffffffu;
}

GzslMetrics evaluate(const GzslDataset& ds, const Sampler& sampler, SearchMode mode) {
  const auto protos = ClassPrototypes::from_dataset(ds);
  std::vector<std::uint32_t> rows = ds.test_seen;
  rows.insert(rows.end(), ds.test_unseen.begin(), ds.test_unseen.end());
  if (rows.empty()) throw ValidationError("evaluate: dataset has no test rows");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const Tensor<float> semantics = sampler(ds.features.rows_subset(idx), rows);
  if (semantics.rank() != 2 || semantics.rows() != rows.size() || semantics.cols() != ds.d_s())
    throw ShapeError("evaluate: sampler returned " + dims_to_string(semantics.dims()));

  const std::size_t n_seen_rows = ds.test_seen.size();
  std::vector<std::uint32_t> pred_seen, truth_seen, pred_unseen, truth_unseen, zsl_pred;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto s = semantics.row(i);
    const auto truth = ds.labels[rows[i]];
    // An all-zero estimate has no direction; it is scored as a miss.
    const bool zero = std::all_of(s.begin(), s.end(), [](float v) { return v == 0.0f; });
    const auto classify = [&](SearchMode m) { return zero ? kNoClass : nn_classify(s, protos, m); };
    const auto pred = classify(mode);
    if (i < n_seen_rows) {
      pred_seen.push_back(pred);
      truth_seen.push_back(truth);
    } else {
      pred_unseen.push_back(pred);
      truth_unseen.push_back(truth);
      zsl_pred.push_back(mode == SearchMode::zsl ? pred : classify(SearchMode::zsl));
    }
  }

  GzslMetrics m;
  auto add_rows = [&](const std::vector<ClassAccuracy>& acc, const char* split) {
    double sum = 0.0;
    for (const auto& a : acc) {
      m.per_class.push_back({a.class_id, split, a.accuracy(), a.n});
      sum += a.accuracy();
    }
    return acc.empty() ? 0.0 : sum / static_cast<double>(acc.size());
  };
  if (!truth_seen.empty()) m.S = add_rows(class_accuracies(pred_seen, truth_seen, ds.seen_classes), "seen");
  if (!truth_unseen.empty()) {
    m.U = add_rows(class_accuracies(pred_unseen, truth_unseen, ds.unseen_classes), "unseen");
    m.zsl_unseen = per_class_accuracy(zsl_pred, truth_unseen, ds.unseen_classes);
  }
  m.H = harmonic_mean(m.S, m.U);
  return m;
}

std::vector<double> trajectory_distances(const std::vector<Tensor<float>>& trajectory, const Tensor<float>& truth) {
  std::vector<double> out;
  out.reserve(trajectory.size());
  for (const auto& state : trajectory) {
    if (state.dims() != truth.dims())
      throw ShapeError("trajectory_distances: state " + dims_to_string(state.dims()) + " vs truth " +
                       dims_to_string(truth.dims()));
    double sum = 0.0;
    for (std::size_t r = 0; r < state.rows(); ++r) {
      const auto row = state.row(r);
      const bool zero = std::all_of(row.begin(), row.end(), [](float v) { return v == 0.0f; });
      sum += zero ? 1.0 : cosine_distance(row, truth.row(r));
    }
    out.push_back(sum / static_cast<double>(state.rows()));
  }
  return out;
}

nlohmann::json to_json(const GzslMetrics& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : m.per_class)
    rows.push_back({{"class_id", r.class_id}, {"split", r.split}, {"accuracy", r.accuracy}, {"n", r.n}});
  return {{"S", m.S}, {"U", m.U}, {"H", m.H}, {"zsl_unseen", m.zsl_unseen}, {"per_class", rows}};
}

void print_metrics(std::ostream& os, const GzslMetrics& m) {
  char line[128];
  os << "class   split   accuracy      n\n";
  for (const auto& r : m.per_class) {
    std::snprintf(line, sizeof line, "%5u   %-6s  %8.1f  %5zu\n", r.class_id, r.split.c_str(), 100.0 * r.accuracy, r.n);
    os << line;
  }
  std::snprintf(line, sizeof line, "S=%.1f U=%.1f H=%.1f zsl_unseen=%.1f\n", 100.0 * m.S, 100.0 * m.U, 100.0 * m.H,
                100.0 * m.zsl_unseen);
  os << line;
}

}  // namespace revcd
