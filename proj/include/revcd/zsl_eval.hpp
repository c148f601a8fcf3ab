#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "revcd/dataset.hpp"
#include "revcd/sampling.hpp"
#include "revcd/tensor.hpp"

namespace revcd {

struct ClassPrototypes {
  Tensor<float> attributes;  // [n_classes x d_s], row i belongs to class_ids[i]
  std::vector<std::uint32_t> class_ids;
  std::vector<std::uint32_t> seen;
  std::vector<std::uint32_t> unseen;

  static ClassPrototypes from_dataset(const GzslDataset& ds);
  void validate() const;
};

enum class SearchMode { zsl, gzsl };
SearchMode search_mode_from_string(const std::string& name);
std::string to_string(SearchMode mode);

// 1 - <a,b> / (|a| |b|); throws ShapeError on a zero-norm input.
double cosine_distance(std::span<const float> a, std::span<const float> b);

// Nearest prototype by cosine distance: unseen classes only in zsl mode,
// seen and unseen in gzsl mode. Ties go to the lowest class id.
std::uint32_t nn_classify(std::span<const float> s_hat, const ClassPrototypes& prototypes, SearchMode mode);

struct ClassAccuracy {
  std::uint32_t class_id;
  std::size_t correct = 0;
  std::size_t n = 0;
  double accuracy() const { return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0; }
};

// Accuracy per class in `classes` (classes without samples are skipped).
std::vector<ClassAccuracy> class_accuracies(std::span<const std::uint32_t> predictions,
                                            std::span<const std::uint32_t> truths,
                                            std::span<const std::uint32_t> classes);
// Unweighted mean of the per-class accuracies.
double per_class_accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> truths,
                          std::span<const std::uint32_t> classes);

// 2SU / (S + U), 0 when S + U = 0. Works in any unit (fractions or percent).
double harmonic_mean(double s, double u);

struct GzslMetrics {
  double S = 0, U = 0, H = 0;
  double zsl_unseen = 0;
  struct Row {
    std::uint32_t class_id;
    std::string split;  // "seen" or "unseen"
    double accuracy;
    std::size_t n;
  };
  std::vector<Row> per_class;
};

// Maps test features [b x d_x] to semantic estimates [b x d_s].
using Sampler = std::function<Tensor<float>(const Tensor<float>& features, std::span<const std::uint32_t> rows)>;

// Sampler backed by the guided reverse process; `n_draws` > 1 averages
// independent samples per image.
Sampler diffusion_sampler(const Denoiser<float>& model, const NoiseSchedule& schedule, GuidanceConfig guidance,
                          int n_draws = 1);
// Stub returning the true class attribute of each row.
Sampler oracle_sampler(const GzslDataset& ds);
// Stub returning the same vector for every row.
Sampler constant_sampler(std::vector<float> value);

// Samples every test image once, then scores S/U/H with the search given by
// `mode` and the unseen accuracy of a zsl-mode search.
GzslMetrics evaluate(const GzslDataset& ds, const Sampler& sampler, SearchMode mode = SearchMode::gzsl);

// Mean cosine distance from each trajectory state to the true attribute row
// of every sample. A state row that clamps to all zeros counts as distance 1.
std::vector<double> trajectory_distances(const std::vector<Tensor<float>>& trajectory, const Tensor<float>& truth);

nlohmann::json to_json(const GzslMetrics& m);
// Plain-text table in percent.
void print_metrics(std::ostream& os, const GzslMetrics& m);

}  // namespace revcd
