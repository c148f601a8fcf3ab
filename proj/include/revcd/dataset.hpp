#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "revcd/tensor.hpp"

namespace revcd {

struct GzslDataset {
  std::string name = "dataset";
  Tensor<float> features;    // [n x d_x]
  std::vector<std::uint32_t> labels;  // [n], 0-based class ids
  Tensor<float> attributes;  // [n_classes x d_s], values in [0,1]
  std::vector<std::uint32_t> train_seen;
  std::vector<std::uint32_t> test_seen;
  std::vector<std::uint32_t> test_unseen;
  std::vector<std::uint32_t> seen_classes;
  std::vector<std::uint32_t> unseen_classes;

  std::size_t n() const noexcept { return labels.size(); }
  std::size_t d_x() const noexcept { return features.cols(); }
  std::size_t d_s() const noexcept { return attributes.cols(); }
  std::size_t n_classes() const noexcept { return attributes.rows(); }

  // Throws ValidationError describing the first violated invariant.
  void validate() const;
  friend bool operator==(const GzslDataset&, const GzslDataset&) = default;
};

// Training rows of the seen classes only. Labels are positions in
// `seen_classes`, which is what the classifier head predicts.
struct SeenTrainView {
  Tensor<float> semantics;  // per-row class attribute, [n x d_s]
  Tensor<float> features;   // [n x d_x]
  std::vector<std::size_t> seen_index;
  std::vector<std::uint32_t> rows;  // source row ids, for auditing
};
SeenTrainView seen_train_view(const GzslDataset& ds);

// Rescales each attribute dimension to [0,1] by min-max over classes when
// any value lies outside [0,1]. Returns true when a rescale happened.
bool normalize_attributes(Tensor<float>& attributes);

// RZD v1 directory: manifest.json plus little-endian binary files.
GzslDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const GzslDataset& ds, const std::filesystem::path& dir);

struct SyntheticSpec {
  std::size_t n_seen = 5;
  std::size_t n_unseen = 3;
  std::size_t d_s = 8;
  std::size_t d_x = 16;
  std::size_t per_class = 200;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

// Binary class attributes with pairwise Hamming distance >= ceil(d_s/3),
// features x = A s + N(0, sigma^2) for one fixed random map A. Seen rows
// split 80/20 into train/test per class; every unseen row is test data.
GzslDataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace revcd
