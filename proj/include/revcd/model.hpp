#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "revcd/autodiff.hpp"
#include "revcd/rng.hpp"
#include "revcd/schedule.hpp"
#include "revcd/tensor.hpp"

namespace revcd {

struct DenoiserConfig {
  std::size_t d_s = 85;
  std::size_t d_x = 2048;
  // Encoder widths; the decoder mirrors them.
  std::vector<std::size_t> hidden{512, 256, 128};
  std::size_t d_t = 32;
  // Width of the condition encoder and of the pooled condition vector.
  std::size_t d_c = 64;
  std::size_t n_heads = 4;
  std::size_t n_tokens = 16;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  std::size_t n_seen_classes = 1;
  int max_t = 1000;

  void validate() const;
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

// Named, ordered parameter tensors.
template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value);
  std::size_t index(std::string_view name) const;
  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& operator[](std::size_t i) { return values_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return values_[i]; }
  std::vector<Tensor<T>>& values() noexcept { return values_; }
  const std::vector<Tensor<T>>& values() const noexcept { return values_; }
  std::size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
};

// Conditional denoiser s_theta(s_t, t, x) plus the seen-class classifier head.
//
// Encoder block:  h <- ReLU(BN(W h + b));  h <- h * proj_t(temb) + proj_c(cond)
// Decoder block:  h <- ReLU(BN(W h + b));  h <- h * proj_c(cond) + proj_t(temb) + skip
// The condition is produced by one self-attention block over `n_tokens`
// equal chunks of the visual feature vector, mean-pooled to d_c.
template <typename T>
class Denoiser {
 public:
  Denoiser(DenoiserConfig config, std::uint64_t init_seed);

  // Parameters placed on a tape, same order as params().
  struct Bound {
    std::vector<Var<T>> p;
    Tape<T>* tape = nullptr;
  };
  Bound bind(Tape<T>& tape, bool trainable) const;

  Var<T> encode_condition(const Bound& b, Var<T> x, std::vector<T>* attention_weights = nullptr) const;
  // Rows with null_mask[r] != 0 use the learned null condition. An empty
  // mask means no row is masked. `dropout_rng` is only used in training mode.
  Var<T> denoise(const Bound& b, Var<T> s_t, std::span<const int> t, Var<T> cond,
                 std::span<const std::uint8_t> null_mask, bool training, Rng* dropout_rng);
  Var<T> classify(const Bound& b, Var<T> s0_hat) const;
  // The null embedding tiled to `rows` rows.
  Var<T> null_condition(const Bound& b, std::size_t rows) const;

  // Inference-mode conveniences.
  Tensor<T> encode_condition(const Tensor<T>& x, std::vector<T>* attention_weights = nullptr) const;
  Tensor<T> denoise(const Tensor<T>& s_t, std::span<const int> t, const Tensor<T>& cond,
                    std::span<const std::uint8_t> null_mask) const;
  Tensor<T> classify(const Tensor<T>& s0_hat) const;

  const DenoiserConfig& config() const noexcept { return config_; }
  const TimeEmbeddingSpec& time_spec() const noexcept { return time_spec_; }
  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }
  std::vector<BatchNormStats<T>>& bn_stats() noexcept { return bn_; }
  const std::vector<BatchNormStats<T>>& bn_stats() const noexcept { return bn_; }
  const std::vector<std::string>& bn_names() const noexcept { return bn_names_; }

  // Indices of parameters belonging to a named group: "layers", "time_proj",
  // "cond_proj", "msa", "null", "classifier".
  std::vector<std::size_t> group(std::string_view name) const;

  // Test hook: use the decoder fusion rule in the encoder too.
  void set_symmetric_fusion(bool on) noexcept { symmetric_fusion_ = on; }

 private:
  struct Linear {
    std::size_t w, b;
  };
  struct Norm {
    std::size_t gamma, beta;
  };
  struct Block {
    Linear fc;
    Norm bn;
    Linear time_proj;
    Linear cond_proj;
    std::size_t bn_index;
  };

  Linear add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double bias_value = 0.0,
                    bool gate = false);
  Norm add_norm(const std::string& name, std::size_t width);
  static Var<T> apply(const Bound& b, const Linear& l, Var<T> x);
  Var<T> block(const Bound& b, const Block& blk, Var<T> h, Var<T> temb, Var<T> cond, bool encoder, bool training,
               Rng* dropout_rng, BatchNormStats<T>& stats) const;

  DenoiserConfig config_;
  TimeEmbeddingSpec time_spec_;
  ParamStore<T> params_;
  std::vector<BatchNormStats<T>> bn_;
  std::vector<std::string> bn_names_;

  Linear token_embed_{};
  std::size_t pos_embed_ = 0;
  Linear q_{}, k_{}, v_{}, o_{};
  Norm ln1_{}, ln2_{};
  Linear ff1_{}, ff2_{};
  std::size_t null_embed_ = 0;
  std::vector<Block> encoder_;
  std::vector<Block> decoder_;
  Linear out_{};
  Linear classifier_{};
  bool symmetric_fusion_ = false;
};

// Mean softmax cross-entropy of seen-class logits.
template <typename T>
T loss_classification(const Tensor<T>& logits, std::span<const std::size_t> labels);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace revcd
