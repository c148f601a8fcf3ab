#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "revcd/tensor.hpp"

namespace revcd {

template <typename T>
class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Dims& dims() const { return value().dims(); }
};

// Append-only record of primitive ops. Node order is a topological order,
// so backward() just walks the nodes in reverse.
template <typename T>
class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  // With record == false no backprop closures are kept (inference).
  explicit Tape(bool record = true) : recording_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool trainable = false);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Records an op result. `op` names the op in finiteness diagnostics.
  Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backprop backprop, const char* op);

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }
  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void accumulate(Var<T> v, Tensor<T> g);

  // Drops every node recorded after the first `n`. Vars past `n` become invalid.
  void truncate(std::size_t n);

  // Reverse-mode sweep from a scalar loss. Afterwards every trainable leaf
  // holds a gradient with the leaf's dims (zeros when disconnected).
  void backward(Var<T> loss);
  const Tensor<T>& grad(Var<T> v) const;

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backprop backprop;
    bool needs_grad = false;
    bool trainable = false;
  };
  std::vector<Node> nodes_;
  bool recording_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormStats(std::size_t width = 1)
      : running_mean({width}, T(0)), running_var({width}, T(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kLayerNormEps = 1e-5;

namespace ad {

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> hadamard(Var<T> a, Var<T> b);
template <typename T> Var<T> add_scalar(Var<T> a, T s);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> relu(Var<T> a);

// x[m x n] + bias[n] broadcast over rows.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
// Row r of x multiplied by coeff[r]; coeff is a constant.
template <typename T> Var<T> row_scale(Var<T> x, const Tensor<T>& coeff);
// Elementwise product with a constant (e.g. a dropout mask).
template <typename T> Var<T> mul_const(Var<T> x, const Tensor<T>& c);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
template <typename T> Var<T> reshape(Var<T> x, Dims dims);

// Training mode normalizes with batch statistics (needs >= 2 rows) and
// updates `stats`; inference mode applies the running statistics.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, bool training);

// Per-row normalization over features.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta);

// Scaled dot-product attention. q, k, v are [(b*group) x d]; rows within a
// consecutive group of `group` rows attend to each other, `heads` splits d.
// When `weights` is non-null it receives the softmax matrices laid out as
// [b][head][query][key].
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t group, std::size_t heads,
                 std::vector<T>* weights = nullptr);

// Mean over consecutive groups of rows: [(b*group) x d] -> [b x d].
template <typename T> Var<T> group_mean(Var<T> x, std::size_t group);
// Repeats a [g x d] block `reps` times vertically: -> [(reps*g) x d].
template <typename T> Var<T> tile_rows(Var<T> x, std::size_t reps);

// Rows with mask[r] != 0 are replaced by `fill` (a [d] vector).
template <typename T> Var<T> replace_rows(Var<T> x, Var<T> fill, std::span<const std::uint8_t> mask);

// Mean softmax cross-entropy; labels index columns of logits.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::size_t> labels);

}  // namespace ad

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace revcd
