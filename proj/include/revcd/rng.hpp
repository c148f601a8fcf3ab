#pragma once

#include <cstddef>
#include <cstdint>

#include "revcd/tensor.hpp"

namespace revcd {

struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

// Counter-based generator: draw k of a stream is a pure function of
// (seed, k), so any (seed, counter) pair can be replayed exactly.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed) : state_{seed, 0} {}
  explicit Rng(RngState state) : state_(state) {}

  const RngState& state() const noexcept { return state_; }

  std::uint64_t next_u64() noexcept;
  // Uniform in (0, 1].
  double uniform() noexcept;
  double normal() noexcept;
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;

  // Independent child stream keyed by `stream`; does not advance this one.
  Rng fork(std::uint64_t stream) const noexcept;

 private:
  RngState state_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

template <typename T>
Tensor<T> sample_gaussian(const Dims& dims, Rng& rng);

// Inverted-dropout mask with entries in {0, 1/(1-p)}.
template <typename T>
Tensor<T> dropout_mask(const Dims& dims, double p, Rng& rng);

}  // namespace revcd
