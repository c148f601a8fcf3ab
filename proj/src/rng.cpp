#include "revcd/rng.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace revcd {

std::uint64_t mix64(std::uint64_t x) noexcept {
  // splitmix64 finalizer
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t k = state_.counter++;
  return mix64(state_.seed + 0x9e3779b97f4a7c15ULL * (k + 1));
}

double Rng::uniform() noexcept {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::normal() noexcept {
  // Box-Muller, cosine branch only: two draws per variate keeps the
  // counter-to-variate mapping fixed.
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) noexcept {
  const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

Rng Rng::fork(std::uint64_t stream) const noexcept {
  return Rng(RngState{mix64(state_.seed ^ mix64(stream + 0x632be59bd9b4e019ULL)), 0});
}

template <typename T>
Tensor<T> sample_gaussian(const Dims& dims, Rng& rng) {
  Tensor<T> out(dims);
  for (auto& v : out.data()) v = static_cast<T>(rng.normal());
  return out;
}

template <typename T>
Tensor<T> dropout_mask(const Dims& dims, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ShapeError("dropout rate must be in [0, 1), got " + std::to_string(p));
  Tensor<T> out(dims, T(1));
  if (p == 0.0) return out;
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& v : out.data()) v = rng.uniform() <= p ? T(0) : keep;
  return out;
}

template Tensor<float> sample_gaussian(const Dims&, Rng&);
template Tensor<double> sample_gaussian(const Dims&, Rng&);
template Tensor<float> dropout_mask(const Dims&, double, Rng&);
template Tensor<double> dropout_mask(const Dims&, double, Rng&);

}  // namespace revcd
