#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "oclip/rng.hpp"
#include "oclip/tensor.hpp"

namespace oclip::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  SplitMix64 rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// sum(op(x) * w) for fixed random weights w, so every output entry matters.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  return sum(mul(y, random_tensor(y.shape(), seed)));
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

}  // namespace oclip::testing
