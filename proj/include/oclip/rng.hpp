#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace oclip {

// splitmix64 (Steele, Lea, Flood 2014). Constants:
//   increment 0x9E3779B97F4A7C15
//   mix       0xBF58476D1CE4E5B9, 0x94D049BB133111EB, shifts 30/27/31
// Every random draw in the project goes through this generator so corpora and
// training runs are reproducible bit-for-bit on any platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo reduction; the bias is below 2^-50 for
  // the small ranges used here.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  // Box-Muller; one draw per call, the sine branch is discarded.
  double normal(double mean, double stddev) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

// Independent seed for a named sub-stream (initialization, masking, batch
// order, ...) of a run seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 r(seed ^ (stream * 0xD1B54A32D192ED03ULL));
  return r.next();
}

}  // namespace oclip
