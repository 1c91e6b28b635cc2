#pragma once

#include <cstdint>
#include <limits>

namespace adjustkit {

/// SplitMix64: a counter-based 64-bit generator. The state advances by a
/// fixed odd increment and each output is a bijective mix of the counter,
/// so independent streams are cheap to derive from (seed, index) pairs.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += kGamma;
    return mix(state_);
  }

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

 private:
  std::uint64_t state_;
};

/// Stream for replicate/imputation `a` (and sub-index `b`) under `seed`.
SplitMix64 derive_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Uniform on [0, 1) with 53 random bits.
double uniform01(SplitMix64& rng);

/// Unbiased integer in [0, n) (Lemire's multiply-shift with rejection).
std::uint64_t uniform_index(SplitMix64& rng, std::uint64_t n);

bool bernoulli(SplitMix64& rng, double p);

/// Standard normal deviate (Box-Muller, no cached second value).
double standard_normal(SplitMix64& rng);

/// Worker threads for parallel loops: ADJUSTKIT_THREADS if set, otherwise
/// hardware concurrency (at least 1).
unsigned worker_count();

}  // namespace adjustkit
