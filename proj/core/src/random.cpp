#include "adjustkit/random.hpp"

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <string>
#include <thread>

namespace adjustkit {

SplitMix64 derive_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t key = SplitMix64::mix(seed + SplitMix64::kGamma);
  key = SplitMix64::mix(key ^ (a * 0xd1342543de82ef95ULL + 1));
  key = SplitMix64::mix(key ^ (b * 0xaf251af3b0f025b5ULL + 2));
  return SplitMix64(key);
}

double uniform01(SplitMix64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

namespace {
__extension__ typedef unsigned __int128 u128;
}

std::uint64_t uniform_index(SplitMix64& rng, std::uint64_t n) {
  u128 m = static_cast<u128>(rng()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<u128>(rng()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

bool bernoulli(SplitMix64& rng, double p) { return uniform01(rng) < p; }

double standard_normal(SplitMix64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

unsigned worker_count() {
  if (const char* env = std::getenv("ADJUSTKIT_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace adjustkit
