#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace gqr {

/// Finalizing mixer from SplitMix64 (Steele, Lea & Flood 2014).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive the seed of an independent substream from a root seed and a
/// stream id. Streams are counter-based: the mapping is a bijective hash
/// of (seed + id), so any (seed, id) pair names the same stream no matter
/// which thread or in which order it is instantiated.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t id) {
  return mix64(seed + 0x9e3779b97f4a7c15ULL * (id + 1));
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return substream(substream(seed, a), b);
}

/// SplitMix64 generator. Small state, passes BigCrush, and the output at
/// step k is a pure hash of (seed + k * golden), which keeps replications
/// reproducible under any parallel schedule.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on {0, ..., n-1}, unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (-n) % n;
    for (;;) {
      std::uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

  /// Standard normal via Box-Muller (cosine branch only, stateless).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace gqr
