#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace cesr {

using Rng = std::mt19937_64;

/// Seed domains keep independent streams apart (high-bit tags).
enum class SeedDomain : std::uint64_t {
  train = 0x1ULL << 56,
  validation = 0x2ULL << 56,
  test = 0x3ULL << 56,
  init = 0x4ULL << 56,
  shuffle = 0x5ULL << 56,
  noise = 0x6ULL << 56,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-style sub-seed: mixes a base seed with any number of tags.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(base);
  for (auto t : tags) s = splitmix64(s ^ splitmix64(t));
  return s;
}

inline std::uint64_t tag(SeedDomain d) { return static_cast<std::uint64_t>(d); }

inline std::uint64_t tag(double v) { return std::bit_cast<std::uint64_t>(v); }

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// CN(0, variance) draw.
inline std::complex<double> complex_normal(Rng& rng, double variance = 1.0) {
  std::normal_distribution<double> n(0.0, std::sqrt(variance / 2.0));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace cesr
