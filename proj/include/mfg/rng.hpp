#pragma once

#include <cstdint>
#include <random>

namespace mfg {

// Engine used everywhere a seed appears in the public API. One engine per
// logical stream; parallel work derives child seeds with derive_seed so the
// result does not depend on scheduling.
using Rng = std::mt19937_64;

// splitmix64 finalizer; decorrelates (seed, index) pairs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform01(Rng& rng) {
  // 53-bit mantissa in [0,1); avoids std::uniform_real_distribution quirks.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double normal(Rng& rng) {
  // Box-Muller with cached spare would add state; polar form, fresh pair each
  // call, keeps the stream reproducible and stateless.
  double u, v, s;
  do {
    u = 2.0 * uniform01(rng) - 1.0;
    v = 2.0 * uniform01(rng) - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

}  // namespace mfg
