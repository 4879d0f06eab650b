#pragma once

#include <cmath>
#include <cstdint>

namespace fisheripm {

// xoshiro256++ seeded through splitmix64. Substreams come from split(),
// which re-keys a fresh generator from (state, stream id); every consumer
// of randomness in this codebase owns its own split stream, so results are
// bit-reproducible for any thread count or evaluation order.
//
// Normal deviates use Box-Muller (fixed consumption: two uniforms per pair)
// instead of std::normal_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // One standard normal; the Box-Muller partner is discarded so consumption
  // stays fixed at two uniforms per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925287 * u2);
  }

  // Independent deterministic substream keyed by `stream`.
  Rng split(uint64_t stream) const {
    uint64_t x = s_[0] ^ rotl(s_[2], 29) ^ (stream * 0x9e3779b97f4a7c15ULL);
    Rng child(0);
    for (auto& w : child.s_) w = splitmix64(x);
    return child;
  }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
};

}  // namespace fisheripm
