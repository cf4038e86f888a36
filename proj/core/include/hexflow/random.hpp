// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace hexflow {

// splitmix64: used to derive independent seeds from a master seed + tag.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG wrapper. Avoids std::*_distribution so that the
// generated sequences are identical across standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of randomness.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0. Lemire's multiply-shift reduction.
  int uniform_int(int n) {
    const uint64_t r = next_u64();
    return static_cast<int>(
        (static_cast<unsigned __int128>(r) * static_cast<uint64_t>(n)) >> 64);
  }

  // Standard normal via Box-Muller (both values used alternately).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::cos(6.283185307179586477 * u2);
    have_spare_ = true;
    return mag * std::sin(6.283185307179586477 * u2);
  }

  // Independent stream derived from this one's seed lineage.
  Rng fork(uint64_t tag) const { return Rng(splitmix64(seed_lineage_ ^ splitmix64(tag))); }

  static Rng seeded(uint64_t master, uint64_t tag) {
    Rng r(splitmix64(master ^ splitmix64(tag)));
    r.seed_lineage_ = splitmix64(master ^ splitmix64(tag));
    return r;
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_lineage_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace hexflow
