#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace kpl {

/// splitmix64 step; used to derive independent stream seeds.
inline uint64_t split_mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return split_mix(a ^ split_mix(b)); }
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

/// Deterministic RNG with fixed bit-level behaviour. The standard
/// distributions are implementation-defined, so uniform/normal draws are
/// produced here directly from mt19937_64 output.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0,1) with 53-bit resolution.
  double uniform() { return (double)(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive integer range.
  int uniform_int(int lo, int hi) {
    return lo + (int)(gen_() % (uint64_t)(hi - lo + 1));
  }

  /// Box-Muller; consumes two uniforms per draw.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = (size_t)(gen_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

  Rng fork() { return Rng(split_mix(gen_())); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace kpl
