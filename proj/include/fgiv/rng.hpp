#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "fgiv/types.hpp"

namespace fgiv {

// splitmix64 finalizer; the de-facto standard 64-bit avalanche mix.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic stream-splitting: hash64(seed, k) keys substream k of a run.
// Used by the Monte Carlo harness (one stream per replication) so results do
// not depend on the parallel schedule.
inline std::uint64_t hash64(std::uint64_t seed, std::uint64_t k) {
  return mix64(mix64(seed) ^ mix64(k + 0x632be59bd9b4e019ull));
}

// Thin RNG wrapper with fixed uniform and normal mappings on top of
// std::mt19937_64. The standard pins the engine's output bits, and the
// mappings below avoid std::*_distribution, whose algorithms vary across
// standard libraries; draws are therefore reproducible from the seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // uniform on [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // uniform on (0, 1); never returns an endpoint (safe under -1/mu powers)
  double uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  // standard normal via Marsaglia polar; second value of each pair is cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double a, b, s;
    do {
      a = 2.0 * uniform() - 1.0;
      b = 2.0 * uniform() - 1.0;
      s = a * a + b * b;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = b * f;
    has_spare_ = true;
    return a * f;
  }

  Vec normal_vector(Index n) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  // row-major fill order: all of row 0, then row 1, ...
  Mat normal_matrix(Index rows, Index cols) {
    Mat m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fgiv
