#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "rdlt/linalg.hpp"

namespace rdlt {

/// Seeded generator with a fully specified draw sequence.
///
/// Only the raw mt19937_64 stream is taken from the standard library (its
/// output is mandated bit-for-bit); every distribution is implemented here so
/// seeds reproduce across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(engine_()) * n) >> 64);
  }

  /// Standard normal via Box-Muller; one pair of uniforms per draw.
  double normal() {
    const double u1 = uniform_open0();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// log of a Gamma(shape, 1) draw (Marsaglia-Tsang). Shapes below one use
  /// the boost Gamma(a) = Gamma(a + 1)·U^{1/a}, kept in log space because
  /// U^{1/a} underflows for shapes like 1e-3.
  double log_gamma_draw(double shape) {
    if (shape < 1.0) {
      const double boosted = log_gamma_draw(shape + 1.0);
      return boosted + std::log(uniform_open0()) / shape;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = 0.0, v = 0.0;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open0();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return std::log(d * v);
    }
  }

  /// Beta(a, b) as X / (X + Y) with X ~ Gamma(a), Y ~ Gamma(b), X drawn first.
  double beta(double a, double b) {
    const double lx = log_gamma_draw(a);
    const double ly = log_gamma_draw(b);
    return 1.0 / (1.0 + std::exp(ly - lx));
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[below(i)]);
    return p;
  }

  DenseMatrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0) {
    DenseMatrix m(rows, cols);
    for (double& v : m.values()) v = stddev * normal();
    return m;
  }

  /// Random n x k matrix with orthonormal columns.
  DenseMatrix orthonormal(std::size_t n, std::size_t k) { return orth(gaussian_matrix(n, k)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace rdlt
