#pragma once

// Seeded random streams with hand-rolled distributions. The engine is
// std::mt19937_64, whose output sequence is pinned by the standard, and every
// distribution below is implemented here rather than taken from <random>
// (std::uniform_real_distribution etc. are implementation-defined), so a given
// seed produces the same draws on every platform.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace debiasnp {

// Finalizer of the SplitMix64 generator (Steele, Lea, Flood 2014).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from (master, a, b). Used as
// derive_seed(master_seed, n, r) so that adding sample sizes or replications
// never perturbs the streams of existing cells.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = mix64(master + 0x9e3779b97f4a7c15ULL);
  s = mix64(s ^ (a + 0x9e3779b97f4a7c15ULL));
  s = mix64(s ^ (b + 0x6a09e667f3bcc909ULL));
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform01_open_low() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::below: bound must be positive");
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % bound;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % bound;
  }

  // Standard normal via Box-Muller (cosine branch).
  double normal() {
    const double u1 = uniform01_open_low();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double rademacher() { return (gen_() & 1ULL) ? 1.0 : -1.0; }

  // Gamma(shape, 1) via Marsaglia-Tsang; shapes below 1 use the boost
  // Gamma(a) = Gamma(a+1) * U^(1/a).
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("Rng::gamma: shape must be positive");
    if (shape < 1.0) {
      const double u = uniform01_open_low();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01_open_low();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    const double ga = gamma(a);
    const double gb = gamma(b);
    return ga / (ga + gb);
  }

  // Fisher-Yates; unlike std::shuffle the draw sequence is pinned.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 gen_;
};

}  // namespace debiasnp
