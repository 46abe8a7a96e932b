#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace stpt {

// Deterministic RNG. Draws are hand-rolled on top of mt19937_64 so streams
// are bit-reproducible regardless of the standard library's distribution
// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Knuth for small means, normal approximation above that.
  std::uint64_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 40.0) {
      const double limit = std::exp(-mean);
      double prod = 1.0;
      std::uint64_t k = 0;
      do {
        ++k;
        prod *= uniform();
      } while (prod > limit);
      return k - 1;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double z = std::sqrt(-2.0 * std::log(u1)) *
                     std::cos(2.0 * 3.14159265358979323846 * u2);
    const double x = mean + std::sqrt(mean) * z;
    return x < 0.0 ? 0 : static_cast<std::uint64_t>(x + 0.5);
  }

  // Independent child stream; splitmix64 over (seed, stream id).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace stpt
