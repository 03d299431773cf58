#ifndef SELFTUNE_RNG_HPP
#define SELFTUNE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "selftune/errors.hpp"

namespace selftune {

// splitmix64; used to derive well-separated seeds for named substreams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random stream.  All sampling goes through the raw 64-bit
// output of mt19937_64 (whose sequence is pinned by the standard), so a
// given (seed, substream) pair replays identically everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Independent stream `index` derived from a base seed.
  static Rng substream(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(seed ^ splitmix64(index)));
  }

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection on the top of the 64-bit range.
  int below(int n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = ~0ULL - (~0ULL % un);
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return static_cast<int>(x % un);
  }

  // Standard normal via Box-Muller (deterministic, unlike
  // std::normal_distribution which is implementation-defined).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Sample an index from a probability vector.  The vector must be a valid
  // distribution (non-negative entries, total mass within 1e-6 of one).
  int categorical(const double* probs, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!(probs[i] >= 0.0)) {
        throw DistributionError(
            "categorical: negative or NaN probability at index " +
            std::to_string(i));
      }
      total += probs[i];
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw DistributionError("categorical: probabilities sum to " +
                              std::to_string(total) + ", expected 1");
    }
    const double u = uniform() * total;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return n - 1;  // guard against accumulated rounding
  }

  int categorical(const std::vector<double>& probs) {
    return categorical(probs.data(), static_cast<int>(probs.size()));
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace selftune

#endif
