#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace insight {

/// Counter-based generator: output i of stream `key` is a SplitMix64 finaliser
/// applied to (key, i). Streams derived with `split` are independent of the
/// parent's position, so the draw order inside one component never perturbs
/// another. All distributions are implemented here rather than through
/// <random> so results are identical across standard libraries.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9E3779B97F4A7C15ULL)) {}

  Rng split(std::uint64_t tag) const {
    Rng child;
    child.key_ = mix(key_ ^ mix(tag + 0xD1B54A32D192ED03ULL));
    return child;
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9E3779B97F4A7C15ULL * (++counter_)); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0x853C49E6748FEA9BULL;
  std::uint64_t counter_ = 0;
};

/// Deterministic Fisher-Yates shuffle driven by `Rng`.
template <typename Container>
void shuffle(Container& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace insight
