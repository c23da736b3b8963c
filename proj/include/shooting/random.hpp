#pragma once

// Seeded randomness with fully pinned-down mappings (no stdlib
// distributions), so identical seeds give bitwise-identical runs on any
// platform.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace shooting {

class Rng {
 public:
  static constexpr const char* kGeneratorName = "mt19937_64";

  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes exactly two raw draws per sample
  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  // [0, n); the modulo bias is irrelevant at these ranges
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace shooting
