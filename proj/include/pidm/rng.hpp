#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pidm {

// Seeded generator with hand-rolled distributions so that streams are
// bit-stable across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed ^ 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1), 53 mantissa bits
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + int(eng_() % std::uint64_t(hi - lo + 1));
  }

  // Box-Muller, one spare cached
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pidm
