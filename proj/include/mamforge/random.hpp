#pragma once

#include <cstdint>
#include <random>

#include "mamforge/structure.hpp"

namespace mamforge {

/// Seeded generator with library-independent uniform draws, so seeded runs
/// give the same numbers with any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }
  Vec3 vec(double lo, double hi) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }
  Vec3 unit_vector() {
    const double z = uniform(-1.0, 1.0), phi = uniform(0.0, 2.0 * 3.141592653589793);
    const double rho = std::sqrt(1.0 - z * z);
    return {rho * std::cos(phi), rho * std::sin(phi), z};
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mamforge
