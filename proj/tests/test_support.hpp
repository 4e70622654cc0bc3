#pragma once

#include <random>

#include "arrival/spacetime.hpp"

namespace arrival::testing {

/// Deterministic generator shared by the property tests.
class Sampler {
 public:
  explicit Sampler(std::uint64_t seed = 20240611) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int sign() { return uniform(0.0, 1.0) < 0.5 ? -1 : 1; }

  SpacetimePoint point(double tSpan = 5.0, double xSpan = 5.0) {
    return {uniform(-tSpan, tSpan), uniform(-xSpan, xSpan)};
  }

  GalileanBoost boost(double vSpan = 2.0, bool allowReflection = true) {
    GalileanBoost g;
    g.velocity = uniform(-vSpan, vSpan);
    g.rotationSign = allowReflection ? sign() : 1;
    g.shiftT = uniform(-2.0, 2.0);
    g.shiftX = uniform(-2.0, 2.0);
    g.phaseConstant = uniform(-1.0, 1.0);
    return g;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace arrival::testing
