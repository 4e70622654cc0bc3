#pragma once

#include <cmath>
#include <stdexcept>

#include "arrival/special.hpp"

/// Closed forms for the standing Gaussian and a point detector at x = lambda.
/// Every function works in dimensionless variables (t = T/delta^2,
/// lambda = L/delta); physical forms go through UnitAdapter.
namespace arrival::analytic {

/// Detector position, activation time tA <= 0 and readout time t >= tA.
struct GaussianScenario {
  double lambda{1.0};
  double tA{0.0};
  double t{0.0};

  void validate() const {
    if (!(lambda > 0.0)) throw std::invalid_argument("GaussianScenario: lambda must be positive");
    if (!(tA <= 0.0)) throw std::invalid_argument("GaussianScenario: tA must not be positive");
    if (!(t >= tA)) throw std::invalid_argument("GaussianScenario: t must not precede tA");
  }
};

/// Position at t = 0 of the orbit through (t, lambda).
inline double orbitFoot(double lambda, double t) { return lambda / std::sqrt(1.0 + t * t); }

/// Detection probability of a detector switched on at t = 0 and read at t:
/// (erf(lambda) - erf(lambda / sqrt(1 + t^2))) / 2.
inline double deltaL0T(double lambda, double t) {
  if (t < 0.0) throw std::invalid_argument("deltaL0T: t must be non-negative");
  return halfErfDifference(lambda, orbitFoot(lambda, t));
}

/// Limit of deltaL0T for t -> infinity.
inline double deltaL0TLimit(double lambda) { return 0.5 * std::erf(lambda); }

/// P[D_T] for a detector switched on at tA <= 0. The middle branch is the
/// plateau where only orbits that already crossed come back.
inline double pDT3Branch(const GaussianScenario& s) {
  s.validate();
  const double footA = orbitFoot(s.lambda, s.tA);
  if (s.t < 0.0) {
    return halfErfDifference(orbitFoot(s.lambda, s.t), footA);
  }
  if (s.t < -s.tA) {
    return halfErfDifference(s.lambda, footA);
  }
  return halfErfDifference(s.lambda, orbitFoot(s.lambda, s.t));
}

/// Current integral along the detector worldline from tA to t, which
/// counts every crossing of every orbit.
inline double pL2Branch(const GaussianScenario& s) {
  s.validate();
  const double footA = orbitFoot(s.lambda, s.tA);
  if (s.t < 0.0) {
    return halfErfDifference(orbitFoot(s.lambda, s.t), footA);
  }
  return halfErfDifference(s.lambda, footA) + halfErfDifference(s.lambda, orbitFoot(s.lambda, s.t));
}

/// Conditional density of the dimensionless arrival time for a detector
/// switched on at t = 0.
inline double wTilde(double lambda, double t) {
  if (t < 0.0) throw std::invalid_argument("wTilde: t must be non-negative");
  const double u = 1.0 + t * t;
  return 2.0 * lambda * kInvSqrtPi / std::erf(lambda) * t / (u * std::sqrt(u)) *
         std::exp(-lambda * lambda / u);
}

/// Conditional distribution W(t) = deltaL0T(lambda, t) / deltaL0T(lambda, inf).
inline double conditionalW(double lambda, double t) {
  return deltaL0T(lambda, t) / deltaL0TLimit(lambda);
}

/// lim t^2 wTilde(t) = 2 lambda / (sqrt(pi) erf(lambda)).
inline double wTildeTailConstant(double lambda) {
  return 2.0 * lambda * kInvSqrtPi / std::erf(lambda);
}

/// Current |s1| at the detector position, exact for the standing Gaussian.
inline double currentAtLevel(double lambda, double t) {
  const double u = 1.0 + t * t;
  return kInvSqrtPi / std::sqrt(u) * std::exp(-lambda * lambda / u) * std::abs(t * lambda) / u;
}

}  // namespace arrival::analytic
