#pragma once

#include <cmath>
#include <numbers>

namespace arrival {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kInvSqrtPi = std::numbers::inv_sqrtpi;

/// Half the difference erf(a) - erf(b), i.e. the Gaussian mass between b and a.
/// Switches to erfc when both arguments sit on the same tail so that values
/// like erf(100) - erf(99.99) keep their significant digits.
inline double halfErfDifference(double a, double b) {
  if (a > 0.5 && b > 0.5) {
    return 0.5 * (std::erfc(b) - std::erfc(a));
  }
  if (a < -0.5 && b < -0.5) {
    return 0.5 * (std::erfc(-a) - std::erfc(-b));
  }
  return 0.5 * (std::erf(a) - std::erf(b));
}

}  // namespace arrival
