#pragma once

#include <cmath>
#include <stdexcept>

namespace arrival {

/// A point of the two dimensional spacetime in dimensionless coordinates
/// t = tau / delta^2, x = xi / delta.
struct SpacetimePoint {
  double t{0.0};
  double x{0.0};

  friend bool operator==(const SpacetimePoint&, const SpacetimePoint&) = default;
};

/// Units of action and mass of a physical chart. The dimensionless chart
/// is chi^0 = Phi^0 / hbar, chi^1 = sqrt(m) Phi^1 / hbar.
struct ChartScale {
  double hbar{1.0};
  double mass{1.0};

  ChartScale() = default;
  ChartScale(double hbar_, double mass_) : hbar(hbar_), mass(mass_) {
    if (!(hbar > 0.0) || !(mass > 0.0)) {
      throw std::invalid_argument("ChartScale: hbar and mass must be positive");
    }
  }
};

/// Converts physical chart coordinates (Phi^0, Phi^1) and a packet width
/// delta (in chi^1 units) to the dimensionless (t, x) used everywhere else.
class UnitAdapter {
 public:
  UnitAdapter() = default;
  UnitAdapter(ChartScale scale, double delta) : scale_(scale), delta_(delta) {
    if (!(delta > 0.0)) {
      throw std::invalid_argument("UnitAdapter: delta must be positive");
    }
  }

  double toTime(double phi0) const { return phi0 / scale_.hbar / (delta_ * delta_); }
  double toLength(double phi1) const {
    return std::sqrt(scale_.mass) * phi1 / scale_.hbar / delta_;
  }
  double fromTime(double t) const { return t * scale_.hbar * delta_ * delta_; }
  double fromLength(double x) const {
    return x * scale_.hbar * delta_ / std::sqrt(scale_.mass);
  }
  /// Converts a density per dimensionless time into a density per physical time.
  double densityPerTime(double perDimensionlessTime) const {
    return perDimensionlessTime / (scale_.hbar * delta_ * delta_);
  }

  SpacetimePoint toDimensionless(double phi0, double phi1) const {
    return {toTime(phi0), toLength(phi1)};
  }

  const ChartScale& scale() const { return scale_; }
  double delta() const { return delta_; }

 private:
  ChartScale scale_{};
  double delta_{1.0};
};

/// Orthochronous Galilei transformation of 1+1 dimensional spacetime,
///   (t, x) -> (t + shiftT, rotationSign * x + velocity * t + shiftX),
/// together with the additive constant of the boost phase.
struct GalileanBoost {
  double velocity{0.0};
  int rotationSign{1};
  double shiftT{0.0};
  double shiftX{0.0};
  double phaseConstant{0.0};

  static GalileanBoost identity() { return {}; }

  bool isIdentity() const {
    return velocity == 0.0 && rotationSign == 1 && shiftT == 0.0 && shiftX == 0.0 &&
           phaseConstant == 0.0;
  }

  friend bool operator==(const GalileanBoost&, const GalileanBoost&) = default;
};

inline SpacetimePoint applyBoost(const GalileanBoost& g, const SpacetimePoint& p) {
  return {p.t + g.shiftT, g.rotationSign * p.x + g.velocity * p.t + g.shiftX};
}

/// The boost `outer o inner`, i.e. apply `inner` first. Phase constants add.
inline GalileanBoost compose(const GalileanBoost& outer, const GalileanBoost& inner) {
  GalileanBoost g;
  g.rotationSign = outer.rotationSign * inner.rotationSign;
  g.velocity = outer.rotationSign * inner.velocity + outer.velocity;
  g.shiftT = inner.shiftT + outer.shiftT;
  g.shiftX = outer.rotationSign * inner.shiftX + outer.velocity * inner.shiftT + outer.shiftX;
  g.phaseConstant = outer.phaseConstant + inner.phaseConstant;
  return g;
}

/// Group inverse. The phase constant is carried over unchanged so that the
/// inverse describes the same frame change seen from the other side.
inline GalileanBoost inverse(const GalileanBoost& g) {
  GalileanBoost h;
  const double r = g.rotationSign;
  h.rotationSign = g.rotationSign;
  h.velocity = -r * g.velocity;
  h.shiftT = -g.shiftT;
  h.shiftX = r * g.velocity * g.shiftT - r * g.shiftX;
  h.phaseConstant = g.phaseConstant;
  return h;
}

/// Phase phi = (m/hbar)(v^2/2 t - v x) + c at a point given in the
/// coordinates of the frame the boost starts from (hbar = m = 1).
inline double boostPhase(const GalileanBoost& g, const SpacetimePoint& p) {
  const double v = g.velocity;
  return 0.5 * v * v * p.t - v * p.x + g.phaseConstant;
}

/// Same phase for an arbitrary chart scale; point given in physical (Phi^0, Phi^1).
inline double boostPhase(const GalileanBoost& g, double phi0, double phi1,
                         const ChartScale& scale) {
  const double v = g.velocity;
  return scale.mass / scale.hbar * (0.5 * v * v * phi0 - v * phi1) + g.phaseConstant;
}

/// Straight worldline x = offset + velocity * t.
struct Worldline {
  double offset{0.0};
  double velocity{0.0};

  Worldline() = default;
  Worldline(double level) : offset(level) {}  // NOLINT: a constant level is a worldline
  Worldline(double offset_, double velocity_) : offset(offset_), velocity(velocity_) {}

  double at(double t) const { return offset + velocity * t; }
  bool isStatic() const { return velocity == 0.0; }
};

/// Image of a worldline under a boost.
inline Worldline boostWorldline(const GalileanBoost& g, const Worldline& w) {
  const double u = g.rotationSign * w.velocity + g.velocity;
  return {g.rotationSign * w.offset - u * g.shiftT + g.shiftX, u};
}

}  // namespace arrival
