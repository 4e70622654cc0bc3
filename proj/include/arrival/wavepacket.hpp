#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <concepts>
#include <limits>
#include <stdexcept>
#include <variant>
#include <vector>

#include "arrival/spacetime.hpp"
#include "arrival/special.hpp"

namespace arrival {

using Complex = std::complex<double>;

/// Density and current of a wave function at one spacetime point.
/// s0 = |psi|^2, s1 = Im(conj(psi) d_x psi), velocity = s1 / s0.
struct CurrentSample {
  double s0{0.0};
  double s1{0.0};
  double velocity{0.0};
  bool nearNode{false};
};

/// What the trajectory integrator needs from a field.
struct FieldSample {
  double velocity{0.0};
  bool nearNode{false};
};

/// Anything that yields a Bohmian velocity field ready for integration.
template <class F>
concept VelocityField = requires(const F& f, SpacetimePoint p) {
  { f.velocity(p) } -> std::same_as<FieldSample>;
};

/// Closed interval of positions on a time slice.
struct SliceWindow {
  double lo{0.0};
  double hi{0.0};
};

/// Relative size of |psi|^2 against the squared incoherent term sum below
/// which a point is treated as sitting on a node.
inline constexpr double kDensityFloorRatio = 1e-14;

/// The standing Gaussian of unit width in dimensionless coordinates,
///   Psi(t, x) = pi^(-1/4) (1 + i t)^(-1/2) exp(-x^2 / (2 (1 + i t))).
class GaussianPacket {
 public:
  /// Width Delta(t) = sqrt(1 + t^2).
  static double width(double t) { return std::sqrt(1.0 + t * t); }

  Complex psi(const SpacetimePoint& p) const {
    const Complex a{1.0, p.t};
    return kNorm / std::sqrt(a) * std::exp(-p.x * p.x / (2.0 * a));
  }

  /// d_x Psi = -x / (1 + i t) Psi.
  Complex dpsi(const SpacetimePoint& p) const {
    const Complex a{1.0, p.t};
    return -p.x / a * psi(p);
  }

  double density(const SpacetimePoint& p) const {
    const double w2 = 1.0 + p.t * p.t;
    return kInvSqrtPi / std::sqrt(w2) * std::exp(-p.x * p.x / w2);
  }

  CurrentSample current(const SpacetimePoint& p) const {
    const double s0 = density(p);
    const double v = p.t * p.x / (1.0 + p.t * p.t);
    return {s0, s0 * v, v, false};
  }

  FieldSample velocity(const SpacetimePoint& p) const {
    return {p.t * p.x / (1.0 + p.t * p.t), false};
  }

  /// Positions within `sigmas` widths of the centre on slice t.
  SliceWindow massWindow(double t, double sigmas) const {
    const double w = sigmas * width(t);
    return {-w, w};
  }

 private:
  static inline const double kNorm = std::pow(kPi, -0.25);
};

/// One term of a superposition: coefficient times the boosted standing
/// Gaussian exp(i theta) Psi(g^-1 p).
struct PacketTerm {
  Complex coefficient{1.0, 0.0};
  GalileanBoost boost{};
};

namespace detail {

/// exp(A x^2 + B x + C) restricted to t = 0 for one boosted term,
/// excluding its coefficient.
struct QuadraticExponent {
  Complex a;
  Complex b;
  Complex c;
};

inline QuadraticExponent initialExponent(const GalileanBoost& g) {
  const double s = -g.shiftT;
  const double v = g.velocity;
  const double centre = v * s + g.shiftX;
  const Complex w{1.0, s};
  QuadraticExponent q;
  q.a = -1.0 / (2.0 * w);
  q.b = centre / w + Complex{0.0, v};
  q.c = Complex{0.0, -v * g.shiftX - 0.5 * v * v * s + g.phaseConstant} -
        0.25 * std::log(kPi) - 0.5 * std::log(w) - centre * centre / (2.0 * w);
  return q;
}

/// Integral over the real line of conj(exp(q1)) exp(q2).
inline Complex overlap(const QuadraticExponent& q1, const QuadraticExponent& q2) {
  const Complex a = std::conj(q1.a) + q2.a;
  const Complex b = std::conj(q1.b) + q2.b;
  const Complex c = std::conj(q1.c) + q2.c;
  return std::sqrt(kPi / (-a)) * std::exp(c - b * b / (4.0 * a));
}

}  // namespace detail

/// Normalised superposition of boosted and translated copies of the standing
/// Gaussian. All derivatives stay analytic.
class SuperposedPacket {
 public:
  explicit SuperposedPacket(std::vector<PacketTerm> terms) : terms_(std::move(terms)) {
    std::erase_if(terms_, [](const PacketTerm& t) { return t.coefficient == Complex{}; });
    if (terms_.empty()) {
      throw std::invalid_argument("SuperposedPacket: at least one nonzero term is required");
    }
    for (const auto& t : terms_) {
      if (t.boost.rotationSign != 1 && t.boost.rotationSign != -1) {
        throw std::invalid_argument("SuperposedPacket: rotationSign must be +1 or -1");
      }
      inverses_.push_back(inverse(t.boost));
    }
    std::vector<detail::QuadraticExponent> q;
    for (const auto& t : terms_) {
      q.push_back(detail::initialExponent(t.boost));
    }
    double norm2 = 0.0;
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      for (std::size_t j = 0; j < terms_.size(); ++j) {
        norm2 += (std::conj(terms_[i].coefficient) * terms_[j].coefficient *
                  detail::overlap(q[i], q[j]))
                     .real();
      }
    }
    if (!(norm2 > 0.0)) {
      throw std::invalid_argument("SuperposedPacket: terms cancel to a zero wave function");
    }
    normConstant_ = 1.0 / std::sqrt(norm2);
  }

  const std::vector<PacketTerm>& terms() const { return terms_; }
  double normConstant() const { return normConstant_; }

  Complex psi(const SpacetimePoint& p) const {
    const auto s = sum(p);
    return normConstant_ * std::exp(s.logScale) * s.value;
  }

  Complex dpsi(const SpacetimePoint& p) const {
    const auto s = sum(p);
    return normConstant_ * std::exp(s.logScale) * s.derivative;
  }

  double density(const SpacetimePoint& p) const {
    const auto s = sum(p);
    return normConstant_ * normConstant_ * std::exp(2.0 * s.logScale) * std::norm(s.value);
  }

  CurrentSample current(const SpacetimePoint& p) const {
    const auto s = sum(p);
    const double scale = normConstant_ * normConstant_ * std::exp(2.0 * s.logScale);
    const double rho = std::norm(s.value);
    const double flux = (std::conj(s.value) * s.derivative).imag();
    CurrentSample out;
    out.s0 = scale * rho;
    out.s1 = scale * flux;
    out.nearNode = rho < kDensityFloorRatio * s.incoherent * s.incoherent;
    out.velocity = rho > 0.0 ? flux / rho : std::numeric_limits<double>::quiet_NaN();
    return out;
  }

  FieldSample velocity(const SpacetimePoint& p) const {
    const auto s = sum(p);
    const double rho = std::norm(s.value);
    if (rho < kDensityFloorRatio * s.incoherent * s.incoherent || !(rho > 0.0)) {
      return {std::numeric_limits<double>::quiet_NaN(), true};
    }
    return {(std::conj(s.value) * s.derivative).imag() / rho, false};
  }

  /// Hull of every term's centre plus or minus `sigmas` of its width.
  SliceWindow massWindow(double t, double sigmas) const {
    SliceWindow w{std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity()};
    for (const auto& term : terms_) {
      const double s = t - term.boost.shiftT;
      const double centre = term.boost.velocity * s + term.boost.shiftX;
      const double half = sigmas * GaussianPacket::width(s);
      w.lo = std::min(w.lo, centre - half);
      w.hi = std::max(w.hi, centre + half);
    }
    return w;
  }

 private:
  /// Term sum scaled by exp(-logScale) so that far tails do not underflow.
  struct ScaledSum {
    double logScale{0.0};
    Complex value{};
    Complex derivative{};
    double incoherent{0.0};
  };

  ScaledSum sum(const SpacetimePoint& p) const {
    // Small fixed-size buffers keep this allocation free for typical sizes.
    constexpr std::size_t kInline = 8;
    Complex logsBuf[kInline];
    Complex dlogBuf[kInline];
    std::vector<Complex> logsHeap;
    std::vector<Complex> dlogHeap;
    Complex* logs = logsBuf;
    Complex* dlog = dlogBuf;
    if (terms_.size() > kInline) {
      logsHeap.resize(terms_.size());
      dlogHeap.resize(terms_.size());
      logs = logsHeap.data();
      dlog = dlogHeap.data();
    }
    double maxRe = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      const auto& g = terms_[i].boost;
      const auto& h = inverses_[i];
      const SpacetimePoint q = applyBoost(h, p);
      const Complex w{1.0, q.t};
      logs[i] = std::log(terms_[i].coefficient) + Complex{0.0, boostPhase(h, q)} + kLogNorm -
                0.5 * std::log(w) - q.x * q.x / (2.0 * w);
      dlog[i] = Complex{0.0, g.velocity} - static_cast<double>(g.rotationSign) * q.x / w;
      maxRe = std::max(maxRe, logs[i].real());
    }
    ScaledSum s;
    s.logScale = maxRe;
    for (std::size_t i = 0; i < terms_.size(); ++i) {
      const Complex a = std::exp(logs[i] - maxRe);
      s.value += a;
      s.derivative += a * dlog[i];
      s.incoherent += std::abs(a);
    }
    return s;
  }

  static inline const Complex kLogNorm{-0.25 * std::log(kPi), 0.0};

  std::vector<PacketTerm> terms_;
  std::vector<GalileanBoost> inverses_;
  double normConstant_{1.0};
};

using Packet = std::variant<GaussianPacket, SuperposedPacket>;

template <class P>
concept WavePacket = VelocityField<P> && requires(const P& p, SpacetimePoint x) {
  { p.psi(x) } -> std::same_as<Complex>;
  { p.dpsi(x) } -> std::same_as<Complex>;
  { p.density(x) } -> std::same_as<double>;
  { p.current(x) } -> std::same_as<CurrentSample>;
  { p.massWindow(0.0, 1.0) } -> std::same_as<SliceWindow>;
};

inline Complex evaluatePsi(const Packet& packet, const SpacetimePoint& p) {
  return std::visit([&](const auto& pk) { return pk.psi(p); }, packet);
}

inline CurrentSample evaluateCurrent(const Packet& packet, const SpacetimePoint& p) {
  return std::visit([&](const auto& pk) { return pk.current(p); }, packet);
}

/// Flow potential H = erf(x / Delta) / 2 of the standing Gaussian:
/// d_x H = s0, d_t H = -s1, constant along every orbit.
inline double flowPotentialH(const GaussianPacket&, const SpacetimePoint& p) {
  return 0.5 * std::erf(p.x / GaussianPacket::width(p.t));
}

inline double flowPotentialH(const Packet& packet, const SpacetimePoint& p) {
  if (const auto* g = std::get_if<GaussianPacket>(&packet)) {
    return flowPotentialH(*g, p);
  }
  throw std::invalid_argument("flowPotentialH: no closed-form potential for a superposition");
}

/// Active boost of a packet: the returned wave function is
/// exp(i theta) psi(g^-1 p), theta being the boost phase of the frame change
/// back to the original frame. Its current at g(p) is the Galilean image of
/// the original current at p.
inline SuperposedPacket boostPacket(const GaussianPacket&, const GalileanBoost& g) {
  return SuperposedPacket({PacketTerm{{1.0, 0.0}, g}});
}

inline SuperposedPacket boostPacket(const SuperposedPacket& packet, const GalileanBoost& g) {
  const GalileanBoost h = inverse(g);
  const SpacetimePoint origin{};
  const auto theta = [](const GalileanBoost& b, const SpacetimePoint& p) {
    const GalileanBoost bi = inverse(b);
    return boostPhase(bi, applyBoost(bi, p));
  };
  std::vector<PacketTerm> terms;
  for (const auto& term : packet.terms()) {
    const GalileanBoost composed = compose(g, term.boost);
    // The phases of successive boosts add up to the composed phase modulo a
    // constant, which is absorbed into the coefficient.
    const double offset = theta(g, origin) + theta(term.boost, applyBoost(h, origin)) -
                          theta(composed, origin);
    terms.push_back({term.coefficient * std::polar(1.0, offset), composed});
  }
  return SuperposedPacket(std::move(terms));
}

inline Packet boostPacket(const Packet& packet, const GalileanBoost& g) {
  return std::visit([&](const auto& pk) -> Packet { return boostPacket(pk, g); }, packet);
}

}  // namespace arrival
