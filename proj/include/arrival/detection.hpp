#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "arrival/analytic.hpp"
#include "arrival/flow.hpp"
#include "arrival/parallel.hpp"
#include "arrival/quadrature.hpp"
#include "arrival/spacetime.hpp"
#include "arrival/special.hpp"
#include "arrival/wavepacket.hpp"

namespace arrival {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Regions

/// Detector at x = level + velocity * t, switched on over [tOn, tOff].
struct PointDetector {
  double level{0.0};
  double tOn{0.0};
  double tOff{0.0};
  double velocity{0.0};

  Worldline worldline() const { return {level, velocity}; }
};

/// Everything between two parallel worldlines over [tOn, tOff]. xLo and xHi
/// are the edges at t = 0.
struct Slab {
  double xLo{0.0};
  double xHi{0.0};
  double tOn{0.0};
  double tOff{0.0};
  double velocity{0.0};

  Worldline lower() const { return {xLo, velocity}; }
  Worldline upper() const { return {xHi, velocity}; }
};

struct BoundingBox {
  double tOn{0.0};
  double tOff{0.0};
  double xLo{0.0};
  double xHi{0.0};
};

/// Arbitrary region given by an indicator. The indicator must be false
/// outside the box.
struct PredicateRegion {
  std::function<bool(const SpacetimePoint&)> indicator;
  BoundingBox box;
};

using SpacetimeRegion = std::variant<PointDetector, Slab, PredicateRegion>;

inline void validateRegion(const SpacetimeRegion& region) {
  auto finite = [](std::initializer_list<double> v) {
    return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
  };
  std::visit(
      [&](const auto& r) {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, PointDetector>) {
          if (!finite({r.level, r.tOn, r.tOff, r.velocity}) || !(r.tOn <= r.tOff)) {
            throw std::invalid_argument("PointDetector: need finite values and tOn <= tOff");
          }
        } else if constexpr (std::is_same_v<R, Slab>) {
          if (!finite({r.xLo, r.xHi, r.tOn, r.tOff, r.velocity}) || !(r.tOn <= r.tOff) ||
              !(r.xLo < r.xHi)) {
            throw std::invalid_argument("Slab: need finite values, tOn <= tOff and xLo < xHi");
          }
        } else {
          const auto& b = r.box;
          if (!r.indicator || !finite({b.tOn, b.tOff, b.xLo, b.xHi}) || !(b.tOn <= b.tOff) ||
              !(b.xLo < b.xHi)) {
            throw std::invalid_argument("PredicateRegion: need an indicator and a finite box");
          }
        }
      },
      region);
}

inline std::pair<double, double> activeWindow(const SpacetimeRegion& region) {
  return std::visit(
      [](const auto& r) -> std::pair<double, double> {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, PredicateRegion>) {
          return {r.box.tOn, r.box.tOff};
        } else {
          return {r.tOn, r.tOff};
        }
      },
      region);
}

/// Image of a region under a boost.
inline SpacetimeRegion boostRegion(const SpacetimeRegion& region, const GalileanBoost& g) {
  return std::visit(
      [&](const auto& r) -> SpacetimeRegion {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, PointDetector>) {
          const Worldline w = boostWorldline(g, r.worldline());
          return PointDetector{w.offset, r.tOn + g.shiftT, r.tOff + g.shiftT, w.velocity};
        } else if constexpr (std::is_same_v<R, Slab>) {
          Worldline lo = boostWorldline(g, r.lower());
          Worldline hi = boostWorldline(g, r.upper());
          if (lo.offset > hi.offset) std::swap(lo, hi);
          return Slab{lo.offset, hi.offset, r.tOn + g.shiftT, r.tOff + g.shiftT, lo.velocity};
        } else {
          const GalileanBoost back = inverse(g);
          PredicateRegion out;
          out.indicator = [ind = r.indicator, back](const SpacetimePoint& q) {
            return ind(applyBoost(back, q));
          };
          const auto& b = r.box;
          out.box = {b.tOn + g.shiftT, b.tOff + g.shiftT, kInfinity, -kInfinity};
          for (double t : {b.tOn, b.tOff}) {
            for (double x : {b.xLo, b.xHi}) {
              const double y = applyBoost(g, {t, x}).x;
              out.box.xLo = std::min(out.box.xLo, y);
              out.box.xHi = std::max(out.box.xHi, y);
            }
          }
          return out;
        }
      },
      region);
}

// ---------------------------------------------------------------------------
// Settings, results, errors

enum class DetectionErrorKind {
  NearNodeMassExceeded,
  UnresolvedBoundary,
  TailNotConvergent,
  DegenerateConditioning,
  LimitNotConverged,
};

inline const char* toString(DetectionErrorKind k) {
  switch (k) {
    case DetectionErrorKind::NearNodeMassExceeded: return "NearNodeMassExceeded";
    case DetectionErrorKind::UnresolvedBoundary: return "UnresolvedBoundary";
    case DetectionErrorKind::TailNotConvergent: return "TailNotConvergent";
    case DetectionErrorKind::DegenerateConditioning: return "DegenerateConditioning";
    case DetectionErrorKind::LimitNotConverged: return "LimitNotConverged";
  }
  return "?";
}

class DetectionError : public std::runtime_error {
 public:
  DetectionError(DetectionErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(toString(kind)) + ": " + what), kind_(kind) {}
  DetectionErrorKind kind() const { return kind_; }

 private:
  DetectionErrorKind kind_;
};

/// Auto takes closed forms where they exist; Numerical always integrates.
enum class ProjectionMethod { Auto, Numerical };

struct DetectionSettings {
  IntegratorSettings integrator{.relTol = 1e-10, .absTol = 1e-12, .maxStep = 1.0, .maxStepTimeFraction = 0.02};
  double referenceTime{0.0};
  double windowSigmas{8.0};
  double boundaryTol{1e-10};
  std::size_t scanPoints{512};
  /// Extra probes per scan cell for predicate regions.
  std::size_t predicateOversample{4};
  /// Indicator samples per trajectory across the predicate's time window.
  std::size_t predicateSamples{2048};
  double errorBudget{1e-6};
  double quadratureTol{1e-10};
  ProjectionMethod method{ProjectionMethod::Auto};
  /// 0 picks the default thread count.
  unsigned threads{0};

  void validate() const {
    integrator.validate();
    if (!(windowSigmas > 0.0) || !(boundaryTol > 0.0) || scanPoints < 2 ||
        !(errorBudget >= 0.0) || !(quadratureTol > 0.0) || predicateSamples < 2 ||
        !std::isfinite(referenceTime)) {
      throw std::invalid_argument("DetectionSettings: invalid value");
    }
  }
};

/// Relative position error assumed for an integrated orbit, in units of the
/// integrator's relTol. Enters the boundary term of the error bound.
inline constexpr double kOrbitErrorFactor = 100.0;

struct HitInterval {
  double left{0.0};
  double right{0.0};
  /// True when the endpoint came from bisection on integrated orbits.
  bool leftResolved{false};
  bool rightResolved{false};
};

struct HitSet {
  double referenceTime{0.0};
  std::vector<HitInterval> intervals;
  double boundaryTol{0.0};
  double excludedMass{0.0};
  /// Mass outside the scanned window.
  double windowTailMass{0.0};
};

struct TransitionResult {
  double probability{0.0};
  double errorBound{0.0};
  HitSet hitSet;
};

enum class CurveKind { TransitionP, LeavensPL, ConditionalW, DensityW, DensityWTilde };

inline const char* toString(CurveKind k) {
  switch (k) {
    case CurveKind::TransitionP: return "TransitionP";
    case CurveKind::LeavensPL: return "LeavensPL";
    case CurveKind::ConditionalW: return "ConditionalW";
    case CurveKind::DensityW: return "DensityW";
    case CurveKind::DensityWTilde: return "DensityWTilde";
  }
  return "?";
}

struct DistributionCurve {
  CurveKind kind{CurveKind::TransitionP};
  std::vector<double> abscissa;
  std::vector<double> ordinate;
  std::vector<double> errorBound;
  std::string params;
};

// ---------------------------------------------------------------------------
// Slice masses

inline QuadratureResult intervalMass(const GaussianPacket&, double t, double a, double b,
                                     double) {
  const double w = GaussianPacket::width(t);
  return {halfErfDifference(b / w, a / w), 4.0 * std::numeric_limits<double>::epsilon()};
}

inline QuadratureResult intervalMass(const SuperposedPacket& p, double t, double a, double b,
                                     double absTol) {
  if (!(b > a)) return {};
  auto rho = [&](double x) { return p.density({t, x}); };
  return integrate(rho, a, b, absTol, 8000, 32);
}

inline QuadratureResult intervalMass(const Packet& p, double t, double a, double b,
                                     double absTol) {
  return std::visit([&](const auto& pk) { return intervalMass(pk, t, a, b, absTol); }, p);
}

template <class P>
double windowTailMass(const P& packet, double t, double sigmas, double absTol) {
  if constexpr (std::is_same_v<P, GaussianPacket>) {
    return std::erfc(sigmas);
  } else {
    const SliceWindow w = packet.massWindow(t, sigmas);
    const QuadratureResult inside = intervalMass(packet, t, w.lo, w.hi, absTol);
    return std::max(0.0, 1.0 - inside.value) + inside.error;
  }
}

namespace detail {

// ---------------------------------------------------------------------------
// Orbit probes

/// First times in [tOn, horizon] at which an orbit is at or above the lower
/// line and at or below the upper line; infinity when never.
struct ReachTimes {
  bool ok{true};
  double above{kInfinity};
  double below{kInfinity};
};

/// Integrates orbits from the reference slice against one or two parallel
/// watch lines. Orbits are ordered, so `above <= T` is monotone increasing in
/// the starting position and `below <= T` is monotone decreasing.
template <VelocityField F>
class LineProbe {
 public:
  LineProbe(const F& field, Worldline lo, Worldline hi, double tOn, double ref,
            const IntegratorSettings& settings)
      : field_(&field), lines_{lo, hi}, tOn_(tOn), ref_(ref), settings_(settings) {
    single_ = lo.offset == hi.offset && lo.velocity == hi.velocity;
  }

  ReachTimes operator()(double x0, double horizon) const {
    const std::span<const Worldline> watch(lines_.data(), single_ ? 1 : 2);
    const SpacetimePoint start{ref_, x0};
    double xOn = x0;
    std::vector<CrossingEvent> events;
    auto take = [&](const Trajectory& tr) {
      for (const auto& e : tr.events()) {
        if (e.t >= tOn_ && e.t <= horizon) events.push_back(e);
      }
    };
    if (ref_ > tOn_) {
      const Trajectory back = integrateTrajectory(*field_, start, tOn_, settings_, watch);
      if (!back.reliable()) return {false};
      xOn = back.end().x;
      take(back);
    }
    if (horizon > ref_) {
      const Trajectory fwd = integrateTrajectory(*field_, start, horizon, settings_, watch);
      if (!fwd.reliable()) return {false};
      if (ref_ < tOn_) xOn = fwd.positionAt(tOn_);
      take(fwd);
    }
    std::sort(events.begin(), events.end(),
              [](const CrossingEvent& a, const CrossingEvent& b) { return a.t < b.t; });
    ReachTimes r;
    if (xOn >= lines_[0].at(tOn_)) r.above = tOn_;
    if (xOn <= lines_[1].at(tOn_)) r.below = tOn_;
    const std::size_t upper = single_ ? 0 : 1;
    for (const auto& e : events) {
      if (e.watchIndex == 0 && r.above == kInfinity) r.above = e.t;
      if (e.watchIndex == upper && r.below == kInfinity) r.below = e.t;
    }
    return r;
  }

 private:
  const F* field_;
  std::array<Worldline, 2> lines_;
  double tOn_;
  double ref_;
  IntegratorSettings settings_;
  bool single_{false};
};

/// Result of locating the switch point of a monotone predicate.
struct Boundary {
  double x{0.0};
  bool resolved{true};
  /// Bracket left undecided because every probe in it hit a node.
  double uncertainLo{0.0};
  double uncertainHi{0.0};
};

/// Switch point of a monotone predicate on [a, b] given its values at the
/// ends (fa != fb). Probes that fail are stepped around; if a whole bracket
/// fails it is returned as uncertain.
template <class Pred>
Boundary bisect(Pred&& pred, double a, double b, bool fa, double tol) {
  for (int iter = 0; iter < 400; ++iter) {
    const double effTol = std::max(tol, 8.0 * std::numeric_limits<double>::epsilon() *
                                            std::max(std::abs(a), std::abs(b)));
    if (b - a <= effTol) return {0.5 * (a + b)};
    const double mid = 0.5 * (a + b);
    std::optional<bool> v = pred(mid);
    double at = mid;
    for (int k = 1; !v && k < 8; ++k) {
      for (double s : {1.0, -1.0}) {
        const double c = mid + s * k * (b - a) / 16.0;
        if (c > a && c < b) {
          v = pred(c);
          if (v) {
            at = c;
            break;
          }
        }
      }
    }
    if (!v) return {mid, false, a, b};
    if (*v == fa) {
      a = at;
    } else {
      b = at;
    }
  }
  throw DetectionError(DetectionErrorKind::UnresolvedBoundary, "bisection did not converge");
}

struct WindowBounds {
  bool empty{true};
  HitInterval interval;
  double uncertainMass{0.0};
  std::vector<std::pair<double, double>> uncertain;
};

/// Hit interval for readout time T from probes on an increasing grid whose
/// horizons reach at least T.
template <class Probe>
WindowBounds resolveInterval(const Probe& probe, std::span<const double> xs,
                             std::span<const ReachTimes> reach, double T, double tol) {
  WindowBounds out;
  const std::size_t n = xs.size();
  auto aboveAt = [&](double x) -> std::optional<bool> {
    const ReachTimes r = probe(x, T);
    if (!r.ok) return std::nullopt;
    return r.above <= T;
  };
  auto belowAt = [&](double x) -> std::optional<bool> {
    const ReachTimes r = probe(x, T);
    if (!r.ok) return std::nullopt;
    return r.below <= T;
  };

  std::size_t first = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (reach[i].ok && reach[i].above <= T) {
      first = i;
      break;
    }
  }
  std::size_t last = n;
  for (std::size_t i = n; i-- > 0;) {
    if (reach[i].ok && reach[i].below <= T) {
      last = i;
      break;
    }
  }
  if (first == n || last == n) return out;

  HitInterval iv;
  if (first == 0) {
    iv.left = xs[0];
  } else {
    const Boundary b = bisect(aboveAt, xs[first - 1], xs[first], false, tol);
    iv.left = b.x;
    iv.leftResolved = true;
    if (!b.resolved) out.uncertain.emplace_back(b.uncertainLo, b.uncertainHi);
  }
  if (last == n - 1) {
    iv.right = xs[n - 1];
  } else {
    const Boundary b = bisect(belowAt, xs[last], xs[last + 1], true, tol);
    iv.right = b.x;
    iv.rightResolved = true;
    if (!b.resolved) out.uncertain.emplace_back(b.uncertainLo, b.uncertainHi);
  }
  if (iv.right <= iv.left) return out;
  out.empty = false;
  out.interval = iv;
  return out;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = i + 1 == n ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return xs;
}

/// Orbit foot interval on slice `ref` for the standing Gaussian and a static
/// point detector active over [tOn, tOff].
inline std::optional<HitInterval> gaussianPointHits(double level, double tOn, double tOff,
                                                    double ref) {
  if (level == 0.0) return std::nullopt;
  const double wMin =
      (tOn <= 0.0 && tOff >= 0.0) ? 1.0 : std::sqrt(1.0 + std::min(tOn * tOn, tOff * tOff));
  const double wMax = std::sqrt(1.0 + std::max(tOn * tOn, tOff * tOff));
  const double scale = GaussianPacket::width(ref);
  double a = level / wMax * scale;
  double b = level / wMin * scale;
  if (a > b) std::swap(a, b);
  if (!(b > a)) return std::nullopt;
  return HitInterval{a, b, false, false};
}

template <class P>
bool usesClosedForm(const PointDetector& d, const DetectionSettings& s) {
  return std::is_same_v<P, GaussianPacket> && s.method == ProjectionMethod::Auto &&
         d.velocity == 0.0;
}

template <class P>
void addUncertainMass(const P& packet, const std::vector<std::pair<double, double>>& brackets,
                      const DetectionSettings& s, HitSet& hits) {
  for (const auto& [a, b] : brackets) {
    hits.excludedMass += intervalMass(packet, s.referenceTime, a, b, s.quadratureTol).value;
  }
  if (hits.excludedMass > s.errorBudget) {
    throw DetectionError(DetectionErrorKind::NearNodeMassExceeded,
                         "near-node mass " + std::to_string(hits.excludedMass) +
                             " exceeds the error budget");
  }
}

template <WavePacket P>
LineProbe<P> lineProbe(const P& packet, const SpacetimeRegion& region, double tOn,
                       const DetectionSettings& s) {
  if (const auto* d = std::get_if<PointDetector>(&region)) {
    return LineProbe<P>(packet, d->worldline(), d->worldline(), tOn, s.referenceTime,
                        s.integrator);
  }
  const auto& slab = std::get<Slab>(region);
  return LineProbe<P>(packet, slab.lower(), slab.upper(), tOn, s.referenceTime, s.integrator);
}

/// Predicate regions: sample the indicator along each orbit.
template <WavePacket P>
std::optional<bool> predicateHit(const P& packet, const PredicateRegion& region, double x0,
                                 const DetectionSettings& s) {
  const double ref = s.referenceTime;
  const BoundingBox& box = region.box;
  const SpacetimePoint start{ref, x0};
  std::optional<Trajectory> back;
  std::optional<Trajectory> fwd;
  if (ref > box.tOn) {
    back = integrateTrajectory(packet, start, box.tOn, s.integrator);
    if (!back->reliable()) return std::nullopt;
  }
  if (box.tOff > ref) {
    fwd = integrateTrajectory(packet, start, box.tOff, s.integrator);
    if (!fwd->reliable()) return std::nullopt;
  }
  auto position = [&](double t) {
    if (back && t <= ref) return back->positionAt(t);
    if (fwd && t >= ref) return fwd->positionAt(t);
    return x0;
  };
  auto test = [&](double t) {
    if (t < box.tOn || t > box.tOff) return false;
    const double x = position(t);
    return x >= box.xLo && x <= box.xHi && region.indicator({t, x});
  };
  for (const auto* tr : {back ? &*back : nullptr, fwd ? &*fwd : nullptr}) {
    if (!tr) continue;
    for (const auto& p : tr->samples()) {
      if (test(p.t)) return true;
    }
  }
  const std::size_t n = s.predicateSamples;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = box.tOn + (box.tOff - box.tOn) * static_cast<double>(i) /
                                   static_cast<double>(n - 1);
    if (test(t)) return true;
  }
  return false;
}

template <WavePacket P>
HitSet projectPredicate(const P& packet, const PredicateRegion& region,
                        const DetectionSettings& s) {
  HitSet hits;
  hits.referenceTime = s.referenceTime;
  hits.boundaryTol = s.boundaryTol;
  hits.windowTailMass = windowTailMass(packet, s.referenceTime, s.windowSigmas, s.quadratureTol);
  const SliceWindow w = packet.massWindow(s.referenceTime, s.windowSigmas);
  const std::size_t n = (s.scanPoints - 1) * (s.predicateOversample + 1) + 1;
  const std::vector<double> xs = linspace(w.lo, w.hi, n);
  std::vector<std::optional<bool>> flag(n);
  parallelFor(n, [&](std::size_t i) { flag[i] = predicateHit(packet, region, xs[i], s); },
              s.threads);

  // Near-node probes take the status of the nearest resolved neighbour; the
  // cell they sit in is charged to the excluded mass.
  std::vector<std::pair<double, double>> uncertain;
  std::vector<bool> hit(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (flag[i]) {
      hit[i] = *flag[i];
      continue;
    }
    const double lo = i > 0 ? xs[i - 1] : xs[i];
    const double hi = i + 1 < n ? xs[i + 1] : xs[i];
    uncertain.emplace_back(lo, hi);
    for (std::size_t k = 1; k < n; ++k) {
      if (i >= k && flag[i - k]) {
        hit[i] = *flag[i - k];
        break;
      }
      if (i + k < n && flag[i + k]) {
        hit[i] = *flag[i + k];
        break;
      }
    }
  }

  std::vector<std::size_t> flips;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (hit[i] != hit[i + 1]) flips.push_back(i);
  }
  std::vector<Boundary> edges(flips.size());
  parallelFor(
      flips.size(),
      [&](std::size_t k) {
        const std::size_t i = flips[k];
        auto pred = [&](double x) { return predicateHit(packet, region, x, s); };
        edges[k] = bisect(pred, xs[i], xs[i + 1], hit[i], s.boundaryTol);
      },
      s.threads);

  std::optional<double> open;
  if (hit[0]) open = xs[0];
  bool openResolved = false;
  for (std::size_t k = 0; k < flips.size(); ++k) {
    const Boundary& e = edges[k];
    if (!e.resolved) uncertain.emplace_back(e.uncertainLo, e.uncertainHi);
    if (!hit[flips[k]]) {
      open = e.x;
      openResolved = true;
    } else if (open) {
      if (e.x > *open) hits.intervals.push_back({*open, e.x, openResolved, true});
      open.reset();
    }
  }
  if (open && xs.back() > *open) hits.intervals.push_back({*open, xs.back(), openResolved, false});
  addUncertainMass(packet, uncertain, s, hits);
  return hits;
}

/// Shared-grid projection of a point or slab family with tOff = T over a
/// sorted list of readout times.
template <WavePacket P>
std::vector<HitSet> projectFamily(const P& packet, const SpacetimeRegion& base,
                                  std::span<const double> times, const DetectionSettings& s) {
  const double tOn = activeWindow(base).first;
  std::vector<HitSet> out(times.size());
  if (times.empty()) return out;

  if (const auto* d = std::get_if<PointDetector>(&base); d && usesClosedForm<P>(*d, s)) {
    for (std::size_t k = 0; k < times.size(); ++k) {
      out[k].referenceTime = s.referenceTime;
      if (auto iv = gaussianPointHits(d->level, tOn, times[k], s.referenceTime)) {
        out[k].intervals.push_back(*iv);
      }
    }
    return out;
  }

  const LineProbe<P> probe = lineProbe(packet, base, tOn, s);
  const SliceWindow w = packet.massWindow(s.referenceTime, s.windowSigmas);
  const std::size_t n = times.size() > 1 ? s.scanPoints : 2;
  const std::vector<double> xs = linspace(w.lo, w.hi, n);
  const double horizon = times.back();
  std::vector<ReachTimes> reach(n);
  parallelFor(n, [&](std::size_t i) { reach[i] = probe(xs[i], horizon); }, s.threads);

  const double tail = windowTailMass(packet, s.referenceTime, s.windowSigmas, s.quadratureTol);
  std::vector<WindowBounds> bounds(times.size());
  parallelFor(
      times.size(),
      [&](std::size_t k) { bounds[k] = resolveInterval(probe, xs, reach, times[k], s.boundaryTol); },
      s.threads);
  for (std::size_t k = 0; k < times.size(); ++k) {
    HitSet& h = out[k];
    h.referenceTime = s.referenceTime;
    h.boundaryTol = s.boundaryTol;
    h.windowTailMass = tail;
    if (!bounds[k].empty) h.intervals.push_back(bounds[k].interval);
    addUncertainMass(packet, bounds[k].uncertain, s, h);
  }
  return out;
}

template <WavePacket P>
TransitionResult measure(const P& packet, HitSet hits, const DetectionSettings& s) {
  TransitionResult r;
  double boundaryTerm = 0.0;
  const double t = s.referenceTime;
  auto edgeError = [&](double x) {
    const double dx = hits.boundaryTol + kOrbitErrorFactor * s.integrator.relTol * std::max(1.0, std::abs(x));
    return packet.density({t, x}) * dx;
  };
  for (const auto& iv : hits.intervals) {
    const QuadratureResult q = intervalMass(packet, t, iv.left, iv.right, s.quadratureTol);
    r.probability += q.value;
    r.errorBound += q.error;
    if (iv.leftResolved) boundaryTerm += edgeError(iv.left);
    if (iv.rightResolved) boundaryTerm += edgeError(iv.right);
  }
  r.probability = std::clamp(r.probability, 0.0, 1.0);
  r.errorBound += hits.excludedMass + hits.windowTailMass + boundaryTerm;
  if (r.errorBound == 0.0) r.errorBound = 4.0 * std::numeric_limits<double>::epsilon();
  r.hitSet = std::move(hits);
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Projection and transition probability

/// Initial positions on slice settings.referenceTime whose orbits meet the
/// region. Point and slab regions give a single interval because orbits keep
/// their order; predicate regions are scanned and may give several.
template <WavePacket P>
HitSet projectRegion(const P& packet, const SpacetimeRegion& region,
                     const DetectionSettings& settings = {}) {
  settings.validate();
  validateRegion(region);
  if (const auto* pr = std::get_if<PredicateRegion>(&region)) {
    return detail::projectPredicate(packet, *pr, settings);
  }
  const double tOff = activeWindow(region).second;
  const std::array<double, 1> times{tOff};
  return std::move(detail::projectFamily(packet, region, times, settings).front());
}

template <WavePacket P>
HitSet projectRegion(const P& packet, const SpacetimeRegion& region, double referenceTime,
                     DetectionSettings settings = {}) {
  settings.referenceTime = referenceTime;
  return projectRegion(packet, region, settings);
}

inline HitSet projectRegion(const Packet& packet, const SpacetimeRegion& region,
                            const DetectionSettings& settings = {}) {
  return std::visit([&](const auto& p) { return projectRegion(p, region, settings); }, packet);
}

/// P[X]: slice mass of the hit set, with an error bound that sums the
/// quadrature error, near-node mass, mass outside the window and the
/// density-weighted boundary uncertainty.
template <WavePacket P>
TransitionResult transitionProbability(const P& packet, const SpacetimeRegion& region,
                                       const DetectionSettings& settings = {}) {
  return detail::measure(packet, projectRegion(packet, region, settings), settings);
}

inline TransitionResult transitionProbability(const Packet& packet, const SpacetimeRegion& region,
                                              const DetectionSettings& settings = {}) {
  return std::visit([&](const auto& p) { return transitionProbability(p, region, settings); },
                    packet);
}

/// P[D_T] over a grid of readout times T for a point or slab region whose
/// tOff is replaced by T. Orbits on a shared scan grid are integrated once
/// to the last T and thresholded per T.
template <WavePacket P>
DistributionCurve transitionCurve(const P& packet, const SpacetimeRegion& base,
                                  std::span<const double> times,
                                  const DetectionSettings& settings = {}) {
  settings.validate();
  if (std::holds_alternative<PredicateRegion>(base)) {
    throw std::invalid_argument("transitionCurve: needs a point or slab region");
  }
  const double tOn = activeWindow(base).first;
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(times[k] >= tOn) || (k > 0 && !(times[k] > times[k - 1]))) {
      throw std::invalid_argument("transitionCurve: times must increase and start at or after tOn");
    }
  }
  SpacetimeRegion probe = base;
  std::visit([&](auto& r) {
    if constexpr (!std::is_same_v<std::decay_t<decltype(r)>, PredicateRegion>) {
      r.tOff = times.empty() ? r.tOn : times.back();
    }
  }, probe);
  validateRegion(probe);

  auto hits = detail::projectFamily(packet, probe, times, settings);
  DistributionCurve c;
  c.kind = CurveKind::TransitionP;
  c.abscissa.assign(times.begin(), times.end());
  double running = 0.0;
  for (auto& h : hits) {
    const TransitionResult r = detail::measure(packet, std::move(h), settings);
    // Hit sets are nested in T; clamp sub-tolerance jitter.
    running = std::max(running, r.probability);
    c.ordinate.push_back(running);
    c.errorBound.push_back(r.errorBound);
  }
  return c;
}

inline DistributionCurve transitionCurve(const Packet& packet, const SpacetimeRegion& base,
                                         std::span<const double> times,
                                         const DetectionSettings& settings = {}) {
  return std::visit([&](const auto& p) { return transitionCurve(p, base, times, settings); },
                    packet);
}

// ---------------------------------------------------------------------------
// Leavens comparator

template <class F>
concept CurrentField = requires(const F& f, SpacetimePoint p) {
  { f.current(p) } -> std::same_as<CurrentSample>;
};

/// Unnormalised P_L(T): integral of |s1(t, level)| over [tOn, T].
template <CurrentField P>
QuadratureResult leavensProbability(const P& packet, double level, double tOn, double T,
                                    const DetectionSettings& settings = {}) {
  if (!(T >= tOn)) throw std::invalid_argument("leavensProbability: T must not precede tOn");
  auto flux = [&](double t) { return std::abs(packet.current({t, level}).s1); };
  const auto panels = static_cast<std::size_t>(std::clamp(std::ceil((T - tOn) / 5.0), 1.0, 512.0));
  return integrate(flux, tOn, T, settings.quadratureTol, 20000, panels);
}

inline QuadratureResult leavensProbability(const Packet& packet, double level, double tOn,
                                           double T, const DetectionSettings& settings = {}) {
  return std::visit(
      [&](const auto& p) { return leavensProbability(p, level, tOn, T, settings); }, packet);
}

struct LeavensNormalization {
  double value{0.0};
  double error{0.0};
  double cutoff{0.0};
  double tailEstimate{0.0};
};

/// Integral of |s1(t, level)| over [tOn, inf): quadrature up to
/// 1e4 * max(1, |level|) past max(tOn, 0), plus a C / t^2 tail. The tail
/// constant is measured at the cutoff and a decade before; if they disagree
/// the field does not decay like a free packet and TailNotConvergent is thrown.
template <CurrentField P>
LeavensNormalization leavensNormalization(const P& packet, double level, double tOn,
                                          const DetectionSettings& settings = {}) {
  auto flux = [&](double t) { return std::abs(packet.current({t, level}).s1); };
  const double base = std::max(tOn, 0.0);
  const double cutoff = base + 1e4 * std::max(1.0, std::abs(level));
  std::vector<double> cuts{tOn};
  for (double d = 1.0; base + d < cutoff; d *= 10.0) {
    if (base + d > cuts.back()) cuts.push_back(base + d);
  }
  cuts.push_back(cutoff);
  LeavensNormalization n;
  n.cutoff = cutoff;
  const double tol = settings.quadratureTol / static_cast<double>(cuts.size());
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const QuadratureResult q = integrate(flux, cuts[i], cuts[i + 1], tol, 20000, 16);
    n.value += q.value;
    n.error += q.error;
  }
  const double cHere = flux(cutoff) * cutoff * cutoff;
  const double tPrev = base + 0.1 * (cutoff - base);
  const double cPrev = flux(tPrev) * tPrev * tPrev;
  const double scale = std::max(cHere, cPrev);
  if (scale > 0.0 && (std::abs(cHere - cPrev) > 0.05 * scale || !std::isfinite(scale))) {
    throw DetectionError(DetectionErrorKind::TailNotConvergent,
                         "current does not decay like 1/t^2 at the cutoff");
  }
  n.tailEstimate = cHere / cutoff;
  n.value += n.tailEstimate;
  n.error += std::abs(cHere - cPrev) / cutoff;
  return n;
}

inline LeavensNormalization leavensNormalization(const Packet& packet, double level, double tOn,
                                                 const DetectionSettings& settings = {}) {
  return std::visit(
      [&](const auto& p) { return leavensNormalization(p, level, tOn, settings); }, packet);
}

/// P_L over a time grid, optionally divided by the normalisation constant.
template <CurrentField P>
DistributionCurve leavensCurve(const P& packet, double level, double tOn,
                               std::span<const double> times, bool normalize,
                               const DetectionSettings& settings = {}) {
  DistributionCurve c;
  c.kind = CurveKind::LeavensPL;
  c.abscissa.assign(times.begin(), times.end());
  double norm = 1.0;
  double normErr = 0.0;
  if (normalize) {
    const LeavensNormalization n = leavensNormalization(packet, level, tOn, settings);
    if (!(n.value >= 1e-12)) {
      throw DetectionError(DetectionErrorKind::DegenerateConditioning,
                           "Leavens normalisation vanishes");
    }
    norm = n.value;
    normErr = n.error;
  }
  // Integrate panel by panel so each grid point reuses the previous sum.
  double sum = 0.0;
  double err = 0.0;
  double prev = tOn;
  for (double T : times) {
    if (T < prev) throw std::invalid_argument("leavensCurve: times must increase from tOn");
    const QuadratureResult q = leavensProbability(packet, level, prev, T, settings);
    sum += q.value;
    err += q.error;
    prev = T;
    const double v = sum / norm;
    c.ordinate.push_back(normalize ? std::min(v, 1.0) : v);
    c.errorBound.push_back(err / norm + v * normErr / norm);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Conditional distributions

/// lim P[D_T] for T -> infinity. Closed form for the standing Gaussian with
/// a static point detector; otherwise T is raised by decades until the
/// increment drops below 1e-10.
template <WavePacket P>
TransitionResult limitProbability(const P& packet, const SpacetimeRegion& base,
                                  const DetectionSettings& settings = {}) {
  const double tOn = activeWindow(base).first;
  if (const auto* d = std::get_if<PointDetector>(&base); d && detail::usesClosedForm<P>(*d, settings)) {
    const double w = tOn <= 0.0 ? 1.0 : std::sqrt(1.0 + tOn * tOn);
    TransitionResult r;
    r.probability = 0.5 * std::abs(std::erf(d->level / w));
    r.errorBound = 4.0 * std::numeric_limits<double>::epsilon();
    return r;
  }
  DetectionSettings s = settings;
  s.integrator.maxStepTimeFraction = std::max(s.integrator.maxStepTimeFraction, 0.02);
  auto at = [&](double T) {
    SpacetimeRegion r = base;
    std::visit([&](auto& x) {
      if constexpr (!std::is_same_v<std::decay_t<decltype(x)>, PredicateRegion>) x.tOff = T;
    }, r);
    return transitionProbability(packet, r, s);
  };
  double T = std::max({10.0, tOn + 10.0, 10.0 * std::abs(tOn)});
  TransitionResult prev = at(T);
  for (int decade = 0; decade < 20; ++decade) {
    T *= 10.0;
    TransitionResult next = at(T);
    if (std::abs(next.probability - prev.probability) < 1e-10) {
      next.errorBound += std::abs(next.probability - prev.probability);
      return next;
    }
    prev = std::move(next);
  }
  throw DetectionError(DetectionErrorKind::LimitNotConverged, "P[D_T] still growing at T = " +
                                                                  std::to_string(T));
}

/// W(T) = P[D_T] / P[D_inf].
template <WavePacket P>
DistributionCurve conditionalDistribution(const P& packet, const SpacetimeRegion& base,
                                          std::span<const double> times,
                                          const DetectionSettings& settings = {}) {
  const TransitionResult limit = limitProbability(packet, base, settings);
  if (!(limit.probability >= 1e-12)) {
    throw DetectionError(DetectionErrorKind::DegenerateConditioning,
                         "limiting detection probability below 1e-12");
  }
  DistributionCurve c = transitionCurve(packet, base, times, settings);
  c.kind = CurveKind::ConditionalW;
  for (std::size_t k = 0; k < c.ordinate.size(); ++k) {
    const double w = c.ordinate[k] / limit.probability;
    c.errorBound[k] = (c.errorBound[k] + w * limit.errorBound) / limit.probability;
    c.ordinate[k] = std::clamp(w, 0.0, 1.0);
  }
  return c;
}

inline DistributionCurve conditionalDistribution(const Packet& packet, const SpacetimeRegion& base,
                                                 std::span<const double> times,
                                                 const DetectionSettings& settings = {}) {
  return std::visit(
      [&](const auto& p) { return conditionalDistribution(p, base, times, settings); }, packet);
}

/// Density of the conditional arrival time by differentiating the numerical
/// W. Central differences with step 1e-3 * max(1, t); one-sided at t = 0.
template <WavePacket P>
DistributionCurve numericalArrivalDensity(const P& packet, double level,
                                          std::span<const double> times,
                                          const DetectionSettings& settings = {}) {
  struct Stencil {
    double h;
    std::array<double, 3> t;
    bool oneSided;
  };
  std::vector<Stencil> stencils;
  std::vector<double> needed;
  for (double t : times) {
    if (t < 0.0) throw std::invalid_argument("numericalArrivalDensity: times must be >= 0");
    double h = 1e-3 * std::max(1.0, t);
    Stencil st{};
    if (t < h) {
      h = std::max(t, 1e-3);
      st = {h, {t, t + h, t + 2 * h}, true};
      if (t > 0.0) st = {t, {0.0, t, 2.0 * t}, false};
    } else {
      st = {h, {t - h, t, t + h}, false};
    }
    stencils.push_back(st);
    needed.insert(needed.end(), st.t.begin(), st.t.end());
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  const SpacetimeRegion base = PointDetector{level, 0.0, 0.0};
  const DistributionCurve w = conditionalDistribution(packet, base, needed, settings);
  auto value = [&](double t) {
    const auto it = std::lower_bound(needed.begin(), needed.end(), t);
    return w.ordinate[static_cast<std::size_t>(it - needed.begin())];
  };
  DistributionCurve c;
  c.kind = CurveKind::DensityWTilde;
  c.abscissa.assign(times.begin(), times.end());
  for (const auto& st : stencils) {
    const double a = value(st.t[0]), b = value(st.t[1]), d = value(st.t[2]);
    const double slope = st.oneSided ? (-3.0 * a + 4.0 * b - d) / (2.0 * st.h)
                                     : (d - a) / (st.t[2] - st.t[0]);
    c.ordinate.push_back(std::max(0.0, slope));
    c.errorBound.push_back(0.0);
  }
  return c;
}

/// Arrival-time density w~(t) for a detector switched on at t = 0: the
/// closed form for the standing Gaussian, otherwise the numerical derivative.
template <WavePacket P>
DistributionCurve arrivalDensity(const P& packet, double level, std::span<const double> times,
                                 const DetectionSettings& settings = {}) {
  if constexpr (std::is_same_v<P, GaussianPacket>) {
    if (settings.method == ProjectionMethod::Auto) {
      if (level == 0.0) {
        throw DetectionError(DetectionErrorKind::DegenerateConditioning, "detector at the origin");
      }
      DistributionCurve c;
      c.kind = CurveKind::DensityWTilde;
      c.abscissa.assign(times.begin(), times.end());
      for (double t : times) {
        c.ordinate.push_back(analytic::wTilde(std::abs(level), t));
        c.errorBound.push_back(0.0);
      }
      return c;
    }
  }
  return numericalArrivalDensity(packet, level, times, settings);
}

inline DistributionCurve arrivalDensity(const Packet& packet, double level,
                                        std::span<const double> times,
                                        const DetectionSettings& settings = {}) {
  return std::visit([&](const auto& p) { return arrivalDensity(p, level, times, settings); },
                    packet);
}

/// Largest deviation between the closed-form density and the derivative of
/// the fully numerical W.
inline double arrivalDensityAgreement(const GaussianPacket& packet, double level,
                                      std::span<const double> times,
                                      DetectionSettings settings = {}) {
  settings.method = ProjectionMethod::Numerical;
  const DistributionCurve numeric = numericalArrivalDensity(packet, level, times, settings);
  double worst = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    worst = std::max(worst, std::abs(analytic::wTilde(std::abs(level), times[k]) - numeric.ordinate[k]));
  }
  return worst;
}

struct DivergentMeanReport {
  double limit{0.0};
  std::array<double, 3> tailTimes{1e3, 1e4, 1e5};
  std::array<double, 3> tailRatios{};
  std::array<double, 2> meanIncrements{};
  bool ratiosWithinOnePercent{false};
  bool incrementsWithinFivePercent{false};
  bool monotoneTail{false};
  bool passed() const { return ratiosWithinOnePercent && incrementsWithinFivePercent && monotoneTail; }
};

/// Checks that t^2 w~(t) tends to a positive constant, so the truncated mean
/// grows by about limit * ln 10 per decade and the mean arrival time is
/// infinite.
inline DivergentMeanReport divergentMeanCheck(const GaussianPacket&, double level) {
  const double lambda = std::abs(level);
  if (!(lambda > 0.0)) throw std::invalid_argument("divergentMeanCheck: level must be nonzero");
  DivergentMeanReport r;
  r.limit = analytic::wTildeTailConstant(lambda);
  r.ratiosWithinOnePercent = true;
  for (std::size_t i = 0; i < 3; ++i) {
    const double t = r.tailTimes[i];
    r.tailRatios[i] = t * t * analytic::wTilde(lambda, t) / r.limit;
  }
  r.ratiosWithinOnePercent = std::abs(r.tailRatios[2] - 1.0) < 0.01;

  auto moment = [&](double t) { return t * analytic::wTilde(lambda, t); };
  auto truncated = [&](double a, double b) {
    double sum = 0.0;
    for (double lo = a; lo < b; lo *= 2.0) {
      sum += integrate(moment, lo, std::min(2.0 * lo, b), 1e-12, 4000, 4).value;
    }
    return sum;
  };
  const double step = r.limit * std::log(10.0);
  r.meanIncrements = {truncated(1e3, 1e4), truncated(1e4, 1e5)};
  r.incrementsWithinFivePercent = std::all_of(r.meanIncrements.begin(), r.meanIncrements.end(),
                                              [&](double d) { return std::abs(d / step - 1.0) < 0.05; });

  r.monotoneTail = true;
  double prev = 0.0;
  for (int i = 0; i <= 60; ++i) {
    const double t = 10.0 * lambda * std::pow(10.0, i / 10.0);
    const double v = t * t * analytic::wTilde(lambda, t);
    if (v < prev) r.monotoneTail = false;
    prev = v;
  }
  return r;
}

}  // namespace arrival
