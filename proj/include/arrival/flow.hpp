#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "arrival/spacetime.hpp"
#include "arrival/wavepacket.hpp"

namespace arrival {

/// Exact flow of the standing Gaussian's velocity field:
/// F_lambda(t, x) = (t + lambda, x sqrt((1 + (t + lambda)^2) / (1 + t^2))).
inline SpacetimePoint gaussianFlowMap(const SpacetimePoint& p, double lambda) {
  const double t1 = p.t + lambda;
  return {t1, p.x * std::sqrt((1.0 + t1 * t1) / (1.0 + p.t * p.t))};
}

struct IntegratorSettings {
  double relTol{1e-9};
  double absTol{1e-12};
  double maxStep{0.1};
  double eventRefineTol{1e-12};
  /// Lets the step cap grow as fraction * |t| at late times; 0 keeps maxStep fixed.
  double maxStepTimeFraction{0.0};
  double minStep{1e-13};
  std::size_t maxSteps{20'000'000};

  void validate() const {
    if (!(relTol > 0.0 && absTol > 0.0 && maxStep > 0.0 && eventRefineTol > 0.0 && minStep > 0.0)) {
      throw std::invalid_argument("IntegratorSettings: tolerances and step bounds must be positive");
    }
    if (maxStepTimeFraction < 0.0) {
      throw std::invalid_argument("IntegratorSettings: maxStepTimeFraction must be non-negative");
    }
  }
};

/// A sign change of x(t) - watch(t); direction is +1 when x passes the
/// watched line upwards as t increases.
struct CrossingEvent {
  double t{0.0};
  double x{0.0};
  int direction{0};
  std::size_t watchIndex{0};
};

enum class TrajectoryStatus { Complete, NearNode, StepFailure };

inline const char* toString(TrajectoryStatus s) {
  switch (s) {
    case TrajectoryStatus::Complete: return "complete";
    case TrajectoryStatus::NearNode: return "near-node";
    case TrajectoryStatus::StepFailure: return "step-failure";
  }
  return "unknown";
}

/// Continuous extension of one Dormand-Prince step.
struct DenseStep {
  double t0{0.0};
  double h{0.0};
  std::array<double, 5> r{};

  double lo() const { return h > 0.0 ? t0 : t0 + h; }
  double hi() const { return h > 0.0 ? t0 + h : t0; }
  double at(double t) const {
    const double s = (t - t0) / h;
    const double s1 = 1.0 - s;
    return r[0] + s * (r[1] + s1 * (r[2] + s * (r[3] + s1 * r[4])));
  }
  /// dx/dt of the interpolant.
  double rate(double t) const {
    const double s = (t - t0) / h;
    const double s1 = 1.0 - s;
    const double a = r[3] + s1 * r[4];
    const double b = r[2] + s * a;
    const double db = a - s * r[4];
    const double c = r[1] + s1 * b;
    const double dc = -b + s1 * db;
    return (c + s * dc) / h;
  }
};

class Trajectory;

template <VelocityField F>
Trajectory integrateTrajectory(const F& field, SpacetimePoint start, double tEnd,
                               const IntegratorSettings& settings,
                               std::span<const Worldline> watch = {});

/// A Bohmian orbit sampled at the accepted steps, with dense output between
/// them. Samples and events are stored in increasing time.
class Trajectory {
 public:
  const std::vector<SpacetimePoint>& samples() const { return samples_; }
  const std::vector<CrossingEvent>& events() const { return events_; }
  TrajectoryStatus status() const { return status_; }
  bool reliable() const { return status_ == TrajectoryStatus::Complete; }
  double tMin() const { return samples_.front().t; }
  double tMax() const { return samples_.back().t; }
  /// Endpoint in the direction of integration.
  const SpacetimePoint& end() const { return forward_ ? samples_.back() : samples_.front(); }

  /// Interpolated position; t must lie within [tMin, tMax].
  double positionAt(double t) const {
    if (steps_.empty()) return samples_.front().x;
    auto it = std::lower_bound(steps_.begin(), steps_.end(), t,
                               [](const DenseStep& s, double v) { return s.hi() < v; });
    if (it == steps_.end()) --it;
    return it->at(std::clamp(t, it->lo(), it->hi()));
  }

 private:
  template <VelocityField F>
  friend Trajectory integrateTrajectory(const F&, SpacetimePoint, double, const IntegratorSettings&,
                                        std::span<const Worldline>);

  std::vector<SpacetimePoint> samples_;
  std::vector<DenseStep> steps_;
  std::vector<CrossingEvent> events_;
  TrajectoryStatus status_{TrajectoryStatus::Complete};
  bool forward_{true};
};

namespace detail {

// Dormand-Prince 5(4) tableau and Hairer's dense output coefficients.
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
inline constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                        a75 = -2187.0 / 6784, a76 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                        e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

inline int signOf(double v) { return (v > 0.0) - (v < 0.0); }

/// Per-watch bookkeeping of the last nonzero sign seen along the path.
struct WatchState {
  int sign{0};
  double t{0.0};
};

}  // namespace detail

/// Integrates dx/dt = v(t, x) from `start` to `tEnd` (either direction) with an
/// adaptive Dormand-Prince 5(4) pair. Every sign change of x(t) - w(t) for each
/// watched worldline w is located on the dense output by bisection to
/// eventRefineTol. A near-node velocity sample stops the integration.
template <VelocityField F>
Trajectory integrateTrajectory(const F& field, SpacetimePoint start, double tEnd,
                               const IntegratorSettings& settings,
                               std::span<const Worldline> watch) {
  using namespace detail;
  settings.validate();
  Trajectory traj;
  traj.forward_ = tEnd >= start.t;
  traj.samples_.push_back(start);

  const double dir = traj.forward_ ? 1.0 : -1.0;
  double t = start.t;
  double x = start.x;

  std::vector<WatchState> ws(watch.size());
  for (std::size_t j = 0; j < watch.size(); ++j) {
    ws[j] = {signOf(x - watch[j].at(t)), t};
  }

  auto eval = [&](double tt, double xx, double& out) {
    const FieldSample s = field.velocity({tt, xx});
    out = s.velocity;
    return !s.nearNode && std::isfinite(s.velocity);
  };

  auto finish = [&](TrajectoryStatus st) {
    traj.status_ = st;
    if (!traj.forward_) {
      std::reverse(traj.samples_.begin(), traj.samples_.end());
      std::reverse(traj.steps_.begin(), traj.steps_.end());
      std::reverse(traj.events_.begin(), traj.events_.end());
    }
    return traj;
  };

  if (t == tEnd) return finish(TrajectoryStatus::Complete);

  double k1 = 0.0;
  if (!eval(t, x, k1)) return finish(TrajectoryStatus::NearNode);

  auto stepCap = [&](double tt) {
    return std::max(settings.maxStep, settings.maxStepTimeFraction * std::abs(tt));
  };
  double h = dir * std::min(stepCap(t), std::abs(tEnd - t));
  std::size_t nsteps = 0;

  while (dir * (tEnd - t) > 0.0) {
    if (++nsteps > settings.maxSteps) return finish(TrajectoryStatus::StepFailure);
    const double cap = stepCap(t);
    if (std::abs(h) > cap) h = dir * cap;
    bool last = false;
    if (dir * (t + h - tEnd) >= 0.0 || std::abs(tEnd - t - h) < 1e-3 * std::abs(h)) {
      h = tEnd - t;
      last = true;
    }

    double k2 = 0, k3 = 0, k4 = 0, k5 = 0, k6 = 0, k7 = 0;
    bool ok = eval(t + c2 * h, x + h * a21 * k1, k2) &&
              eval(t + c3 * h, x + h * (a31 * k1 + a32 * k2), k3) &&
              eval(t + c4 * h, x + h * (a41 * k1 + a42 * k2 + a43 * k3), k4) &&
              eval(t + c5 * h, x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), k5) &&
              eval(t + h, x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), k6);
    const double x5 = x + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    const double tNew = last ? tEnd : t + h;
    ok = ok && eval(tNew, x5, k7);
    if (!ok) return finish(TrajectoryStatus::NearNode);

    const double errAbs = std::abs(h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7));
    const double scale = settings.absTol + settings.relTol * std::max(std::abs(x), std::abs(x5));
    const double err = errAbs / scale;

    if (err <= 1.0) {
      DenseStep d;
      d.t0 = t;
      d.h = h;
      d.r[0] = x;
      d.r[1] = x5 - x;
      d.r[2] = h * k1 - d.r[1];
      d.r[3] = d.r[1] - h * k7 - d.r[2];
      d.r[4] = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);

      // Events: scan a few interior points, and inside each sub-interval
      // look for a tangential dip through the line, which leaves the sign
      // at both ends unchanged.
      constexpr int kSub = 4;
      for (std::size_t j = 0; j < watch.size(); ++j) {
        auto g = [&](double tt) { return d.at(tt) - watch[j].at(tt); };
        auto root = [&](double ta, double tb) {
          const int sa = signOf(g(ta));
          if (sa == 0) return ta;
          while (std::abs(tb - ta) > settings.eventRefineTol) {
            const double tm = 0.5 * (ta + tb);
            if (tm == ta || tm == tb) break;
            if (signOf(g(tm)) == sa) ta = tm; else tb = tm;
          }
          return 0.5 * (ta + tb);
        };
        double tPrev = t;
        double gPrev = x - watch[j].at(t);
        for (int s = 1; s <= kSub; ++s) {
          const double ts = s == kSub ? tNew : t + h * static_cast<double>(s) / kSub;
          const double gs = s == kSub ? x5 - watch[j].at(tNew) : g(ts);
          const int sg = signOf(gs);
          const int sp = signOf(gPrev);
          if (sp != 0 && sp == sg) {
            // |g| shrinking at the start and growing at the end: find the
            // turning point and check whether g changes sign there.
            auto approach = [&](double tt) { return dir * sp * (d.rate(tt) - watch[j].velocity); };
            if (approach(tPrev) < 0.0 && approach(ts) > 0.0) {
              double lo = tPrev;
              double hi = ts;
              while (std::abs(hi - lo) > settings.eventRefineTol) {
                const double tm = 0.5 * (lo + hi);
                if (tm == lo || tm == hi) break;
                if (approach(tm) < 0.0) lo = tm; else hi = tm;
              }
              const double tm = 0.5 * (lo + hi);
              if (signOf(g(tm)) == -sp) {
                const double r1 = root(tPrev, tm);
                const double r2 = root(tm, ts);
                traj.events_.push_back({r1, watch[j].at(r1), traj.forward_ ? -sp : sp, j});
                traj.events_.push_back({r2, watch[j].at(r2), traj.forward_ ? sp : -sp, j});
              }
            }
          }
          tPrev = ts;
          gPrev = gs;
          if (sg == 0) continue;
          if (ws[j].sign == 0) {
            ws[j] = {sg, ts};
            continue;
          }
          if (sg != ws[j].sign) {
            // Bracket [ta, tb] in integration order; the earlier end may lie
            // in a previous step only if g vanished exactly, then take it.
            double ta = ws[j].t;
            if (dir * (ta - t) < 0.0) ta = t;
            const double r = root(ta, ts);
            const int forwardDir = traj.forward_ ? sg : ws[j].sign;
            traj.events_.push_back({r, watch[j].at(r), forwardDir, j});
          }
          ws[j] = {sg, ts};
        }
      }

      traj.steps_.push_back(d);
      t = tNew;
      x = x5;
      k1 = k7;
      traj.samples_.push_back({t, x});
      if (last) break;
    }

    const double factor = err > 0.0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0) : 5.0;
    h *= factor;
    if (std::abs(h) < settings.minStep) return finish(TrajectoryStatus::StepFailure);
  }
  return finish(TrajectoryStatus::Complete);
}

template <VelocityField F>
Trajectory integrateTrajectory(const F& field, SpacetimePoint start, double tEnd,
                               const IntegratorSettings& settings,
                               std::initializer_list<Worldline> watch) {
  const std::vector<Worldline> w(watch);
  return integrateTrajectory(field, start, tEnd, settings, std::span<const Worldline>(w));
}

/// Velocity field of a packet shifted by a constant. Test hook for checking
/// that conservation diagnostics notice a broken flow.
template <VelocityField F>
class PerturbedField {
 public:
  PerturbedField(const F& base, double offset) : base_(&base), offset_(offset) {}
  FieldSample velocity(const SpacetimePoint& p) const {
    FieldSample s = base_->velocity(p);
    s.velocity += offset_;
    return s;
  }

 private:
  const F* base_;
  double offset_;
};

struct FlowGroupReport {
  double closedFormComposition{0.0};
  double closedFormInverse{0.0};
  double integratorVsClosedForm{0.0};
  double integratorComposition{0.0};
  double integratorInverse{0.0};
  bool integratorFailed{false};
};

/// Checks F_s o F_t = F_{s+t} and F_{-s} o F_s = id for the closed-form
/// Gaussian flow and for the integrator. Deviations are maximum absolute
/// differences in x.
inline FlowGroupReport flowGroupCheck(std::span<const SpacetimePoint> points,
                                      std::span<const std::pair<double, double>> lambdaPairs,
                                      const IntegratorSettings& settings = {}) {
  FlowGroupReport r;
  const GaussianPacket field;
  const std::size_t n = std::min(points.size(), lambdaPairs.size());
  for (std::size_t i = 0; i < n; ++i) {
    const SpacetimePoint p = points[i];
    const auto [s, u] = lambdaPairs[i];
    const SpacetimePoint both = gaussianFlowMap(gaussianFlowMap(p, u), s);
    const SpacetimePoint once = gaussianFlowMap(p, s + u);
    r.closedFormComposition = std::max(r.closedFormComposition, std::abs(both.x - once.x));
    const SpacetimePoint back = gaussianFlowMap(gaussianFlowMap(p, s), -s);
    r.closedFormInverse = std::max(r.closedFormInverse, std::abs(back.x - p.x));

    const auto a = integrateTrajectory(field, p, p.t + u, settings);
    const auto b = integrateTrajectory(field, a.end(), p.t + u + s, settings);
    const auto c = integrateTrajectory(field, p, p.t + u + s, settings);
    const auto fwd = integrateTrajectory(field, p, p.t + s, settings);
    const auto rev = integrateTrajectory(field, fwd.end(), p.t, settings);
    if (!a.reliable() || !b.reliable() || !c.reliable() || !fwd.reliable() || !rev.reliable()) {
      r.integratorFailed = true;
      continue;
    }
    r.integratorVsClosedForm = std::max(r.integratorVsClosedForm, std::abs(c.end().x - once.x));
    r.integratorComposition = std::max(r.integratorComposition, std::abs(b.end().x - c.end().x));
    r.integratorInverse = std::max(r.integratorInverse, std::abs(rev.end().x - p.x));
  }
  return r;
}

}  // namespace arrival
