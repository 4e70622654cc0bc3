#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "arrival/analytic.hpp"
#include "arrival/detection.hpp"
#include "arrival/flow.hpp"
#include "arrival/quadrature.hpp"
#include "arrival/wavepacket.hpp"

/// Self-check suite behind the `verify` subcommand. Every property reports
/// its worst measured deviation next to the tolerance it is held to.
namespace arrival::verify {

struct PropertyResult {
  std::string name;
  bool passed{false};
  double deviation{0.0};
  double tolerance{0.0};
};

struct Report {
  std::vector<PropertyResult> properties;

  bool passed() const {
    return std::all_of(properties.begin(), properties.end(),
                       [](const PropertyResult& p) { return p.passed; });
  }
};

struct Options {
  std::uint64_t seed{20240611};
  /// Test hook: constant added to the velocity field used for transport.
  double perturbVelocity{0.0};
  unsigned threads{0};
};

namespace detail {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) {
    // Scaled by hand so that the stream does not depend on the standard
    // library's distribution implementation.
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

 private:
  std::mt19937_64 engine_;
};

inline SuperposedPacket pairPacket() {
  GalileanBoost fast;
  fast.velocity = 2.0;
  return SuperposedPacket(std::vector<PacketTerm>{{{1.0, 0.0}, {}}, {{0.5, 0.0}, fast}});
}

inline SpacetimeRegion randomRegion(Rng& rng) {
  const double tOn = rng.uniform(-2.0, 1.0);
  const double tOff = tOn + rng.uniform(0.5, 3.0);
  const double v = rng.uniform(-0.5, 0.5);
  if (rng.uniform(0.0, 1.0) < 0.5) return PointDetector{rng.uniform(-2.0, 2.0), tOn, tOff, v};
  const double lo = rng.uniform(-2.0, 1.0);
  return Slab{lo, lo + rng.uniform(0.2, 1.5), tOn, tOff, v};
}

inline GalileanBoost randomBoost(Rng& rng) {
  GalileanBoost g;
  g.velocity = rng.uniform(-1.5, 1.5);
  g.rotationSign = rng.uniform(0.0, 1.0) < 0.5 ? -1 : 1;
  g.shiftT = rng.uniform(-2.0, 2.0);
  g.shiftX = rng.uniform(-2.0, 2.0);
  g.phaseConstant = rng.uniform(-1.0, 1.0);
  return g;
}

inline PropertyResult make(std::string name, double deviation, double tolerance) {
  return {std::move(name), std::isfinite(deviation) && deviation <= tolerance, deviation, tolerance};
}

/// Mass between two orbits is the same on every slice.
template <WavePacket P>
double transportDeviation(const P& packet, Rng& rng, double perturb) {
  const PerturbedField<P> field(packet, perturb);
  const IntegratorSettings settings;
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) {
    double a = rng.uniform(-2.0, 2.0);
    double b = rng.uniform(-2.0, 2.0);
    if (a > b) std::swap(a, b);
    const double m0 = integrate([&](double x) { return packet.density({0.0, x}); }, a, b, 1e-13).value;
    for (double t : {0.5, 2.0, 10.0}) {
      const Trajectory ta = integrateTrajectory(field, {0.0, a}, t, settings);
      const Trajectory tb = integrateTrajectory(field, {0.0, b}, t, settings);
      if (!ta.reliable() || !tb.reliable()) return kInfinity;
      const double m1 =
          integrate([&](double x) { return packet.density({t, x}); }, ta.end().x, tb.end().x, 1e-13).value;
      worst = std::max(worst, std::abs(m1 - m0));
    }
  }
  return worst;
}

}  // namespace detail

inline Report run(const Options& options = {}) {
  detail::Rng rng(options.seed);
  Report report;
  const GaussianPacket gauss;
  const SuperposedPacket pair = detail::pairPacket();
  DetectionSettings numeric;
  numeric.method = ProjectionMethod::Numerical;
  numeric.threads = options.threads;

  {
    const double d = std::max(detail::transportDeviation(gauss, rng, options.perturbVelocity),
                              detail::transportDeviation(pair, rng, options.perturbVelocity));
    report.properties.push_back(detail::make("conservation", d, 1e-7));
  }

  {
    const PerturbedField<GaussianPacket> field(gauss, options.perturbVelocity);
    const IntegratorSettings settings;
    double worst = 0.0;
    std::vector<SpacetimePoint> points;
    std::vector<std::pair<double, double>> lambdas;
    for (int i = 0; i < 100; ++i) {
      const SpacetimePoint p{rng.uniform(-3.0, 3.0), rng.uniform(-2.0, 2.0)};
      const double lambda = rng.uniform(-3.0, 3.0);
      const Trajectory tr = integrateTrajectory(field, p, p.t + lambda, settings);
      const double d = tr.reliable() ? std::abs(tr.end().x - gaussianFlowMap(p, lambda).x) : kInfinity;
      worst = std::max(worst, d);
      points.push_back(p);
      lambdas.emplace_back(rng.uniform(-3.0, 3.0), lambda);
    }
    report.properties.push_back(detail::make("flow_oracle", worst, 1e-8));
    const FlowGroupReport g = flowGroupCheck(points, lambdas, settings);
    const double groupDev = g.integratorFailed
                                ? kInfinity
                                : std::max({g.integratorComposition, g.integratorInverse,
                                            g.closedFormComposition, g.closedFormInverse});
    report.properties.push_back(detail::make("flow_group_law", groupDev, 10.0 * settings.relTol));
  }

  {
    // Worst |difference| / (2 x larger error bound) across slices.
    double worst = 0.0;
    for (int i = 0; i < 5; ++i) {
      const SpacetimeRegion region = detail::randomRegion(rng);
      for (int which = 0; which < 2; ++which) {
        std::vector<TransitionResult> r;
        for (double ref : {-1.0, 0.0, 2.0}) {
          DetectionSettings s = numeric;
          s.referenceTime = ref;
          r.push_back(which == 0 ? transitionProbability(gauss, region, s)
                                 : transitionProbability(pair, region, s));
        }
        for (std::size_t a = 0; a < 3; ++a) {
          for (std::size_t b = a + 1; b < 3; ++b) {
            const double bound = 2.0 * std::max(r[a].errorBound, r[b].errorBound);
            worst = std::max(worst, std::abs(r[a].probability - r[b].probability) / bound);
          }
        }
      }
    }
    report.properties.push_back(detail::make("slice_independence", worst, 1.0));
  }

  {
    // Worst excess of P[inner] over P[outer] beyond both error bounds.
    double worst = -kInfinity;
    for (int i = 0; i < 20; ++i) {
      const double tOn = rng.uniform(-2.0, 1.0);
      const double tOff = tOn + rng.uniform(0.2, 2.0);
      const double v = rng.uniform(-0.5, 0.5);
      const double grow1 = rng.uniform(0.0, 1.0);
      const double grow2 = rng.uniform(0.0, 1.0);
      SpacetimeRegion inner;
      SpacetimeRegion outer;
      if (i % 2 == 0) {
        const double level = rng.uniform(-2.0, 2.0);
        inner = PointDetector{level, tOn, tOff, v};
        outer = PointDetector{level, tOn - grow1, tOff + grow2, v};
      } else {
        const double lo = rng.uniform(-2.0, 1.0);
        const double hi = lo + rng.uniform(0.1, 1.0);
        inner = Slab{lo, hi, tOn, tOff, v};
        outer = Slab{lo - 0.5 * grow1, hi + 0.5 * grow2, tOn - grow2, tOff + grow1, v};
      }
      const TransitionResult a = transitionProbability(pair, inner, numeric);
      const TransitionResult b = transitionProbability(pair, outer, numeric);
      worst = std::max(worst, a.probability - b.probability - a.errorBound - b.errorBound);
    }
    report.properties.push_back(detail::make("monotonicity", worst, 0.0));
  }

  {
    double worst = 0.0;
    const Packet packets[] = {gauss, pair};
    for (int i = 0; i < 10; ++i) {
      const Packet& packet = packets[i % 2];
      const SpacetimeRegion region = detail::randomRegion(rng);
      const GalileanBoost g = detail::randomBoost(rng);
      const TransitionResult a = transitionProbability(packet, region, numeric);
      const TransitionResult b = transitionProbability(boostPacket(packet, g), boostRegion(region, g), numeric);
      worst = std::max(worst, std::abs(a.probability - b.probability) / (2.0 * std::max(a.errorBound, b.errorBound)));
    }
    report.properties.push_back(detail::make("boost_invariance", worst, 1.0));
  }

  {
    // Current of a boosted packet at g(p) against the Galilean image of the
    // original current at p.
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const GalileanBoost g = detail::randomBoost(rng);
      const SpacetimePoint p{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
      const SuperposedPacket moved = boostPacket(pair, g);
      const CurrentSample before = pair.current(p);
      const CurrentSample after = moved.current(applyBoost(g, p));
      worst = std::max({worst, std::abs(after.s0 - before.s0),
                        std::abs(after.s1 - (g.rotationSign * before.s1 + g.velocity * before.s0))});
    }
    report.properties.push_back(detail::make("current_covariance", worst, 1e-9));
  }

  {
    std::vector<double> times;
    for (int i = 0; i < 60; ++i) times.push_back(300.0 * i / 59.0);
    const DistributionCurve c = transitionCurve(gauss, PointDetector{100.0, 0.0, 0.0}, times, numeric);
    double worst = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      worst = std::max(worst, std::abs(c.ordinate[k] - analytic::deltaL0T(100.0, times[k])));
    }
    report.properties.push_back(detail::make("oracle_transition", worst, 1e-6));

    double leavens = 0.0;
    for (double lambda : {1.0, 10.0, 100.0}) {
      const DistributionCurve l = leavensCurve(gauss, lambda, 0.0, times, false, numeric);
      for (std::size_t k = 0; k < times.size(); ++k) {
        leavens = std::max(leavens, std::abs(l.ordinate[k] - analytic::deltaL0T(lambda, times[k])));
      }
    }
    report.properties.push_back(detail::make("oracle_leavens", leavens, 1e-6));
  }

  {
    std::vector<double> times;
    for (int i = 1; i <= 20; ++i) times.push_back(0.5 * i);
    report.properties.push_back(
        detail::make("oracle_density", arrivalDensityAgreement(gauss, 2.0, times, numeric), 1e-5));
  }
  return report;
}

inline std::string formatNumber(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific, 3);
  return std::string(buf, r.ptr);
}

/// One line per property: name, PASS/FAIL, deviation and tolerance.
inline std::string format(const Report& report) {
  std::string out;
  for (const auto& p : report.properties) {
    out += p.name;
    out.append(p.name.size() < 20 ? 20 - p.name.size() : 1, ' ');
    out += p.passed ? "PASS" : "FAIL";
    out += "  deviation=" + formatNumber(p.deviation) + "  tolerance=" + formatNumber(p.tolerance) + "\n";
  }
  out += report.passed() ? "all properties passed\n" : "some properties failed\n";
  return out;
}

}  // namespace arrival::verify
