#include "arrival/detection.hpp"

#include <gtest/gtest.h>

#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <vector>

#include "test_support.hpp"

namespace arrival {
namespace {

const double kTA = -100.0 * std::sqrt(3.0);

// Golden values computed with 40-digit mpmath.
constexpr double kDelta100At100 = 0.07865998095313157184;
constexpr double kPlateau = 0.207111979034494393812864327217;
constexpr double kWTilde100At100 = 0.004150867415270900603;
constexpr double kTailConstant100 = 112.8379167095512573896;
constexpr double kDensityPeak100 = 99.99750021876797;
constexpr double kDelta100AtHalfTA = 0.05124666567808202855;

SuperposedPacket pairPacket() {
  GalileanBoost fast;
  fast.velocity = 2.0;
  return SuperposedPacket(std::vector<PacketTerm>{{{1.0, 0.0}, {}}, {{0.5, 0.0}, fast}});
}

DetectionSettings numerical() {
  DetectionSettings s;
  s.method = ProjectionMethod::Numerical;
  return s;
}

std::vector<double> grid(double lo, double hi, int n) {
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i) t[i] = lo + (hi - lo) * i / (n - 1);
  return t;
}

SpacetimeRegion randomRegion(testing::Sampler& rng) {
  const double tOn = rng.uniform(-2.0, 1.0);
  const double tOff = tOn + rng.uniform(0.5, 3.0);
  if (rng.uniform(0, 1) < 0.5) {
    return PointDetector{rng.uniform(-2.0, 2.0), tOn, tOff, rng.uniform(-0.5, 0.5)};
  }
  const double lo = rng.uniform(-2.0, 1.0);
  return Slab{lo, lo + rng.uniform(0.2, 1.5), tOn, tOff, rng.uniform(-0.5, 0.5)};
}

// ---------------------------------------------------------------------------
// Projection

TEST(ProjectRegion, GaussianPointDetectorClosedForm) {
  const HitSet h = projectRegion(GaussianPacket{}, PointDetector{2.0, 0.0, 3.0});
  ASSERT_EQ(h.intervals.size(), 1u);
  EXPECT_DOUBLE_EQ(h.intervals[0].left, 2.0 / std::sqrt(10.0));
  EXPECT_DOUBLE_EQ(h.intervals[0].right, 2.0);
  EXPECT_EQ(h.referenceTime, 0.0);
}

TEST(ProjectRegion, NumericalMatchesOrbitFoot) {
  const HitSet h = projectRegion(GaussianPacket{}, PointDetector{2.0, 0.0, 3.0}, numerical());
  ASSERT_EQ(h.intervals.size(), 1u);
  EXPECT_NEAR(h.intervals[0].left, 2.0 / std::sqrt(10.0), 1e-8);
  EXPECT_NEAR(h.intervals[0].right, 2.0, 1e-8);
  EXPECT_EQ(h.excludedMass, 0.0);
}

TEST(ProjectRegion, PlateauIntervalIsConstant) {
  const double left = 100.0 / std::sqrt(1.0 + kTA * kTA);
  for (double T : {0.0, 50.0, 170.0}) {
    const HitSet exact = projectRegion(GaussianPacket{}, PointDetector{100.0, kTA, T});
    ASSERT_EQ(exact.intervals.size(), 1u);
    EXPECT_NEAR(exact.intervals[0].left, left, 1e-15);
    EXPECT_EQ(exact.intervals[0].right, 100.0);
    // The scan stops at the edge of the mass window, 8 widths out.
    const HitSet scanned = projectRegion(GaussianPacket{}, PointDetector{100.0, kTA, T}, numerical());
    ASSERT_EQ(scanned.intervals.size(), 1u);
    EXPECT_NEAR(scanned.intervals[0].left, left, 1e-8);
    EXPECT_EQ(scanned.intervals[0].right, 8.0);
    EXPECT_FALSE(scanned.intervals[0].rightResolved);
  }
}

TEST(ProjectRegion, FullSlabCoversTheWindow) {
  for (double ref : {-1.0, 0.0, 2.0}) {
    DetectionSettings s;
    s.referenceTime = ref;
    const auto r = transitionProbability(pairPacket(), Slab{-100.0, 100.0, -3.0, 3.0}, s);
    ASSERT_EQ(r.hitSet.intervals.size(), 1u);
    EXPECT_GE(r.probability, 1.0 - 1e-12);
    const auto g = transitionProbability(GaussianPacket{}, Slab{-100.0, 100.0, -3.0, 3.0}, s);
    EXPECT_GE(g.probability, 1.0 - 1e-12);
  }
}

TEST(ProjectRegion, EmptyWhenOrbitsNeverArrive) {
  // Orbits spread no faster than sqrt(1 + t^2); nothing reaches x = 50 by t = 1.
  const HitSet h = projectRegion(pairPacket(), PointDetector{50.0, 0.0, 1.0});
  EXPECT_TRUE(h.intervals.empty());
}

TEST(ProjectRegion, RejectsBadRegions) {
  EXPECT_THROW(projectRegion(GaussianPacket{}, PointDetector{1.0, 2.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(projectRegion(GaussianPacket{}, Slab{1.0, 1.0, 0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(projectRegion(GaussianPacket{}, PredicateRegion{{}, {0, 1, 0, 1}}), std::invalid_argument);
}

TEST(ProjectRegion, PredicateMatchesSlab) {
  const auto packet = pairPacket();
  const Slab slab{-0.5, 0.7, 0.5, 2.0};
  const PredicateRegion pred{[](const SpacetimePoint& q) { return q.x >= -0.5 && q.x <= 0.7; },
                             {0.5, 2.0, -0.5, 0.7}};
  const auto a = transitionProbability(packet, slab);
  const auto b = transitionProbability(packet, pred);
  ASSERT_EQ(b.hitSet.intervals.size(), 1u);
  EXPECT_NEAR(a.probability, b.probability, 2.0 * (a.errorBound + b.errorBound));
}

TEST(ProjectRegion, PredicateWithTwoPiecesGivesTwoIntervals) {
  // Two disjoint windows at t = 1 catch two separate bundles of hyperbolae.
  const PredicateRegion pred{
      [](const SpacetimePoint& q) { return (q.x >= -2.0 && q.x <= -1.0) || (q.x >= 1.0 && q.x <= 2.0); },
      {1.0, 1.0, -2.0, 2.0}};
  const auto r = transitionProbability(GaussianPacket{}, pred);
  ASSERT_EQ(r.hitSet.intervals.size(), 2u);
  const double w = std::sqrt(2.0);
  EXPECT_NEAR(r.hitSet.intervals[0].left, -2.0 / w, 1e-8);
  EXPECT_NEAR(r.hitSet.intervals[0].right, -1.0 / w, 1e-8);
  EXPECT_NEAR(r.hitSet.intervals[1].left, 1.0 / w, 1e-8);
  EXPECT_NEAR(r.hitSet.intervals[1].right, 2.0 / w, 1e-8);
  EXPECT_NEAR(r.probability, 2.0 * halfErfDifference(2.0 / w, 1.0 / w), 1e-8);
}

TEST(ProjectRegion, BisectionReportsUndecidedBrackets) {
  // Probes fail on (0.4, 0.6); the switch point 0.5 cannot be pinned down.
  auto pred = [](double x) -> std::optional<bool> {
    if (x > 0.4 && x < 0.6) return std::nullopt;
    return x > 0.5;
  };
  const auto b = detail::bisect(pred, 0.0, 1.0, false, 1e-10);
  EXPECT_FALSE(b.resolved);
  EXPECT_LE(b.uncertainLo, 0.5);
  EXPECT_GE(b.uncertainHi, 0.5);
  auto clean = [](double x) -> std::optional<bool> { return x > 0.3; };
  const auto c = detail::bisect(clean, 0.0, 1.0, false, 1e-10);
  EXPECT_TRUE(c.resolved);
  EXPECT_NEAR(c.x, 0.3, 1e-10);
}

TEST(ProjectRegion, ExcludedMassOverBudgetThrows) {
  DetectionSettings s;
  s.errorBudget = 1e-3;
  HitSet h;
  EXPECT_NO_THROW(detail::addUncertainMass(GaussianPacket{}, {{0.0, 1e-4}}, s, h));
  EXPECT_GT(h.excludedMass, 0.0);
  try {
    detail::addUncertainMass(GaussianPacket{}, {{0.0, 0.1}}, s, h);
    FAIL() << "expected NearNodeMassExceeded";
  } catch (const DetectionError& e) {
    EXPECT_EQ(e.kind(), DetectionErrorKind::NearNodeMassExceeded);
  }
}

// ---------------------------------------------------------------------------
// Transition probability

TEST(TransitionProbability, GaussianValues) {
  const GaussianPacket g;
  EXPECT_NEAR(transitionProbability(g, PointDetector{100.0, 0.0, 100.0}).probability, kDelta100At100, 1e-15);
  EXPECT_NEAR(transitionProbability(g, PointDetector{100.0, 0.0, 1e12}).probability,
              analytic::deltaL0T(100.0, 1e12), 1e-15);
  EXPECT_NEAR(transitionProbability(g, PointDetector{100.0, 0.0, 1e300}).probability, 0.5, 1e-15);
  EXPECT_NEAR(transitionProbability(g, PointDetector{1.0, 0.0, 1.0}).probability,
              analytic::deltaL0T(1.0, 1.0), 1e-15);
  EXPECT_NEAR(transitionProbability(g, Slab{-1e3, 1e3, 0.0, 0.0}).probability, 1.0, 1e-12);
}

TEST(TransitionProbability, NumericalPathMatchesClosedForm) {
  const auto times = grid(0.0, 300.0, 61);
  const auto curve = transitionCurve(GaussianPacket{}, PointDetector{100.0, 0.0, 0.0}, times, numerical());
  for (std::size_t k = 0; k < times.size(); ++k) {
    EXPECT_NEAR(curve.ordinate[k], analytic::deltaL0T(100.0, times[k]), 1e-6) << times[k];
  }
}

TEST(TransitionProbability, ThreeBranchCurve) {
  const auto times = grid(kTA, 400.0, 80);
  for (const auto& s : {DetectionSettings{}, numerical()}) {
    const auto curve = transitionCurve(GaussianPacket{}, PointDetector{100.0, kTA, kTA}, times, s);
    for (std::size_t k = 0; k < times.size(); ++k) {
      EXPECT_NEAR(curve.ordinate[k], analytic::pDT3Branch({100.0, kTA, times[k]}), 1e-6) << times[k];
    }
  }
}

TEST(TransitionProbability, SliceIndependence) {
  testing::Sampler rng(101);
  const auto pair = pairPacket();
  for (int i = 0; i < 6; ++i) {
    const SpacetimeRegion region = randomRegion(rng);
    std::vector<TransitionResult> gauss;
    std::vector<TransitionResult> super;
    for (double ref : {-1.0, 0.0, 2.0}) {
      DetectionSettings s = numerical();
      s.referenceTime = ref;
      gauss.push_back(transitionProbability(GaussianPacket{}, region, s));
      super.push_back(transitionProbability(pair, region, s));
    }
    for (const auto* set : {&gauss, &super}) {
      for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = a + 1; b < 3; ++b) {
          const auto& x = (*set)[a];
          const auto& y = (*set)[b];
          EXPECT_LE(std::abs(x.probability - y.probability), 2.0 * std::max(x.errorBound, y.errorBound))
              << "region " << i;
        }
      }
    }
  }
}

TEST(TransitionProbability, MonotoneUnderInclusion) {
  testing::Sampler rng(103);
  const auto pair = pairPacket();
  for (int i = 0; i < 20; ++i) {
    const double tOn = rng.uniform(-2.0, 1.0);
    const double tOff = tOn + rng.uniform(0.2, 2.0);
    const double v = rng.uniform(-0.5, 0.5);
    SpacetimeRegion inner;
    SpacetimeRegion outer;
    if (i % 2 == 0) {
      const double level = rng.uniform(-2.0, 2.0);
      inner = PointDetector{level, tOn, tOff, v};
      outer = PointDetector{level, tOn - rng.uniform(0, 1), tOff + rng.uniform(0, 1), v};
    } else {
      const double lo = rng.uniform(-2.0, 1.0);
      const double hi = lo + rng.uniform(0.1, 1.0);
      inner = Slab{lo, hi, tOn, tOff, v};
      outer = Slab{lo - rng.uniform(0, 0.5), hi + rng.uniform(0, 0.5), tOn - rng.uniform(0, 1),
                   tOff + rng.uniform(0, 1), v};
    }
    const auto a = transitionProbability(pair, inner);
    const auto b = transitionProbability(pair, outer);
    EXPECT_LE(a.probability, b.probability + a.errorBound + b.errorBound) << i;
  }
}

TEST(TransitionProbability, CurveMonotoneInReadoutAndActivation) {
  const auto pair = pairPacket();
  const auto times = grid(1.0, 6.0, 40);
  std::vector<double> previous;
  for (double tOn : {-2.0, -1.0, 0.0, 1.0}) {
    const auto c = transitionCurve(pair, PointDetector{1.2, tOn, tOn}, times);
    for (std::size_t k = 1; k < c.ordinate.size(); ++k) EXPECT_GE(c.ordinate[k], c.ordinate[k - 1]);
    for (double p : c.ordinate) {
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
    if (!previous.empty()) {
      for (std::size_t k = 0; k < times.size(); ++k) {
        EXPECT_LE(c.ordinate[k], previous[k] + 2.0 * c.errorBound[k]) << tOn << " " << times[k];
      }
    }
    previous = c.ordinate;
  }
}

TEST(TransitionProbability, NotAdditive) {
  const GaussianPacket g;
  const double T = 150.0;
  const double before = transitionProbability(g, PointDetector{100.0, kTA, 0.0}).probability;
  const double after = transitionProbability(g, PointDetector{100.0, 0.0, T}).probability;
  const double both = transitionProbability(g, PointDetector{100.0, kTA, T}).probability;
  EXPECT_NEAR(before, kPlateau, 1e-12);
  EXPECT_NEAR(after, analytic::deltaL0T(100.0, T), 1e-12);
  EXPECT_NEAR(both, kPlateau, 1e-12);
  EXPECT_GT(before + after - both, 0.05);
}

TEST(TransitionProbability, BoostInvariance) {
  testing::Sampler rng(107);
  const Packet packets[] = {GaussianPacket{}, pairPacket()};
  for (int i = 0; i < 10; ++i) {
    const Packet& packet = packets[i % 2];
    const SpacetimeRegion region = randomRegion(rng);
    const GalileanBoost g = rng.boost(1.5);
    const auto a = transitionProbability(packet, region, numerical());
    const auto b = transitionProbability(boostPacket(packet, g), boostRegion(region, g), numerical());
    EXPECT_LE(std::abs(a.probability - b.probability), 2.0 * std::max(a.errorBound, b.errorBound))
        << i << " " << a.probability << " " << b.probability;
  }
}

TEST(TransitionProbability, BoostedPredicateMatchesBoostedSlab) {
  GalileanBoost g;
  g.velocity = 0.7;
  g.rotationSign = -1;
  g.shiftT = 0.5;
  g.shiftX = 1.0;
  const Slab slab{-0.5, 0.7, 0.5, 2.0};
  const PredicateRegion pred{[](const SpacetimePoint& q) { return q.x >= -0.5 && q.x <= 0.7; },
                             {0.5, 2.0, -0.5, 0.7}};
  const SuperposedPacket moved = boostPacket(GaussianPacket{}, g);
  const auto a = transitionProbability(moved, boostRegion(slab, g));
  const auto b = transitionProbability(moved, boostRegion(pred, g));
  const auto c = transitionProbability(GaussianPacket{}, slab, numerical());
  EXPECT_NEAR(a.probability, c.probability, 2.0 * (a.errorBound + c.errorBound));
  EXPECT_NEAR(b.probability, c.probability, 2.0 * (b.errorBound + c.errorBound));
}

// ---------------------------------------------------------------------------
// Leavens comparator

TEST(Leavens, EqualsTransitionForSingleCrossings) {
  const GaussianPacket g;
  for (double lambda : {1.0, 10.0, 100.0}) {
    for (double T : {0.0, 0.5, 3.0, 40.0, 150.0, 300.0}) {
      const double pl = leavensProbability(g, lambda, 0.0, T).value;
      EXPECT_NEAR(pl, analytic::deltaL0T(lambda, T), 1e-6) << lambda << " " << T;
    }
  }
}

TEST(Leavens, TwoBranchFormula) {
  const GaussianPacket g;
  for (double t : {kTA, -100.0, -1.0, 0.0, 50.0, 100.0, -kTA, 400.0}) {
    EXPECT_NEAR(leavensProbability(g, 100.0, kTA, t).value, analytic::pL2Branch({100.0, kTA, t}), 1e-6) << t;
  }
  EXPECT_EQ(leavensProbability(g, 100.0, 3.0, 3.0).value, 0.0);
}

TEST(Leavens, DominatesTransition) {
  const GaussianPacket g;
  const double t = 0.5 * -kTA;
  const double pl = leavensProbability(g, 100.0, kTA, t).value;
  const double pd = transitionProbability(g, PointDetector{100.0, kTA, t}, numerical()).probability;
  // On the plateau the gap is the mass of orbits that reach the detector
  // before t: deltaL0T(100, t).
  EXPECT_NEAR(pl - pd, kDelta100AtHalfTA, 1e-6);
  EXPECT_NEAR(pl - pd, analytic::pL2Branch({100.0, kTA, t}) - analytic::pDT3Branch({100.0, kTA, t}), 1e-6);
  const double tEnd = -kTA;
  const double gapEnd = leavensProbability(g, 100.0, kTA, tEnd).value -
                        transitionProbability(g, PointDetector{100.0, kTA, tEnd}, numerical()).probability;
  EXPECT_NEAR(gapEnd, kPlateau, 1e-6);

  testing::Sampler rng(109);
  const auto pair = pairPacket();
  for (int i = 0; i < 8; ++i) {
    const double level = rng.uniform(-2.0, 2.0);
    const double tOn = rng.uniform(-2.0, 1.0);
    const double T = tOn + rng.uniform(0.5, 3.0);
    const auto d = transitionProbability(pair, PointDetector{level, tOn, T});
    const auto l = leavensProbability(pair, level, tOn, T);
    EXPECT_LE(d.probability, l.value + d.errorBound + l.error + 1e-9) << i;
  }
}

TEST(Leavens, NormalizationMatchesLimit) {
  const GaussianPacket g;
  for (double lambda : {1.0, 10.0, 100.0}) {
    const auto n = leavensNormalization(g, lambda, 0.0);
    EXPECT_NEAR(n.value, 0.5 * std::erf(lambda), 1e-8) << lambda;
    EXPECT_GT(n.tailEstimate, 0.0);
  }
  const auto n = leavensNormalization(g, 100.0, kTA);
  EXPECT_NEAR(n.value, analytic::pL2Branch({100.0, kTA, 1e300}), 1e-8);
}

TEST(Leavens, TailModelIsEnforced) {
  // A current that decays like 1/t instead of 1/t^2.
  struct Slow {
    CurrentSample current(const SpacetimePoint& p) const { return {1.0, 1.0 / (1.0 + std::abs(p.t)), 0.0, false}; }
  };
  try {
    leavensNormalization(Slow{}, 1.0, 0.0);
    FAIL() << "expected TailNotConvergent";
  } catch (const DetectionError& e) {
    EXPECT_EQ(e.kind(), DetectionErrorKind::TailNotConvergent);
  }
}

TEST(Leavens, CurveIsNondecreasing) {
  const auto times = grid(kTA, 500.0, 50);
  const auto c = leavensCurve(GaussianPacket{}, 100.0, kTA, times, false);
  for (std::size_t k = 1; k < times.size(); ++k) EXPECT_GE(c.ordinate[k], c.ordinate[k - 1]);
  const auto w = leavensCurve(GaussianPacket{}, 100.0, kTA, times, true);
  EXPECT_LE(w.ordinate.back(), 1.0);
  EXPECT_NEAR(w.ordinate.back(), analytic::pL2Branch({100.0, kTA, 500.0}) / analytic::pL2Branch({100.0, kTA, 1e300}), 1e-7);
}

// ---------------------------------------------------------------------------
// Conditional distributions

TEST(Conditional, GaussianMatchesClosedForm) {
  const auto times = grid(0.0, 500.0, 26);
  for (const auto& s : {DetectionSettings{}, numerical()}) {
    const auto w = conditionalDistribution(GaussianPacket{}, PointDetector{100.0, 0.0, 0.0}, times, s);
    EXPECT_EQ(w.kind, CurveKind::ConditionalW);
    EXPECT_EQ(w.ordinate.front(), 0.0);
    for (std::size_t k = 0; k < times.size(); ++k) {
      EXPECT_NEAR(w.ordinate[k], analytic::conditionalW(100.0, times[k]), 1e-6);
      if (k > 0) {
        EXPECT_GE(w.ordinate[k], w.ordinate[k - 1]);
      }
    }
  }
}

TEST(Conditional, NumericalLimitConverges) {
  for (double lambda : {0.5, 2.0}) {
    const auto r = limitProbability(GaussianPacket{}, PointDetector{lambda, 0.0, 0.0}, numerical());
    EXPECT_NEAR(r.probability, 0.5 * std::erf(lambda), 1e-8);
  }
  const auto w = conditionalDistribution(pairPacket(), PointDetector{1.0, 0.0, 0.0}, std::vector<double>{0.0, 1e6});
  EXPECT_NEAR(w.ordinate.front(), 0.0, 1e-9);
  EXPECT_NEAR(w.ordinate.back(), 1.0, 1e-6);
}

TEST(Conditional, DegenerateLimitThrows) {
  try {
    conditionalDistribution(GaussianPacket{}, PointDetector{0.0, 0.0, 0.0}, std::vector<double>{0.0, 1.0});
    FAIL() << "expected DegenerateConditioning";
  } catch (const DetectionError& e) {
    EXPECT_EQ(e.kind(), DetectionErrorKind::DegenerateConditioning);
  }
}

TEST(ArrivalDensity, ClosedFormValues) {
  const std::vector<double> times{0.0, 100.0};
  const auto c = arrivalDensity(GaussianPacket{}, 100.0, times);
  EXPECT_EQ(c.ordinate[0], 0.0);
  EXPECT_NEAR(c.ordinate[1], kWTilde100At100, 1e-17);
}

TEST(ArrivalDensity, NumericalAgreesWithClosedForm) {
  const auto times = grid(0.0, 8.0, 17);
  EXPECT_LT(arrivalDensityAgreement(GaussianPacket{}, 2.0, times), 1e-5);
  const std::vector<double> far{50.0, 100.0, 200.0};
  EXPECT_LT(arrivalDensityAgreement(GaussianPacket{}, 100.0, far), 1e-6);
}

TEST(ArrivalDensity, PeakNearLambda) {
  auto negative = [](double t) { return -analytic::wTilde(100.0, t); };
  const auto [tPeak, value] = boost::math::tools::brent_find_minima(negative, 50.0, 150.0, 50);
  EXPECT_NEAR(tPeak, kDensityPeak100, 1e-4);
  EXPECT_LT(value, 0.0);
}

TEST(DivergentMean, Report) {
  const auto r = divergentMeanCheck(GaussianPacket{}, 100.0);
  EXPECT_NEAR(r.limit, kTailConstant100, 1e-10);
  EXPECT_TRUE(r.ratiosWithinOnePercent);
  EXPECT_TRUE(r.incrementsWithinFivePercent);
  EXPECT_TRUE(r.monotoneTail);
  EXPECT_TRUE(r.passed());
  EXPECT_NEAR(r.meanIncrements[0], 259.26168137638, 1e-6);
  EXPECT_NEAR(r.meanIncrements[1], 259.81331876632, 1e-6);
  EXPECT_NEAR(r.tailRatios[0], 0.99004836, 1e-8);
}

TEST(Parallel, ResultsIndependentOfThreadCount) {
  const auto pair = pairPacket();
  const auto times = grid(0.5, 4.0, 12);
  DetectionSettings one;
  one.threads = 1;
  DetectionSettings four;
  four.threads = 4;
  const auto a = transitionCurve(pair, Slab{0.3, 0.9, 0.0, 0.0}, times, one);
  const auto b = transitionCurve(pair, Slab{0.3, 0.9, 0.0, 0.0}, times, four);
  EXPECT_EQ(a.ordinate, b.ordinate);
  EXPECT_EQ(a.errorBound, b.errorBound);
}

}  // namespace
}  // namespace arrival
