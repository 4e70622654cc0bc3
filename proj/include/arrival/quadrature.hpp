#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace arrival {

struct QuadratureResult {
  double value{0.0};
  double error{0.0};
};

namespace detail {

struct Panel {
  double a;
  double b;
  double value;
  double error;
  bool operator<(const Panel& o) const { return error < o.error; }
};

/// One 7-15 Gauss-Kronrod panel; node tables come from Boost.Math.
template <class F>
Panel kronrodPanel(F& f, double a, double b) {
  using Kronrod = boost::math::quadrature::gauss_kronrod<double, 15>;
  using Gauss = boost::math::quadrature::gauss<double, 7>;
  const auto& x = Kronrod::abscissa();
  const auto& wk = Kronrod::weights();
  const auto& wg = Gauss::weights();
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);

  double f0 = f(mid);
  double kronrod = f0 * wk[0];
  double gauss = f0 * wg[0];
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double sum = f(mid + half * x[i]) + f(mid - half * x[i]);
    kronrod += sum * wk[i];
    if (i % 2 == 0) {
      gauss += sum * wg[i / 2];
    }
  }
  const double err = std::max(std::abs(kronrod - gauss) * half,
                              std::abs(kronrod * half) * 4.0 * std::numeric_limits<double>::epsilon());
  return {a, b, kronrod * half, err};
}

}  // namespace detail

/// Globally adaptive Gauss-Kronrod integration on a finite interval with an
/// absolute error target. The panel with the largest error estimate is
/// bisected until the summed estimate meets `absTol` or `maxPanels` is hit.
template <class F>
QuadratureResult integrate(F&& f, double a, double b, double absTol = 1e-10,
                           std::size_t maxPanels = 4000, std::size_t initialPanels = 1) {
  if (a == b) {
    return {};
  }
  const double sign = b > a ? 1.0 : -1.0;
  if (b < a) {
    std::swap(a, b);
  }
  std::priority_queue<detail::Panel> panels;
  double value = 0.0;
  double error = 0.0;
  const std::size_t n0 = std::max<std::size_t>(1, initialPanels);
  for (std::size_t i = 0; i < n0; ++i) {
    const double lo = a + (b - a) * static_cast<double>(i) / static_cast<double>(n0);
    const double hi = i + 1 == n0 ? b : a + (b - a) * static_cast<double>(i + 1) / static_cast<double>(n0);
    auto p = detail::kronrodPanel(f, lo, hi);
    value += p.value;
    error += p.error;
    panels.push(p);
  }
  while (error > absTol && panels.size() < maxPanels) {
    const detail::Panel worst = panels.top();
    const double mid = 0.5 * (worst.a + worst.b);
    if (mid <= worst.a || mid >= worst.b) {
      break;
    }
    panels.pop();
    auto left = detail::kronrodPanel(f, worst.a, mid);
    auto right = detail::kronrodPanel(f, mid, worst.b);
    value += left.value + right.value - worst.value;
    error += left.error + right.error - worst.error;
    panels.push(left);
    panels.push(right);
  }
  // Re-sum to shed the drift of the running updates.
  value = 0.0;
  error = 0.0;
  while (!panels.empty()) {
    value += panels.top().value;
    error += panels.top().error;
    panels.pop();
  }
  return {sign * value, error};
}

/// Integral over [a, inf) through the substitution t = a + u / (1 - u).
template <class F>
QuadratureResult integrateToInfinity(F&& f, double a, double absTol = 1e-10,
                                     std::size_t maxPanels = 4000) {
  auto g = [&](double u) {
    const double w = 1.0 - u;
    if (w <= 0.0) {
      return 0.0;
    }
    return f(a + u / w) / (w * w);
  };
  return integrate(g, 0.0, 1.0, absTol, maxPanels);
}

}  // namespace arrival
