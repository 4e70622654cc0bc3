#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "arrival/analytic.hpp"
#include "arrival/detection.hpp"
#include "arrival/flow.hpp"
#include "arrival/parallel.hpp"
#include "arrival/spacetime.hpp"
#include "arrival/verify.hpp"
#include "arrival/wavepacket.hpp"

/// Command layer behind the `arrival` executable. Commands render their whole
/// output into strings first, so a failing run writes nothing.
namespace arrival::cli {

inline constexpr const char* kVersion = "0.1.0";

enum class Command { Transition, Leavens, Density, Trajectories, Verify };
enum class Format { Csv, Json };
enum class Spacing { Linear, Log };

namespace ExitCode {
inline constexpr int Success = 0;
inline constexpr int VerificationFailed = 1;
inline constexpr int Usage = 2;
inline constexpr int Numerical = 3;
}  // namespace ExitCode

/// Bad user input. Maps to the usage exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const char* toString(Command c) {
  switch (c) {
    case Command::Transition: return "transition";
    case Command::Leavens: return "leavens";
    case Command::Density: return "density";
    case Command::Trajectories: return "trajectories";
    case Command::Verify: return "verify";
  }
  return "?";
}

/// One term of a superposition as it appears in packet files and --term.
struct TermSpec {
  double coefficient_re{1.0};
  double coefficient_im{0.0};
  double boost_v{0.0};
  double shift_t{0.0};
  double shift_x{0.0};
  double phase_c{0.0};

  PacketTerm toTerm() const {
    GalileanBoost g;
    g.velocity = boost_v;
    g.shiftT = shift_t;
    g.shiftX = shift_x;
    g.phaseConstant = phase_c;
    return {{coefficient_re, coefficient_im}, g};
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TermSpec, coefficient_re, coefficient_im, boost_v,
                                                shift_t, shift_x, phase_c)

/// Parses "key=value,key=value" with the TermSpec field names. Missing keys
/// keep their defaults.
inline TermSpec parseTerm(std::string_view text) {
  TermSpec t;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("term item without '=': " + std::string(item));
    const std::string_view key = item.substr(0, eq);
    const std::string_view val = item.substr(eq + 1);
    double v = 0.0;
    const auto r = std::from_chars(val.data(), val.data() + val.size(), v);
    if (r.ec != std::errc{} || r.ptr != val.data() + val.size() || !std::isfinite(v)) {
      throw ConfigError("term value is not a number: " + std::string(item));
    }
    if (key == "coefficient_re") t.coefficient_re = v;
    else if (key == "coefficient_im") t.coefficient_im = v;
    else if (key == "boost_v") t.boost_v = v;
    else if (key == "shift_t") t.shift_t = v;
    else if (key == "shift_x") t.shift_x = v;
    else if (key == "phase_c") t.phase_c = v;
    else throw ConfigError("unknown term field: " + std::string(key));
  }
  return t;
}

/// Reads {"terms": [{...}, ...]} from a JSON packet file.
inline std::vector<TermSpec> readPacketFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open packet file: " + path);
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    return j.at("terms").get<std::vector<TermSpec>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("packet file " + path + ": " + e.what());
  }
}

struct Grid {
  double tMin{0.0};
  double tMax{1.0};
  std::size_t points{2};
  Spacing spacing{Spacing::Linear};

  void validate() const {
    if (points < 2) throw ConfigError("grid needs at least 2 points");
    if (!std::isfinite(tMin) || !std::isfinite(tMax) || !(tMin < tMax)) {
      throw ConfigError("grid needs finite t-min < t-max");
    }
    if (spacing == Spacing::Log && !(tMin > 0.0)) throw ConfigError("log spacing needs t-min > 0");
  }

  std::vector<double> times() const {
    validate();
    std::vector<double> t(points);
    const double n = static_cast<double>(points - 1);
    for (std::size_t i = 0; i < points; ++i) {
      const double k = static_cast<double>(i);
      // Weighted form keeps grids symmetric about 0 exactly symmetric.
      t[i] = spacing == Spacing::Linear ? (tMin * (n - k) + tMax * k) / n
                                        : tMin * std::pow(tMax / tMin, k / n);
    }
    t.front() = tMin;
    t.back() = tMax;
    return t;
  }
};

/// Everything a command needs. Lengths and times are dimensionless unless
/// physical is set, in which case they are chart coordinates converted with
/// delta, hbar and mass.
struct RunConfig {
  std::string packet{"gaussian"};
  std::vector<TermSpec> terms;

  std::optional<double> level;
  std::optional<double> xLo;
  std::optional<double> xHi;
  double tOn{0.0};
  /// Detector drift dx/dt.
  double velocity{0.0};

  std::optional<double> tMin;
  std::optional<double> tMax;
  std::optional<long long> points;
  std::optional<Spacing> spacing;

  /// Initial positions of the trajectory fan.
  std::vector<double> x0{-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5};

  DetectionSettings settings{};
  Format format{Format::Csv};
  std::uint64_t seed{20240611};

  bool normalize{false};
  bool compare{false};
  bool integrate{false};

  bool physical{false};
  double delta{1.0};
  double hbar{1.0};
  double mass{1.0};

  double perturbVelocity{0.0};
};

/// Grid for a command, with per-command defaults for unset fields.
inline Grid resolveGrid(Command cmd, const RunConfig& c) {
  Grid g;
  switch (cmd) {
    case Command::Density:
      g = {1e-3, 1e6, 2000, Spacing::Log};
      break;
    case Command::Trajectories:
      g = {-3.0, 3.0, 121, Spacing::Linear};
      break;
    default: {
      const double lo = std::max(c.tOn, 0.0);
      g = {lo, lo + 300.0, 200, Spacing::Linear};
    }
  }
  if (c.tMin) g.tMin = *c.tMin;
  if (c.tMax) g.tMax = *c.tMax;
  if (c.spacing) g.spacing = *c.spacing;
  if (c.points) {
    if (*c.points < 2) throw ConfigError("--points must be at least 2");
    g.points = static_cast<std::size_t>(*c.points);
  }
  g.validate();
  return g;
}

namespace detail {

inline UnitAdapter adapter(const RunConfig& c) {
  if (!c.physical) return {};
  try {
    return UnitAdapter(ChartScale(c.hbar, c.mass), c.delta);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

/// Copy of the config with every input quantity in dimensionless units.
inline RunConfig dimensionless(const RunConfig& c) {
  if (!c.physical) return c;
  const UnitAdapter u = adapter(c);
  RunConfig d = c;
  auto len = [&](std::optional<double>& v) { if (v) v = u.toLength(*v); };
  auto time = [&](std::optional<double>& v) { if (v) v = u.toTime(*v); };
  len(d.level);
  len(d.xLo);
  len(d.xHi);
  time(d.tMin);
  time(d.tMax);
  d.tOn = u.toTime(c.tOn);
  d.velocity = u.toLength(c.velocity) / u.toTime(1.0);
  for (double& x : d.x0) x = u.toLength(x);
  d.physical = false;
  return d;
}

inline Packet buildPacket(const RunConfig& c) {
  if (c.packet == "gaussian") {
    if (!c.terms.empty()) throw ConfigError("--term needs --packet superposition");
    return GaussianPacket{};
  }
  if (c.packet != "superposition") throw ConfigError("unknown packet kind: " + c.packet);
  if (c.terms.empty()) throw ConfigError("superposition needs at least one --term or --packet-file");
  std::vector<PacketTerm> terms;
  for (const auto& t : c.terms) terms.push_back(t.toTerm());
  try {
    return SuperposedPacket(std::move(terms));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline double requireLevel(const RunConfig& c) {
  if (!c.level) throw ConfigError("--level is required");
  if (!std::isfinite(*c.level)) throw ConfigError("--level must be finite");
  return *c.level;
}

inline SpacetimeRegion buildRegion(const RunConfig& c) {
  if (c.xLo.has_value() != c.xHi.has_value()) throw ConfigError("--x-lo and --x-hi go together");
  SpacetimeRegion r;
  if (c.xLo) {
    if (c.level) throw ConfigError("--level conflicts with --x-lo/--x-hi");
    r = Slab{*c.xLo, *c.xHi, c.tOn, c.tOn, c.velocity};
  } else {
    r = PointDetector{requireLevel(c), c.tOn, c.tOn, c.velocity};
  }
  try {
    validateRegion(r);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return r;
}

inline void requireStaticPoint(const RunConfig& c, const char* what) {
  if (c.xLo || c.xHi) throw ConfigError(std::string(what) + " needs a point detector");
  if (c.velocity != 0.0) throw ConfigError(std::string(what) + " needs a static detector");
}

/// Shortest text with 17 significant digits, independent of the locale.
inline std::string number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

struct Column {
  std::string name;
  std::vector<double> values;
};

inline std::string csv(const std::vector<Column>& cols) {
  std::string out;
  for (std::size_t j = 0; j < cols.size(); ++j) out += (j ? "," : "") + cols[j].name;
  out += '\n';
  const std::size_t rows = cols.empty() ? 0 : cols.front().values.size();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (j) out += ',';
      out += number(cols[j].values[i]);
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json metadata(Command cmd, const RunConfig& c, const Grid& g) {
  nlohmann::ordered_json m;
  m["command"] = toString(cmd);
  m["version"] = kVersion;
  m["units"] = c.physical ? "physical" : "dimensionless";
  if (c.physical) m["scale"] = {{"delta", c.delta}, {"hbar", c.hbar}, {"mass", c.mass}};
  nlohmann::ordered_json packet{{"kind", c.packet}};
  if (c.packet == "superposition") {
    packet["terms"] = nlohmann::ordered_json::array();
    for (const auto& t : c.terms) {
      packet["terms"].push_back({{"coefficient_re", t.coefficient_re}, {"coefficient_im", t.coefficient_im},
                                 {"boost_v", t.boost_v}, {"shift_t", t.shift_t}, {"shift_x", t.shift_x},
                                 {"phase_c", t.phase_c}});
    }
  }
  m["packet"] = packet;
  if (cmd != Command::Trajectories) {
    nlohmann::ordered_json region;
    if (c.xLo) {
      region = {{"kind", "slab"}, {"x_lo", *c.xLo}, {"x_hi", *c.xHi}};
    } else {
      region = {{"kind", "point"}, {"level", c.level.value_or(0.0)}};
    }
    region["t_on"] = c.tOn;
    region["velocity"] = c.velocity;
    m["region"] = region;
  } else {
    m["x0"] = c.x0;
    m["integrate"] = c.integrate;
  }
  m["grid"] = {{"t_min", g.tMin},
               {"t_max", g.tMax},
               {"points", g.points},
               {"spacing", g.spacing == Spacing::Linear ? "linear" : "log"}};
  m["seed"] = c.seed;
  return m;
}

/// Grid as emitted, in output units.
inline Grid outputGrid(Grid g, const UnitAdapter& u, bool physical) {
  if (physical) {
    g.tMin = u.fromTime(g.tMin);
    g.tMax = u.fromTime(g.tMax);
  }
  return g;
}

/// Abscissa in output units.
inline std::vector<double> outputTimes(const UnitAdapter& u, bool physical, std::vector<double> t) {
  if (physical) {
    for (double& v : t) v = u.fromTime(v);
  }
  return t;
}

}  // namespace detail

/// Rendered command output. `conditional` holds the --compare curves of the
/// density command in CSV mode.
struct Output {
  std::string main;
  std::string conditional;
};

inline Output cmdTransition(const RunConfig& config) {
  const RunConfig c = detail::dimensionless(config);
  const Grid g = resolveGrid(Command::Transition, c);
  const Packet packet = detail::buildPacket(c);
  const SpacetimeRegion region = detail::buildRegion(c);
  if (g.tMin < c.tOn) throw ConfigError("t-min must not precede t-on");
  const std::vector<double> times = g.times();
  const DistributionCurve curve = transitionCurve(packet, region, times, c.settings);

  const auto t = detail::outputTimes(detail::adapter(config), config.physical, times);
  Output out;
  if (c.format == Format::Csv) {
    out.main = detail::csv({{"t", t}, {"p", curve.ordinate}, {"err_bound", curve.errorBound}});
  } else {
    nlohmann::ordered_json j;
    j["metadata"] = detail::metadata(Command::Transition, config, detail::outputGrid(g, detail::adapter(config), config.physical));
    j["curves"] = {{{"kind", toString(curve.kind)}, {"t", t}, {"p", curve.ordinate}, {"err_bound", curve.errorBound}}};
    out.main = j.dump(2) + "\n";
  }
  return out;
}

inline Output cmdLeavens(const RunConfig& config) {
  const RunConfig c = detail::dimensionless(config);
  detail::requireStaticPoint(c, "leavens");
  const double level = detail::requireLevel(c);
  const Grid g = resolveGrid(Command::Leavens, c);
  if (g.tMin < c.tOn) throw ConfigError("t-min must not precede t-on");
  const Packet packet = detail::buildPacket(c);
  const std::vector<double> times = g.times();
  const DistributionCurve curve = std::visit(
      [&](const auto& p) { return leavensCurve(p, level, c.tOn, times, c.normalize, c.settings); }, packet);

  const auto t = detail::outputTimes(detail::adapter(config), config.physical, times);
  Output out;
  if (c.format == Format::Csv) {
    out.main = detail::csv({{"t", t}, {"p", curve.ordinate}, {"err_bound", curve.errorBound}});
  } else {
    nlohmann::ordered_json j;
    j["metadata"] = detail::metadata(Command::Leavens, config, detail::outputGrid(g, detail::adapter(config), config.physical));
    j["metadata"]["normalize"] = c.normalize;
    j["curves"] = {{{"kind", toString(curve.kind)}, {"t", t}, {"p", curve.ordinate}, {"err_bound", curve.errorBound}}};
    out.main = j.dump(2) + "\n";
  }
  return out;
}

/// w~(t) for a detector switched on at 0. With compare, also the conditional
/// W(t) of the transition and of the normalised Leavens distribution for the
/// detector switched on at t-on.
inline Output cmdDensity(const RunConfig& config) {
  const RunConfig c = detail::dimensionless(config);
  detail::requireStaticPoint(c, "density");
  const double level = detail::requireLevel(c);
  const Grid g = resolveGrid(Command::Density, c);
  if (g.tMin < 0.0) throw ConfigError("density needs t-min >= 0");
  const Packet packet = detail::buildPacket(c);
  const std::vector<double> times = g.times();
  const DistributionCurve density = arrivalDensity(packet, level, times, c.settings);

  std::optional<DistributionCurve> wTransition;
  std::optional<DistributionCurve> wLeavens;
  if (c.compare) {
    if (g.tMin < c.tOn) throw ConfigError("t-min must not precede t-on");
    wTransition = conditionalDistribution(packet, PointDetector{level, c.tOn, c.tOn}, times, c.settings);
    wLeavens = std::visit(
        [&](const auto& p) { return leavensCurve(p, level, c.tOn, times, true, c.settings); }, packet);
  }

  const UnitAdapter u = detail::adapter(config);
  const auto t = detail::outputTimes(u, config.physical, times);
  std::vector<double> w = density.ordinate;
  if (config.physical) {
    for (double& v : w) v = u.densityPerTime(v);
  }
  Output out;
  if (c.format == Format::Csv) {
    out.main = detail::csv({{"t", t}, {"w", w}});
    if (c.compare) {
      out.conditional = detail::csv({{"t", t}, {"w_transition", wTransition->ordinate},
                                     {"w_leavens", wLeavens->ordinate}});
    }
  } else {
    nlohmann::ordered_json j;
    j["metadata"] = detail::metadata(Command::Density, config, detail::outputGrid(g, detail::adapter(config), config.physical));
    j["curves"] = {{{"kind", toString(density.kind)}, {"t", t}, {"w", w}}};
    if (c.compare) {
      j["curves"].push_back({{"kind", toString(wTransition->kind)}, {"source", "transition"}, {"t", t},
                             {"w", wTransition->ordinate}, {"err_bound", wTransition->errorBound}});
      j["curves"].push_back({{"kind", toString(wTransition->kind)}, {"source", "leavens"}, {"t", t},
                             {"w", wLeavens->ordinate}, {"err_bound", wLeavens->errorBound}});
    }
    out.main = j.dump(2) + "\n";
  }
  return out;
}

/// Orbits through (0, x0) for each x0 of the fan. The standing Gaussian uses
/// the closed form unless integrate is set; superpositions are always
/// integrated.
inline Output cmdTrajectories(const RunConfig& config) {
  const RunConfig c = detail::dimensionless(config);
  const Grid g = resolveGrid(Command::Trajectories, c);
  const Packet packet = detail::buildPacket(c);
  if (c.x0.empty()) throw ConfigError("trajectories needs at least one --x0");
  const std::vector<double> times = g.times();
  const bool closedForm = std::holds_alternative<GaussianPacket>(packet) && !c.integrate;

  std::vector<std::vector<double>> xs(c.x0.size());
  parallelFor(c.x0.size(), [&](std::size_t i) {
    const SpacetimePoint start{0.0, c.x0[i]};
    std::vector<double>& row = xs[i];
    if (closedForm) {
      for (double t : times) row.push_back(gaussianFlowMap(start, t).x);
      return;
    }
    std::visit([&](const auto& p) {
      std::optional<Trajectory> back;
      std::optional<Trajectory> ahead;
      if (times.front() < 0.0) back = integrateTrajectory(p, start, times.front(), c.settings.integrator);
      if (times.back() > 0.0) ahead = integrateTrajectory(p, start, times.back(), c.settings.integrator);
      for (const auto* tr : {back ? &*back : nullptr, ahead ? &*ahead : nullptr}) {
        if (tr && !tr->reliable()) {
          throw std::runtime_error("orbit from x0 = " + detail::number(c.x0[i]) + " failed to integrate");
        }
      }
      for (double t : times) row.push_back(t < 0.0 ? back->positionAt(t) : t > 0.0 ? ahead->positionAt(t) : start.x);
    }, packet);
  }, c.settings.threads);

  const UnitAdapter u = detail::adapter(config);
  const auto t = detail::outputTimes(u, config.physical, times);
  if (config.physical) {
    for (auto& row : xs) {
      for (double& x : row) x = u.fromLength(x);
    }
  }
  Output out;
  if (c.format == Format::Csv) {
    out.main = "trajectory_id,t,x\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (std::size_t k = 0; k < t.size(); ++k) {
        out.main += std::to_string(i) + "," + detail::number(t[k]) + "," + detail::number(xs[i][k]) + "\n";
      }
    }
  } else {
    nlohmann::ordered_json j;
    j["metadata"] = detail::metadata(Command::Trajectories, config, detail::outputGrid(g, detail::adapter(config), config.physical));
    j["metadata"]["closed_form"] = closedForm;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      rows.push_back({{"trajectory_id", i}, {"x0", config.x0[i]}, {"t", t}, {"x", xs[i]}});
    }
    j["trajectories"] = rows;
    out.main = j.dump(2) + "\n";
  }
  return out;
}

/// Runs the self-check suite. The report is returned even on failure.
inline Output cmdVerify(const RunConfig& c, bool& passed) {
  verify::Options o;
  o.seed = c.seed;
  o.perturbVelocity = c.perturbVelocity;
  o.threads = c.settings.threads;
  const verify::Report report = verify::run(o);
  passed = report.passed();
  Output out;
  if (c.format == Format::Csv) {
    out.main = verify::format(report);
  } else {
    nlohmann::ordered_json j;
    j["metadata"] = {{"command", "verify"}, {"version", kVersion}, {"seed", c.seed},
                     {"perturb_velocity", c.perturbVelocity}};
    nlohmann::ordered_json props = nlohmann::ordered_json::array();
    for (const auto& p : report.properties) {
      props.push_back({{"name", p.name}, {"passed", p.passed}, {"deviation", p.deviation},
                       {"tolerance", p.tolerance}});
    }
    j["properties"] = props;
    j["passed"] = passed;
    out.main = j.dump(2) + "\n";
  }
  return out;
}

/// Runs a command and maps failures to exit codes; messages go to err.
inline int execute(Command cmd, const RunConfig& config, Output& out, std::ostream& err) {
  try {
    try {
      config.settings.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    switch (cmd) {
      case Command::Transition: out = cmdTransition(config); break;
      case Command::Leavens: out = cmdLeavens(config); break;
      case Command::Density: out = cmdDensity(config); break;
      case Command::Trajectories: out = cmdTrajectories(config); break;
      case Command::Verify: {
        bool passed = false;
        out = cmdVerify(config, passed);
        return passed ? ExitCode::Success : ExitCode::VerificationFailed;
      }
    }
    return ExitCode::Success;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::Usage;
  } catch (const DetectionError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return ExitCode::Numerical;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::Usage;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << "\n";
    return ExitCode::Numerical;
  }
}

}  // namespace arrival::cli
