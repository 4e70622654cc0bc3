#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "arrival/cli.hpp"

namespace {

using arrival::cli::Command;
namespace ExitCode = arrival::cli::ExitCode;

bool writeFile(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  return static_cast<bool>(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Arrival-time and detection probabilities from Bohmian orbits of free wave packets"};
  app.set_version_flag("--version", arrival::cli::kVersion);
  app.set_config("--config", "", "Read options from a key = value file; flags win over the file");
  app.require_subcommand(1);
  app.fallthrough();

  arrival::cli::RunConfig cfg;
  std::vector<std::string> terms;
  std::string packetFile;
  std::string spacing;
  std::string format = "csv";
  std::string method = "auto";
  std::string output;
  std::string conditionalOutput;
  auto& s = cfg.settings;

  app.add_option("--packet", cfg.packet, "gaussian or superposition")->check(CLI::IsMember({"gaussian", "superposition"}));
  app.add_option("--term", terms, "Superposition term, e.g. coefficient_re=1,boost_v=2 (repeatable)");
  app.add_option("--packet-file", packetFile, "JSON file with a terms array")->check(CLI::ExistingFile);

  app.add_option("--level", cfg.level, "Detector position");
  app.add_option("--x-lo", cfg.xLo, "Lower slab edge at t = 0");
  app.add_option("--x-hi", cfg.xHi, "Upper slab edge at t = 0");
  app.add_option("--t-on", cfg.tOn, "Switch-on time of the detector");
  app.add_option("--velocity", cfg.velocity, "Detector drift dx/dt");

  app.add_option("--t-min", cfg.tMin, "First grid time");
  app.add_option("--t-max", cfg.tMax, "Last grid time");
  app.add_option("--points", cfg.points, "Grid points (at least 2)");
  app.add_option("--spacing", spacing, "linear or log")->check(CLI::IsMember({"linear", "log"}));
  app.add_option("--x0", cfg.x0, "Initial positions of the trajectory fan")->delimiter(',');

  app.add_flag("--normalize", cfg.normalize, "leavens: divide by the total integral");
  app.add_flag("--compare", cfg.compare, "density: also emit conditional W of both distributions");
  app.add_option("--conditional-output", conditionalOutput, "density --compare: CSV file for the W curves");
  app.add_flag("--integrate", cfg.integrate, "trajectories: integrate instead of the closed form");

  app.add_flag("--physical", cfg.physical, "Inputs and outputs in chart units");
  app.add_option("--delta", cfg.delta, "Packet width");
  app.add_option("--hbar", cfg.hbar, "Unit of action");
  app.add_option("--mass", cfg.mass, "Particle mass");

  app.add_option("--rel-tol", s.integrator.relTol, "Integrator relative tolerance");
  app.add_option("--abs-tol", s.integrator.absTol, "Integrator absolute tolerance");
  app.add_option("--max-step", s.integrator.maxStep, "Integrator step cap");
  app.add_option("--boundary-tol", s.boundaryTol, "Hit-set endpoint tolerance");
  app.add_option("--scan-points", s.scanPoints, "Initial-slice scan points");
  app.add_option("--error-budget", s.errorBudget, "Largest near-node mass that may be excluded");
  app.add_option("--window-sigmas", s.windowSigmas, "Half-width of the scanned slice in packet widths");
  app.add_option("--reference-time", s.referenceTime, "Slice on which hit sets are measured");
  app.add_option("--method", method, "auto or numerical")->check(CLI::IsMember({"auto", "numerical"}));

  app.add_option("--seed", cfg.seed, "Seed for sampled diagnostics");
  app.add_option("--perturb-velocity", cfg.perturbVelocity, "verify: test hook shifting the velocity field");
  app.add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--output", output, "Output file (default: standard output)");

  const std::map<CLI::App*, Command> commands{
      {app.add_subcommand("transition", "Detection probability P[D_T] against T"), Command::Transition},
      {app.add_subcommand("leavens", "Leavens current-integral distribution"), Command::Leavens},
      {app.add_subcommand("density", "Arrival-time density for a detector switched on at 0"), Command::Density},
      {app.add_subcommand("trajectories", "Sampled orbits through (0, x0)"), Command::Trajectories},
      {app.add_subcommand("verify", "Run the invariant suite"), Command::Verify},
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ExitCode::Usage;
  }

  Command cmd = Command::Verify;
  for (const auto& [sub, c] : commands) {
    if (sub->parsed()) cmd = c;
  }

  try {
    for (const auto& t : terms) cfg.terms.push_back(arrival::cli::parseTerm(t));
    if (!packetFile.empty()) {
      const auto fromFile = arrival::cli::readPacketFile(packetFile);
      cfg.terms.insert(cfg.terms.end(), fromFile.begin(), fromFile.end());
      cfg.packet = "superposition";
    }
  } catch (const arrival::cli::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ExitCode::Usage;
  }
  if (!spacing.empty()) {
    cfg.spacing = spacing == "log" ? arrival::cli::Spacing::Log : arrival::cli::Spacing::Linear;
  }
  cfg.format = format == "json" ? arrival::cli::Format::Json : arrival::cli::Format::Csv;
  s.method = method == "numerical" ? arrival::ProjectionMethod::Numerical : arrival::ProjectionMethod::Auto;
  if (cmd == Command::Density && cfg.compare && cfg.format == arrival::cli::Format::Csv &&
      conditionalOutput.empty()) {
    std::cerr << "error: density --compare with CSV output needs --conditional-output\n";
    return ExitCode::Usage;
  }

  arrival::cli::Output out;
  const int code = arrival::cli::execute(cmd, cfg, out, std::cerr);
  if (code != ExitCode::Success && code != ExitCode::VerificationFailed) return code;

  if (output.empty()) {
    std::cout << out.main << std::flush;
  } else if (!writeFile(output, out.main)) {
    std::cerr << "error: cannot write " << output << "\n";
    return ExitCode::Usage;
  }
  if (!out.conditional.empty() && !writeFile(conditionalOutput, out.conditional)) {
    std::cerr << "error: cannot write " << conditionalOutput << "\n";
    return ExitCode::Usage;
  }
  return code;
}
