#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "commands.hpp"
#include "fpirl/error.hpp"
#include "fpirl/log.hpp"
#include "run_config.hpp"

namespace {

using fpirl::json;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> out;
  bool quiet = false;

  // synth
  bool emit_trajectories = false;
  // infer, converge
  std::optional<double> f_threshold;
  std::optional<int> quad_order;
  std::optional<std::string> library;
  // infer, ingest
  std::optional<std::string> input;
  // ingest
  std::optional<double> dt;
  // eval
  std::optional<std::string> benchmark;
  std::optional<std::string> fit;
  // converge
  std::vector<int> meshes;
};

json overrides(const Flags& f) {
  json j = json::object();
  if (f.seed) j["seed"] = *f.seed;
  if (f.jobs) j["jobs"] = *f.jobs;
  if (f.out) j["out"] = *f.out;
  if (f.emit_trajectories) j["emit_trajectories"] = true;
  if (f.f_threshold) j["f_threshold"] = *f.f_threshold;
  if (f.quad_order) j["quad_order"] = *f.quad_order;
  if (f.library) j["library"] = *f.library;
  if (f.input) j["input"] = *f.input;
  if (f.dt) j["dt"] = *f.dt;
  if (f.benchmark) j["benchmark"] = *f.benchmark;
  if (f.fit) j["fit"] = *f.fit;
  if (!f.meshes.empty()) j["meshes"] = f.meshes;
  return j;
}

int run(int argc, char** argv) {
  CLI::App app{"Fokker-Planck inverse reinforcement learning"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "Root random seed");
  app.add_option("--jobs", f.jobs, "Parallel cells for converge");
  app.add_option("--out", f.out, "Output directory");
  app.add_flag("--quiet", f.quiet, "Suppress informational output and warnings");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic benchmark");
  synth->add_flag("--emit-trajectories", f.emit_trajectories, "Also write sampled trajectories as CSV");

  auto* infer = app.add_subcommand("infer", "Fit the potential and reconstruct the MDP");
  infer->add_option("--input", f.input, "benchmark.json or density manifest");
  infer->add_option("--f-threshold", f.f_threshold, "Stepwise regression F threshold");
  infer->add_option("--quad-order", f.quad_order, "Gauss points per dimension");
  infer->add_option("--library", f.library, "Operator library: hermite or cardinal");

  auto* ingest = app.add_subcommand("ingest", "Estimate a density series from trajectory CSV");
  ingest->add_option("--input", f.input, "Trajectory CSV");
  ingest->add_option("--dt", f.dt, "Time between frames");

  auto* eval = app.add_subcommand("eval", "Score a fit against a benchmark");
  eval->add_option("--benchmark", f.benchmark, "benchmark.json");
  eval->add_option("--fit", f.fit, "Fitted potential manifest");

  auto* converge = app.add_subcommand("converge", "Mesh convergence study");
  converge->add_option("--meshes", f.meshes, "Node counts per dimension, e.g. 5,7,9")->delimiter(',');
  converge->add_option("--f-threshold", f.f_threshold, "Stepwise regression F threshold");
  converge->add_option("--quad-order", f.quad_order, "Gauss points per dimension");
  converge->add_option("--library", f.library, "Operator library: hermite or cardinal");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  fpirl::set_quiet(f.quiet);
  const json config = fpirl::cli::load_config(f.config, overrides(f));
  if (synth->parsed()) return fpirl::cli::cmd_synth(config);
  if (infer->parsed()) return fpirl::cli::cmd_infer(config);
  if (ingest->parsed()) return fpirl::cli::cmd_ingest(config);
  if (eval->parsed()) return fpirl::cli::cmd_eval(config);
  return fpirl::cli::cmd_converge(config);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const fpirl::Error& e) {
    std::cerr << "fpirl: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "fpirl: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "fpirl: " << e.what() << "\n";
    return 1;
  }
}
