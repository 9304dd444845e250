#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>

#include "fpirl/density.hpp"
#include "fpirl/error.hpp"
#include "fpirl/evaluation.hpp"
#include "fpirl/log.hpp"
#include "fpirl/mdp.hpp"
#include "fpirl/synthetic.hpp"
#include "fpirl/vsi.hpp"
#include "run_config.hpp"

namespace fpirl::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  fs::path out;
  std::uint64_t seed = 0;
  int jobs = 1;
};

// `out` is where results go, not how they are computed, so it stays out of
// the echo: a run repeated into another directory must produce identical
// manifests.
Common read_common(ConfigReader& r, const std::string& command) {
  const json cmd = r.raw("command");
  if (!cmd.is_null() && cmd != json(command))
    throw ConfigError(command + ": key 'command' says '" + cmd.dump() + "'");
  r.set_echo("command", command);
  Common c;
  const json out = r.raw("out");
  if (!out.is_null() && !out.is_string()) throw ConfigError(command + ": key 'out' must be a string");
  c.out = out.is_null() ? fs::path("fpirl_out") : fs::path(out.get<std::string>());
  c.seed = r.get<std::uint64_t>("seed", 0);
  c.jobs = r.get<int>("jobs", 1);
  if (c.jobs < 1) throw ConfigError(command + ": key 'jobs' must be >= 1");
  return c;
}

json format_header(const char* format, const json& echo) {
  return json{{"format", format}, {"version", 1}, {"config", echo}};
}

double finite_or_nan(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

int cmd_synth(const json& config) {
  ConfigReader r(config, "synth");
  const auto common = read_common(r, "synth");
  auto bc = read_benchmark(r, common.seed, true);
  if (!r.get<bool>("emit_trajectories", false)) bc.n_trajectories = 0;
  r.finish();

  const auto bench = generate_benchmark(bc);
  const auto manifest = write_benchmark(common.out, bench, r.echo());
  info("synth: wrote " + manifest.string());
  return 0;
}

int cmd_infer(const json& config) {
  ConfigReader r(config, "infer");
  const auto common = read_common(r, "infer");
  const fs::path input = r.require<std::string>("input");

  // A benchmark manifest supplies defaults for the MDP settings.
  json source = read_json(input);
  fs::path density_path = input;
  json defaults = json::object();
  if (source.value("format", std::string{}) == "fpirl-benchmark") {
    require_format(source, "fpirl-benchmark", 1, input.string());
    density_path = input.parent_path() / source.at("density").get<std::string>();
    defaults = source;
  }
  json density_manifest;
  const double mass_tol = r.get<double>("mass_tolerance", 1e-3);
  auto series = read_density(density_path, DensityReadOptions{mass_tol}, &density_manifest);
  if (!defaults.contains("state_dims") && density_manifest.contains("state_dims"))
    defaults["state_dims"] = density_manifest["state_dims"];

  const int d = series.grid.dims();
  const int state_dims = r.get<int>("state_dims", defaults.value("state_dims", std::max(1, d / 2)));
  const double gamma = r.get<double>("gamma", defaults.value("gamma", 0.99));
  TransitionOptions topts;
  topts.images = r.get<int>("images", 3);
  topts.memory_guard = read_memory_guard(r);
  const auto vsi = read_vsi(r, topts.memory_guard);
  r.finish();
  const json meta{{"config", r.echo()}};

  const int renormalized = renormalize_frames(series, mass_tol);
  if (renormalized > 0) warn("infer: renormalized " + std::to_string(renormalized) + " frame(s) to unit mass");

  const auto fit = run_vsi(series, vsi);
  const auto fit_path = common.out / "fit.fpf";
  write_vsi_fit(fit_path, fit, meta);

  const auto mdp = build_mdp(fit.field, series.dt, gamma, state_dims, topts);
  const auto files = export_mdp(common.out / "mdp", mdp, meta, topts.memory_guard);

  // Reward round trip from the written files: Q must be the fixed point of
  // q <- r + gamma T_pi q. Starting the iteration at the written Q measures
  // the Bellman residual directly; the contraction bounds the Q error by
  // residual / (1 - gamma).
  const auto reward = read_node_field(common.out / "mdp" / "reward.json");
  const auto q_file = read_node_field(common.out / "mdp" / "q.json");
  const Vector r_vec = Eigen::Map<const Vector>(reward.data(), static_cast<Eigen::Index>(reward.size()));
  const Vector q_vec = Eigen::Map<const Vector>(q_file.data(), static_cast<Eigen::Index>(q_file.size()));
  const auto fp = bellman_fixed_point(r_vec, mdp.t_pi, gamma, 1e-12, 100000, q_vec);
  const Vector residual = r_vec + gamma * (mdp.t_pi * q_vec) - q_vec;
  const double scale = std::max(1.0, q_vec.cwiseAbs().maxCoeff());
  const double q_error = (fp.q - q_vec).cwiseAbs().maxCoeff() / scale;
  const double bound = residual.cwiseAbs().maxCoeff() / (1.0 - gamma) / scale;
  const bool round_trip_ok = q_error <= 1e-8 && bound <= 1e-8;

  json report = format_header("fpirl-infer", r.echo());
  report["input"] = input.generic_string();
  report["density_digest"] = file_digest(density_path);
  report["beta_inv"] = fit.beta_inv;
  report["library"] = to_string(fit.library);
  report["active_set"] = fit.active_set;
  report["n_active"] = fit.active_set.size();
  report["rejected_f"] = finite_or_nan(fit.rejected_f);
  report["renormalized_frames"] = renormalized;
  report["reward_round_trip"] = {{"relative_q_error", q_error},
                                 {"relative_error_bound", bound},
                                 {"iterations", fp.iterations},
                                 {"passed", round_trip_ok}};
  json outputs = json::array({"fit.fpf", fit_sidecar_path(fit_path).filename().generic_string()});
  for (const auto& f : files) outputs.push_back(fs::relative(f, common.out).generic_string());
  report["outputs"] = outputs;
  write_json(common.out / "infer.json", report);
  if (!round_trip_ok) throw NumericalError("infer: reward does not reproduce Q (relative error " + std::to_string(q_error) + ")");
  info("infer: beta_inv = " + std::to_string(fit.beta_inv) + ", " + std::to_string(fit.active_set.size()) +
       " active term(s)");
  return 0;
}

int cmd_ingest(const json& config) {
  ConfigReader r(config, "ingest");
  const auto common = read_common(r, "ingest");
  const fs::path input = r.require<std::string>("input");
  const auto states = r.get<std::vector<std::string>>("states", {});
  const auto actions = r.get<std::vector<std::string>>("actions", {});
  const double dt = r.require<double>("dt");
  if (!(dt > 0.0)) throw ConfigError("ingest: key 'dt' must be positive");
  const double margin = r.get<double>("margin", 0.05);
  if (!(margin >= 0.0 && margin < 1.0)) throw ConfigError("ingest: key 'margin' must lie in [0, 1)");
  const json bounds_json = r.raw("bounds");

  const auto raw = read_trajectories_csv(input);
  std::vector<std::string> columns = states;
  columns.insert(columns.end(), actions.begin(), actions.end());
  if (columns.empty()) columns = raw.names;
  if (!actions.empty() && states.empty()) throw ConfigError("ingest: key 'actions' needs 'states'");
  const int dims = static_cast<int>(columns.size());
  const auto nodes = read_nodes(r, dims, 9);

  std::vector<double> lo, hi;
  const bool fixed_bounds = !bounds_json.is_null();
  if (fixed_bounds) {
    ConfigReader b(bounds_json, "ingest.bounds");
    lo = b.require<std::vector<double>>("lower");
    hi = b.require<std::vector<double>>("upper");
    b.finish();
    if (static_cast<int>(lo.size()) != dims || static_cast<int>(hi.size()) != dims)
      throw ConfigError("ingest.bounds: 'lower' and 'upper' need one entry per column");
    r.set_echo("bounds", b.echo());
  }
  r.finish();

  std::vector<std::size_t> index;
  for (const auto& c : columns) {
    const auto it = std::find(raw.names.begin(), raw.names.end(), c);
    if (it == raw.names.end()) throw ConfigError("ingest: " + input.string() + " has no column '" + c + "'");
    index.push_back(static_cast<std::size_t>(it - raw.names.begin()));
  }

  TrajectorySet selected;
  selected.names = columns;
  std::map<int, std::size_t> kept, dropped;
  std::vector<double> x(dims);
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const auto p = raw.point(k);
    bool inside = true;
    for (int i = 0; i < dims; ++i) {
      x[i] = p[index[i]];
      if (fixed_bounds && !(x[i] >= lo[i] && x[i] <= hi[i])) inside = false;
    }
    if (!inside) {
      ++dropped[raw.frame[k]];
      continue;
    }
    ++kept[raw.frame[k]];
    selected.add(raw.traj_id[k], raw.frame[k], x);
  }
  if (selected.size() == 0) throw ConfigError("ingest: no samples inside the bounds");
  if (!fixed_bounds) {
    lo.assign(dims, std::numeric_limits<double>::infinity());
    hi.assign(dims, -std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < selected.size(); ++k) {
      const auto p = selected.point(k);
      for (int i = 0; i < dims; ++i) {
        lo[i] = std::min(lo[i], p[i]);
        hi[i] = std::max(hi[i], p[i]);
      }
    }
  }
  const auto scaled = rescale_trajectories(selected, lo, hi, margin);
  const auto grid = build_grid(dims, std::vector<Bounds>(dims, Bounds{-1.0, 1.0}), nodes);
  const auto series = estimate_density(scaled, grid, dt);

  const json rescale{{"columns", columns}, {"lower", lo}, {"upper", hi}, {"margin", margin}};
  const int state_dims = states.empty() ? std::max(1, dims / 2) : static_cast<int>(states.size());
  write_density(common.out / "density.fpd", series,
                json{{"config", r.echo()}, {"rescale", rescale}, {"state_dims", state_dims}});

  json report = format_header("fpirl-ingest", r.echo());
  report["input"] = input.generic_string();
  report["rescale"] = rescale;
  report["state_dims"] = state_dims;
  report["frames"] = series.n_frames();
  json per_frame = json::array();
  std::size_t total_kept = 0, total_dropped = 0;
  for (std::size_t t = 0; t < series.n_frames(); ++t) {
    const int f = static_cast<int>(t);
    const std::size_t n = kept.count(f) ? kept[f] : 0, m = dropped.count(f) ? dropped[f] : 0;
    per_frame.push_back({{"frame", f}, {"samples", n}, {"out_of_range", m}});
    total_kept += n;
    total_dropped += m;
  }
  report["samples"] = total_kept;
  report["out_of_range"] = total_dropped;
  report["per_frame"] = per_frame;
  write_json(common.out / "ingest.json", report);
  if (total_dropped > 0) warn("ingest: dropped " + std::to_string(total_dropped) + " sample(s) outside the bounds");
  info("ingest: " + std::to_string(total_kept) + " samples over " + std::to_string(series.n_frames()) + " frames");
  return 0;
}

int cmd_eval(const json& config) {
  ConfigReader r(config, "eval");
  const auto common = read_common(r, "eval");
  const fs::path bench_path = r.require<std::string>("benchmark");
  const fs::path fit_path = r.require<std::string>("fit");
  const json bench = read_json(bench_path);
  require_format(bench, "fpirl-benchmark", 1, bench_path.string());
  const fs::path dir = bench_path.parent_path();

  KlTraceOptions opts;
  opts.state_dims = r.get<int>("state_dims", bench.at("state_dims").get<int>());
  opts.gamma = r.get<double>("gamma", bench.at("gamma").get<double>());
  opts.route = evolution_route_from_string(r.get<std::string>("route", bench.at("route").get<std::string>()));
  opts.transition.images = r.get<int>("images", 3);
  opts.transition.memory_guard = read_memory_guard(r);
  const int points = r.get<int>("quad_points", 5);
  if (points < 1) throw ConfigError("eval: key 'quad_points' must be >= 1");
  r.finish();

  const auto data = read_density(dir / bench.at("density").get<std::string>());
  opts.dt = data.dt;
  const auto p0 = read_node_field(dir / bench.at("p0").get<std::string>());
  json truth_manifest;
  const auto truth = read_potential(dir / bench.at("truth").get<std::string>(), &truth_manifest);
  const auto field = read_potential(fit_path);
  std::optional<VsiFit> fit;
  if (fs::exists(fit_sidecar_path(fit_path))) fit = read_vsi_fit(fit_path);

  const auto kl = kl_trace(data, field, p0, opts);
  write_kl_csv(common.out / "kl_trace.csv", kl, data.dt);

  json report = format_header("fpirl-eval", r.echo());
  report["benchmark"] = bench_path.generic_string();
  report["fit"] = fit_path.generic_string();
  std::size_t peak = 0;
  for (std::size_t t = 1; t < kl.size(); ++t)
    if (kl[t] > kl[peak]) peak = t;
  std::vector<double> times(kl.size());
  for (std::size_t t = 0; t < kl.size(); ++t) times[t] = static_cast<double>(t) * data.dt;
  report["kl"] = {{"final", kl.back()},
                  {"max", kl[peak]},
                  {"max_frame", peak},
                  {"spearman_vs_time", kl.size() >= 2 ? finite_or_nan(spearman(times, kl))
                                                      : std::numeric_limits<double>::quiet_NaN()}};
  if (truth_manifest.contains("analytic")) {
    const auto psi = analytic_from_json(truth_manifest["analytic"]);
    report["truth"] = "analytic";
    report["psi_error"] = field_error(field, psi, ErrorMode::value, points);
    report["grad_psi_error"] = field_error(field, psi, ErrorMode::gradient, points);
  } else {
    report["truth"] = "field";
    report["psi_error"] = field_error(field, truth, ErrorMode::value, points);
    report["grad_psi_error"] = field_error(field, truth, ErrorMode::gradient, points);
  }
  report["beta_inv"] = fit ? fit->beta_inv : 1.0 / field.beta;
  if (fit && truth_manifest.contains("active_set") &&
      truth_manifest.value("library", std::string{}) == to_string(fit->library)) {
    const auto m = support_metrics(fit->active_set, truth_manifest["active_set"].get<std::vector<std::size_t>>());
    report["support"] = {{"precision", m.precision}, {"recall", m.recall}};
  }
  write_json(common.out / "eval.json", report);
  info("eval: final KL " + std::to_string(kl.back()));
  return 0;
}

int cmd_converge(const json& config) {
  ConfigReader r(config, "converge");
  const auto common = read_common(r, "converge");
  ConvergenceConfig cc;
  cc.meshes = r.get<std::vector<int>>("meshes", {5, 7, 9});
  cc.benchmark = read_benchmark(r, common.seed, false);
  cc.vsi = read_vsi(r, cc.benchmark.transition.memory_guard);
  cc.jobs = common.jobs;
  r.finish();

  const auto rows = convergence_study(cc);
  write_convergence_csv(common.out / "convergence.csv", rows);
  json report = format_header("fpirl-convergence", r.echo());
  json cells = json::array();
  bool decreasing = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    cells.push_back({{"N", row.nodes},
                     {"psi_error", row.psi_error},
                     {"grad_psi_error", row.grad_psi_error},
                     {"beta_inv", row.beta_inv},
                     {"runtime_s", row.runtime_s},
                     {"status", row.status}});
    if (i > 0 && !(row.psi_error < rows[i - 1].psi_error)) decreasing = false;
  }
  report["cells"] = cells;
  report["psi_error_strictly_decreasing"] = decreasing && all_ok(rows);
  write_json(common.out / "convergence.json", report);
  if (all_ok(rows)) return 0;
  const bool any_failed = std::any_of(rows.begin(), rows.end(), [](const ConvergenceRow& row) {
    return row.status.rfind("failed", 0) == 0;
  });
  warn("converge: some cells did not complete");
  return any_failed ? 4 : 2;
}

}  // namespace fpirl::cli
