#include "fpirl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fpirl/error.hpp"
#include "fpirl/fokker_planck.hpp"

namespace fpirl {

namespace fs = std::filesystem;

AnalyticPotential::AnalyticPotential(int dims, std::vector<AnalyticTerm> terms) : dims_(dims), terms_(std::move(terms)) {
  if (dims < 1) throw ConfigError("analytic potential: dims must be >= 1");
  for (const auto& t : terms_) {
    if (t.wave.size() != static_cast<std::size_t>(dims) || t.sine.size() != static_cast<std::size_t>(dims))
      throw ConfigError("analytic potential: term does not match the dimension");
    for (int k : t.wave)
      if (k < 0) throw ConfigError("analytic potential: wave numbers must be >= 0");
  }
}

double AnalyticPotential::derivative(std::span<const double> x, unsigned mask) const {
  double total = 0.0;
  for (const auto& t : terms_) {
    double prod = t.amplitude;
    for (int i = 0; i < dims_ && prod != 0.0; ++i) {
      const bool diff = (mask >> i) & 1U;
      const int k = t.wave[i];
      if (k == 0) {
        if (diff) prod = 0.0;
        continue;
      }
      const double w = k * std::numbers::pi;
      const double arg = w * x[i];
      if (t.sine[i])
        prod *= diff ? w * std::cos(arg) : std::sin(arg);
      else
        prod *= diff ? -w * std::sin(arg) : std::cos(arg);
    }
    total += prod;
  }
  return total;
}

void AnalyticPotential::gradient(std::span<const double> x, std::span<double> grad) const {
  for (int i = 0; i < dims_; ++i) grad[i] = derivative(x, 1U << i);
}

namespace {

AnalyticTerm term(double amplitude, std::vector<int> wave, std::vector<bool> sine) {
  return {amplitude, std::move(wave), std::move(sine)};
}

}  // namespace

AnalyticPotential canonical_potential(int dims) {
  if (dims == 2) {
    return AnalyticPotential(2, {term(0.6, {1, 0}, {false, false}),
                                 term(0.5, {1, 1}, {true, false}),
                                 term(0.3, {0, 1}, {false, false}),
                                 term(0.2, {0, 2}, {false, true})});
  }
  if (dims == 4) {
    return AnalyticPotential(4, {term(0.6, {1, 0, 0, 0}, {false, false, false, false}),
                                 term(0.4, {0, 1, 0, 0}, {false, true, false, false}),
                                 term(0.5, {1, 0, 1, 0}, {false, false, true, false}),
                                 term(0.5, {0, 1, 0, 1}, {false, true, false, false}),
                                 term(0.3, {0, 0, 1, 0}, {false, false, false, false}),
                                 term(0.2, {0, 0, 0, 2}, {false, false, false, true})});
  }
  throw ConfigError("canonical potential is defined for d = 2 and d = 4, got " + std::to_string(dims));
}

json analytic_to_json(const AnalyticPotential& psi) {
  json terms = json::array();
  for (const auto& t : psi.terms()) {
    std::vector<std::string> kind;
    for (bool s : t.sine) kind.emplace_back(s ? "sin" : "cos");
    terms.push_back({{"amplitude", t.amplitude}, {"wave", t.wave}, {"kind", kind}});
  }
  return {{"dims", psi.dims()}, {"terms", terms}};
}

AnalyticPotential analytic_from_json(const json& j) {
  try {
    const int dims = j.at("dims").get<int>();
    std::vector<AnalyticTerm> terms;
    for (const auto& t : j.at("terms")) {
      AnalyticTerm term;
      term.amplitude = t.at("amplitude").get<double>();
      term.wave = t.at("wave").get<std::vector<int>>();
      for (const auto& k : t.at("kind")) {
        const auto s = k.get<std::string>();
        if (s != "sin" && s != "cos") throw ConfigError("analytic term kind must be sin or cos, got " + s);
        term.sine.push_back(s == "sin");
      }
      terms.push_back(std::move(term));
    }
    return AnalyticPotential(dims, std::move(terms));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("analytic potential: ") + e.what());
  }
}

PotentialField interpolate_analytic(const AnalyticPotential& psi, const GridSpec& grid, double beta) {
  if (psi.dims() != grid.dims()) throw ConfigError("analytic potential dimension does not match the grid");
  return gauge_fix(hermite_interpolate(grid, beta, [&](std::span<const double> x, unsigned mask) {
    return psi.derivative(x, mask);
  }));
}

namespace {

// Uniform double in [0, 1) from the top 53 bits.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

GroundTruth make_ground_truth(const GridSpec& grid, const GroundTruthSpec& spec, double beta) {
  if (!(beta > 0.0)) throw ConfigError("ground truth: beta must be positive");
  GroundTruth gt;
  switch (spec.kind) {
    case GroundTruthSpec::Kind::explicit_theta: {
      if (spec.theta.empty()) throw ConfigError("ground truth: explicit theta is empty");
      if (spec.theta.size() != theta_size(grid))
        throw ConfigError("ground truth: explicit theta has " + std::to_string(spec.theta.size()) +
                          " entries, the grid needs " + std::to_string(theta_size(grid)));
      gt.field = gauge_fix(PotentialField{grid, spec.theta, beta});
      break;
    }
    case GroundTruthSpec::Kind::sparse: {
      const auto& s = spec.sparse;
      const Library library(grid, s.library.value_or(default_library_kind(grid.dims())));
      if (s.n_active == 0) throw ConfigError("ground truth: sparse spec needs n_active >= 1");
      if (s.n_active >= library.size()) throw ConfigError("ground truth: n_active must be below the library size");
      if (!(s.amplitude_min > 0.0) || s.amplitude_max < s.amplitude_min)
        throw ConfigError("ground truth: need 0 < amplitude_min <= amplitude_max");
      std::mt19937_64 rng(splitmix64(s.seed));
      // Floyd's sampling of distinct indices.
      std::vector<std::size_t> chosen;
      const std::size_t n = library.size();
      for (std::size_t j = n - s.n_active; j < n; ++j) {
        const std::size_t t = rng() % (j + 1);
        if (std::find(chosen.begin(), chosen.end(), t) == chosen.end())
          chosen.push_back(t);
        else
          chosen.push_back(j);
      }
      std::sort(chosen.begin(), chosen.end());
      gt.library_coefficients.assign(n, 0.0);
      for (auto j : chosen) {
        const double a = s.amplitude_min + (s.amplitude_max - s.amplitude_min) * unit(rng);
        gt.library_coefficients[j] = (rng() & 1U) ? a : -a;
      }
      gt.active = chosen;
      gt.library = library.kind();
      gt.field = gauge_fix(PotentialField{grid, library.expand(gt.library_coefficients), beta});
      break;
    }
    case GroundTruthSpec::Kind::file: {
      if (spec.file.empty()) throw ConfigError("ground truth: file spec has no path");
      auto field = read_potential(spec.file);
      if (!(field.grid == grid)) throw ConfigError("ground truth: " + spec.file.string() + " is on a different grid");
      field.beta = beta;
      gt.field = gauge_fix(std::move(field));
      break;
    }
    case GroundTruthSpec::Kind::analytic: {
      if (spec.analytic != "canonical") throw ConfigError("ground truth: unknown analytic potential '" + spec.analytic + "'");
      gt.analytic = canonical_potential(grid.dims());
      gt.field = interpolate_analytic(*gt.analytic, grid, beta);
      break;
    }
  }
  return gt;
}

const char* to_string(InitialKind kind) { return kind == InitialKind::sinusoid ? "sinusoid" : "uniform"; }

InitialKind initial_kind_from_string(const std::string& name) {
  if (name == "sinusoid") return InitialKind::sinusoid;
  if (name == "uniform") return InitialKind::uniform;
  throw ConfigError("initial density must be 'sinusoid' or 'uniform', got '" + name + "'");
}

std::vector<double> initial_density(const GridSpec& grid, InitialKind kind) {
  const std::size_t n = grid.periodic_node_count();
  std::vector<double> p(n, 1.0);
  if (kind == InitialKind::sinusoid) {
    const int used = std::min(grid.dims(), 2);
    for (std::size_t k = 0; k < n; ++k) {
      const auto x = grid.periodic_node_point(k);
      double denom = 1.0;
      for (int i = 0; i < used; ++i) {
        const double s = std::sin(4.0 * std::numbers::pi * x[i]);
        denom += s * s;
      }
      p[k] = 1.0 / denom;
    }
  }
  normalize_frame(grid, p);
  return p;
}

std::vector<double> condition_on_policy(const GridSpec& grid, std::span<const double> p0, const Matrix& policy) {
  const auto n = static_cast<Eigen::Index>(p0.size());
  if (p0.size() != grid.periodic_node_count() || policy.rows() * policy.cols() != n)
    throw ConfigError("condition_on_policy: shapes do not match the grid");
  std::vector<double> out(p0.size());
  const auto n_actions = policy.cols();
  for (Eigen::Index s = 0; s < policy.rows(); ++s) {
    double marginal = 0.0;
    for (Eigen::Index a = 0; a < n_actions; ++a) marginal += p0[s * n_actions + a];
    for (Eigen::Index a = 0; a < n_actions; ++a) out[s * n_actions + a] = policy(s, a) * marginal;
  }
  normalize_frame(grid, out);
  return out;
}

const char* to_string(EvolutionRoute route) {
  switch (route) {
    case EvolutionRoute::policy: return "policy";
    case EvolutionRoute::lumped: return "lumped";
    case EvolutionRoute::galerkin: return "galerkin";
  }
  return "policy";
}

EvolutionRoute evolution_route_from_string(const std::string& name) {
  if (name == "policy") return EvolutionRoute::policy;
  if (name == "lumped") return EvolutionRoute::lumped;
  if (name == "galerkin") return EvolutionRoute::galerkin;
  throw ConfigError("evolution route must be 'policy', 'lumped' or 'galerkin', got '" + name + "'");
}

DensitySeries evolve_with_mdp(const DiscreteMDP& mdp, std::span<const double> p0, EvolutionRoute route, int n_steps) {
  if (route == EvolutionRoute::galerkin) throw ConfigError("the galerkin route evolves the potential, not the MDP");
  if (route == EvolutionRoute::lumped) return evolve_density(mdp.grid, p0, mdp.t_mp, n_steps, mdp.dt);
  return evolve_density(mdp.grid, p0, mdp.t, mdp.policy, n_steps, mdp.dt);
}

DensitySeries evolve_route(const PotentialField& field, const DiscreteMDP& mdp, std::span<const double> p0,
                           EvolutionRoute route, int n_steps) {
  if (route == EvolutionRoute::galerkin) return solve_fokker_planck(field, p0, mdp.dt, n_steps);
  return evolve_with_mdp(mdp, p0, route, n_steps);
}

BenchmarkCase generate_benchmark(const BenchmarkConfig& config) {
  if (config.n_frames < 1) throw ConfigError("benchmark: n_frames must be >= 1");
  if (config.n_trajectories < 0) throw ConfigError("benchmark: n_trajectories must be >= 0");
  BenchmarkCase bench;
  bench.config = config;
  bench.truth = make_ground_truth(config.grid, config.truth, config.beta);
  bench.mdp = build_mdp(bench.truth.field, config.dt, config.gamma, config.state_dims, config.transition);
  bench.p0 = initial_density(config.grid, config.initial);
  if (config.policy_initial) bench.p0 = condition_on_policy(config.grid, bench.p0, bench.mdp.policy);
  bench.data = evolve_route(bench.truth.field, bench.mdp, bench.p0, config.route, config.n_frames);
  if (config.n_trajectories > 0) {
    SampleOptions opts;
    opts.n_traj = config.n_trajectories;
    opts.n_steps = config.n_frames;
    opts.dt = config.dt;
    opts.seed = config.seed;
    opts.state_dims = config.state_dims;
    bench.trajectories = sample_trajectories(bench.truth.field, bench.p0, opts);
  }
  return bench;
}

fs::path write_benchmark(const fs::path& dir, const BenchmarkCase& bench, const json& echo) {
  json meta{{"config", echo}};
  write_density(dir / "density.fpd", bench.data, meta);
  json truth_meta = meta;
  if (!bench.truth.active.empty()) {
    truth_meta["active_set"] = bench.truth.active;
    truth_meta["library"] = to_string(*bench.truth.library);
    truth_meta["library_coefficients"] = bench.truth.library_coefficients;
  }
  if (bench.truth.analytic) truth_meta["analytic"] = analytic_to_json(*bench.truth.analytic);
  write_potential(dir / "truth.fpf", bench.truth.field, truth_meta);
  write_node_field(dir / "p0.fpn", bench.config.grid, "p0", bench.p0, meta);
  const auto exports = export_mdp(dir / "mdp", bench.mdp, meta, bench.config.transition.memory_guard);

  json manifest{{"format", "fpirl-benchmark"},
                {"version", 1},
                {"density", "density.fpd"},
                {"truth", "truth.fpf"},
                {"p0", "p0.fpn"},
                {"state_dims", bench.config.state_dims},
                {"dt", bench.config.dt},
                {"beta", bench.config.beta},
                {"gamma", bench.config.gamma},
                {"route", to_string(bench.config.route)}};
  json mdp_files = json::array();
  for (const auto& p : exports) mdp_files.push_back(fs::relative(p, dir).generic_string());
  manifest["mdp"] = mdp_files;
  if (bench.trajectories) {
    write_trajectories_csv(dir / "trajectories.csv", *bench.trajectories);
    manifest["trajectories"] = "trajectories.csv";
  }
  if (!bench.truth.active.empty()) manifest["active_set"] = bench.truth.active;
  manifest["config"] = echo;
  const auto path = dir / "benchmark.json";
  write_json(path, manifest);
  return path;
}

}  // namespace fpirl
