#pragma once

// Synthetic benchmark: a ground-truth potential psi* = -Q*, its induced
// MDP, the evolved density dataset and the artifacts needed for scoring.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpirl/density.hpp"
#include "fpirl/hermite.hpp"
#include "fpirl/io.hpp"
#include "fpirl/mdp.hpp"

namespace fpirl {

/// amplitude * prod_i g_i(x_i) with g_i = cos(k_i pi x_i) or sin(k_i pi x_i),
/// and g_i = 1 where k_i = 0. Periodic on [-1, 1]^d for integer k_i.
struct AnalyticTerm {
  double amplitude = 0.0;
  std::vector<int> wave;
  std::vector<bool> sine;
};

class AnalyticPotential {
 public:
  AnalyticPotential() = default;
  AnalyticPotential(int dims, std::vector<AnalyticTerm> terms);

  int dims() const noexcept { return dims_; }
  const std::vector<AnalyticTerm>& terms() const noexcept { return terms_; }

  /// Mixed partial derivative; bit i of `mask` differentiates along x_i.
  double derivative(std::span<const double> x, unsigned mask) const;
  double value(std::span<const double> x) const { return derivative(x, 0); }
  void gradient(std::span<const double> x, std::span<double> grad) const;

 private:
  int dims_ = 0;
  std::vector<AnalyticTerm> terms_;
};

/// The frozen canonical potential for d = 2 or d = 4 (two state dims).
/// It has zero mean over [-1, 1]^d.
AnalyticPotential canonical_potential(int dims);

json analytic_to_json(const AnalyticPotential& psi);
AnalyticPotential analytic_from_json(const json& j);

/// Gauge-fixed Hermite interpolant of an analytic potential.
PotentialField interpolate_analytic(const AnalyticPotential& psi, const GridSpec& grid, double beta);

struct SparseTruthSpec {
  std::size_t n_active = 3;
  double amplitude_min = 0.5;
  double amplitude_max = 1.0;
  std::uint64_t seed = 0;
  std::optional<LibraryKind> library;  // default_library_kind(d) when unset
};

struct GroundTruthSpec {
  enum class Kind { explicit_theta, sparse, file, analytic };
  Kind kind = Kind::analytic;
  std::vector<double> theta;         // explicit_theta: full Hermite tensor
  SparseTruthSpec sparse;
  std::filesystem::path file;        // file: a potential manifest
  std::string analytic = "canonical";
};

struct GroundTruth {
  PotentialField field;  // gauge-fixed
  std::optional<LibraryKind> library;
  std::vector<std::size_t> active;          // sparse draws: library indices
  std::vector<double> library_coefficients; // sparse draws: the raw coefficients
  std::optional<AnalyticPotential> analytic;
};

/// Throws ConfigError on an empty or inconsistent spec.
GroundTruth make_ground_truth(const GridSpec& grid, const GroundTruthSpec& spec, double beta);

enum class InitialKind { sinusoid, uniform };
const char* to_string(InitialKind kind);
InitialKind initial_kind_from_string(const std::string& name);

/// p0 proportional to 1 / (sin^2(4 pi s1) + sin^2(4 pi s2) + 1) (uniform in
/// the remaining dims), or uniform; normalized to unit mass.
std::vector<double> initial_density(const GridSpec& grid, InitialKind kind = InitialKind::sinusoid);

/// p0(s, a) = pi(a | s) p0(s): keeps the state marginal of `p0` and replaces
/// the action profile by the policy.
std::vector<double> condition_on_policy(const GridSpec& grid, std::span<const double> p0, const Matrix& policy);

/// policy and lumped step the induced MDP; galerkin integrates the
/// Fokker-Planck PDE with Crank-Nicolson, whose frames satisfy the weak form
/// exactly and therefore admit exact sparse recovery.
enum class EvolutionRoute { policy, lumped, galerkin };
const char* to_string(EvolutionRoute route);
EvolutionRoute evolution_route_from_string(const std::string& name);

/// Evolves p0 with the MDP of the given route. Throws ConfigError for the
/// galerkin route, which needs the potential.
DensitySeries evolve_with_mdp(const DiscreteMDP& mdp, std::span<const double> p0, EvolutionRoute route,
                              int n_steps);
/// Any route; `mdp` must have been built from `field`.
DensitySeries evolve_route(const PotentialField& field, const DiscreteMDP& mdp, std::span<const double> p0,
                           EvolutionRoute route, int n_steps);

struct BenchmarkConfig {
  GridSpec grid = cube_grid(4, 9);
  int state_dims = 2;
  double dt = 0.01;
  double gamma = 0.99;
  double beta = 10.0;
  int n_frames = 100;  // evolution steps; the series has n_frames + 1 frames
  InitialKind initial = InitialKind::sinusoid;
  bool policy_initial = false;  // start from pi(a | s) p0(s)
  EvolutionRoute route = EvolutionRoute::policy;
  GroundTruthSpec truth;
  int n_trajectories = 0;  // > 0 also samples a Monte-Carlo TrajectorySet
  std::uint64_t seed = 0;
  TransitionOptions transition;
};

struct BenchmarkCase {
  BenchmarkConfig config;
  GroundTruth truth;
  DiscreteMDP mdp;
  std::vector<double> p0;
  DensitySeries data;
  std::optional<TrajectorySet> trajectories;
};

BenchmarkCase generate_benchmark(const BenchmarkConfig& config);

/// Writes density.fpd, truth.fpf, mdp/ exports, optional trajectories.csv
/// and the benchmark.json manifest (which embeds `echo`). Returns the
/// manifest path.
std::filesystem::path write_benchmark(const std::filesystem::path& dir, const BenchmarkCase& bench,
                                      const json& echo = json::object());

}  // namespace fpirl
