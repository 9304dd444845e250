#pragma once

// Scoring: KL divergence over time, field error norms, mesh convergence
// sweeps and support-recovery metrics.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fpirl/density.hpp"
#include "fpirl/hermite.hpp"
#include "fpirl/synthetic.hpp"
#include "fpirl/vsi.hpp"

namespace fpirl {

/// sum p log(p / q) * cell volume over nodes, with 0 log 0 = 0; +inf when
/// q = 0 < p.
double kl_divergence(const GridSpec& grid, std::span<const double> p, std::span<const double> q);

struct KlTraceOptions {
  int state_dims = 1;
  double dt = 0.01;
  double gamma = 0.99;
  EvolutionRoute route = EvolutionRoute::policy;
  TransitionOptions transition;
};

/// Builds the inferred MDP from `fit`, evolves q_t from p0 with the same
/// route and returns D_KL(p_t || q_t) for every frame of `data`.
std::vector<double> kl_trace(const DensitySeries& data, const VsiFit& fit, std::span<const double> p0,
                             const KlTraceOptions& options);
/// Same with an arbitrary inferred potential.
std::vector<double> kl_trace(const DensitySeries& data, const PotentialField& inferred, std::span<const double> p0,
                             const KlTraceOptions& options);

/// Point evaluator: returns the value and, if `grad` is non-empty, writes
/// the gradient.
using FieldFunction = std::function<double(std::span<const double> x, std::span<double> grad)>;

FieldFunction field_function(const PotentialField& field);
FieldFunction field_function(const AnalyticPotential& psi);

enum class ErrorMode { value, gradient };

/// (1 / |Omega|) (int (f - g)^2)^{1/2}, integrated with `points` Gauss
/// points per dimension on every element of `quad_grid`. Gradient mode
/// sums the squared component differences.
double field_error(const FieldFunction& f, const FieldFunction& g, const GridSpec& quad_grid, ErrorMode mode,
                   int points = 5);
/// Quadrature on the coarser of the two meshes.
double field_error(const PotentialField& f, const PotentialField& g, ErrorMode mode, int points = 5);
double field_error(const PotentialField& f, const AnalyticPotential& g, ErrorMode mode, int points = 5);

struct SupportMetrics {
  double precision = 0.0;  // 0 when nothing is kept
  double recall = 0.0;     // 1 when the true set is empty
};
SupportMetrics support_metrics(const std::vector<std::size_t>& active, const std::vector<std::size_t>& truth);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct ConvergenceRow {
  int nodes = 0;
  double psi_error = 0.0;
  double grad_psi_error = 0.0;
  double beta_inv = 0.0;
  double runtime_s = 0.0;
  std::string status = "ok";  // "ok", "skipped: memory guard" or "failed: ..."
};

struct ConvergenceConfig {
  std::vector<int> meshes;     // ascending node counts per dimension
  BenchmarkConfig benchmark;   // grid is replaced by cube grids of the same bounds
  VsiOptions vsi;
  int jobs = 1;
};

/// Runs benchmark + VSI per mesh and scores against the analytic ground
/// truth. Failing cells are recorded and the study continues.
std::vector<ConvergenceRow> convergence_study(const ConvergenceConfig& config);

/// True when every cell has status "ok".
bool all_ok(const std::vector<ConvergenceRow>& rows);

/// N,psi_error,grad_psi_error,beta_inv,runtime_s[,status] with %.17g values.
void write_convergence_csv(const std::filesystem::path& path, const std::vector<ConvergenceRow>& rows);

/// frame,t,kl
void write_kl_csv(const std::filesystem::path& path, std::span<const double> kl, double dt);

}  // namespace fpirl
