#pragma once

// Variational system identification of the Fokker-Planck potential.
//
// For every residual instant (midpoint pairing of frames) and every periodic
// nodal hat function w, the weak-form residual is
//
//   R_w = y_w + beta^{-1} Xi0_w + sum_l theta_l Xi_{w,l}
//   y_w   = int dp/dt w,   Xi0_w = int grad p . grad w,
//   Xi_wl = int p grad phi_l . grad w,
//
// with p the multilinear interpolant of the nodal densities and phi_l the
// regression library. The regression minimizes ||b - X c||^2 with b = -y,
// X = [Xi0, Xi] and c = [beta^{-1}, theta].

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "fpirl/density.hpp"
#include "fpirl/hermite.hpp"
#include "fpirl/io.hpp"

namespace fpirl {

/// Element integrals of products of Lagrange, library and gradient terms,
/// identical for every element of a uniform grid.
struct ElementTables {
  int dims = 0;
  std::size_t corners = 0;  // 2^d
  std::size_t slots = 0;    // 4^d
  std::vector<double> xi;   // [r][c][l]: int N_r grad f_l . grad N_c
  std::vector<double> k0;   // [r][c]:    int grad N_r . grad N_c
  std::vector<double> mass; // [r][c]:    int N_r N_c

  double xi_at(std::size_t r, std::size_t c, std::size_t l) const { return xi[(r * corners + c) * slots + l]; }
};

/// Builds the tables from per-dimension Gauss-Legendre rules of order g.
ElementTables element_tables(const Library& library, int quad_order = 3);

/// Dense residual rows, ordered instant-major then by periodic node.
struct ResidualSystem {
  Eigen::VectorXd y;
  Eigen::VectorXd xi0;
  Eigen::MatrixXd xi;
  std::size_t instants = 0;
};

/// Gram form of the regression over X = [Xi0, Xi], b = -y.
struct NormalEquations {
  Eigen::MatrixXd gram;  // X^T X, column 0 is Xi0
  Eigen::VectorXd xtb;   // X^T b
  double btb = 0.0;
  std::size_t rows = 0;
  std::size_t instants = 0;

  std::size_t columns() const noexcept { return static_cast<std::size_t>(gram.rows()); }
};

struct AssemblyOptions {
  int quad_order = 3;
  std::size_t memory_guard = std::size_t{2} << 30;
};

/// Explicit rows; intended for small systems and cross-checks.
ResidualSystem assemble_residual(const DensitySeries& series, const Library& library,
                                 const AssemblyOptions& options = {});

/// Accumulates the normal equations node by node without forming X.
NormalEquations assemble_normal_equations(const DensitySeries& series, const Library& library,
                                          const AssemblyOptions& options = {});

NormalEquations normal_equations(const ResidualSystem& system);

/// ||b - X c||^2 for coefficients c = [beta^{-1}, theta].
double residual_sum_of_squares(const NormalEquations& ne, const Eigen::VectorXd& c);
double residual_sum_of_squares(const ResidualSystem& system, const Eigen::VectorXd& c);

struct SolveOptions {
  double rank_tol = 1e-10;  // relative eigenvalue threshold on the unit-scaled Gram
  std::vector<Eigen::VectorXd> null_hints;
};

struct LeastSquaresSolution {
  double beta_inv = 0.0;
  std::vector<double> theta;
  Eigen::VectorXd coefficients;  // [beta^{-1}, theta]
  double rss = 0.0;
  std::size_t rank = 0;
};

/// Minimum-norm least squares on the column-scaled system. Throws
/// NumericalError if the fitted beta^{-1} is not positive, except for b = 0,
/// which returns all zeros.
LeastSquaresSolution solve_least_squares(const NormalEquations& ne, const SolveOptions& options = {});

struct StepwiseOptions {
  double f_threshold = 4.0;
  double rank_tol = 1e-10;
  /// The F denominator uses max(RSS, rss_floor * b^T b) so that noiseless
  /// systems, whose residual is pure roundoff, give finite statistics.
  double rss_floor = 1e-8;
  std::vector<std::size_t> protect = {0};  // column indices never eliminated
  /// Known exact null directions of X (full column length), e.g. the
  /// constant potential. Others are found by an eigen decomposition.
  std::vector<Eigen::VectorXd> null_hints;
};

struct StepwiseResult {
  Eigen::VectorXd coefficients;         // full length, zeros for eliminated columns
  std::vector<std::size_t> active;      // surviving column indices, ascending
  std::vector<std::size_t> eliminated;  // in elimination order
  std::vector<double> loss_trace;       // RSS of the full model, then after each elimination
  std::vector<double> f_trace;          // F of each accepted elimination
  double rejected_f = std::numeric_limits<double>::quiet_NaN();  // F of the candidate refused at stop
  std::size_t dependent_drops = 0;      // eliminations of exactly dependent columns
  std::size_t initial_columns = 0;      // columns entering elimination
};

/// Backward elimination on the normal equations. Each step drops the
/// unprotected column whose removal increases RSS least; an elimination
/// with F > f_threshold is refused and ends the search.
StepwiseResult stepwise_regression(const NormalEquations& ne, const StepwiseOptions& options = {});

/// Recomputes F statistics from a loss trace (see StepwiseResult).
std::vector<double> f_statistics_from_trace(const std::vector<double>& loss_trace, std::size_t rows,
                                            std::size_t initial_columns, double btb, double rss_floor);

struct VsiOptions {
  std::optional<LibraryKind> library;  // default_library_kind(d) when unset
  AssemblyOptions assembly;
  StepwiseOptions stepwise;
};

struct VsiFit {
  PotentialField field;                // gauge-fixed, beta = 1 / beta_inv
  double beta_inv = 0.0;
  LibraryKind library = LibraryKind::hermite;
  std::vector<std::size_t> active_set;  // library indices
  std::vector<double> library_coefficients;
  std::vector<double> loss_trace;
  std::vector<double> f_trace;
  double f_threshold = 4.0;
  double rejected_f = std::numeric_limits<double>::quiet_NaN();
  std::size_t rows = 0;
};

/// assemble -> stepwise -> expand -> gauge fix. Throws NumericalError for a
/// non-positive diffusion estimate.
VsiFit run_vsi(const DensitySeries& series, const VsiOptions& options = {});
/// Same starting from assembled normal equations.
/// Adds the constant-potential null hint when none is given.
VsiFit fit_from_normal_equations(const NormalEquations& ne, const Library& library,
                                 const StepwiseOptions& stepwise = {});

/// Writes `path` (PotentialField) and the sidecar `<stem>.fit.json`.
void write_vsi_fit(const std::filesystem::path& path, const VsiFit& fit, const json& extra = json::object());
VsiFit read_vsi_fit(const std::filesystem::path& path);
std::filesystem::path fit_sidecar_path(const std::filesystem::path& path);

}  // namespace fpirl
