#pragma once

// Small fields shared by the unit and acceptance tests.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "fpirl/evaluation.hpp"
#include "fpirl/fokker_planck.hpp"
#include "fpirl/synthetic.hpp"
#include "fpirl/vsi.hpp"

namespace fpirl::test {

/// psi = a cos(pi x) + (a/2) sin(pi x) cos(pi y) on [-1, 1]^2.
inline AnalyticPotential toy_potential(double amplitude) {
  return AnalyticPotential(2, {{amplitude, {1, 0}, {false, false}}, {0.5 * amplitude, {1, 1}, {true, false}}});
}

inline PotentialField toy_field(double amplitude, int nodes, double beta = 1.0) {
  return interpolate_analytic(toy_potential(amplitude), cube_grid(2, nodes), beta);
}

/// p0 proportional to exp(cos(pi x) + cos(pi y) / 2), unit mass.
inline std::vector<double> bump_density(const GridSpec& grid) {
  std::vector<double> p(grid.periodic_node_count());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const auto x = grid.periodic_node_point(k);
    p[k] = std::exp(std::cos(M_PI * x[0]) + 0.5 * std::cos(M_PI * x[1]));
  }
  normalize_frame(grid, p);
  return p;
}

inline std::vector<double> uniform_density(const GridSpec& grid) {
  return std::vector<double>(grid.periodic_node_count(), 1.0 / grid.volume());
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fpirl_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Crank-Nicolson Galerkin data for a sparse library potential with three
/// active terms, started from the uniform density.
struct Manufactured {
  Library library;
  PotentialField truth;  // gauge-fixed
  std::vector<std::size_t> active;
  DensitySeries series;
};

inline Manufactured manufactured(int dims, int nodes, LibraryKind kind, double beta = 1.0, double dt = 0.01,
                                 int steps = 100) {
  const auto grid = cube_grid(dims, nodes);
  Library lib(grid, kind);
  std::vector<double> c(lib.size(), 0.0);
  const std::vector<std::size_t> active{3, lib.size() / 3 + 1, lib.size() / 2 + 5};
  const double amplitude[3] = {0.8, -0.6, 0.5};
  for (int i = 0; i < 3; ++i) c[active[i]] = amplitude[i];
  const PotentialField psi{grid, lib.expand(c), beta};
  auto series = solve_fokker_planck(psi, uniform_density(grid), dt, steps);
  return {std::move(lib), gauge_fix(psi), active, std::move(series)};
}

/// ||f - g|| / ||g|| in the L2 sense over the domain.
inline double relative_l2(const PotentialField& f, const PotentialField& g) {
  return field_error(f, g, ErrorMode::value) / field_error(zero_potential(g.grid, g.beta), g, ErrorMode::value);
}

}  // namespace fpirl::test
