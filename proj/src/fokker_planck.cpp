#include "fpirl/fokker_planck.hpp"

#include <Eigen/SparseLU>

#include "fpirl/error.hpp"
#include "fpirl/vsi.hpp"

namespace fpirl {

namespace {

std::vector<std::size_t> element_nodes(const GridSpec& grid, std::size_t e) {
  const int d = grid.dims();
  const auto base = grid.unflatten_periodic(e);
  std::vector<std::size_t> nodes(std::size_t{1} << d);
  std::vector<int> multi(d);
  for (std::size_t r = 0; r < nodes.size(); ++r) {
    for (int i = 0; i < d; ++i) multi[i] = base[i] + static_cast<int>((r >> i) & 1U);
    nodes[r] = grid.flatten_periodic(multi);
  }
  return nodes;
}

}  // namespace

SparseMatrix galerkin_mass(const GridSpec& grid) {
  const Library library(grid, LibraryKind::hermite);
  const auto tables = element_tables(library, 2);
  const std::size_t n = grid.periodic_node_count();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n * tables.corners * tables.corners);
  for (std::size_t e = 0; e < n; ++e) {
    const auto nodes = element_nodes(grid, e);
    for (std::size_t w = 0; w < tables.corners; ++w)
      for (std::size_t c = 0; c < tables.corners; ++c)
        triplets.emplace_back(nodes[w], nodes[c], tables.mass[w * tables.corners + c]);
  }
  SparseMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

SparseMatrix galerkin_operator(const PotentialField& field, double beta_inv, int quad_order) {
  const auto& grid = field.grid;
  if (field.theta.size() != theta_size(grid)) throw ConfigError("Galerkin operator: theta does not match the grid");
  const Library library(grid, LibraryKind::hermite);
  const auto tables = element_tables(library, quad_order);
  const int d = grid.dims();
  const std::size_t n = grid.periodic_node_count();
  const std::size_t corners = tables.corners, slots = tables.slots;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(n * corners * corners);
  std::vector<double> theta_local(slots);
  std::vector<int> multi(d);
  for (std::size_t e = 0; e < n; ++e) {
    const auto base = grid.unflatten_periodic(e);
    for (std::size_t l = 0; l < slots; ++l) {
      for (int i = 0; i < d; ++i) multi[i] = library.slot_index(i, base[i], static_cast<int>((l >> (2 * i)) & 3U));
      theta_local[l] = field.theta[library.flatten(multi)];
    }
    const auto nodes = element_nodes(grid, e);
    for (std::size_t r = 0; r < corners; ++r) {      // density corner
      for (std::size_t c = 0; c < corners; ++c) {    // weight corner
        double v = beta_inv * tables.k0[r * corners + c];
        const double* xi = &tables.xi[(r * corners + c) * slots];
        for (std::size_t l = 0; l < slots; ++l) v += theta_local[l] * xi[l];
        triplets.emplace_back(nodes[c], nodes[r], v);
      }
    }
  }
  SparseMatrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  a.setFromTriplets(triplets.begin(), triplets.end());
  return a;
}

DensitySeries solve_fokker_planck(const PotentialField& field, std::span<const double> p0, double dt, int n_steps,
                                  int quad_order) {
  const auto& grid = field.grid;
  const std::size_t n = grid.periodic_node_count();
  if (p0.size() != n) throw ConfigError("Fokker-Planck: initial density has the wrong size");
  if (!(dt > 0.0) || n_steps < 0) throw ConfigError("Fokker-Planck: need dt > 0 and n_steps >= 0");
  if (!(field.beta > 0.0)) throw ConfigError("Fokker-Planck: beta must be positive");
  const SparseMatrix m = galerkin_mass(grid);
  const SparseMatrix a = galerkin_operator(field, 1.0 / field.beta, quad_order);
  const SparseMatrix lhs = m / dt + 0.5 * a;
  const SparseMatrix rhs = m / dt - 0.5 * a;
  Eigen::SparseLU<SparseMatrix> lu;
  lu.compute(lhs);
  if (lu.info() != Eigen::Success) throw NumericalError("Fokker-Planck: Crank-Nicolson factorization failed");

  DensitySeries series;
  series.grid = grid;
  series.dt = dt;
  series.frames.reserve(static_cast<std::size_t>(n_steps) + 1);
  Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(p0.data(), static_cast<Eigen::Index>(n));
  series.frames.emplace_back(p.data(), p.data() + n);
  for (int s = 0; s < n_steps; ++s) {
    p = lu.solve(rhs * p);
    if (lu.info() != Eigen::Success) throw NumericalError("Fokker-Planck: Crank-Nicolson solve failed");
    series.frames.emplace_back(p.data(), p.data() + n);
  }
  return series;
}

}  // namespace fpirl
