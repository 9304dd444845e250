#pragma once

// Crank-Nicolson Galerkin discretization of the Fokker-Planck equation
//   dp/dt = div(p grad psi) + beta^{-1} lap p
// on multilinear periodic elements. Its frames satisfy the weak-form
// regression with the full Hermite library exactly (up to roundoff), which
// makes it the manufactured-data generator for identification tests.

#include <span>
#include <vector>

#include <Eigen/SparseCore>

#include "fpirl/density.hpp"
#include "fpirl/hermite.hpp"

namespace fpirl {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Consistent mass matrix, int N_w N_c.
SparseMatrix galerkin_mass(const GridSpec& grid);

/// A(w, c) = beta^{-1} int grad N_c . grad N_w + int N_c grad psi . grad N_w.
SparseMatrix galerkin_operator(const PotentialField& field, double beta_inv, int quad_order = 3);

/// n_steps Crank-Nicolson steps from p0 (periodic layout); returns
/// n_steps + 1 frames.
DensitySeries solve_fokker_planck(const PotentialField& field, std::span<const double> p0, double dt,
                                  int n_steps, int quad_order = 3);

}  // namespace fpirl
