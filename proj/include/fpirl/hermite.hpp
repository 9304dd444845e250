#pragma once

// Periodic Hermite-cubic tensor basis for the potential psi.
//
// Per periodic dimension with m = k - 1 distinct nodes there are 2m dofs:
// dof 2n is the value at node n, dof 2n + 1 the derivative. The d-dimensional
// coefficient tensor is row-major over the per-dimension dof indices with the
// last dimension fastest.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fpirl/mesh.hpp"

namespace fpirl {

/// Element shape functions (h1, h2, h3, h4) at x_hat in [0, 1]; h2 and h4
/// carry the factor `extent` = x1 - x0.
std::array<double, 4> element_hermite_values(double x_hat, double extent);

/// Physical derivatives of the element shape functions.
std::array<double, 4> element_hermite_derivatives(double x_hat, double extent);

/// One periodic dimension of the tensor basis.
struct HermiteBasis1D {
  double lower = 0.0;
  double spacing = 1.0;
  int nodes = 3;  // k, including the duplicated endpoint

  int distinct_nodes() const noexcept { return nodes - 1; }
  int dof_count() const noexcept { return 2 * (nodes - 1); }
  double node(int j) const { return lower + j * spacing; }
  /// Global dof indices of (h1, h2, h3, h4) on segment j.
  std::array<int, 4> segment_dofs(int j) const;
};

HermiteBasis1D hermite_basis_1d(const GridSpec& grid, int dim);

struct PotentialField {
  GridSpec grid;
  std::vector<double> theta;
  double beta = 1.0;

  std::vector<int> theta_shape() const;
};

/// Zero potential on `grid`.
PotentialField zero_potential(const GridSpec& grid, double beta);
std::size_t theta_size(const GridSpec& grid);

/// Flat coefficient index of a per-dimension dof multi-index.
std::size_t theta_index(const GridSpec& grid, std::span<const int> dof_multi);

/// psi(x), wrapping x periodically. Throws ConfigError on a theta shape
/// mismatch.
double eval_potential(const PotentialField& field, std::span<const double> x);

/// grad psi(x).
std::vector<double> eval_potential_gradient(const PotentialField& field, std::span<const double> x);

/// psi and grad psi together (gradient written into `grad`).
double eval_potential_and_gradient(const PotentialField& field, std::span<const double> x,
                                   std::span<double> grad);

/// Mean of psi over Omega by Gauss-Legendre quadrature.
double potential_mean(const PotentialField& field);

/// Shifts psi by a constant so that its integral over Omega vanishes.
PotentialField gauge_fix(PotentialField field);

/// Adds a constant to psi (only the all-value dofs change).
void add_constant(PotentialField& field, double c);

/// Tensor Hermite interpolant of a function given its mixed partial
/// derivatives: `derivative(x, mask)` returns d^|S| f / prod_{i in S} dx_i
/// with bit i of `mask` selecting dimension i.
template <typename MixedDerivative>
PotentialField hermite_interpolate(const GridSpec& grid, double beta, MixedDerivative&& derivative);

// ---------------------------------------------------------------------------
// Regression libraries: the candidate functions assembled as VSI columns,
// each a fixed combination of Hermite dofs.

enum class LibraryKind {
  hermite,   // every tensor Hermite dof is a column
  cardinal,  // one C1 cubic per node, derivative dofs tied by central differences
};

const char* to_string(LibraryKind kind);
LibraryKind library_kind_from_string(const std::string& name);

class Library {
 public:
  Library(const GridSpec& grid, LibraryKind kind);

  LibraryKind kind() const noexcept { return kind_; }
  const GridSpec& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return size_; }
  int size_1d(int dim) const { return sizes_[dim]; }

  /// Global per-dimension library index of local slot s on segment j.
  int slot_index(int dim, int segment, int slot) const;
  /// C[s][q]: coefficient of element shape function q in slot s's function.
  const std::array<std::array<double, 4>, 4>& slot_coefficients(int dim) const { return coeff_[dim]; }

  std::size_t flatten(std::span<const int> multi) const;
  std::vector<int> unflatten(std::size_t index) const;

  /// Hermite coefficient tensor of a library expansion.
  std::vector<double> expand(std::span<const double> coefficients) const;

  /// Library coefficients representing psi == 1.
  std::vector<double> constant_direction() const;

 private:
  GridSpec grid_;
  LibraryKind kind_;
  std::vector<int> sizes_;
  std::size_t size_ = 1;
  std::vector<std::array<std::array<double, 4>, 4>> coeff_;
};

/// Default library. The cardinal library has one unknown per node, which
/// the nodal weak form determines well; the full Hermite library leaves the
/// derivative dofs poorly constrained on evolved MDP data.
LibraryKind default_library_kind(int dims);

}  // namespace fpirl

#include "fpirl/hermite_impl.hpp"
