#pragma once

// Tensor-product hypercube mesh, multilinear Lagrange shape functions and
// Gauss-Legendre rules on the unit reference element.
//
// Node ordering is row-major with the last dimension varying fastest. Two
// layouts are used throughout:
//   full layout      all prod(k_i) grid nodes, seam nodes duplicated;
//   periodic layout  prod(k_i - 1) distinct nodes, node k_i identified with 1.
// Density files store the full layout; Markov and regression computations
// run on the periodic layout.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace fpirl {

using Bounds = std::array<double, 2>;

struct GridSpec {
  std::vector<Bounds> bounds;
  std::vector<int> nodes_per_dim;
  bool periodic = true;

  int dims() const noexcept { return static_cast<int>(nodes_per_dim.size()); }
  double lower(int i) const { return bounds[i][0]; }
  double upper(int i) const { return bounds[i][1]; }
  double extent(int i) const { return bounds[i][1] - bounds[i][0]; }
  double spacing(int i) const { return extent(i) / (nodes_per_dim[i] - 1); }
  int periodic_nodes(int i) const { return nodes_per_dim[i] - 1; }
  double node_coordinate(int i, int j) const { return lower(i) + j * spacing(i); }

  std::size_t node_count() const;
  std::size_t element_count() const;
  std::size_t periodic_node_count() const;
  double cell_volume() const;  // product of spacings, the nodal quadrature weight
  double volume() const;       // |Omega|

  std::size_t flatten(std::span<const int> multi) const;
  std::vector<int> unflatten(std::size_t index) const;
  std::size_t flatten_periodic(std::span<const int> multi) const;  // wraps indices
  std::vector<int> unflatten_periodic(std::size_t index) const;
  std::vector<double> periodic_node_point(std::size_t index) const;

  /// Element multi-index -> flat element index (row-major over k_i - 1 cells).
  std::size_t flatten_element(std::span<const int> multi) const;
  std::vector<int> unflatten_element(std::size_t index) const;

  /// 2^d corner nodes of element `e` in shape-function order (bit r of the
  /// corner index selects the upper node along dimension r).
  std::vector<std::size_t> element_corners(std::size_t e) const;
  std::vector<std::size_t> element_corners_periodic(std::size_t e) const;

  bool operator==(const GridSpec& other) const = default;
};

/// Validates and builds a grid. Throws ConfigError for k_i < 3, non-finite or
/// empty bounds, or a dimension count mismatch.
GridSpec build_grid(int dims, std::vector<Bounds> bounds, std::vector<int> nodes_per_dim);

/// [-1, 1]^d with k nodes per dimension.
GridSpec cube_grid(int dims, int nodes, double lower = -1.0, double upper = 1.0);

/// Drops the duplicated seam nodes.
std::vector<double> to_periodic(const GridSpec& grid, std::span<const double> full);
/// Replicates periodic values onto the seam nodes.
std::vector<double> to_full(const GridSpec& grid, std::span<const double> periodic);

/// Wraps x into [a, b) along dimension i.
double wrap_coordinate(const GridSpec& grid, int i, double x);
/// Minimum-image displacement on a circle of circumference `period`.
double minimum_image(double displacement, double period);

struct ElementLocation {
  std::vector<int> cell;    // segment index per dimension, in [0, k_i - 2]
  std::vector<double> xi;   // reference coordinates in [0, 1]
};

/// Locates a (wrapped) physical point. Throws ConfigError for non-finite x.
ElementLocation locate(const GridSpec& grid, std::span<const double> x);

struct GaussRule1D {
  std::vector<double> points;   // on [0, 1]
  std::vector<double> weights;  // sum to 1
};

/// g-point Gauss-Legendre rule mapped from [-1, 1] to [0, 1].
GaussRule1D gauss_legendre(int g);

struct ElementQuadrature {
  int dims = 0;
  int order = 0;
  std::vector<double> points;   // n x dims, row-major
  std::vector<double> weights;  // n

  std::size_t size() const noexcept { return weights.size(); }
  std::span<const double> point(std::size_t q) const {
    return {points.data() + q * static_cast<std::size_t>(dims), static_cast<std::size_t>(dims)};
  }
};

/// Tensor product of g-point rules on [0,1]^d, first dimension fastest.
ElementQuadrature quadrature_rule(int dims, int g);

/// Multilinear shape values N_1..N_{2^d} at reference point xi.
std::vector<double> lagrange_shape_values(std::span<const double> xi);

/// Physical gradients of the shape functions, 2^d rows of length d
/// (flattened row-major). Throws ConfigError for non-positive extents.
std::vector<double> lagrange_shape_gradients(std::span<const double> xi,
                                             std::span<const double> element_extents);

/// Multilinear interpolation of nodal values (full or periodic layout,
/// detected by size) at a physical point, wrapped periodically.
double interpolate_field(const GridSpec& grid, std::span<const double> node_values,
                         std::span<const double> x);

/// Integral of the multilinear interpolant over Omega (periodic layout).
double integrate_periodic(const GridSpec& grid, std::span<const double> periodic_values);

}  // namespace fpirl
