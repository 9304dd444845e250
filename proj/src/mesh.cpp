#include "fpirl/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fpirl/error.hpp"

namespace fpirl {

std::size_t GridSpec::node_count() const {
  std::size_t n = 1;
  for (int k : nodes_per_dim) n *= static_cast<std::size_t>(k);
  return n;
}

std::size_t GridSpec::element_count() const {
  std::size_t n = 1;
  for (int k : nodes_per_dim) n *= static_cast<std::size_t>(k - 1);
  return n;
}

std::size_t GridSpec::periodic_node_count() const { return element_count(); }

double GridSpec::cell_volume() const {
  double v = 1.0;
  for (int i = 0; i < dims(); ++i) v *= spacing(i);
  return v;
}

double GridSpec::volume() const {
  double v = 1.0;
  for (int i = 0; i < dims(); ++i) v *= extent(i);
  return v;
}

std::size_t GridSpec::flatten(std::span<const int> multi) const {
  std::size_t index = 0;
  for (int i = 0; i < dims(); ++i) index = index * nodes_per_dim[i] + multi[i];
  return index;
}

std::vector<int> GridSpec::unflatten(std::size_t index) const {
  std::vector<int> multi(dims());
  for (int i = dims() - 1; i >= 0; --i) {
    multi[i] = static_cast<int>(index % nodes_per_dim[i]);
    index /= nodes_per_dim[i];
  }
  return multi;
}

std::size_t GridSpec::flatten_periodic(std::span<const int> multi) const {
  std::size_t index = 0;
  for (int i = 0; i < dims(); ++i) {
    const int m = periodic_nodes(i);
    const int j = ((multi[i] % m) + m) % m;
    index = index * m + j;
  }
  return index;
}

std::vector<int> GridSpec::unflatten_periodic(std::size_t index) const {
  std::vector<int> multi(dims());
  for (int i = dims() - 1; i >= 0; --i) {
    const auto m = static_cast<std::size_t>(periodic_nodes(i));
    multi[i] = static_cast<int>(index % m);
    index /= m;
  }
  return multi;
}

std::vector<double> GridSpec::periodic_node_point(std::size_t index) const {
  const auto multi = unflatten_periodic(index);
  std::vector<double> x(dims());
  for (int i = 0; i < dims(); ++i) x[i] = node_coordinate(i, multi[i]);
  return x;
}

std::size_t GridSpec::flatten_element(std::span<const int> multi) const {
  std::size_t index = 0;
  for (int i = 0; i < dims(); ++i) index = index * (nodes_per_dim[i] - 1) + multi[i];
  return index;
}

std::vector<int> GridSpec::unflatten_element(std::size_t index) const {
  return unflatten_periodic(index);
}

std::vector<std::size_t> GridSpec::element_corners(std::size_t e) const {
  const auto cell = unflatten_element(e);
  const std::size_t corners = std::size_t{1} << dims();
  std::vector<std::size_t> out(corners);
  std::vector<int> multi(dims());
  for (std::size_t r = 0; r < corners; ++r) {
    for (int i = 0; i < dims(); ++i) multi[i] = cell[i] + static_cast<int>((r >> i) & 1U);
    out[r] = flatten(multi);
  }
  return out;
}

std::vector<std::size_t> GridSpec::element_corners_periodic(std::size_t e) const {
  const auto cell = unflatten_element(e);
  const std::size_t corners = std::size_t{1} << dims();
  std::vector<std::size_t> out(corners);
  std::vector<int> multi(dims());
  for (std::size_t r = 0; r < corners; ++r) {
    for (int i = 0; i < dims(); ++i) multi[i] = cell[i] + static_cast<int>((r >> i) & 1U);
    out[r] = flatten_periodic(multi);
  }
  return out;
}

GridSpec build_grid(int dims, std::vector<Bounds> bounds, std::vector<int> nodes_per_dim) {
  if (dims < 1) throw ConfigError("grid: dims must be >= 1");
  if (static_cast<int>(bounds.size()) != dims || static_cast<int>(nodes_per_dim.size()) != dims)
    throw ConfigError("grid: bounds and nodes_per_dim must have one entry per dimension");
  for (int i = 0; i < dims; ++i) {
    const auto [a, b] = bounds[i];
    if (!std::isfinite(a) || !std::isfinite(b))
      throw ConfigError("grid: non-finite bounds in dimension " + std::to_string(i));
    if (!(a < b)) throw ConfigError("grid: empty interval in dimension " + std::to_string(i));
    if (nodes_per_dim[i] < 3)
      throw ConfigError("grid: nodes_per_dim must be >= 3 for periodic Hermite dofs (dimension " +
                        std::to_string(i) + ")");
  }
  return GridSpec{std::move(bounds), std::move(nodes_per_dim), true};
}

GridSpec cube_grid(int dims, int nodes, double lower, double upper) {
  return build_grid(dims, std::vector<Bounds>(static_cast<std::size_t>(dims), Bounds{lower, upper}),
                    std::vector<int>(static_cast<std::size_t>(dims), nodes));
}

std::vector<double> to_periodic(const GridSpec& grid, std::span<const double> full) {
  if (full.size() != grid.node_count()) throw ConfigError("to_periodic: size mismatch");
  std::vector<double> out(grid.periodic_node_count());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = full[grid.flatten(grid.unflatten_periodic(p))];
  return out;
}

std::vector<double> to_full(const GridSpec& grid, std::span<const double> periodic) {
  if (periodic.size() != grid.periodic_node_count()) throw ConfigError("to_full: size mismatch");
  std::vector<double> out(grid.node_count());
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = periodic[grid.flatten_periodic(grid.unflatten(n))];
  return out;
}

double wrap_coordinate(const GridSpec& grid, int i, double x) {
  const double a = grid.lower(i);
  const double length = grid.extent(i);
  double t = std::fmod(x - a, length);
  if (t < 0) t += length;
  if (t >= length) t -= length;
  return a + t;
}

double minimum_image(double displacement, double period) {
  return displacement - period * std::nearbyint(displacement / period);
}

ElementLocation locate(const GridSpec& grid, std::span<const double> x) {
  const int d = grid.dims();
  ElementLocation loc{std::vector<int>(d), std::vector<double>(d)};
  for (int i = 0; i < d; ++i) {
    if (!std::isfinite(x[i])) throw ConfigError("locate: non-finite coordinate");
    const double h = grid.spacing(i);
    const double t = (wrap_coordinate(grid, i, x[i]) - grid.lower(i)) / h;
    int j = static_cast<int>(std::floor(t));
    j = std::clamp(j, 0, grid.nodes_per_dim[i] - 2);
    loc.cell[i] = j;
    loc.xi[i] = std::clamp(t - j, 0.0, 1.0);
  }
  return loc;
}

GaussRule1D gauss_legendre(int g) {
  if (g < 1) throw ConfigError("gauss_legendre: order must be >= 1");
  GaussRule1D rule{std::vector<double>(g), std::vector<double>(g)};
  for (int i = 0; i < g; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (g + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = z;
      for (int n = 2; n <= g; ++n) {
        const double p2 = ((2.0 * n - 1.0) * z * p1 - (n - 1.0) * p0) / n;
        p0 = p1;
        p1 = p2;
      }
      if (g == 1) p0 = 1.0;
      dp = g * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    // Recompute the derivative at the converged root.
    double p0 = 1.0, p1 = z;
    for (int n = 2; n <= g; ++n) {
      const double p2 = ((2.0 * n - 1.0) * z * p1 - (n - 1.0) * p0) / n;
      p0 = p1;
      p1 = p2;
    }
    dp = g * (z * p1 - p0) / (z * z - 1.0);
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    rule.points[g - 1 - i] = 0.5 * (1.0 + z);
    rule.weights[g - 1 - i] = 0.5 * w;
  }
  return rule;
}

ElementQuadrature quadrature_rule(int dims, int g) {
  if (g < 2) throw ConfigError("quadrature_rule: order must be >= 2");
  const auto rule = gauss_legendre(g);
  std::size_t n = 1;
  for (int i = 0; i < dims; ++i) n *= static_cast<std::size_t>(g);
  ElementQuadrature q{dims, g, std::vector<double>(n * dims), std::vector<double>(n)};
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t rest = p;
    double w = 1.0;
    for (int i = 0; i < dims; ++i) {
      const auto j = rest % static_cast<std::size_t>(g);
      rest /= static_cast<std::size_t>(g);
      q.points[p * dims + i] = rule.points[j];
      w *= rule.weights[j];
    }
    q.weights[p] = w;
  }
  return q;
}

std::vector<double> lagrange_shape_values(std::span<const double> xi) {
  const auto d = xi.size();
  const std::size_t corners = std::size_t{1} << d;
  std::vector<double> n(corners);
  for (std::size_t r = 0; r < corners; ++r) {
    double v = 1.0;
    for (std::size_t i = 0; i < d; ++i) v *= ((r >> i) & 1U) ? xi[i] : 1.0 - xi[i];
    n[r] = v;
  }
  return n;
}

std::vector<double> lagrange_shape_gradients(std::span<const double> xi,
                                             std::span<const double> element_extents) {
  const auto d = xi.size();
  if (element_extents.size() != d) throw ConfigError("lagrange_shape_gradients: extent size mismatch");
  for (double e : element_extents)
    if (!(e > 0.0)) throw ConfigError("lagrange_shape_gradients: element extent must be positive");
  const std::size_t corners = std::size_t{1} << d;
  std::vector<double> grad(corners * d);
  for (std::size_t r = 0; r < corners; ++r) {
    for (std::size_t k = 0; k < d; ++k) {
      double v = ((r >> k) & 1U) ? 1.0 : -1.0;
      for (std::size_t i = 0; i < d; ++i) {
        if (i == k) continue;
        v *= ((r >> i) & 1U) ? xi[i] : 1.0 - xi[i];
      }
      grad[r * d + k] = v / element_extents[k];
    }
  }
  return grad;
}

double interpolate_field(const GridSpec& grid, std::span<const double> node_values,
                         std::span<const double> x) {
  const bool full = node_values.size() == grid.node_count();
  if (!full && node_values.size() != grid.periodic_node_count())
    throw ConfigError("interpolate_field: node value count matches neither layout");
  const auto loc = locate(grid, x);
  const auto shape = lagrange_shape_values(loc.xi);
  const int d = grid.dims();
  std::vector<int> multi(d);
  double value = 0.0;
  for (std::size_t r = 0; r < shape.size(); ++r) {
    for (int i = 0; i < d; ++i) multi[i] = loc.cell[i] + static_cast<int>((r >> i) & 1U);
    value += shape[r] * node_values[full ? grid.flatten(multi) : grid.flatten_periodic(multi)];
  }
  return value;
}

double integrate_periodic(const GridSpec& grid, std::span<const double> periodic_values) {
  double sum = 0.0;
  for (double v : periodic_values) sum += v;
  return sum * grid.cell_volume();
}

}  // namespace fpirl
