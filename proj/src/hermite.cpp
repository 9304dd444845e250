#include "fpirl/hermite.hpp"

#include <cmath>

#include "fpirl/error.hpp"

namespace fpirl {

std::array<double, 4> element_hermite_values(double x_hat, double extent) {
  const double x2 = x_hat * x_hat;
  const double x3 = x2 * x_hat;
  return {1.0 - 3.0 * x2 + 2.0 * x3, (x_hat - 2.0 * x2 + x3) * extent, 3.0 * x2 - 2.0 * x3,
          (-x2 + x3) * extent};
}

std::array<double, 4> element_hermite_derivatives(double x_hat, double extent) {
  const double x2 = x_hat * x_hat;
  return {(-6.0 * x_hat + 6.0 * x2) / extent, 1.0 - 4.0 * x_hat + 3.0 * x2,
          (6.0 * x_hat - 6.0 * x2) / extent, -2.0 * x_hat + 3.0 * x2};
}

std::array<int, 4> HermiteBasis1D::segment_dofs(int j) const {
  const int m = distinct_nodes();
  const int next = (j + 1) % m;
  return {2 * j, 2 * j + 1, 2 * next, 2 * next + 1};
}

HermiteBasis1D hermite_basis_1d(const GridSpec& grid, int dim) {
  return HermiteBasis1D{grid.lower(dim), grid.spacing(dim), grid.nodes_per_dim[dim]};
}

std::size_t theta_size(const GridSpec& grid) {
  std::size_t n = 1;
  for (int i = 0; i < grid.dims(); ++i) n *= static_cast<std::size_t>(2 * grid.periodic_nodes(i));
  return n;
}

std::vector<int> PotentialField::theta_shape() const {
  std::vector<int> shape(grid.dims());
  for (int i = 0; i < grid.dims(); ++i) shape[i] = 2 * grid.periodic_nodes(i);
  return shape;
}

PotentialField zero_potential(const GridSpec& grid, double beta) {
  return PotentialField{grid, std::vector<double>(theta_size(grid), 0.0), beta};
}

std::size_t theta_index(const GridSpec& grid, std::span<const int> dof_multi) {
  std::size_t index = 0;
  for (int i = 0; i < grid.dims(); ++i) index = index * (2 * grid.periodic_nodes(i)) + dof_multi[i];
  return index;
}

namespace {

void check_shape(const PotentialField& field) {
  if (field.theta.size() != theta_size(field.grid))
    throw ConfigError("potential field: theta has " + std::to_string(field.theta.size()) +
                      " coefficients, basis expects " + std::to_string(theta_size(field.grid)));
}

struct LocalBasis {
  int d = 0;
  std::vector<std::array<double, 4>> values;
  std::vector<std::array<double, 4>> derivs;
  std::vector<std::array<std::size_t, 4>> offsets;  // dof index times stride
};

LocalBasis local_basis(const GridSpec& grid, std::span<const double> x, bool with_derivs) {
  const auto loc = locate(grid, x);
  const int d = grid.dims();
  LocalBasis lb;
  lb.d = d;
  lb.values.resize(d);
  lb.offsets.resize(d);
  if (with_derivs) lb.derivs.resize(d);
  std::size_t stride = 1;
  for (int i = d - 1; i >= 0; --i) {
    const auto basis = hermite_basis_1d(grid, i);
    const double h = basis.spacing;
    lb.values[i] = element_hermite_values(loc.xi[i], h);
    if (with_derivs) lb.derivs[i] = element_hermite_derivatives(loc.xi[i], h);
    const auto dofs = basis.segment_dofs(loc.cell[i]);
    for (int q = 0; q < 4; ++q) lb.offsets[i][q] = static_cast<std::size_t>(dofs[q]) * stride;
    stride *= static_cast<std::size_t>(basis.dof_count());
  }
  return lb;
}

}  // namespace

double eval_potential_and_gradient(const PotentialField& field, std::span<const double> x,
                                   std::span<double> grad) {
  check_shape(field);
  const bool want_grad = !grad.empty();
  const auto lb = local_basis(field.grid, x, want_grad);
  const int d = lb.d;
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<int> q(d, 0);
  double value = 0.0;
  const std::size_t combos = std::size_t{1} << (2 * d);
  for (std::size_t c = 0; c < combos; ++c) {
    std::size_t index = 0;
    double prod = 1.0;
    for (int i = 0; i < d; ++i) {
      q[i] = static_cast<int>((c >> (2 * i)) & 3U);
      index += lb.offsets[i][q[i]];
      prod *= lb.values[i][q[i]];
    }
    const double t = field.theta[index];
    if (t == 0.0) continue;
    value += t * prod;
    if (want_grad) {
      for (int k = 0; k < d; ++k) {
        double g = lb.derivs[k][q[k]];
        for (int i = 0; i < d; ++i)
          if (i != k) g *= lb.values[i][q[i]];
        grad[k] += t * g;
      }
    }
  }
  return value;
}

double eval_potential(const PotentialField& field, std::span<const double> x) {
  return eval_potential_and_gradient(field, x, {});
}

std::vector<double> eval_potential_gradient(const PotentialField& field, std::span<const double> x) {
  std::vector<double> grad(field.grid.dims());
  eval_potential_and_gradient(field, x, grad);
  return grad;
}

double potential_mean(const PotentialField& field) {
  check_shape(field);
  const auto& grid = field.grid;
  const int d = grid.dims();
  const auto rule = gauss_legendre(3);
  // Integral of each 1-d dof function over its periodic support.
  std::vector<std::vector<double>> weight(d);
  for (int i = 0; i < d; ++i) {
    const auto basis = hermite_basis_1d(grid, i);
    weight[i].assign(basis.dof_count(), 0.0);
    for (int j = 0; j < basis.distinct_nodes(); ++j) {
      const auto dofs = basis.segment_dofs(j);
      for (std::size_t g = 0; g < rule.points.size(); ++g) {
        const auto h = element_hermite_values(rule.points[g], basis.spacing);
        for (int q = 0; q < 4; ++q) weight[i][dofs[q]] += rule.weights[g] * h[q] * basis.spacing;
      }
    }
  }
  double integral = 0.0;
  const auto shape = field.theta_shape();
  std::vector<int> multi(d, 0);
  for (std::size_t n = 0; n < field.theta.size(); ++n) {
    std::size_t rest = n;
    double w = 1.0;
    for (int i = d - 1; i >= 0; --i) {
      multi[i] = static_cast<int>(rest % shape[i]);
      rest /= shape[i];
      w *= weight[i][multi[i]];
    }
    integral += field.theta[n] * w;
  }
  return integral / grid.volume();
}

void add_constant(PotentialField& field, double c) {
  check_shape(field);
  const auto shape = field.theta_shape();
  const int d = field.grid.dims();
  for (std::size_t n = 0; n < field.theta.size(); ++n) {
    std::size_t rest = n;
    bool all_value = true;
    for (int i = d - 1; i >= 0 && all_value; --i) {
      all_value = (rest % shape[i]) % 2 == 0;
      rest /= shape[i];
    }
    if (all_value) field.theta[n] += c;
  }
}

PotentialField gauge_fix(PotentialField field) {
  const double mean = potential_mean(field);
  add_constant(field, -mean);
  return field;
}

// ---------------------------------------------------------------------------

const char* to_string(LibraryKind kind) {
  switch (kind) {
    case LibraryKind::hermite:
      return "hermite";
    case LibraryKind::cardinal:
      return "cardinal";
  }
  return "unknown";
}

LibraryKind library_kind_from_string(const std::string& name) {
  if (name == "hermite") return LibraryKind::hermite;
  if (name == "cardinal") return LibraryKind::cardinal;
  throw ConfigError("unknown library kind '" + name + "' (expected hermite or cardinal)");
}

LibraryKind default_library_kind(int /*dims*/) { return LibraryKind::cardinal; }

Library::Library(const GridSpec& grid, LibraryKind kind) : grid_(grid), kind_(kind) {
  const int d = grid.dims();
  sizes_.resize(d);
  coeff_.resize(d);
  for (int i = 0; i < d; ++i) {
    const int m = grid.periodic_nodes(i);
    const double h = grid.spacing(i);
    if (kind == LibraryKind::hermite) {
      sizes_[i] = 2 * m;
      coeff_[i] = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}};
    } else {
      sizes_[i] = m;
      const double s = 0.5 / h;
      // Slots are the cardinal functions of nodes j-1, j, j+1, j+2.
      coeff_[i] = {{{0, -s, 0, 0}, {1, 0, 0, -s}, {0, s, 1, 0}, {0, 0, 0, s}}};
    }
    size_ *= static_cast<std::size_t>(sizes_[i]);
  }
}

int Library::slot_index(int dim, int segment, int slot) const {
  const int m = grid_.periodic_nodes(dim);
  if (kind_ == LibraryKind::hermite) {
    const int node = (segment + slot / 2) % m;
    return 2 * node + slot % 2;
  }
  return ((segment - 1 + slot) % m + m) % m;
}

std::size_t Library::flatten(std::span<const int> multi) const {
  std::size_t index = 0;
  for (int i = 0; i < grid_.dims(); ++i) index = index * sizes_[i] + multi[i];
  return index;
}

std::vector<int> Library::unflatten(std::size_t index) const {
  std::vector<int> multi(grid_.dims());
  for (int i = grid_.dims() - 1; i >= 0; --i) {
    multi[i] = static_cast<int>(index % sizes_[i]);
    index /= sizes_[i];
  }
  return multi;
}

std::vector<double> Library::expand(std::span<const double> coefficients) const {
  if (coefficients.size() != size_) throw ConfigError("library expand: coefficient count mismatch");
  if (kind_ == LibraryKind::hermite) return {coefficients.begin(), coefficients.end()};
  const int d = grid_.dims();
  std::vector<double> current(coefficients.begin(), coefficients.end());
  std::vector<int> dims_now = sizes_;
  for (int i = 0; i < d; ++i) {
    const int m = grid_.periodic_nodes(i);
    const double s = 0.5 / grid_.spacing(i);
    std::size_t pre = 1, post = 1;
    for (int k = 0; k < i; ++k) pre *= static_cast<std::size_t>(dims_now[k]);
    for (int k = i + 1; k < d; ++k) post *= static_cast<std::size_t>(dims_now[k]);
    std::vector<double> next(pre * static_cast<std::size_t>(2 * m) * post, 0.0);
    for (std::size_t a = 0; a < pre; ++a) {
      for (int n = 0; n < m; ++n) {
        const auto up = static_cast<std::size_t>((n + 1) % m);
        const auto down = static_cast<std::size_t>((n - 1 + m) % m);
        double* value_row = &next[(a * 2 * m + 2 * n) * post];
        double* deriv_row = &next[(a * 2 * m + 2 * n + 1) * post];
        const double* src_n = &current[(a * m + n) * post];
        const double* src_up = &current[(a * m + up) * post];
        const double* src_down = &current[(a * m + down) * post];
        for (std::size_t b = 0; b < post; ++b) {
          value_row[b] = src_n[b];
          deriv_row[b] = s * (src_up[b] - src_down[b]);
        }
      }
    }
    current = std::move(next);
    dims_now[i] = 2 * m;
  }
  return current;
}

std::vector<double> Library::constant_direction() const {
  std::vector<double> c(size_, 0.0);
  if (kind_ == LibraryKind::cardinal) {
    std::fill(c.begin(), c.end(), 1.0);
    return c;
  }
  for (std::size_t n = 0; n < size_; ++n) {
    const auto multi = unflatten(n);
    bool all_value = true;
    for (int q : multi) all_value = all_value && (q % 2 == 0);
    if (all_value) c[n] = 1.0;
  }
  return c;
}

}  // namespace fpirl
