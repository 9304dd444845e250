#pragma once

// Template definitions for hermite.hpp.

#include <utility>

namespace fpirl {

template <typename MixedDerivative>
PotentialField hermite_interpolate(const GridSpec& grid, double beta, MixedDerivative&& derivative) {
  PotentialField field = zero_potential(grid, beta);
  const int d = grid.dims();
  const unsigned masks = 1U << d;
  std::vector<int> dof(d);
  for (std::size_t p = 0; p < grid.periodic_node_count(); ++p) {
    const auto multi = grid.unflatten_periodic(p);
    const auto x = grid.periodic_node_point(p);
    for (unsigned mask = 0; mask < masks; ++mask) {
      for (int i = 0; i < d; ++i) dof[i] = 2 * multi[i] + static_cast<int>((mask >> i) & 1U);
      field.theta[theta_index(grid, dof)] = derivative(std::as_const(x), mask);
    }
  }
  return field;
}

}  // namespace fpirl
