#pragma once

// Node-sampled density time series and trajectory data.
//
// Frames are held in the periodic layout (one value per distinct node). The
// FPD file stores the full layout with the seam nodes duplicated.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpirl/io.hpp"
#include "fpirl/mesh.hpp"

namespace fpirl {

struct DensitySeries {
  GridSpec grid;
  double dt = 0.01;
  std::vector<std::vector<double>> frames;  // periodic layout

  std::size_t n_frames() const noexcept { return frames.size(); }
};

/// Integral of a periodic-layout frame (nodal quadrature, exact for the
/// multilinear interpolant on a periodic grid).
double frame_mass(const GridSpec& grid, std::span<const double> frame);

/// Scales a frame to unit mass. Throws NumericalError if the mass is not
/// positive.
void normalize_frame(const GridSpec& grid, std::vector<double>& frame);

/// Renormalizes frames whose mass differs from 1 by more than `tolerance`,
/// with a warning per frame. Returns the number of frames changed.
int renormalize_frames(DensitySeries& series, double tolerance = 1e-3);

/// Per-dimension affine map into (-1, 1): y = (1 - margin)(2(x - lo)/(hi - lo) - 1).
struct Rescale {
  std::vector<double> lo;
  std::vector<double> hi;
  double margin = 0.0;

  double forward(int i, double x) const;
  double inverse(int i, double y) const;
};

struct TrajectorySet {
  std::vector<std::string> names;  // one per coordinate column
  std::vector<std::int64_t> traj_id;
  std::vector<int> frame;
  std::vector<double> coords;  // records x dims, row-major
  std::optional<Rescale> rescale;

  int dims() const noexcept { return static_cast<int>(names.size()); }
  std::size_t size() const noexcept { return traj_id.size(); }
  std::span<const double> point(std::size_t r) const {
    return {coords.data() + r * names.size(), names.size()};
  }
  void add(std::int64_t id, int frame_index, std::span<const double> x);
};

/// Applies the affine map with bounds (lo, hi) per dimension. Throws
/// ConfigError for lo >= hi or non-finite input.
TrajectorySet rescale_trajectories(const TrajectorySet& raw, std::vector<double> lo,
                                   std::vector<double> hi, double margin = 0.0);
/// Undoes a stored rescale.
TrajectorySet inverse_rescale(const TrajectorySet& scaled);

/// Cloud-in-cell deposition per frame, normalized to unit mass. Frames run
/// from 0 to the largest frame index present. Throws ConfigError naming an
/// empty frame or listing samples outside the grid bounds.
DensitySeries estimate_density(const TrajectorySet& trajs, const GridSpec& grid, double dt);

struct ResidualInstants {
  std::vector<std::vector<double>> midpoint;  // (p_m + p_{m+1}) / 2
  std::vector<std::vector<double>> dpdt;      // (p_{m+1} - p_m) / dt
};

/// Midpoint pairing of consecutive frames. Throws ConfigError for n < 2.
ResidualInstants time_derivative_frames(const DensitySeries& series);

void write_density(const std::filesystem::path& manifest, const DensitySeries& series,
                   const json& extra = json::object());

struct DensityReadOptions {
  double mass_tolerance = 1e-3;  // warn above this defect; data is preserved
};

/// Validates sizes, rejects values below -1e-12, warns on mass defects.
DensitySeries read_density(const std::filesystem::path& manifest, const DensityReadOptions& options = {},
                           json* manifest_out = nullptr);

/// CSV with header `traj_id,frame,<names...>`. Throws ConfigError naming
/// the offending line.
TrajectorySet read_trajectories_csv(const std::filesystem::path& path);
void write_trajectories_csv(const std::filesystem::path& path, const TrajectorySet& trajs);

/// Total variation distance 0.5 * sum |p - q| * cell volume.
double total_variation(const GridSpec& grid, std::span<const double> p, std::span<const double> q);

}  // namespace fpirl
