#include "fpirl/density.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fpirl/error.hpp"
#include "fpirl/log.hpp"

namespace fpirl {

namespace fs = std::filesystem;

double frame_mass(const GridSpec& grid, std::span<const double> frame) {
  return integrate_periodic(grid, frame);
}

void normalize_frame(const GridSpec& grid, std::vector<double>& frame) {
  const double mass = frame_mass(grid, frame);
  if (!(mass > 0.0) || !std::isfinite(mass)) throw NumericalError("cannot normalize a frame with mass " + std::to_string(mass));
  for (double& v : frame) v /= mass;
}

int renormalize_frames(DensitySeries& series, double tolerance) {
  int changed = 0;
  for (std::size_t m = 0; m < series.frames.size(); ++m) {
    const double mass = frame_mass(series.grid, series.frames[m]);
    if (std::abs(mass - 1.0) > tolerance) {
      warn("frame " + std::to_string(m) + " has mass " + std::to_string(mass) + "; renormalized");
      normalize_frame(series.grid, series.frames[m]);
      ++changed;
    }
  }
  return changed;
}

double Rescale::forward(int i, double x) const {
  return (1.0 - margin) * (2.0 * (x - lo[i]) / (hi[i] - lo[i]) - 1.0);
}

double Rescale::inverse(int i, double y) const {
  return lo[i] + 0.5 * (y / (1.0 - margin) + 1.0) * (hi[i] - lo[i]);
}

void TrajectorySet::add(std::int64_t id, int frame_index, std::span<const double> x) {
  traj_id.push_back(id);
  frame.push_back(frame_index);
  coords.insert(coords.end(), x.begin(), x.end());
}

TrajectorySet rescale_trajectories(const TrajectorySet& raw, std::vector<double> lo,
                                   std::vector<double> hi, double margin) {
  const int d = raw.dims();
  if (static_cast<int>(lo.size()) != d || static_cast<int>(hi.size()) != d)
    throw ConfigError("rescale: bounds must have one entry per coordinate");
  for (int i = 0; i < d; ++i) {
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || !(lo[i] < hi[i]))
      throw ConfigError("rescale: need finite min < max for column '" + raw.names[i] + "'");
  }
  if (!(margin >= 0.0 && margin < 1.0)) throw ConfigError("rescale: margin must be in [0, 1)");
  TrajectorySet out = raw;
  out.rescale = Rescale{std::move(lo), std::move(hi), margin};
  for (std::size_t r = 0; r < out.size(); ++r) {
    for (int i = 0; i < d; ++i) {
      double& x = out.coords[r * d + i];
      if (!std::isfinite(x))
        throw ConfigError("rescale: non-finite value in record " + std::to_string(r) + ", column '" +
                          raw.names[i] + "'");
      x = out.rescale->forward(i, x);
    }
  }
  return out;
}

TrajectorySet inverse_rescale(const TrajectorySet& scaled) {
  if (!scaled.rescale) throw ConfigError("inverse_rescale: trajectory set carries no rescale map");
  TrajectorySet out = scaled;
  const int d = scaled.dims();
  for (std::size_t r = 0; r < out.size(); ++r)
    for (int i = 0; i < d; ++i) out.coords[r * d + i] = scaled.rescale->inverse(i, out.coords[r * d + i]);
  out.rescale.reset();
  return out;
}

DensitySeries estimate_density(const TrajectorySet& trajs, const GridSpec& grid, double dt) {
  const int d = grid.dims();
  if (trajs.dims() != d)
    throw ConfigError("estimate_density: trajectories have " + std::to_string(trajs.dims()) +
                      " coordinates, grid has " + std::to_string(d) + " dimensions");
  if (trajs.size() == 0) throw ConfigError("estimate_density: no samples");
  int max_frame = 0;
  std::vector<std::string> offenders;
  std::size_t n_out = 0;
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    if (trajs.frame[r] < 0) throw ConfigError("estimate_density: negative frame index");
    max_frame = std::max(max_frame, trajs.frame[r]);
    const auto x = trajs.point(r);
    for (int i = 0; i < d; ++i) {
      if (!std::isfinite(x[i]) || x[i] < grid.lower(i) || x[i] > grid.upper(i)) {
        if (offenders.size() < 10)
          offenders.push_back("traj " + std::to_string(trajs.traj_id[r]) + " frame " +
                              std::to_string(trajs.frame[r]));
        ++n_out;
        break;
      }
    }
  }
  if (n_out > 0) {
    std::string list;
    for (const auto& o : offenders) list += (list.empty() ? "" : ", ") + o;
    throw ConfigError("estimate_density: " + std::to_string(n_out) +
                      " samples outside the grid bounds (" + list + (n_out > offenders.size() ? ", ..." : "") +
                      ")");
  }

  DensitySeries series{grid, dt, std::vector<std::vector<double>>(max_frame + 1)};
  for (auto& f : series.frames) f.assign(grid.periodic_node_count(), 0.0);
  std::vector<std::size_t> counts(max_frame + 1, 0);
  std::vector<int> multi(d);
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    const auto loc = locate(grid, trajs.point(r));
    const auto shape = lagrange_shape_values(loc.xi);
    auto& frame = series.frames[trajs.frame[r]];
    for (std::size_t c = 0; c < shape.size(); ++c) {
      for (int i = 0; i < d; ++i) multi[i] = loc.cell[i] + static_cast<int>((c >> i) & 1U);
      frame[grid.flatten_periodic(multi)] += shape[c];
    }
    ++counts[trajs.frame[r]];
  }
  for (int m = 0; m <= max_frame; ++m) {
    if (counts[m] == 0) throw ConfigError("estimate_density: frame " + std::to_string(m) + " has no samples");
    normalize_frame(grid, series.frames[m]);
  }
  return series;
}

ResidualInstants time_derivative_frames(const DensitySeries& series) {
  if (series.n_frames() < 2) throw ConfigError("time derivative needs at least 2 frames");
  if (!(series.dt > 0.0)) throw ConfigError("time derivative needs dt > 0");
  ResidualInstants out;
  const std::size_t n = series.n_frames() - 1;
  out.midpoint.resize(n);
  out.dpdt.resize(n);
  for (std::size_t m = 0; m < n; ++m) {
    const auto& a = series.frames[m];
    const auto& b = series.frames[m + 1];
    out.midpoint[m].resize(a.size());
    out.dpdt[m].resize(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      out.midpoint[m][k] = 0.5 * (a[k] + b[k]);
      out.dpdt[m][k] = (b[k] - a[k]) / series.dt;
    }
  }
  return out;
}

void write_density(const fs::path& manifest, const DensitySeries& series, const json& extra) {
  const auto& grid = series.grid;
  const std::size_t full = grid.node_count();
  std::vector<double> payload;
  payload.reserve(full * series.n_frames());
  for (const auto& frame : series.frames) {
    if (frame.size() != grid.periodic_node_count()) throw ConfigError("write_density: frame size mismatch");
    const auto expanded = to_full(grid, frame);
    payload.insert(payload.end(), expanded.begin(), expanded.end());
  }
  const auto bin = payload_path_for(manifest);
  json j{{"format", "fpd"},
         {"version", 1},
         {"grid", grid_to_json(grid)},
         {"dt", series.dt},
         {"n_frames", series.n_frames()},
         {"dtype", "f64le"},
         {"layout", "row-major, frame-major"},
         {"payload", bin.filename().string()}};
  for (const auto& [key, value] : extra.items()) j[key] = value;
  write_f64le(bin, payload);
  write_json(manifest, j);
}

DensitySeries read_density(const fs::path& manifest, const DensityReadOptions& options, json* manifest_out) {
  const auto j = read_json(manifest);
  require_format(j, "fpd", 1, manifest);
  DensitySeries series;
  std::size_t n_frames = 0;
  try {
    series.grid = grid_from_json(j.at("grid"));
    series.dt = j.at("dt").get<double>();
    n_frames = j.at("n_frames").get<std::size_t>();
  } catch (const json::exception& e) {
    throw IoError(manifest.string() + ": " + e.what());
  }
  if (j.value("layout", std::string{}) != "row-major, frame-major")
    throw IoError(manifest.string() + ": unsupported layout");
  const auto& grid = series.grid;
  const std::size_t full = grid.node_count();
  const auto payload = read_f64le(resolve_payload(manifest, j), full * n_frames);
  series.frames.resize(n_frames);
  for (std::size_t m = 0; m < n_frames; ++m) {
    std::span<const double> frame(payload.data() + m * full, full);
    for (std::size_t k = 0; k < full; ++k) {
      if (!(frame[k] >= -1e-12))
        throw IoError(manifest.string() + ": frame " + std::to_string(m) + " has invalid value " +
                      std::to_string(frame[k]) + " at node " + std::to_string(k));
    }
    series.frames[m] = to_periodic(grid, frame);
    const double mass = frame_mass(grid, series.frames[m]);
    if (std::abs(mass - 1.0) > options.mass_tolerance)
      warn(manifest.string() + ": frame " + std::to_string(m) + " integrates to " + std::to_string(mass));
  }
  if (manifest_out) *manifest_out = j;
  return series;
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

TrajectorySet read_trajectories_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty file, expected a header");
  ++line_no;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_commas(line);
  if (header.size() < 3 || trim(header[0]) != "traj_id" || trim(header[1]) != "frame")
    throw ConfigError(path.string() + ":1: header must be traj_id,frame,<dims...>");
  TrajectorySet set;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const auto name = trim(header[c]);
    if (name.empty()) throw ConfigError(path.string() + ":1: empty column name");
    set.names.emplace_back(name);
  }
  const int d = set.dims();
  std::vector<double> x(d);
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (static_cast<int>(fields.size()) != d + 2)
      throw ConfigError(where + ": expected " + std::to_string(d + 2) + " fields, found " +
                        std::to_string(fields.size()));
    std::int64_t id = 0;
    int frame = 0;
    if (!parse_number(fields[0], id)) throw ConfigError(where + ": bad traj_id");
    if (!parse_number(fields[1], frame) || frame < 0) throw ConfigError(where + ": bad frame index");
    for (int i = 0; i < d; ++i) {
      if (!parse_number(fields[2 + i], x[i]) || !std::isfinite(x[i]))
        throw ConfigError(where + ": bad value in column '" + set.names[i] + "'");
    }
    set.add(id, frame, x);
  }
  return set;
}

void write_trajectories_csv(const fs::path& path, const TrajectorySet& trajs) {
  std::string out = "traj_id,frame";
  for (const auto& n : trajs.names) out += "," + n;
  out += '\n';
  char buf[32];
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    out += std::to_string(trajs.traj_id[r]);
    out += ',';
    out += std::to_string(trajs.frame[r]);
    for (double v : trajs.point(r)) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      out += buf;
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

double total_variation(const GridSpec& grid, std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ConfigError("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p[k] - q[k]);
  return 0.5 * s * grid.cell_volume();
}

}  // namespace fpirl
