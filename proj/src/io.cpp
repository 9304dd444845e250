#include "fpirl/io.hpp"

#include <atomic>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "fpirl/error.hpp"

namespace fpirl {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "payload I/O assumes a little-endian host");

json grid_to_json(const GridSpec& grid) {
  json bounds = json::array();
  for (const auto& b : grid.bounds) bounds.push_back({b[0], b[1]});
  return json{{"dims", grid.dims()},
              {"bounds", bounds},
              {"nodes_per_dim", grid.nodes_per_dim},
              {"periodic", grid.periodic}};
}

GridSpec grid_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("grid: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "dims" && key != "bounds" && key != "nodes_per_dim" && key != "periodic")
      throw ConfigError("grid: unknown key '" + key + "'");
  }
  try {
    const int dims = j.at("dims").get<int>();
    std::vector<Bounds> bounds;
    for (const auto& b : j.at("bounds")) {
      if (b.size() != 2) throw ConfigError("grid.bounds: each entry must be [a, b]");
      bounds.push_back({b[0].get<double>(), b[1].get<double>()});
    }
    auto nodes = j.at("nodes_per_dim").get<std::vector<int>>();
    if (j.contains("periodic") && !j.at("periodic").get<bool>())
      throw ConfigError("grid.periodic: only periodic grids are supported");
    return build_grid(dims, std::move(bounds), std::move(nodes));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  static std::atomic<unsigned> counter{0};
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp, ec);
      throw IoError("write failed for " + path.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw IoError("cannot rename into " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  const auto text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_f64le(const fs::path& path, std::span<const double> values) {
  std::string bytes(values.size_bytes(), '\0');
  if (!values.empty()) std::memcpy(bytes.data(), values.data(), values.size_bytes());
  write_file_atomic(path, bytes);
}

std::vector<double> read_f64le(const fs::path& path, std::size_t expected) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw IoError("cannot stat payload " + path.string() + ": " + ec.message());
  if (size != expected * sizeof(double))
    throw IoError("payload size mismatch in " + path.string() + ": manifest implies " +
                  std::to_string(expected * sizeof(double)) + " bytes, file has " +
                  std::to_string(size));
  std::vector<double> values(expected);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("short read from " + path.string());
  return values;
}

fs::path payload_path_for(const fs::path& manifest) {
  fs::path p = manifest;
  p.replace_extension(".bin");
  return p;
}

fs::path resolve_payload(const fs::path& manifest, const json& j) {
  if (!j.contains("payload") || !j["payload"].is_string())
    throw IoError(manifest.string() + ": missing \"payload\" entry");
  return manifest.parent_path() / j["payload"].get<std::string>();
}

void require_format(const json& j, const std::string& format, int version, const fs::path& path) {
  if (!j.is_object() || j.value("format", std::string{}) != format)
    throw IoError(path.string() + ": not a '" + format + "' manifest");
  if (j.value("version", -1) != version)
    throw IoError(path.string() + ": unsupported " + format + " version");
  if (j.value("dtype", std::string{"f64le"}) != "f64le")
    throw IoError(path.string() + ": unsupported dtype");
}

namespace {

json with_extra(json base, const json& extra) {
  for (const auto& [key, value] : extra.items()) base[key] = value;
  return base;
}

}  // namespace

void write_potential(const fs::path& manifest, const PotentialField& field, const json& extra) {
  if (field.theta.size() != theta_size(field.grid)) throw ConfigError("write_potential: theta shape mismatch");
  const auto payload = payload_path_for(manifest);
  json j{{"format", "fpf"},
         {"version", 1},
         {"grid", grid_to_json(field.grid)},
         {"beta", field.beta},
         {"theta_shape", field.theta_shape()},
         {"dof_order", "per node value then derivative; row-major, last dimension fastest"},
         {"dtype", "f64le"},
         {"payload", payload.filename().string()}};
  write_f64le(payload, field.theta);
  write_json(manifest, with_extra(std::move(j), extra));
}

PotentialField read_potential(const fs::path& manifest, json* manifest_out) {
  const auto j = read_json(manifest);
  require_format(j, "fpf", 1, manifest);
  PotentialField field;
  try {
    field.grid = grid_from_json(j.at("grid"));
    field.beta = j.at("beta").get<double>();
    if (j.at("theta_shape").get<std::vector<int>>() != field.theta_shape())
      throw IoError(manifest.string() + ": theta_shape does not match the grid");
  } catch (const json::exception& e) {
    throw IoError(manifest.string() + ": " + e.what());
  }
  field.theta = read_f64le(resolve_payload(manifest, j), theta_size(field.grid));
  if (manifest_out) *manifest_out = j;
  return field;
}

void write_matrix(const fs::path& manifest, std::size_t rows, std::size_t cols,
                  std::span<const double> data, const json& extra) {
  if (data.size() != rows * cols) throw ConfigError("write_matrix: size mismatch");
  const auto payload = payload_path_for(manifest);
  json j{{"format", "fpm"},
         {"version", 1},
         {"rows", rows},
         {"cols", cols},
         {"layout", "row-major"},
         {"dtype", "f64le"},
         {"payload", payload.filename().string()}};
  write_f64le(payload, data);
  write_json(manifest, with_extra(std::move(j), extra));
}

std::vector<double> read_matrix(const fs::path& manifest, std::size_t* rows, std::size_t* cols,
                                json* manifest_out) {
  const auto j = read_json(manifest);
  require_format(j, "fpm", 1, manifest);
  const auto r = j.at("rows").get<std::size_t>();
  const auto c = j.at("cols").get<std::size_t>();
  auto data = read_f64le(resolve_payload(manifest, j), r * c);
  if (rows) *rows = r;
  if (cols) *cols = c;
  if (manifest_out) *manifest_out = j;
  return data;
}

void write_node_field(const fs::path& manifest, const GridSpec& grid, const std::string& name,
                      std::span<const double> values, const json& extra) {
  std::size_t expected = 1;
  for (int i = 0; i < grid.dims(); ++i) expected *= static_cast<std::size_t>(grid.periodic_nodes(i));
  if (values.size() != expected) throw ConfigError("write_node_field: size mismatch for " + name);
  const auto payload = payload_path_for(manifest);
  json j{{"format", "fpn"},
         {"version", 1},
         {"grid", grid_to_json(grid)},
         {"name", name},
         {"layout", "periodic nodes, row-major"},
         {"dtype", "f64le"},
         {"payload", payload.filename().string()}};
  write_f64le(payload, values);
  write_json(manifest, with_extra(std::move(j), extra));
}

std::vector<double> read_node_field(const fs::path& manifest, GridSpec* grid, json* manifest_out) {
  const auto j = read_json(manifest);
  require_format(j, "fpn", 1, manifest);
  const auto g = grid_from_json(j.at("grid"));
  auto values = read_f64le(resolve_payload(manifest, j), g.periodic_node_count());
  if (grid) *grid = g;
  if (manifest_out) *manifest_out = j;
  return values;
}

std::string file_digest(const fs::path& path) {
  const auto bytes = read_file(path);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fpirl
