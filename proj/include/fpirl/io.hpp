#pragma once

// Shared file plumbing: JSON manifests with raw little-endian f64 payloads,
// written atomically (temp file + rename).
//
// A manifest `name.json` refers to its payload by the "payload" key, a file
// name relative to the manifest's directory (by default `name.bin`).

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fpirl/hermite.hpp"
#include "fpirl/mesh.hpp"

namespace fpirl {

using json = nlohmann::ordered_json;

json grid_to_json(const GridSpec& grid);
/// Throws ConfigError naming the offending key.
GridSpec grid_from_json(const json& j);

/// Writes `bytes` to `path` via a temporary sibling and rename. Creates the
/// parent directory. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

void write_f64le(const std::filesystem::path& path, std::span<const double> values);
/// Reads exactly `expected` doubles; IoError on a size mismatch.
std::vector<double> read_f64le(const std::filesystem::path& path, std::size_t expected);

/// Payload path `name.bin` next to manifest `name.json`.
std::filesystem::path payload_path_for(const std::filesystem::path& manifest);
/// Resolves the manifest's "payload" entry.
std::filesystem::path resolve_payload(const std::filesystem::path& manifest, const json& j);

/// Checks "format" and "version"; throws IoError otherwise.
void require_format(const json& j, const std::string& format, int version,
                    const std::filesystem::path& path);

// PotentialField: {"format":"fpf","version":1,"grid","beta","theta_shape",
// "dof_order","dtype","payload", ...extra}.
void write_potential(const std::filesystem::path& manifest, const PotentialField& field,
                     const json& extra = json::object());
PotentialField read_potential(const std::filesystem::path& manifest, json* manifest_out = nullptr);

// Dense row-major matrix: {"format":"fpm","version":1,"rows","cols",...}.
void write_matrix(const std::filesystem::path& manifest, std::size_t rows, std::size_t cols,
                  std::span<const double> data, const json& extra = json::object());
std::vector<double> read_matrix(const std::filesystem::path& manifest, std::size_t* rows,
                                std::size_t* cols, json* manifest_out = nullptr);

// Node field on the periodic layout: {"format":"fpn","version":1,"grid","name",...}.
void write_node_field(const std::filesystem::path& manifest, const GridSpec& grid,
                      const std::string& name, std::span<const double> values,
                      const json& extra = json::object());
std::vector<double> read_node_field(const std::filesystem::path& manifest, GridSpec* grid = nullptr,
                                    json* manifest_out = nullptr);

/// Lower-case hex FNV-1a 64 digest of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace fpirl
