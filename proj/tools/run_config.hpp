#pragma once

// JSON run configuration with flag overrides. Every key read is echoed back
// with its resolved value; keys never read are rejected.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fpirl/error.hpp"
#include "fpirl/io.hpp"
#include "fpirl/synthetic.hpp"
#include "fpirl/vsi.hpp"

namespace fpirl::cli {

class ConfigReader {
 public:
  ConfigReader(json config, std::string context);

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    used_.insert(key);
    if (!config_.contains(key) || config_[key].is_null()) {
      echo_[key] = fallback;
      return fallback;
    }
    try {
      T value = config_[key].get<T>();
      echo_[key] = value;
      return value;
    } catch (const json::exception&) {
      throw ConfigError(context_ + ": key '" + key + "' has the wrong type");
    }
  }

  /// Required key; throws ConfigError naming it when absent.
  template <typename T>
  T require(const std::string& key) {
    if (!config_.contains(key) || config_[key].is_null()) throw ConfigError(context_ + ": missing key '" + key + "'");
    return get<T>(key, T{});
  }

  bool has(const std::string& key) const { return config_.contains(key) && !config_[key].is_null(); }

  /// Nested object read by its own reader; its echo is stored under `key`.
  json raw(const std::string& key);
  void set_echo(const std::string& key, json value) { echo_[key] = std::move(value); }

  /// Throws ConfigError listing keys that were never read.
  void finish() const;
  const json& echo() const noexcept { return echo_; }
  const std::string& context() const noexcept { return context_; }

 private:
  json config_;
  json echo_ = json::object();
  std::set<std::string> used_;
  std::string context_;
};

/// Loads `path` (empty: {}) and applies the overrides (flags win).
json load_config(const std::string& path, const json& overrides);

std::vector<int> read_nodes(ConfigReader& r, int dims, int fallback);

struct BenchmarkSettings {
  BenchmarkConfig config;
  std::uint64_t seed = 0;
};

/// Reads the synthetic benchmark keys shared by synth and converge. With
/// `with_nodes` false the grid node count is left at 3 for the caller.
BenchmarkConfig read_benchmark(ConfigReader& r, std::uint64_t seed, bool with_nodes);

VsiOptions read_vsi(ConfigReader& r, std::size_t memory_guard);

std::size_t read_memory_guard(ConfigReader& r);

}  // namespace fpirl::cli
