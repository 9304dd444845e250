#include "run_config.hpp"

namespace fpirl::cli {

ConfigReader::ConfigReader(json config, std::string context) : config_(std::move(config)), context_(std::move(context)) {
  if (!config_.is_object()) throw ConfigError(context_ + ": configuration must be a JSON object");
}

json ConfigReader::raw(const std::string& key) {
  used_.insert(key);
  return has(key) ? config_[key] : json(nullptr);
}

void ConfigReader::finish() const {
  std::string unknown;
  for (const auto& [key, value] : config_.items()) {
    if (!used_.count(key)) unknown += (unknown.empty() ? "'" : ", '") + key + "'";
  }
  if (!unknown.empty()) throw ConfigError(context_ + ": unknown key " + unknown);
}

json load_config(const std::string& path, const json& overrides) {
  json config = json::object();
  if (!path.empty()) {
    try {
      config = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ": invalid JSON: " + e.what());
    }
    if (!config.is_object()) throw ConfigError(path + ": configuration must be a JSON object");
  }
  for (const auto& [key, value] : overrides.items()) config[key] = value;
  return config;
}

std::vector<int> read_nodes(ConfigReader& r, int dims, int fallback) {
  if (r.has("nodes") && r.raw("nodes").is_array()) {
    auto nodes = r.get<std::vector<int>>("nodes", {});
    if (static_cast<int>(nodes.size()) != dims) throw ConfigError(r.context() + ": 'nodes' needs one entry per dimension");
    return nodes;
  }
  const int n = r.get<int>("nodes", fallback);
  return std::vector<int>(dims, n);
}

std::size_t read_memory_guard(ConfigReader& r) {
  const auto mib = r.get<double>("memory_guard_mib", 2048.0);
  if (!(mib > 0.0)) throw ConfigError(r.context() + ": 'memory_guard_mib' must be positive");
  return static_cast<std::size_t>(mib * 1024.0 * 1024.0);
}

namespace {

GroundTruthSpec read_truth(const json& j, std::uint64_t seed, json& echo) {
  GroundTruthSpec spec;
  if (j.is_null()) {
    echo = {{"kind", "analytic"}, {"name", "canonical"}};
    return spec;
  }
  ConfigReader r(j, "truth");
  const auto kind = r.get<std::string>("kind", "analytic");
  if (kind == "analytic") {
    spec.kind = GroundTruthSpec::Kind::analytic;
    spec.analytic = r.get<std::string>("name", "canonical");
  } else if (kind == "sparse") {
    spec.kind = GroundTruthSpec::Kind::sparse;
    spec.sparse.n_active = r.get<std::size_t>("n_active", 3);
    spec.sparse.amplitude_min = r.get<double>("amplitude_min", 0.5);
    spec.sparse.amplitude_max = r.get<double>("amplitude_max", 1.0);
    spec.sparse.library = library_kind_from_string(r.get<std::string>("library", "cardinal"));
    spec.sparse.seed = seed;
  } else if (kind == "file") {
    spec.kind = GroundTruthSpec::Kind::file;
    spec.file = r.require<std::string>("path");
  } else if (kind == "explicit") {
    spec.kind = GroundTruthSpec::Kind::explicit_theta;
    spec.theta = r.require<std::vector<double>>("theta");
  } else {
    throw ConfigError("truth: 'kind' must be analytic, sparse, file or explicit, got '" + kind + "'");
  }
  r.finish();
  echo = r.echo();
  return spec;
}

}  // namespace

BenchmarkConfig read_benchmark(ConfigReader& r, std::uint64_t seed, bool with_nodes) {
  BenchmarkConfig c;
  const int dims = r.get<int>("dims", 4);
  if (dims < 1 || dims > 6) throw ConfigError(r.context() + ": 'dims' must be between 1 and 6");
  const auto lower = r.get<double>("lower", -1.0);
  const auto upper = r.get<double>("upper", 1.0);
  const auto nodes = with_nodes ? read_nodes(r, dims, 9) : std::vector<int>(dims, 3);
  c.grid = build_grid(dims, std::vector<Bounds>(dims, Bounds{lower, upper}), nodes);
  c.state_dims = r.get<int>("state_dims", std::max(1, dims / 2));
  c.beta = r.get<double>("beta", 1.0);
  c.dt = r.get<double>("dt", 0.02);
  c.gamma = r.get<double>("gamma", 0.99);
  c.n_frames = r.get<int>("n_frames", 100);
  c.initial = initial_kind_from_string(r.get<std::string>("initial", "sinusoid"));
  c.policy_initial = r.get<bool>("policy_initial", false);
  c.route = evolution_route_from_string(r.get<std::string>("route", "lumped"));
  c.n_trajectories = r.get<int>("n_trajectories", 10000);
  c.transition.images = r.get<int>("images", 3);
  c.transition.memory_guard = read_memory_guard(r);
  json truth_echo;
  c.truth = read_truth(r.raw("truth"), seed, truth_echo);
  r.set_echo("truth", truth_echo);
  // Trajectories draw from their own substream of the run seed.
  c.seed = splitmix64(seed ^ 0x7472616a65637473ULL);
  return c;
}

VsiOptions read_vsi(ConfigReader& r, std::size_t memory_guard) {
  VsiOptions v;
  v.library = library_kind_from_string(r.get<std::string>("library", "cardinal"));
  v.assembly.quad_order = r.get<int>("quad_order", 3);
  v.assembly.memory_guard = memory_guard;
  v.stepwise.f_threshold = r.get<double>("f_threshold", 4.0);
  if (!(v.stepwise.f_threshold > 0.0)) throw ConfigError(r.context() + ": 'f_threshold' must be positive");
  if (v.assembly.quad_order < 2) throw ConfigError(r.context() + ": 'quad_order' must be >= 2");
  return v;
}

}  // namespace fpirl::cli
