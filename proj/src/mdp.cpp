#include "fpirl/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fpirl/log.hpp"

namespace fpirl {

void check_dense_allocation(std::size_t rows, std::size_t cols, const char* what, std::size_t guard_bytes) {
  const long double bytes = static_cast<long double>(rows) * cols * sizeof(double);
  if (bytes > static_cast<long double>(guard_bytes)) {
    throw MemoryGuardError(std::string("memory guard: ") + what + " needs " +
                           std::to_string(static_cast<double>(bytes / (1 << 20))) + " MiB as a dense " +
                           std::to_string(rows) + " x " + std::to_string(cols) + " matrix, limit is " +
                           std::to_string(guard_bytes >> 20) + " MiB");
  }
}

GridSplit split_grid(const GridSpec& grid, int state_dims) {
  if (state_dims < 1 || state_dims > grid.dims())
    throw ConfigError("state_dims must be between 1 and the grid dimension (" + std::to_string(grid.dims()) + ")");
  GridSplit split;
  split.state_dims = state_dims;
  for (int i = 0; i < grid.dims(); ++i) {
    const auto m = static_cast<std::size_t>(grid.periodic_nodes(i));
    if (i < state_dims) {
      split.n_states *= m;
      split.state_weight *= grid.spacing(i);
    } else {
      split.n_actions *= m;
      split.action_weight *= grid.spacing(i);
    }
  }
  return split;
}

GridSpec state_subgrid(const GridSpec& grid, int state_dims) {
  split_grid(grid, state_dims);
  return build_grid(state_dims, {grid.bounds.begin(), grid.bounds.begin() + state_dims},
                    {grid.nodes_per_dim.begin(), grid.nodes_per_dim.begin() + state_dims});
}

namespace {

double image_sum(double delta, double period, double beta, double dt, int images) {
  double s = 0.0;
  for (int k = -images; k <= images; ++k) {
    const double r = delta + k * period;
    s += std::exp(-beta * r * r / (4.0 * dt));
  }
  return s;
}

void check_transition_inputs(const PotentialField& field, double dt, int images) {
  if (!(dt > 0.0)) throw ConfigError("transition: dt must be positive");
  if (!(field.beta > 0.0)) throw ConfigError("transition: beta must be positive");
  if (images < 0) throw ConfigError("transition: image count must be >= 0");
  for (int i = 0; i < field.grid.dims(); ++i) {
    const double length = field.grid.extent(i);
    const double tail = std::exp(-field.beta * std::pow((images + 0.5) * length, 2) / (4.0 * dt));
    if (tail > 1e-12)
      throw NumericalError("transition: periodic image truncation tail " + std::to_string(tail) +
                           " exceeds 1e-12 in dimension " + std::to_string(i) +
                           "; increase the image count or reduce dt / noise");
  }
}

}  // namespace

double raw_transition_density(const PotentialField& field, double dt, std::span<const double> x,
                              std::span<const double> x_target, int images) {
  check_transition_inputs(field, dt, images);
  const int d = field.grid.dims();
  const auto grad = eval_potential_gradient(field, x);
  double value = std::pow(field.beta / (4.0 * std::numbers::pi * dt), 0.5 * d);
  for (int i = 0; i < d; ++i) {
    const double length = field.grid.extent(i);
    const double delta = minimum_image(x_target[i] - x[i] + grad[i] * dt, length);
    value *= image_sum(delta, length, field.beta, dt, images);
  }
  return value;
}

Matrix lumped_transition(const PotentialField& field, double dt, const TransitionOptions& options) {
  check_transition_inputs(field, dt, options.images);
  const auto& grid = field.grid;
  const int d = grid.dims();
  const std::size_t n = grid.periodic_node_count();
  check_dense_allocation(n, n, "lumped transition", options.memory_guard);
  Matrix t(n, n);
  const double prefactor = std::sqrt(field.beta / (4.0 * std::numbers::pi * dt));
  const double weight = grid.cell_volume();
  std::vector<double> grad(d);
  std::vector<std::vector<double>> kernel(d);
  std::vector<double> row, next;
  for (std::size_t p = 0; p < n; ++p) {
    const auto x = grid.periodic_node_point(p);
    eval_potential_and_gradient(field, x, grad);
    for (int i = 0; i < d; ++i) {
      const double length = grid.extent(i);
      if (std::abs(grad[i] * dt) > 0.5 * length)
        throw NumericalError("transition: drift step |dpsi/dx" + std::to_string(i) + " * dt| = " +
                             std::to_string(std::abs(grad[i] * dt)) +
                             " exceeds half the domain extent; use a smaller dt");
      const int m = grid.periodic_nodes(i);
      kernel[i].resize(m);
      for (int j = 0; j < m; ++j) {
        const double delta = minimum_image(grid.node_coordinate(i, j) - x[i] + grad[i] * dt, length);
        kernel[i][j] = prefactor * image_sum(delta, length, field.beta, dt, options.images);
      }
    }
    row.assign(kernel[0].begin(), kernel[0].end());
    for (int i = 1; i < d; ++i) {
      next.resize(row.size() * kernel[i].size());
      std::size_t k = 0;
      for (double a : row)
        for (double b : kernel[i]) next[k++] = a * b;
      row.swap(next);
    }
    double scale = weight;
    if (options.normalize) {
      double sum = 0.0;
      for (double v : row) sum += v;
      if (!(sum > 0.0)) throw NumericalError("transition: empty row at node " + std::to_string(p));
      scale = 1.0 / sum;
    }
    for (std::size_t c = 0; c < n; ++c) t(p, c) = row[c] * scale;
  }
  return t;
}

Matrix marginalize_transition(const Matrix& t_mp, const GridSpec& grid, int state_dims) {
  const auto split = split_grid(grid, state_dims);
  const std::size_t n = grid.periodic_node_count();
  if (static_cast<std::size_t>(t_mp.rows()) != n || static_cast<std::size_t>(t_mp.cols()) != n)
    throw ConfigError("marginalize_transition: matrix does not match the grid");
  Matrix t = Matrix::Zero(n, split.n_states);
  for (std::size_t x = 0; x < n; ++x) {
    double total = 0.0;
    for (std::size_t s = 0; s < split.n_states; ++s) {
      double acc = 0.0;
      for (std::size_t a = 0; a < split.n_actions; ++a) acc += t_mp(x, s * split.n_actions + a);
      t(x, s) = acc;
      total += acc;
    }
    if (!(total > 0.0)) throw NumericalError("marginalize_transition: empty row");
    t.row(x) /= total;
  }
  return t;
}

Matrix boltzmann_policy(const GridSpec& grid, int state_dims, std::span<const double> q, double beta) {
  const auto split = split_grid(grid, state_dims);
  if (q.size() != grid.periodic_node_count()) throw ConfigError("boltzmann_policy: Q size mismatch");
  if (!(beta > 0.0)) throw ConfigError("boltzmann_policy: beta must be positive");
  Matrix pi(split.n_states, split.n_actions);
  for (std::size_t s = 0; s < split.n_states; ++s) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < split.n_actions; ++a) {
      const double z = beta * q[s * split.n_actions + a];
      if (!std::isfinite(z)) throw NumericalError("boltzmann_policy: non-finite Q at node " + std::to_string(s * split.n_actions + a));
      top = std::max(top, z);
    }
    double sum = 0.0;
    for (std::size_t a = 0; a < split.n_actions; ++a) {
      pi(s, a) = std::exp(beta * q[s * split.n_actions + a] - top);
      sum += pi(s, a);
    }
    pi.row(s) /= sum;
  }
  return pi;
}

std::vector<double> node_values(const PotentialField& field) {
  const auto& grid = field.grid;
  std::vector<double> v(grid.periodic_node_count());
  std::vector<int> dof(grid.dims());
  for (std::size_t p = 0; p < v.size(); ++p) {
    const auto multi = grid.unflatten_periodic(p);
    for (int i = 0; i < grid.dims(); ++i) dof[i] = 2 * multi[i];
    v[p] = field.theta.at(theta_index(grid, dof));
  }
  return v;
}

Matrix boltzmann_policy(const PotentialField& field, int state_dims) {
  auto q = node_values(field);
  for (double& v : q) v = -v;
  return boltzmann_policy(field.grid, state_dims, q, field.beta);
}

Matrix induced_mp_from_mdp(const Matrix& t, const Matrix& policy) {
  const auto n_states = static_cast<std::size_t>(policy.rows());
  const auto n_actions = static_cast<std::size_t>(policy.cols());
  if (static_cast<std::size_t>(t.cols()) != n_states)
    throw ConfigError("induced_mp_from_mdp: transition and policy shapes disagree");
  const auto n = static_cast<std::size_t>(t.rows());
  check_dense_allocation(n, n_states * n_actions, "induced transition");
  Matrix out(n, n_states * n_actions);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t s = 0; s < n_states; ++s)
      for (std::size_t a = 0; a < n_actions; ++a) out(x, s * n_actions + a) = t(x, s) * policy(s, a);
  return out;
}

namespace {

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
}

void check_square(const Matrix& m, Eigen::Index n, const char* what) {
  if (m.rows() != n || m.cols() != n) throw ConfigError(std::string(what) + ": shape mismatch");
}

}  // namespace

Vector inverse_bellman(const Vector& q, const Matrix& t_pi, double gamma) {
  check_gamma(gamma);
  check_square(t_pi, q.size(), "inverse_bellman");
  const double norm = t_pi.cwiseAbs().rowwise().sum().maxCoeff();
  if (gamma * norm >= 1.0)
    throw NumericalError("inverse_bellman: gamma * ||T_pi|| = " + std::to_string(gamma * norm) +
                         " >= 1, the Bellman operator is not invertible");
  return q - gamma * (t_pi * q);
}

FixedPointResult bellman_fixed_point(const Vector& r, const Matrix& t_pi, double gamma, double tol,
                                     int max_iter, const Vector& q0) {
  check_gamma(gamma);
  check_square(t_pi, r.size(), "bellman_fixed_point");
  FixedPointResult out;
  out.q = q0.size() == r.size() ? q0 : Vector::Zero(r.size());
  Vector next(r.size());
  for (int it = 1; it <= max_iter; ++it) {
    next.noalias() = r + gamma * (t_pi * out.q);
    out.residual = (next - out.q).cwiseAbs().maxCoeff();
    out.q.swap(next);
    out.iterations = it;
    if (out.residual <= tol) return out;
  }
  throw NumericalError("bellman_fixed_point: no convergence after " + std::to_string(max_iter) +
                       " iterations (last update " + std::to_string(out.residual) + ")");
}

Vector state_value(const Vector& q, const Matrix& policy) {
  const auto n_states = policy.rows();
  const auto n_actions = policy.cols();
  if (q.size() != n_states * n_actions) throw ConfigError("state_value: shape mismatch");
  Vector v(n_states);
  for (Eigen::Index s = 0; s < n_states; ++s) v(s) = policy.row(s).dot(q.segment(s * n_actions, n_actions));
  return v;
}

double free_energy(const GridSpec& grid, std::span<const double> p, std::span<const double> psi_nodes,
                   double beta) {
  if (p.size() != psi_nodes.size() || p.size() != grid.periodic_node_count())
    throw ConfigError("free_energy: size mismatch");
  if (!(beta > 0.0)) throw ConfigError("free_energy: beta must be positive");
  double energy = 0.0, entropy = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] < -1e-12) throw NumericalError("free_energy: negative density " + std::to_string(p[k]));
    const double v = std::max(p[k], 0.0);
    energy += psi_nodes[k] * v;
    if (v > 0.0) entropy += v * std::log(v);
  }
  return grid.cell_volume() * (energy + entropy / beta);
}

double free_energy(std::span<const double> p, const PotentialField& field) {
  return free_energy(field.grid, p, node_values(field), field.beta);
}

GibbsDensity gibbs_stationary(const PotentialField& field, int state_dims) {
  const auto& grid = field.grid;
  const auto split = split_grid(grid, state_dims);
  const auto psi = node_values(field);
  const double lowest = *std::min_element(psi.begin(), psi.end());
  GibbsDensity g;
  g.density.resize(psi.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < psi.size(); ++k) {
    g.density[k] = std::exp(-field.beta * (psi[k] - lowest));
    sum += g.density[k];
  }
  const double z_scaled = sum * grid.cell_volume();
  for (double& v : g.density) v /= z_scaled;
  g.log_z = std::log(z_scaled) - field.beta * lowest;
  g.state_marginal.assign(split.n_states, 0.0);
  for (std::size_t s = 0; s < split.n_states; ++s)
    for (std::size_t a = 0; a < split.n_actions; ++a)
      g.state_marginal[s] += g.density[s * split.n_actions + a] * split.action_weight;
  return g;
}

namespace {

void finish_step(const GridSpec& grid, Vector& p, int step, bool& warned) {
  const double mass = p.sum() * grid.cell_volume();
  if (!(mass > 0.0)) throw NumericalError("evolve_density: mass vanished at step " + std::to_string(step));
  if (std::abs(mass - 1.0) > 1e-6 && !warned) {
    warn("evolve_density: mass drift " + std::to_string(mass - 1.0) + " at step " + std::to_string(step) +
         " before renormalization");
    warned = true;
  }
  p /= mass;
}

DensitySeries start_series(const GridSpec& grid, std::span<const double> p0, int n_steps, double dt) {
  if (p0.size() != grid.periodic_node_count()) throw ConfigError("evolve_density: p0 size mismatch");
  if (n_steps < 0) throw ConfigError("evolve_density: n_steps must be >= 0");
  DensitySeries series{grid, dt, {}};
  series.frames.reserve(n_steps + 1);
  series.frames.emplace_back(p0.begin(), p0.end());
  return series;
}

}  // namespace

DensitySeries evolve_density(const GridSpec& grid, std::span<const double> p0, const Matrix& t_mp,
                             int n_steps, double dt) {
  auto series = start_series(grid, p0, n_steps, dt);
  check_square(t_mp, static_cast<Eigen::Index>(p0.size()), "evolve_density");
  Vector p = Eigen::Map<const Vector>(p0.data(), static_cast<Eigen::Index>(p0.size()));
  Vector next(p.size());
  bool warned = false;
  for (int step = 1; step <= n_steps; ++step) {
    next.noalias() = t_mp.transpose() * p;
    p.swap(next);
    finish_step(grid, p, step, warned);
    series.frames.emplace_back(p.data(), p.data() + p.size());
  }
  return series;
}

DensitySeries evolve_density(const GridSpec& grid, std::span<const double> p0, const Matrix& t,
                             const Matrix& policy, int n_steps, double dt) {
  auto series = start_series(grid, p0, n_steps, dt);
  const auto n = static_cast<Eigen::Index>(p0.size());
  if (t.rows() != n || t.cols() != policy.rows() || policy.rows() * policy.cols() != n)
    throw ConfigError("evolve_density: transition/policy shapes do not match the grid");
  Vector p = Eigen::Map<const Vector>(p0.data(), n);
  Vector marginal(t.cols());
  bool warned = false;
  const auto n_actions = policy.cols();
  for (int step = 1; step <= n_steps; ++step) {
    marginal.noalias() = t.transpose() * p;
    for (Eigen::Index s = 0; s < policy.rows(); ++s)
      for (Eigen::Index a = 0; a < n_actions; ++a) p(s * n_actions + a) = policy(s, a) * marginal(s);
    finish_step(grid, p, step, warned);
    series.frames.emplace_back(p.data(), p.data() + p.size());
  }
  return series;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

TrajectorySet sample_trajectories(const PotentialField& field, std::span<const double> p0,
                                  const SampleOptions& options) {
  const auto& grid = field.grid;
  const int d = grid.dims();
  if (p0.size() != grid.periodic_node_count()) throw ConfigError("sample_trajectories: p0 size mismatch");
  if (options.n_traj < 0 || options.n_steps < 0) throw ConfigError("sample_trajectories: negative counts");
  if (!(options.dt > 0.0) || !(field.beta > 0.0)) throw ConfigError("sample_trajectories: need dt, beta > 0");
  std::vector<double> cdf(p0.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < p0.size(); ++k) {
    if (p0[k] < -1e-12) throw ConfigError("sample_trajectories: negative initial density");
    acc += std::max(p0[k], 0.0);
    cdf[k] = acc;
  }
  if (!(acc > 0.0)) throw ConfigError("sample_trajectories: initial density has no mass");

  TrajectorySet set;
  const int sd = options.state_dims > 0 ? options.state_dims : d;
  for (int i = 0; i < d; ++i)
    set.names.push_back(i < sd ? "s" + std::to_string(i + 1) : "a" + std::to_string(i - sd + 1));
  const std::size_t records = static_cast<std::size_t>(options.n_traj) * (options.n_steps + 1);
  set.traj_id.reserve(records);
  set.frame.reserve(records);
  set.coords.reserve(records * d);

  const double noise = std::sqrt(2.0 * options.dt / field.beta);
  std::vector<double> x(d), grad(d);
  for (int id = 0; id < options.n_traj; ++id) {
    std::mt19937_64 rng(splitmix64(options.seed ^ splitmix64(static_cast<std::uint64_t>(id))));
    std::uniform_real_distribution<double> uniform(0.0, acc);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double u = uniform(rng);
    const auto node = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    x = grid.periodic_node_point(std::min(node, cdf.size() - 1));
    set.add(id, 0, x);
    for (int step = 1; step <= options.n_steps; ++step) {
      eval_potential_and_gradient(field, x, grad);
      for (int i = 0; i < d; ++i) x[i] = wrap_coordinate(grid, i, x[i] - grad[i] * options.dt + noise * normal(rng));
      set.add(id, step, x);
    }
  }
  return set;
}

DiscreteMDP build_mdp(const PotentialField& field, double dt, double gamma, int state_dims,
                      const TransitionOptions& options) {
  check_gamma(gamma);
  DiscreteMDP mdp;
  mdp.grid = field.grid;
  mdp.state_dims = state_dims;
  mdp.dt = dt;
  mdp.gamma = gamma;
  mdp.beta = field.beta;
  const std::size_t n = field.grid.periodic_node_count();
  // Two n x n matrices are held at once.
  check_dense_allocation(2 * n, n, "MDP transition matrices", options.memory_guard);
  mdp.t_mp = lumped_transition(field, dt, options);
  mdp.t = marginalize_transition(mdp.t_mp, field.grid, state_dims);
  mdp.policy = boltzmann_policy(field, state_dims);
  mdp.t_pi = induced_mp_from_mdp(mdp.t, mdp.policy);
  const auto psi = node_values(field);
  mdp.q = -Eigen::Map<const Vector>(psi.data(), static_cast<Eigen::Index>(psi.size()));
  mdp.r = inverse_bellman(mdp.q, mdp.t_pi, gamma);
  mdp.v = state_value(mdp.q, mdp.policy);
  return mdp;
}

std::vector<std::filesystem::path> export_mdp(const std::filesystem::path& dir, const DiscreteMDP& mdp,
                                              const json& extra, std::size_t memory_guard) {
  const auto split = split_grid(mdp.grid, mdp.state_dims);
  const double w = mdp.grid.cell_volume();
  json meta = extra;
  meta["grid"] = grid_to_json(mdp.grid);
  meta["state_dims"] = mdp.state_dims;
  meta["dt"] = mdp.dt;
  meta["gamma"] = mdp.gamma;
  meta["beta"] = mdp.beta;
  meta["units"] = "density per unit target volume";
  std::vector<std::filesystem::path> written;
  auto matrix_out = [&](const std::string& name, const Matrix& m, double target_weight, const char* rows,
                        const char* cols) {
    check_dense_allocation(m.rows(), m.cols(), name.c_str(), memory_guard);
    Matrix density = m / target_weight;
    json j = meta;
    j["name"] = name;
    j["row_index"] = rows;
    j["col_index"] = cols;
    const auto path = dir / (name + ".json");
    write_matrix(path, m.rows(), m.cols(), {density.data(), static_cast<std::size_t>(density.size())}, j);
    written.push_back(path);
  };
  matrix_out("transition_mp", mdp.t_mp, w, "lumped node (s, a)", "lumped node (s', a')");
  matrix_out("transition", mdp.t, split.state_weight, "lumped node (s, a)", "state node s'");
  matrix_out("policy", mdp.policy, split.action_weight, "state node s", "action node a");
  const auto state_grid = state_subgrid(mdp.grid, mdp.state_dims);
  auto field_out = [&](const std::string& name, const GridSpec& g, const Vector& v) {
    const auto path = dir / (name + ".json");
    write_node_field(path, g, name, {v.data(), static_cast<std::size_t>(v.size())}, extra);
    written.push_back(path);
  };
  field_out("q", mdp.grid, mdp.q);
  field_out("v", state_grid, mdp.v);
  field_out("reward", mdp.grid, mdp.r);
  return written;
}

}  // namespace fpirl
