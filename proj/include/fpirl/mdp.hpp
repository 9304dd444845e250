#pragma once

// MDP side of the potential/value correspondence: lumped Gaussian transition,
// marginal transition, Boltzmann policy, Bellman operators, free energy,
// Gibbs density, density evolution and SDE sampling.
//
// Matrices are stored in probability-mass form: entry (x, x') is the
// transition density times the target node weight, so every row sums to 1.
// Dividing by the target weight recovers the per-volume density. The first
// `state_dims` grid dimensions are states, the rest actions; with row-major
// flattening a lumped node index is s * n_actions + a.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fpirl/density.hpp"
#include "fpirl/error.hpp"
#include "fpirl/hermite.hpp"
#include "fpirl/io.hpp"
#include "fpirl/mesh.hpp"

namespace fpirl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Raised when a dense allocation would exceed the configured guard.
class MemoryGuardError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

inline constexpr std::size_t kDefaultMemoryGuard = std::size_t{2} << 30;  // 2 GiB

/// Throws MemoryGuardError if rows x cols doubles exceed `guard_bytes`.
void check_dense_allocation(std::size_t rows, std::size_t cols, const char* what,
                            std::size_t guard_bytes = kDefaultMemoryGuard);

/// Splits a lumped grid into its state and action sub-grids.
struct GridSplit {
  int state_dims = 0;
  std::size_t n_states = 1;   // periodic state nodes
  std::size_t n_actions = 1;  // periodic action nodes
  double state_weight = 1.0;  // product of state spacings
  double action_weight = 1.0;
};
GridSplit split_grid(const GridSpec& grid, int state_dims);
GridSpec state_subgrid(const GridSpec& grid, int state_dims);

struct TransitionOptions {
  int images = 3;          // periodic images per side and dimension
  bool normalize = true;   // renormalize rows to exactly 1
  std::size_t memory_guard = kDefaultMemoryGuard;
};

/// Pre-normalization transition density (beta/4 pi dt)^{d/2} exp(-beta |x - x' - grad psi(x) dt|^2 / 4dt)
/// between two points, with periodic images.
double raw_transition_density(const PotentialField& field, double dt, std::span<const double> x,
                              std::span<const double> x_target, int images = 3);

/// Lumped state-action transition on the periodic nodes (mass form). Throws
/// NumericalError if the drift step exceeds half the domain extent or the
/// image truncation tail exceeds 1e-12.
Matrix lumped_transition(const PotentialField& field, double dt, const TransitionOptions& options = {});

/// Row-normalized marginal T(s' | s, a), n_nodes x n_states (mass form).
Matrix marginalize_transition(const Matrix& t_mp, const GridSpec& grid, int state_dims);

/// Boltzmann policy pi(a | s) proportional to exp(beta Q), n_states x n_actions (mass form).
Matrix boltzmann_policy(const GridSpec& grid, int state_dims, std::span<const double> q, double beta);
/// Same with Q = -psi at the nodes.
Matrix boltzmann_policy(const PotentialField& field, int state_dims);

/// T'((s', a') | (s, a)) = pi(a' | s') T(s' | s, a).
Matrix induced_mp_from_mdp(const Matrix& t, const Matrix& policy);

/// psi at the periodic nodes (the value dofs).
std::vector<double> node_values(const PotentialField& field);

/// R = Q - gamma T_pi Q. Throws ConfigError unless 0 <= gamma < 1 and
/// NumericalError if gamma * ||T_pi||_inf >= 1.
Vector inverse_bellman(const Vector& q, const Matrix& t_pi, double gamma);

struct FixedPointResult {
  Vector q;
  int iterations = 0;
  double residual = 0.0;
};

/// Iterates q <- r + gamma T_pi q from q0 (zero if empty) until the sup-norm
/// update is <= tol. Throws NumericalError after max_iter iterations.
FixedPointResult bellman_fixed_point(const Vector& r, const Matrix& t_pi, double gamma, double tol = 1e-12,
                                     int max_iter = 100000, const Vector& q0 = Vector());

/// V(s) = sum_a pi(a | s) Q(s, a) (policy in mass form).
Vector state_value(const Vector& q, const Matrix& policy);

/// F = int psi p + beta^{-1} int p log p by nodal quadrature.
double free_energy(const GridSpec& grid, std::span<const double> p, std::span<const double> psi_nodes,
                   double beta);
double free_energy(std::span<const double> p, const PotentialField& field);

struct GibbsDensity {
  std::vector<double> density;        // lumped, unit mass
  std::vector<double> state_marginal; // unit mass over the state sub-grid
  double log_z = 0.0;                 // log of the partition function
};
GibbsDensity gibbs_stationary(const PotentialField& field, int state_dims);

/// p_{t+1} = T_mp^T p_t with renormalization; returns n_steps + 1 frames.
DensitySeries evolve_density(const GridSpec& grid, std::span<const double> p0, const Matrix& t_mp,
                             int n_steps, double dt);
/// p_{t+1}(s', a') = pi(a' | s') sum_x p_t(x) T(s' | x).
DensitySeries evolve_density(const GridSpec& grid, std::span<const double> p0, const Matrix& t,
                             const Matrix& policy, int n_steps, double dt);

struct SampleOptions {
  int n_traj = 1000;
  int n_steps = 20;
  double dt = 0.01;
  std::uint64_t seed = 0;
  int state_dims = 0;
};

/// Euler-Maruyama paths of dX = -grad psi dt + sqrt(2 / beta) dW, wrapped
/// periodically. Initial points are drawn from the nodes with probability
/// proportional to p0 mass. Each trajectory has its own seeded substream.
TrajectorySet sample_trajectories(const PotentialField& field, std::span<const double> p0,
                                  const SampleOptions& options);

/// splitmix64 finalizer, used to derive substream seeds.
std::uint64_t splitmix64(std::uint64_t x);

struct DiscreteMDP {
  GridSpec grid;
  int state_dims = 0;
  double dt = 0.01;
  double gamma = 0.99;
  double beta = 1.0;
  Matrix t_mp;    // lumped transition
  Matrix t;       // marginal transition, nodes x states
  Matrix policy;  // states x actions
  Matrix t_pi;    // induced lumped transition pi(a'|s') T(s'|s,a)
  Vector q;
  Vector v;
  Vector r;
};

/// Builds every MDP component from a potential (Q = -psi).
DiscreteMDP build_mdp(const PotentialField& field, double dt, double gamma, int state_dims,
                      const TransitionOptions& options = {});

/// Writes transition_mp, transition, policy, q, v and reward files into
/// `dir` (matrices as per-volume densities). Returns the written manifests.
std::vector<std::filesystem::path> export_mdp(const std::filesystem::path& dir, const DiscreteMDP& mdp,
                                              const json& extra = json::object(),
                                              std::size_t memory_guard = kDefaultMemoryGuard);

}  // namespace fpirl
