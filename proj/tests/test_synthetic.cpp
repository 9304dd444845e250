#include <doctest.h>

#include <cmath>
#include <random>

#include "fpirl/error.hpp"
#include "fpirl/evaluation.hpp"
#include "fpirl/synthetic.hpp"
#include "fpirl/vsi.hpp"
#include "toys.hpp"

using namespace fpirl;
namespace fs = std::filesystem;

namespace {

const fs::path kData = FPIRL_DATA_DIR;

BenchmarkConfig small_config() {
  BenchmarkConfig c;
  c.grid = cube_grid(2, 9);
  c.state_dims = 1;
  c.beta = 1.0;
  c.dt = 0.02;
  c.n_frames = 20;
  c.route = EvolutionRoute::lumped;
  return c;
}

}  // namespace

TEST_CASE("analytic potential derivatives") {
  const auto psi = canonical_potential(4);
  std::mt19937_64 rng(30);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(4);
    for (auto& v : x) v = u(rng);
    std::vector<double> g(4);
    psi.gradient(x, g);
    for (int i = 0; i < 4; ++i) {
      auto p = x, m = x;
      p[i] += h;
      m[i] -= h;
      CHECK(std::abs((psi.value(p) - psi.value(m)) / (2 * h) - g[i]) < 1e-8);
      CHECK(psi.derivative(x, 1u << i) == g[i]);
    }
  }
  const auto back = analytic_from_json(analytic_to_json(psi));
  CHECK(analytic_to_json(back) == analytic_to_json(psi));
  CHECK_THROWS_AS(canonical_potential(3), ConfigError);
}

TEST_CASE("canonical interpolant matches the frozen coefficients and probes") {
  const auto grid = cube_grid(4, 9);
  const auto truth = make_ground_truth(grid, GroundTruthSpec{}, 1.0);
  const auto frozen = read_potential(kData / "canonical_d4_n9.fpf");
  REQUIRE(frozen.theta.size() == truth.field.theta.size());
  double worst = 0.0;
  for (std::size_t n = 0; n < frozen.theta.size(); ++n) worst = std::max(worst, std::abs(frozen.theta[n] - truth.field.theta[n]));
  CHECK(worst <= 1e-14);

  // The file spec reads the same coefficients and evaluates to the probes.
  GroundTruthSpec spec;
  spec.kind = GroundTruthSpec::Kind::file;
  spec.file = kData / "canonical_d4_n9.fpf";
  const auto from_file = make_ground_truth(grid, spec, 1.0);
  const auto probes = read_json(kData / "canonical_d4_n9_probes.json");
  for (const auto& p : probes.at("probes")) {
    const auto x = p.at("x").get<std::vector<double>>();
    CHECK(std::abs(eval_potential(from_file.field, x) - p.at("value").get<double>()) <= 1e-12);
    const auto g = eval_potential_gradient(from_file.field, x);
    const auto expected = p.at("gradient").get<std::vector<double>>();
    for (int i = 0; i < 4; ++i) CHECK(std::abs(g[i] - expected[i]) <= 1e-11);
  }
}

TEST_CASE("make_ground_truth") {
  const auto grid = cube_grid(2, 5);
  GroundTruthSpec zeros;
  zeros.kind = GroundTruthSpec::Kind::explicit_theta;
  zeros.theta.assign(theta_size(grid), 0.0);
  const auto z = make_ground_truth(grid, zeros, 1.0);
  CHECK(eval_potential(z.field, std::vector<double>{0.3, 0.4}) == 0.0);

  GroundTruthSpec sparse;
  sparse.kind = GroundTruthSpec::Kind::sparse;
  sparse.sparse.seed = 31;
  sparse.sparse.amplitude_min = sparse.sparse.amplitude_max = 1.0;
  const auto a = make_ground_truth(grid, sparse, 1.0), b = make_ground_truth(grid, sparse, 1.0);
  CHECK(a.field.theta == b.field.theta);
  CHECK(a.active == b.active);
  CHECK(a.active.size() == 3);
  for (auto k : a.active) CHECK(std::abs(a.library_coefficients[k]) == 1.0);
  sparse.sparse.seed = 32;
  CHECK(make_ground_truth(grid, sparse, 1.0).field.theta != a.field.theta);

  GroundTruthSpec wrong = zeros;
  wrong.theta.pop_back();
  CHECK_THROWS_AS(make_ground_truth(grid, wrong, 1.0), ConfigError);
  GroundTruthSpec empty;
  empty.kind = GroundTruthSpec::Kind::explicit_theta;
  CHECK_THROWS_AS(make_ground_truth(grid, empty, 1.0), ConfigError);
  CHECK_THROWS_AS(make_ground_truth(grid, zeros, 0.0), ConfigError);
}

TEST_CASE("initial density") {
  // h = 1/8 puts nodes both on the zeros and on the peaks of sin(4 pi s).
  const auto grid = cube_grid(2, 17);
  const auto p = initial_density(grid);
  CHECK(frame_mass(grid, p) == doctest::Approx(1.0).epsilon(1e-14));
  const auto at = [&](double s1, double s2) {
    for (std::size_t k = 0; k < p.size(); ++k) {
      const auto x = grid.periodic_node_point(k);
      if (std::abs(x[0] - s1) < 1e-12 && std::abs(x[1] - s2) < 1e-12) return p[k];
    }
    return -1.0;
  };
  const double top = at(0.0, 0.0);
  CHECK(*std::max_element(p.begin(), p.end()) == doctest::Approx(top).epsilon(1e-14));
  CHECK(at(0.125, 0.125) / top == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(at(0.125, 0.0) / top == doctest::Approx(0.5).epsilon(1e-14));

  const auto u = initial_density(grid, InitialKind::uniform);
  for (double v : u) CHECK(v == doctest::Approx(0.25));
  CHECK(initial_kind_from_string("uniform") == InitialKind::uniform);
  CHECK_THROWS_AS(initial_kind_from_string("gaussian"), ConfigError);
}

TEST_CASE("condition_on_policy keeps the state marginal") {
  const auto field = fpirl::test::toy_field(0.5, 9);
  const auto grid = field.grid;
  const auto p0 = initial_density(grid);
  const auto pi = boltzmann_policy(field, 1);
  const auto q = condition_on_policy(grid, p0, pi);
  const auto split = split_grid(grid, 1);
  for (std::size_t s = 0; s < split.n_states; ++s) {
    double a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < split.n_actions; ++k) {
      a += p0[s * split.n_actions + k];
      b += q[s * split.n_actions + k];
    }
    CHECK(a == doctest::Approx(b).epsilon(1e-13));
  }
}

TEST_CASE("generate_benchmark: pure diffusion flattens the density") {
  auto c = small_config();
  c.grid = cube_grid(2, 17);
  c.truth.kind = GroundTruthSpec::Kind::explicit_theta;
  c.truth.theta.assign(theta_size(c.grid), 0.0);
  const auto b = generate_benchmark(c);
  const auto u = fpirl::test::uniform_density(c.grid);
  CHECK(total_variation(c.grid, b.data.frames.back(), u) < total_variation(c.grid, b.data.frames.front(), u));
  CHECK(b.data.n_frames() == static_cast<std::size_t>(c.n_frames + 1));
}

TEST_CASE("generate_benchmark is deterministic and writes its files") {
  auto c = small_config();
  c.n_trajectories = 50;
  const auto a = generate_benchmark(c), b = generate_benchmark(c);
  CHECK(a.data.frames == b.data.frames);
  CHECK(a.trajectories->coords == b.trajectories->coords);

  const auto dir = fpirl::test::scratch_dir("benchmark");
  const auto manifest = write_benchmark(dir, a, json{{"note", "unit"}});
  const auto j = read_json(manifest);
  CHECK(j.at("format") == "fpirl-benchmark");
  CHECK(j.at("config").at("note") == "unit");
  for (const char* f : {"density.fpd", "truth.fpf", "p0.fpn", "trajectories.csv", "mdp/reward.json"})
    CHECK(fs::exists(dir / f));
  const auto again = read_density(dir / "density.fpd");
  CHECK(again.frames == a.data.frames);
  json truth_manifest;
  read_potential(dir / "truth.fpf", &truth_manifest);
  CHECK(analytic_to_json(analytic_from_json(truth_manifest.at("analytic"))) == analytic_to_json(*a.truth.analytic));
}

TEST_CASE("sparse benchmark on the galerkin route is recovered exactly") {
  auto c = small_config();
  c.n_frames = 60;
  c.dt = 0.01;
  c.initial = InitialKind::uniform;
  c.route = EvolutionRoute::galerkin;
  c.truth.kind = GroundTruthSpec::Kind::sparse;
  c.truth.sparse.seed = 33;
  c.truth.sparse.library = LibraryKind::cardinal;
  const auto b = generate_benchmark(c);
  const auto fit = run_vsi(b.data);
  CHECK(fit.active_set == b.truth.active);
  const auto m = support_metrics(fit.active_set, b.truth.active);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(fit.beta_inv == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("evolution routes") {
  CHECK(evolution_route_from_string(to_string(EvolutionRoute::galerkin)) == EvolutionRoute::galerkin);
  CHECK_THROWS_AS(evolution_route_from_string("euler"), ConfigError);
  const auto b = generate_benchmark(small_config());
  CHECK_THROWS_AS(evolve_with_mdp(b.mdp, b.p0, EvolutionRoute::galerkin, 2), ConfigError);
}
