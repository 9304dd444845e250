#include <doctest.h>

#include <cmath>
#include <random>

#include "fpirl/error.hpp"
#include "fpirl/log.hpp"
#include "fpirl/vsi.hpp"
#include "toys.hpp"

using namespace fpirl;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

DensitySeries random_series(const GridSpec& grid, int frames, std::uint64_t seed, double dt = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  DensitySeries s;
  s.grid = grid;
  s.dt = dt;
  for (int t = 0; t < frames; ++t) {
    std::vector<double> f(grid.periodic_node_count());
    for (auto& v : f) v = u(rng);
    normalize_frame(grid, f);
    s.frames.push_back(f);
  }
  return s;
}

// Direct quadrature of every weak-form entry: hats from the element shape
// functions, library gradients from full potential evaluations.
ResidualSystem brute_force(const DensitySeries& s, const Library& lib, int g) {
  const auto& grid = s.grid;
  const int d = grid.dims();
  const auto n = grid.periodic_node_count();
  const auto inst = time_derivative_frames(s);
  const auto rule = quadrature_rule(d, g);
  std::vector<double> extents(d);
  for (int i = 0; i < d; ++i) extents[i] = grid.spacing(i);
  std::vector<PotentialField> phi;
  for (std::size_t l = 0; l < lib.size(); ++l) {
    std::vector<double> e(lib.size(), 0.0);
    e[l] = 1.0;
    phi.push_back(PotentialField{grid, lib.expand(e), 1.0});
  }
  ResidualSystem r;
  r.instants = inst.midpoint.size();
  r.y = VectorXd::Zero(r.instants * n);
  r.xi0 = VectorXd::Zero(r.instants * n);
  r.xi = MatrixXd::Zero(r.instants * n, lib.size());
  std::vector<double> x(d);
  for (std::size_t e = 0; e < grid.element_count(); ++e) {
    const auto cell = grid.unflatten_element(e);
    const auto corners = grid.element_corners_periodic(e);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const auto xi = rule.point(q);
      for (int i = 0; i < d; ++i) x[i] = grid.node_coordinate(i, cell[i]) + xi[i] * grid.spacing(i);
      const double w = rule.weights[q] * grid.cell_volume();
      const auto shape = lagrange_shape_values(xi);
      const auto grad = lagrange_shape_gradients(xi, extents);
      std::vector<std::vector<double>> gphi;
      for (const auto& f : phi) gphi.push_back(eval_potential_gradient(f, x));
      for (std::size_t m = 0; m < r.instants; ++m) {
        double p = 0.0, dp = 0.0;
        std::vector<double> gp(d, 0.0);
        for (std::size_t c = 0; c < corners.size(); ++c) {
          p += inst.midpoint[m][corners[c]] * shape[c];
          dp += inst.dpdt[m][corners[c]] * shape[c];
          for (int i = 0; i < d; ++i) gp[i] += inst.midpoint[m][corners[c]] * grad[c * d + i];
        }
        for (std::size_t c = 0; c < corners.size(); ++c) {
          const auto row = static_cast<Eigen::Index>(m * n + corners[c]);
          r.y(row) += w * dp * shape[c];
          for (int i = 0; i < d; ++i) r.xi0(row) += w * gp[i] * grad[c * d + i];
          for (std::size_t l = 0; l < lib.size(); ++l) {
            double dot = 0.0;
            for (int i = 0; i < d; ++i) dot += gphi[l][i] * grad[c * d + i];
            r.xi(row, static_cast<Eigen::Index>(l)) += w * p * dot;
          }
        }
      }
    }
  }
  return r;
}

double max_rel(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("assembly: static uniform density") {
  const auto grid = cube_grid(2, 5);
  DensitySeries s;
  s.grid = grid;
  s.dt = 0.1;
  s.frames.assign(3, fpirl::test::uniform_density(grid));
  const Library lib(grid, LibraryKind::hermite);
  const auto r = assemble_residual(s, lib);
  CHECK(r.y.cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.xi0.cwiseAbs().maxCoeff() < 1e-15);
  CHECK(r.xi.cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("assembly matches brute-force quadrature") {
  const auto grid = cube_grid(2, 5);
  const auto s = random_series(grid, 3, 20);
  for (auto kind : {LibraryKind::hermite, LibraryKind::cardinal}) {
    const Library lib(grid, kind);
    const auto fast = assemble_residual(s, lib);
    const auto slow = brute_force(s, lib, 3);
    CHECK(max_rel(fast.y, slow.y) <= 1e-10);
    CHECK(max_rel(fast.xi0, slow.xi0) <= 1e-10);
    CHECK(max_rel(fast.xi, slow.xi) <= 1e-10);

    const auto ne = assemble_normal_equations(s, lib);
    const auto ref = normal_equations(fast);
    CHECK(max_rel(ne.gram, ref.gram) <= 1e-10);
    CHECK(max_rel(ne.xtb, ref.xtb) <= 1e-10);
    CHECK(ne.btb == doctest::Approx(ref.btb).epsilon(1e-12));
    CHECK(ne.rows == ref.rows);
  }
}

TEST_CASE("assembly: quadrature order and time step scaling") {
  const auto grid = cube_grid(2, 7);
  const auto s = random_series(grid, 4, 21);
  const Library lib(grid, LibraryKind::hermite);
  const auto g3 = assemble_residual(s, lib, {3});
  const auto g4 = assemble_residual(s, lib, {4});
  CHECK(max_rel(g4.xi, g3.xi) <= 1e-8);
  CHECK(max_rel(g4.xi0, g3.xi0) <= 1e-8);
  CHECK(max_rel(g4.y, g3.y) <= 1e-8);

  auto half = s;
  half.dt = s.dt / 2;
  const auto h = assemble_residual(half, lib);
  CHECK(max_rel(h.y, 2.0 * g3.y) <= 1e-14);
  CHECK(max_rel(h.xi, g3.xi) == 0.0);

  AssemblyOptions tiny;
  tiny.memory_guard = 1024;
  CHECK_THROWS_AS(assemble_residual(s, lib, tiny), MemoryGuardError);
  CHECK_THROWS_AS(assemble_normal_equations(s, lib, tiny), MemoryGuardError);
}

TEST_CASE("manufactured data: residual vanishes at the truth") {
  const auto m = fpirl::test::manufactured(2, 9, LibraryKind::cardinal);
  const auto ne = assemble_normal_equations(m.series, m.library);
  VectorXd c = VectorXd::Zero(static_cast<Eigen::Index>(ne.columns()));
  const double zero_rss = residual_sum_of_squares(ne, c);
  c(0) = 1.0 / m.truth.beta;
  std::vector<double> coeff(m.library.size(), 0.0);
  const double amplitude[3] = {0.8, -0.6, 0.5};
  for (int i = 0; i < 3; ++i) c(static_cast<Eigen::Index>(m.active[i] + 1)) = amplitude[i];
  CHECK(residual_sum_of_squares(ne, c) <= 1e-2 * zero_rss);
  CHECK(residual_sum_of_squares(ne, c) <= 1e-20 * zero_rss + 1e-24);
}

TEST_CASE("solve_least_squares") {
  const auto m = fpirl::test::manufactured(2, 9, LibraryKind::cardinal);
  const auto ne = assemble_normal_equations(m.series, m.library);
  SolveOptions opts;
  VectorXd hint = VectorXd::Zero(static_cast<Eigen::Index>(ne.columns()));
  const auto one = m.library.constant_direction();
  for (std::size_t l = 0; l < one.size(); ++l) hint(static_cast<Eigen::Index>(l + 1)) = one[l];
  opts.null_hints = {hint};
  const auto sol = solve_least_squares(ne, opts);
  CHECK(sol.beta_inv == doctest::Approx(1.0).epsilon(0.01));
  const auto psi = gauge_fix(PotentialField{m.truth.grid, m.library.expand(sol.theta), 1.0 / sol.beta_inv});
  CHECK(fpirl::test::relative_l2(psi, m.truth) <= 0.01);
  CHECK(sol.rank == ne.columns() - 1);

  // Zero right-hand side.
  auto zero = ne;
  zero.xtb.setZero();
  zero.btb = 0.0;
  const auto z = solve_least_squares(zero);
  CHECK(z.coefficients.cwiseAbs().maxCoeff() == 0.0);

  // Non-physical diffusion.
  auto flipped = ne;
  flipped.xtb(0) = -std::abs(flipped.xtb(0)) * 100.0;
  bool threw = false;
  try {
    solve_least_squares(flipped);
  } catch (const NumericalError& e) {
    threw = std::string(e.what()).find("non-physical diffusion") != std::string::npos;
  }
  CHECK(threw);
}

TEST_CASE("solve_least_squares: duplicate column") {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> n01(0.0, 1.0);
  ResidualSystem r;
  r.instants = 1;
  r.xi0 = VectorXd(40);
  r.xi = MatrixXd(40, 4);
  for (Eigen::Index i = 0; i < 40; ++i) {
    r.xi0(i) = n01(rng);
    for (int j = 0; j < 3; ++j) r.xi(i, j) = n01(rng);
  }
  r.xi.col(3) = r.xi.col(1);
  VectorXd c(5);
  c << 0.7, 0.3, 1.0, -0.4, 0.0;
  // b = -y = X c
  MatrixXd x(40, 5);
  x << r.xi0, r.xi;
  r.y = -(x * c);
  for (Eigen::Index i = 0; i < 40; ++i) r.y(i) += 1e-3 * n01(rng);
  const auto sol = solve_least_squares(normal_equations(r));
  ResidualSystem single = r;
  single.xi = r.xi.leftCols(3);
  const auto ref = solve_least_squares(normal_equations(single));
  MatrixXd x3(40, 4);
  x3 << single.xi0, single.xi;
  CHECK(max_rel(x * sol.coefficients, x3 * ref.coefficients) <= 1e-10);
  CHECK(sol.coefficients(2) == doctest::Approx(ref.coefficients(2) / 2).epsilon(1e-9));
  CHECK(sol.coefficients(4) == doctest::Approx(ref.coefficients(2) / 2).epsilon(1e-9));
}

TEST_CASE("stepwise regression recovers a sparse potential") {
  const auto m = fpirl::test::manufactured(2, 9, LibraryKind::cardinal);
  const auto ne = assemble_normal_equations(m.series, m.library);
  for (double f : {1.0, 4.0, 20.0, 100.0}) {
    StepwiseOptions opts;
    opts.f_threshold = f;
    const auto fit = fit_from_normal_equations(ne, m.library, opts);
    CHECK(fit.active_set == m.active);
    CHECK(fit.beta_inv == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(fpirl::test::relative_l2(fit.field, m.truth) <= 1e-6);
  }
}

TEST_CASE("stepwise regression with the full hermite library") {
  const auto m = fpirl::test::manufactured(2, 9, LibraryKind::hermite);
  const auto fit = run_vsi(m.series, VsiOptions{LibraryKind::hermite, {}, {}});
  CHECK(fit.active_set == m.active);
  CHECK(fit.beta_inv == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(fpirl::test::relative_l2(fit.field, m.truth) <= 1e-6);
}

TEST_CASE("stepwise regression: infinite threshold and trace bookkeeping") {
  const auto m = fpirl::test::manufactured(2, 7, LibraryKind::cardinal, 1.0, 0.01, 40);
  const auto ne = assemble_normal_equations(m.series, m.library);
  StepwiseOptions all;
  all.f_threshold = INFINITY;
  const auto res = stepwise_regression(ne, all);
  CHECK(res.active == std::vector<std::size_t>{0});

  const auto r4 = stepwise_regression(ne);
  for (std::size_t k = 1; k < r4.loss_trace.size(); ++k) CHECK(r4.loss_trace[k] >= r4.loss_trace[k - 1]);
  const auto f = f_statistics_from_trace(r4.loss_trace, ne.rows, r4.initial_columns, ne.btb, 1e-8);
  REQUIRE(f.size() == r4.f_trace.size());
  for (std::size_t k = 0; k < f.size(); ++k) CHECK(f[k] == r4.f_trace[k]);
  CHECK(r4.rejected_f > 4.0);
  CHECK_THROWS_AS(stepwise_regression(ne, StepwiseOptions{0.0}), ConfigError);
}

TEST_CASE("stepwise regression on pure noise") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n01(0.0, 1.0);
  ResidualSystem r;
  r.instants = 1;
  r.xi0 = VectorXd(1000);
  r.xi = MatrixXd(1000, 20);
  r.y = VectorXd(1000);
  for (Eigen::Index i = 0; i < 1000; ++i) {
    r.xi0(i) = n01(rng);
    for (int j = 0; j < 20; ++j) r.xi(i, j) = n01(rng);
    r.y(i) = n01(rng);
  }
  // A positive diffusion coefficient keeps the model physical.
  r.y -= 0.5 * r.xi0;
  const auto ne = normal_equations(r);
  const auto res = stepwise_regression(ne);
  REQUIRE(res.f_trace.size() >= 4);
  const std::size_t half = res.f_trace.size() / 2;
  double early = 0.0, late = 0.0;
  for (std::size_t k = 0; k < half; ++k) early += res.f_trace[k] / half;
  for (std::size_t k = res.f_trace.size() - half; k < res.f_trace.size(); ++k) late += res.f_trace[k] / half;
  CHECK(late > early);
  std::vector<double> steps(res.f_trace.size());
  for (std::size_t k = 0; k < steps.size(); ++k) steps[k] = static_cast<double>(k);
  CHECK(spearman(steps, res.f_trace) > 0.5);
  CHECK(res.loss_trace.back() <= 1.1 * res.loss_trace.front());
}

TEST_CASE("run_vsi: near-static data gives a diffusion-only fit") {
  const auto grid = cube_grid(2, 7);
  auto p0 = fpirl::test::uniform_density(grid);
  for (std::size_t k = 0; k < p0.size(); ++k) p0[k] *= 1.0 + 1e-3 * std::cos(M_PI * grid.periodic_node_point(k)[0]);
  normalize_frame(grid, p0);
  const auto s = solve_fokker_planck(zero_potential(grid, 1.0), p0, 0.01, 1);
  std::vector<std::string> warnings;
  const auto previous = set_warning_handler([&](const std::string& w) { warnings.push_back(w); });
  const auto fit = run_vsi(s);
  set_warning_handler(previous);
  CHECK(fit.active_set.empty());
  CHECK(fit.beta_inv == doctest::Approx(1.0).epsilon(1e-6));
  for (double t : fit.field.theta) CHECK(t == 0.0);
  REQUIRE(!warnings.empty());
  CHECK(warnings.back().find("diffusion-only") != std::string::npos);
}

TEST_CASE("run_vsi: determinism, gauge safety and the sidecar") {
  const auto m = fpirl::test::manufactured(2, 7, LibraryKind::cardinal, 1.0, 0.01, 40);
  const auto a = run_vsi(m.series), b = run_vsi(m.series);
  CHECK(a.field.theta == b.field.theta);
  CHECK(a.beta_inv == b.beta_inv);
  CHECK(a.loss_trace == b.loss_trace);

  // A constant shift of the true potential does not change the dynamics.
  auto shifted = m.truth;
  add_constant(shifted, 3.0);
  const auto s2 = solve_fokker_planck(shifted, fpirl::test::uniform_density(shifted.grid), 0.01, 40);
  const auto c = run_vsi(s2);
  double worst = 0.0;
  for (std::size_t n = 0; n < a.field.theta.size(); ++n) worst = std::max(worst, std::abs(c.field.theta[n] - a.field.theta[n]));
  CHECK(worst <= 1e-8);

  const auto dir = fpirl::test::scratch_dir("vsi_fit");
  write_vsi_fit(dir / "fit.fpf", a);
  const auto side = read_json(fit_sidecar_path(dir / "fit.fpf"));
  for (const char* key : {"active_set", "loss_trace", "f_trace", "f_threshold", "beta_inv"}) CHECK(side.contains(key));
  const auto back = read_vsi_fit(dir / "fit.fpf");
  CHECK(back.field.theta == a.field.theta);
  CHECK(back.active_set == a.active_set);
  CHECK(back.beta_inv == a.beta_inv);
  CHECK(back.f_trace == a.f_trace);
  CHECK(back.library == a.library);
}
