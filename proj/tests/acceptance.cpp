// Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
// criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>

#include "fpirl/density.hpp"
#include "fpirl/error.hpp"
#include "fpirl/evaluation.hpp"
#include "fpirl/fokker_planck.hpp"
#include "fpirl/io.hpp"
#include "fpirl/log.hpp"
#include "fpirl/mdp.hpp"
#include "fpirl/synthetic.hpp"
#include "fpirl/vsi.hpp"
#include "toys.hpp"

using namespace fpirl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

BenchmarkConfig canonical_config(int dims, int nodes) {
  BenchmarkConfig c;
  c.grid = cube_grid(dims, nodes);
  c.state_dims = dims / 2;
  c.beta = 1.0;
  c.dt = 0.02;
  c.gamma = 0.99;
  c.n_frames = 100;
  c.initial = InitialKind::sinusoid;
  c.route = EvolutionRoute::lumped;
  return c;
}

// ---------------------------------------------------------------------------

Outcome convergence() {
  Outcome o{true, ""};
  auto sweep = [&](const std::string& label, ConvergenceConfig cfg) {
    const auto rows = convergence_study(cfg);
    std::string cells;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      cells += " N=" + std::to_string(rows[i].nodes) + " psi " + num(rows[i].psi_error) + " grad " +
               num(rows[i].grad_psi_error) + (rows[i].status == "ok" ? "" : " [" + rows[i].status + "]");
      if (rows[i].status != "ok") o.pass = false;
      if (i > 0 && !(rows[i].psi_error < rows[i - 1].psi_error && rows[i].grad_psi_error < rows[i - 1].grad_psi_error))
        o.pass = false;
    }
    o.detail += label + ":" + cells + "; ";
  };
  const auto start = std::chrono::steady_clock::now();
  ConvergenceConfig d4;
  d4.meshes = {5, 7, 9};
  d4.benchmark = canonical_config(4, 5);
  sweep("d=4", d4);
  ConvergenceConfig d2;
  d2.meshes = {5, 9, 17};
  d2.benchmark = canonical_config(2, 5);
  d2.benchmark.initial = InitialKind::uniform;
  sweep("d=2", d2);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (seconds > 1800.0) o.pass = false;
  o.detail += num(seconds) + " s";
  return o;
}

Outcome kl_diagnostic() {
  const auto c = canonical_config(4, 9);
  const auto bench = generate_benchmark(c);
  const auto fit = run_vsi(bench.data);
  KlTraceOptions opts;
  opts.state_dims = c.state_dims;
  opts.dt = c.dt;
  opts.gamma = c.gamma;
  opts.route = c.route;
  const auto kl = kl_trace(bench.data, fit, bench.p0, opts);
  std::vector<double> t(kl.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  const double max = *std::max_element(kl.begin(), kl.end());
  const double rho = spearman(t, kl);
  Outcome o;
  o.pass = kl.back() <= 0.1 * max && rho <= -0.8;
  o.detail = "final " + num(kl.back()) + ", max " + num(max) + ", final/max " + num(kl.back() / max) + ", spearman " +
             num(rho);
  return o;
}

Outcome bellman_bijection() {
  std::mt19937_64 rng(9001);
  std::uniform_int_distribution<int> states(1, 8), actions(1, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double gammas[] = {0.0, 0.5, 0.9, 0.99};
  double worst_round = 0.0, worst_dense = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int s = states(rng), a = actions(rng), n = s * a;
    Matrix t(n, s), pi(s, a);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < s; ++j) t(i, j) = u(rng) < 0.3 ? 0.0 : u(rng);
      t(i, i % s) += 1e-3;
      t.row(i) /= t.row(i).sum();
    }
    for (int i = 0; i < s; ++i) {
      for (int j = 0; j < a; ++j) pi(i, j) = u(rng);
      pi.row(i) /= pi.row(i).sum();
    }
    const Matrix t_pi = induced_mp_from_mdp(t, pi);
    Vector q(n);
    for (auto& v : q) v = 5.0 * n01(rng);
    const double gamma = gammas[trial % 4];
    const Vector r = inverse_bellman(q, t_pi, gamma);
    const auto fp = bellman_fixed_point(r, t_pi, gamma, 1e-13);
    const Vector dense = (Matrix::Identity(n, n) - gamma * t_pi).partialPivLu().solve(r);
    worst_round = std::max(worst_round, (fp.q - q).cwiseAbs().maxCoeff());
    worst_dense = std::max(worst_dense, (fp.q - dense).cwiseAbs().maxCoeff());
  }
  return {worst_round <= 1e-9 && worst_dense <= 1e-9,
          "max round trip " + num(worst_round) + ", max dense vs iteration " + num(worst_dense)};
}

Outcome normalization() {
  std::mt19937_64 rng(9002);
  std::uniform_int_distribution<int> pick_nodes(3, 7), pick_dims(1, 2);
  std::uniform_real_distribution<double> amp(-0.5, 0.5), step(0.005, 0.05), beta(0.5, 4.0);
  double worst_t = 0.0, worst_pi = 0.0, worst_p = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = pick_dims(rng), k = pick_nodes(rng);
    const auto grid = cube_grid(d, k);
    PotentialField field = zero_potential(grid, beta(rng));
    for (auto& v : field.theta) v = amp(rng);
    const double dt = step(rng);
    const auto t_mp = lumped_transition(field, dt);
    for (Eigen::Index i = 0; i < t_mp.rows(); ++i) worst_t = std::max(worst_t, std::abs(t_mp.row(i).sum() - 1.0));
    if (d == 2) {
      const auto pi = boltzmann_policy(field, 1);
      for (Eigen::Index i = 0; i < pi.rows(); ++i) worst_pi = std::max(worst_pi, std::abs(pi.row(i).sum() - 1.0));
    }
    std::vector<double> p0(grid.periodic_node_count());
    for (auto& v : p0) v = 0.1 + std::abs(amp(rng));
    normalize_frame(grid, p0);
    const auto s = evolve_density(grid, p0, t_mp, 5, dt);
    for (const auto& f : s.frames) worst_p = std::max(worst_p, std::abs(frame_mass(grid, f) - 1.0));
  }
  return {worst_t <= 1e-8 && worst_pi <= 1e-12 && worst_p <= 1e-9,
          "max row defect " + num(worst_t) + ", policy " + num(worst_pi) + ", frame mass " + num(worst_p)};
}

Outcome gibbs() {
  const auto field = fpirl::test::toy_field(0.05, 9);
  const double dt = 0.005;
  const auto t_mp = lumped_transition(field, dt);
  const auto s = evolve_density(field.grid, fpirl::test::uniform_density(field.grid), t_mp, 500, dt);
  const auto g = gibbs_stationary(field, 1);
  const double tv = total_variation(field.grid, s.frames.back(), g.density);
  double worst = -INFINITY, prev = free_energy(s.frames[0], field);
  for (std::size_t t = 1; t < s.n_frames(); ++t) {
    const double f = free_energy(s.frames[t], field);
    worst = std::max(worst, f - prev);
    prev = f;
  }
  return {tv <= 1e-3 && worst <= 1e-8, "TV to Gibbs " + num(tv) + ", max free-energy increase " + num(worst)};
}

Outcome manufactured() {
  Outcome o{true, ""};
  auto one = [&](int dims, int nodes, std::uint64_t seed) {
    BenchmarkConfig c;
    c.grid = cube_grid(dims, nodes);
    c.state_dims = dims / 2;
    c.beta = 2.0;
    c.dt = 0.01;
    c.n_frames = 60;
    c.initial = InitialKind::sinusoid;
    c.route = EvolutionRoute::galerkin;
    c.truth.kind = GroundTruthSpec::Kind::sparse;
    c.truth.sparse.seed = seed;
    c.truth.sparse.library = LibraryKind::cardinal;
    const auto bench = generate_benchmark(c);
    VsiOptions v;
    v.library = LibraryKind::cardinal;
    const auto fit = run_vsi(bench.data, v);
    const auto m = support_metrics(fit.active_set, bench.truth.active);
    const double beta_err = std::abs(fit.beta_inv - 1.0 / c.beta) * c.beta;
    const double psi_err = fpirl::test::relative_l2(fit.field, bench.truth.field);
    const bool ok = m.precision == 1.0 && m.recall == 1.0 && beta_err <= 0.01 && psi_err <= 0.01;
    if (!ok) o.pass = false;
    o.detail += "d=" + std::to_string(dims) + " N=" + std::to_string(nodes) + ": precision " + num(m.precision) +
                " recall " + num(m.recall) + " beta_inv rel " + num(beta_err) + " psi rel L2 " + num(psi_err) + "; ";
  };
  one(2, 9, 61);
  one(4, 7, 62);
  return o;
}

Outcome kernels() {
  std::mt19937_64 rng(9003);
  std::uniform_real_distribution<double> u(-1.0, 1.0), unit(0.0, 1.0);
  const double h = 1e-6;

  // Hermite gradients of random fields in d = 2 and 3.
  double worst_h = 0.0;
  for (int d : {2, 3}) {
    PotentialField f = zero_potential(cube_grid(d, 5), 1.0);
    for (auto& v : f.theta) v = u(rng);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> x(d);
      for (auto& v : x) v = u(rng);
      const auto g = eval_potential_gradient(f, x);
      double diff = 0.0, norm = 0.0;
      for (int i = 0; i < d; ++i) {
        auto p = x, m = x;
        p[i] += h;
        m[i] -= h;
        const double fd = (eval_potential(f, p) - eval_potential(f, m)) / (2 * h);
        diff += (fd - g[i]) * (fd - g[i]);
        norm += g[i] * g[i];
      }
      worst_h = std::max(worst_h, std::sqrt(diff / norm));
    }
  }

  // Lagrange gradients at 1000 reference points.
  double worst_l = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 1 + trial % 4;
    std::vector<double> xi(d), ext(d);
    for (int i = 0; i < d; ++i) {
      xi[i] = unit(rng);
      ext[i] = 0.1 + unit(rng);
    }
    const auto g = lagrange_shape_gradients(xi, ext);
    double diff = 0.0, norm = 0.0;
    for (int i = 0; i < d; ++i) {
      auto p = xi, m = xi;
      p[i] += h;
      m[i] -= h;
      const auto np = lagrange_shape_values(p), nm = lagrange_shape_values(m);
      for (std::size_t a = 0; a < np.size(); ++a) {
        const double fd = (np[a] - nm[a]) / (2 * h * ext[i]);
        const double an = g[a * d + i];
        diff += (fd - an) * (fd - an);
        norm += an * an;
      }
    }
    worst_l = std::max(worst_l, std::sqrt(diff / norm));
  }

  // g = 3 tensor rule on monomials of per-dimension degree <= 5.
  double worst_q = 0.0;
  for (int d = 1; d <= 3; ++d) {
    const auto rule = quadrature_rule(d, 3);
    const int combos = static_cast<int>(std::pow(6, d));
    for (int c = 0; c < combos; ++c) {
      std::vector<int> deg(d);
      for (int i = 0, r = c; i < d; ++i, r /= 6) deg[i] = r % 6;
      double sum = 0.0, exact = 1.0;
      for (std::size_t q = 0; q < rule.size(); ++q) {
        double m = 1.0;
        for (int i = 0; i < d; ++i) m *= std::pow(rule.point(q)[i], deg[i]);
        sum += rule.weights[q] * m;
      }
      for (int i = 0; i < d; ++i) exact /= deg[i] + 1;
      worst_q = std::max(worst_q, std::abs(sum - exact));
    }
  }

  // C1 continuity across every interior seam and the periodic seam.
  double worst_c = 0.0;
  {
    PotentialField f = zero_potential(cube_grid(2, 7), 1.0);
    for (auto& v : f.theta) v = u(rng);
    const double eps = 1e-13;
    // j = 0 is the periodic seam x = -1 == x = 1.
    for (int j = 0; j < 6; ++j) {
      const double s = f.grid.node_coordinate(0, j);
      const double lo = j == 0 ? 1.0 - eps : s - eps, hi = s + eps;
      for (int trial = 0; trial < 20; ++trial) {
        const double y = u(rng);
        for (int axis : {0, 1}) {
          std::vector<double> a(2), b(2);
          a[axis] = lo;
          b[axis] = hi;
          a[1 - axis] = b[1 - axis] = y;
          const auto ga = eval_potential_gradient(f, a), gb = eval_potential_gradient(f, b);
          worst_c = std::max(worst_c, std::abs(eval_potential(f, a) - eval_potential(f, b)));
          for (int i = 0; i < 2; ++i) worst_c = std::max(worst_c, std::abs(ga[i] - gb[i]));
        }
      }
    }
  }
  return {worst_h <= 1e-6 && worst_l <= 1e-6 && worst_q <= 1e-12 && worst_c <= 1e-10,
          "hermite FD " + num(worst_h) + ", lagrange FD " + num(worst_l) + ", quadrature " + num(worst_q) +
              ", seam jump " + num(worst_c)};
}

Outcome cross_path() {
  const auto field = fpirl::test::toy_field(0.5, 9);
  const double dt = 0.02;
  const auto p0 = fpirl::test::bump_density(field.grid);
  const auto direct = evolve_density(field.grid, p0, lumped_transition(field, dt), 20, dt);
  SampleOptions opts;
  opts.n_traj = 100000;
  opts.n_steps = 20;
  opts.dt = dt;
  opts.seed = 9004;
  opts.state_dims = 1;
  const auto mc = estimate_density(sample_trajectories(field, p0, opts), field.grid, dt);
  const double tv = total_variation(field.grid, mc.frames[20], direct.frames[20]);
  return {tv <= 0.03, "TV at frame 20 " + num(tv)};
}

// ---------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + FPIRL_CLI_PATH + "\" --quiet " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Strips wall-clock fields, which are the only non-deterministic output.
std::string masked(const fs::path& p) {
  if (p.filename() == "convergence.json") {
    auto j = read_json(p);
    for (auto& c : j.at("cells")) c.erase("runtime_s");
    return j.dump();
  }
  if (p.filename() == "convergence.csv") {
    std::istringstream in(read_file(p));
    std::string line, out;
    while (std::getline(in, line)) {
      std::vector<std::string> cols;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
      if (cols.size() > 4) cols.erase(cols.begin() + 4);
      for (const auto& c : cols) out += c + ",";
      out += "\n";
    }
    return out;
  }
  return file_digest(p);
}

std::string snapshot(const fs::path& dir) {
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) lines.push_back(fs::relative(e.path(), dir).generic_string() + " " + masked(e.path()));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

Outcome determinism() {
  const auto root = fpirl::test::scratch_dir("acceptance_cli");
  std::vector<std::string> bad;
  // Runs a command, then re-runs it from the config echoed in `report`.
  auto check = [&](const std::string& name, const std::string& args, const std::string& report) {
    const auto a = root / (name + "_a"), b = root / (name + "_b");
    if (run_cli(args + " --out " + a.string()) != 0) {
      bad.push_back(name + " failed");
      return a;
    }
    const auto echo = root / (name + "_echo.json");
    write_json(echo, read_json(a / report).at("config"));
    if (run_cli(name + " --config " + echo.string() + " --out " + b.string()) != 0 || snapshot(a) != snapshot(b))
      bad.push_back(name);
    return a;
  };
  const json synth{{"command", "synth"}, {"dims", 2}, {"nodes", 9}, {"n_frames", 30}, {"seed", 3},
                   {"n_trajectories", 5000}, {"emit_trajectories", true}};
  write_json(root / "synth.json", synth);
  const auto bench = check("synth", "synth --config " + (root / "synth.json").string(), "benchmark.json");
  check("infer", "infer --input " + (bench / "benchmark.json").string(), "infer.json");
  check("ingest", "ingest --dt 0.02 --input " + (bench / "trajectories.csv").string(), "ingest.json");
  check("eval", "eval --benchmark " + (bench / "benchmark.json").string() + " --fit " + (bench / "truth.fpf").string(),
        "eval.json");
  const json conv{{"command", "converge"}, {"dims", 2}, {"meshes", {5, 7}}, {"n_frames", 30}};
  write_json(root / "converge.json", conv);
  check("converge", "converge --config " + (root / "converge.json").string(), "convergence.json");
  std::string detail = "synth, infer, ingest, eval, converge";
  if (!bad.empty()) {
    detail = "mismatch:";
    for (const auto& b : bad) detail += " " + b;
  }
  return {bad.empty(), detail};
}

}  // namespace

int main() {
  set_warning_handler([](const std::string&) {});
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"mesh convergence", convergence},
      {"KL decreases over time", kl_diagnostic},
      {"inverse Bellman bijection", bellman_bijection},
      {"stochasticity and normalization", normalization},
      {"Gibbs stationarity and free energy", gibbs},
      {"manufactured sparse recovery", manufactured},
      {"numerical kernels", kernels},
      {"Monte-Carlo vs direct density", cross_path},
      {"CLI determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("criterion %zu %s: %s (%s) [%.1f s]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), s);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
