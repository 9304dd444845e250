#include "fpirl/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <thread>

#include "fpirl/error.hpp"
#include "fpirl/log.hpp"

namespace fpirl {

double kl_divergence(const GridSpec& grid, std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.size() != grid.periodic_node_count())
    throw ConfigError("kl_divergence: frames do not match the grid");
  double sum = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    if (q[k] <= 0.0) return std::numeric_limits<double>::infinity();
    sum += p[k] * std::log(p[k] / q[k]);
  }
  return sum * grid.cell_volume();
}

std::vector<double> kl_trace(const DensitySeries& data, const PotentialField& inferred, std::span<const double> p0,
                             const KlTraceOptions& options) {
  if (!(inferred.grid == data.grid)) throw ConfigError("kl_trace: inferred field and data are on different grids");
  if (data.n_frames() == 0) throw ConfigError("kl_trace: empty data");
  const auto mdp = build_mdp(inferred, options.dt, options.gamma, options.state_dims, options.transition);
  const auto q = evolve_route(inferred, mdp, p0, options.route, static_cast<int>(data.n_frames()) - 1);
  std::vector<double> kl(data.n_frames());
  for (std::size_t t = 0; t < kl.size(); ++t) kl[t] = kl_divergence(data.grid, data.frames[t], q.frames[t]);
  return kl;
}

std::vector<double> kl_trace(const DensitySeries& data, const VsiFit& fit, std::span<const double> p0,
                             const KlTraceOptions& options) {
  return kl_trace(data, fit.field, p0, options);
}

FieldFunction field_function(const PotentialField& field) {
  return [&field](std::span<const double> x, std::span<double> grad) {
    return eval_potential_and_gradient(field, x, grad);
  };
}

FieldFunction field_function(const AnalyticPotential& psi) {
  return [&psi](std::span<const double> x, std::span<double> grad) {
    if (!grad.empty()) psi.gradient(x, grad);
    return psi.value(x);
  };
}

double field_error(const FieldFunction& f, const FieldFunction& g, const GridSpec& quad_grid, ErrorMode mode,
                   int points) {
  const int d = quad_grid.dims();
  const auto rule = quadrature_rule(d, points);
  const bool gradient = mode == ErrorMode::gradient;
  std::vector<double> x(d), gf(gradient ? d : 0), gg(gradient ? d : 0);
  const double jac = quad_grid.cell_volume();
  double sum = 0.0;
  for (std::size_t e = 0; e < quad_grid.element_count(); ++e) {
    const auto cell = quad_grid.unflatten_element(e);
    double local = 0.0;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const auto xi = rule.point(q);
      for (int i = 0; i < d; ++i) x[i] = quad_grid.node_coordinate(i, cell[i]) + xi[i] * quad_grid.spacing(i);
      const double vf = f(x, gf);
      const double vg = g(x, gg);
      double diff2 = 0.0;
      if (gradient) {
        for (int i = 0; i < d; ++i) diff2 += (gf[i] - gg[i]) * (gf[i] - gg[i]);
      } else {
        diff2 = (vf - vg) * (vf - vg);
      }
      local += rule.weights[q] * diff2;
    }
    sum += local * jac;
  }
  return std::sqrt(sum) / quad_grid.volume();
}

namespace {

const GridSpec& coarser(const GridSpec& a, const GridSpec& b) {
  if (a.dims() != b.dims() || a.bounds != b.bounds) throw ConfigError("field_error: fields live on different domains");
  return a.element_count() <= b.element_count() ? a : b;
}

}  // namespace

double field_error(const PotentialField& f, const PotentialField& g, ErrorMode mode, int points) {
  return field_error(field_function(f), field_function(g), coarser(f.grid, g.grid), mode, points);
}

double field_error(const PotentialField& f, const AnalyticPotential& g, ErrorMode mode, int points) {
  if (g.dims() != f.grid.dims()) throw ConfigError("field_error: dimension mismatch");
  return field_error(field_function(f), field_function(g), f.grid, mode, points);
}

SupportMetrics support_metrics(const std::vector<std::size_t>& active, const std::vector<std::size_t>& truth) {
  std::vector<std::size_t> a = active, t = truth;
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  std::vector<std::size_t> hit;
  std::set_intersection(a.begin(), a.end(), t.begin(), t.end(), std::back_inserter(hit));
  SupportMetrics m;
  m.precision = a.empty() ? 0.0 : static_cast<double>(hit.size()) / static_cast<double>(a.size());
  m.recall = t.empty() ? 1.0 : static_cast<double>(hit.size()) / static_cast<double>(t.size());
  return m;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("spearman: need two equally long series of length >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

namespace {

ConvergenceRow run_cell(const ConvergenceConfig& config, int nodes) {
  ConvergenceRow row;
  row.nodes = nodes;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto start = std::chrono::steady_clock::now();
  try {
    BenchmarkConfig bc = config.benchmark;
    bc.grid = build_grid(bc.grid.dims(), bc.grid.bounds, std::vector<int>(bc.grid.dims(), nodes));
    bc.n_trajectories = 0;
    const auto bench = generate_benchmark(bc);
    VsiOptions vsi = config.vsi;
    vsi.assembly.memory_guard = bc.transition.memory_guard;
    const auto fit = run_vsi(bench.data, vsi);
    row.beta_inv = fit.beta_inv;
    if (bench.truth.analytic) {
      row.psi_error = field_error(fit.field, *bench.truth.analytic, ErrorMode::value);
      row.grad_psi_error = field_error(fit.field, *bench.truth.analytic, ErrorMode::gradient);
    } else {
      row.psi_error = field_error(fit.field, bench.truth.field, ErrorMode::value);
      row.grad_psi_error = field_error(fit.field, bench.truth.field, ErrorMode::gradient);
    }
  } catch (const MemoryGuardError& e) {
    row.status = "skipped: memory guard";
    row.psi_error = row.grad_psi_error = row.beta_inv = nan;
    warn("convergence N=" + std::to_string(nodes) + ": " + e.what());
  } catch (const std::exception& e) {
    row.status = std::string("failed: ") + e.what();
    row.psi_error = row.grad_psi_error = row.beta_inv = nan;
    warn("convergence N=" + std::to_string(nodes) + ": " + e.what());
  }
  row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

}  // namespace

std::vector<ConvergenceRow> convergence_study(const ConvergenceConfig& config) {
  if (config.meshes.empty()) throw ConfigError("convergence: mesh list is empty");
  for (std::size_t i = 0; i < config.meshes.size(); ++i) {
    if (config.meshes[i] < 3) throw ConfigError("convergence: meshes need at least 3 nodes per dimension");
    if (i > 0 && config.meshes[i] <= config.meshes[i - 1]) throw ConfigError("convergence: mesh list must be ascending");
  }
  if (config.benchmark.truth.kind != GroundTruthSpec::Kind::analytic)
    throw ConfigError("convergence: the ground truth must be analytic to be mesh independent");
  std::vector<ConvergenceRow> rows(config.meshes.size());
  const auto jobs = static_cast<std::size_t>(std::clamp(config.jobs, 1, static_cast<int>(rows.size())));
  if (jobs == 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = run_cell(config, config.meshes[i]);
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < rows.size(); i = next++) rows[i] = run_cell(config, config.meshes[i]);
    });
  }
  for (auto& t : workers) t.join();
  return rows;
}

bool all_ok(const std::vector<ConvergenceRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const ConvergenceRow& r) { return r.status == "ok"; });
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_convergence_csv(const std::filesystem::path& path, const std::vector<ConvergenceRow>& rows) {
  std::string out = "N,psi_error,grad_psi_error,beta_inv,runtime_s,status\n";
  for (const auto& r : rows) {
    out += std::to_string(r.nodes) + "," + fmt(r.psi_error) + "," + fmt(r.grad_psi_error) + "," + fmt(r.beta_inv) +
           "," + fmt(r.runtime_s) + "," + csv_quote(r.status) + "\n";
  }
  write_file_atomic(path, out);
}

void write_kl_csv(const std::filesystem::path& path, std::span<const double> kl, double dt) {
  std::string out = "frame,t,kl\n";
  for (std::size_t t = 0; t < kl.size(); ++t)
    out += std::to_string(t) + "," + fmt(static_cast<double>(t) * dt) + "," + fmt(kl[t]) + "\n";
  write_file_atomic(path, out);
}

}  // namespace fpirl
