#include "fpirl/vsi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "fpirl/error.hpp"
#include "fpirl/log.hpp"
#include "fpirl/mdp.hpp"

namespace fpirl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

ElementTables element_tables(const Library& library, int quad_order) {
  if (quad_order < 2) throw ConfigError("quadrature order must be >= 2");
  const auto& grid = library.grid();
  const int d = grid.dims();
  if (d > 6) throw ConfigError("element tables support at most 6 dimensions");
  const auto rule = gauss_legendre(quad_order);
  // Per dimension: a[r][s][c] = h int L_r f_s L_c,  b[r][s][c] = h int L_r f_s' L_c',
  // m[r][c] = h int L_r L_c,  k[r][c] = h int L_r' L_c'.
  struct OneD {
    double a[2][4][2] = {};
    double b[2][4][2] = {};
    double m[2][2] = {};
    double k[2][2] = {};
  };
  std::vector<OneD> one(d);
  for (int i = 0; i < d; ++i) {
    const double h = grid.spacing(i);
    const auto& coeff = library.slot_coefficients(i);
    for (std::size_t g = 0; g < rule.points.size(); ++g) {
      const double x = rule.points[g];
      const double w = rule.weights[g] * h;
      const double lag[2] = {1.0 - x, x};
      const double dlag[2] = {-1.0 / h, 1.0 / h};
      const auto hv = element_hermite_values(x, h);
      const auto hd = element_hermite_derivatives(x, h);
      for (int s = 0; s < 4; ++s) {
        double f = 0.0, df = 0.0;
        for (int q = 0; q < 4; ++q) {
          f += coeff[s][q] * hv[q];
          df += coeff[s][q] * hd[q];
        }
        for (int r = 0; r < 2; ++r)
          for (int c = 0; c < 2; ++c) {
            one[i].a[r][s][c] += w * lag[r] * f * lag[c];
            one[i].b[r][s][c] += w * lag[r] * df * dlag[c];
          }
      }
      for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) {
          one[i].m[r][c] += w * lag[r] * lag[c];
          one[i].k[r][c] += w * dlag[r] * dlag[c];
        }
    }
  }

  ElementTables t;
  t.dims = d;
  t.corners = std::size_t{1} << d;
  t.slots = std::size_t{1} << (2 * d);
  t.xi.assign(t.corners * t.corners * t.slots, 0.0);
  t.k0.assign(t.corners * t.corners, 0.0);
  t.mass.assign(t.corners * t.corners, 0.0);
  for (std::size_t r = 0; r < t.corners; ++r) {
    for (std::size_t c = 0; c < t.corners; ++c) {
      double mass = 1.0, stiff = 0.0;
      for (int i = 0; i < d; ++i) {
        double term = 1.0;
        for (int k = 0; k < d; ++k) {
          const int rk = (r >> k) & 1U, ck = (c >> k) & 1U;
          term *= (k == i) ? one[k].k[rk][ck] : one[k].m[rk][ck];
        }
        stiff += term;
        mass *= one[i].m[(r >> i) & 1U][(c >> i) & 1U];
      }
      t.k0[r * t.corners + c] = stiff;
      t.mass[r * t.corners + c] = mass;
      for (std::size_t l = 0; l < t.slots; ++l) {
        double sum = 0.0;
        for (int i = 0; i < d; ++i) {
          double term = 1.0;
          for (int k = 0; k < d; ++k) {
            const int rk = (r >> k) & 1U, ck = (c >> k) & 1U;
            const int sk = static_cast<int>((l >> (2 * k)) & 3U);
            term *= (k == i) ? one[k].b[rk][sk][ck] : one[k].a[rk][sk][ck];
          }
          sum += term;
        }
        t.xi[(r * t.corners + c) * t.slots + l] = sum;
      }
    }
  }
  return t;
}

namespace {

// Builds, for one weighting node at a time, the local block of residual
// rows: column 0 is Xi0, columns 1..n_local the library columns touching
// the node, and the last column b = -y.
class NodeAssembler {
 public:
  NodeAssembler(const DensitySeries& series, const Library& library, int quad_order)
      : grid_(series.grid), library_(library), tables_(element_tables(library, quad_order)) {
    if (!(series.grid == library.grid())) throw ConfigError("assembly: density grid and library grid differ");
    const auto inst = time_derivative_frames(series);
    n_inst_ = inst.midpoint.size();
    const std::size_t n = grid_.periodic_node_count();
    mid_.resize(n, n_inst_);
    dot_.resize(n, n_inst_);
    for (std::size_t t = 0; t < n_inst_; ++t) {
      if (inst.midpoint[t].size() != n) throw ConfigError("assembly: frame size does not match the grid");
      for (std::size_t k = 0; k < n; ++k) {
        mid_(k, t) = inst.midpoint[t][k];
        dot_(k, t) = inst.dpdt[t][k];
      }
    }
    const auto corners = tables_.corners, slots = tables_.slots;
    xi_c_.resize(corners);
    k0_c_.resize(corners);
    mass_c_.resize(corners);
    for (std::size_t c = 0; c < corners; ++c) {
      xi_c_[c].resize(corners, slots);
      k0_c_[c].resize(corners);
      mass_c_[c].resize(corners);
      for (std::size_t r = 0; r < corners; ++r) {
        for (std::size_t l = 0; l < slots; ++l) xi_c_[c](r, l) = tables_.xi_at(r, c, l);
        k0_c_[c](r) = tables_.k0[r * corners + c];
        mass_c_[c](r) = tables_.mass[r * corners + c];
      }
    }
  }

  std::size_t instants() const noexcept { return n_inst_; }

  /// Fills block_ and global_ (library flat index + 1 per local column,
  /// 0 for Xi0) for weighting node `node`.
  void build(std::size_t node) {
    const int d = grid_.dims();
    const auto w = grid_.unflatten_periodic(node);
    // Per dimension: the two adjacent segments, the unique library indices
    // they touch, and each slot's position in that list.
    std::vector<std::vector<int>> unique(d);
    std::vector<std::array<std::array<int, 4>, 2>> pos(d);
    std::vector<std::array<int, 2>> segment(d);
    for (int i = 0; i < d; ++i) {
      const int m = grid_.periodic_nodes(i);
      segment[i] = {(w[i] - 1 + m) % m, w[i]};
      for (int e = 0; e < 2; ++e)
        for (int s = 0; s < 4; ++s) unique[i].push_back(library_.slot_index(i, segment[i][e], s));
      std::sort(unique[i].begin(), unique[i].end());
      unique[i].erase(std::unique(unique[i].begin(), unique[i].end()), unique[i].end());
      for (int e = 0; e < 2; ++e)
        for (int s = 0; s < 4; ++s) {
          const int g = library_.slot_index(i, segment[i][e], s);
          pos[i][e][s] = static_cast<int>(std::lower_bound(unique[i].begin(), unique[i].end(), g) - unique[i].begin());
        }
    }
    std::vector<std::size_t> stride(d);
    std::size_t n_local = 1;
    for (int i = d - 1; i >= 0; --i) {
      stride[i] = n_local;
      n_local *= unique[i].size();
    }
    n_local_ = n_local;
    global_.resize(n_local + 1);
    global_[0] = 0;
    std::vector<int> multi(d);
    for (std::size_t q = 0; q < n_local; ++q) {
      std::size_t rest = q;
      for (int i = 0; i < d; ++i) {
        multi[i] = unique[i][rest / stride[i]];
        rest %= stride[i];
      }
      global_[q + 1] = library_.flatten(multi) + 1;
    }

    block_.setZero(n_inst_, n_local + 2);
    const std::size_t corners = tables_.corners, slots = tables_.slots;
    MatrixXd pe(n_inst_, corners), de(n_inst_, corners), v(n_inst_, slots);
    std::vector<std::size_t> slot_pos(slots);
    const std::size_t elements = corners;  // 2^d elements touch every node
    for (std::size_t e = 0; e < elements; ++e) {
      std::size_t c = 0;
      for (int i = 0; i < d; ++i) {
        const int bit = (e >> i) & 1U;  // 0: segment below the node, 1: above
        if (bit == 0) c |= std::size_t{1} << i;  // node is the upper corner of the segment below
      }
      for (std::size_t r = 0; r < corners; ++r) {
        for (int i = 0; i < d; ++i) multi[i] = segment[i][(e >> i) & 1U] + static_cast<int>((r >> i) & 1U);
        const auto k = grid_.flatten_periodic(multi);
        pe.col(r) = mid_.row(k).transpose();
        de.col(r) = dot_.row(k).transpose();
      }
      for (std::size_t l = 0; l < slots; ++l) {
        std::size_t p = 0;
        for (int i = 0; i < d; ++i) p += pos[i][(e >> i) & 1U][(l >> (2 * i)) & 3U] * stride[i];
        slot_pos[l] = p + 1;
      }
      v.noalias() = pe * xi_c_[c];
      for (std::size_t l = 0; l < slots; ++l) block_.col(slot_pos[l]) += v.col(l);
      block_.col(0).noalias() += pe * k0_c_[c];
      block_.col(n_local + 1).noalias() -= de * mass_c_[c];
    }
  }

  const MatrixXd& block() const noexcept { return block_; }
  const std::vector<std::size_t>& global() const noexcept { return global_; }
  std::size_t n_local() const noexcept { return n_local_; }

 private:
  const GridSpec& grid_;
  const Library& library_;
  ElementTables tables_;
  std::size_t n_inst_ = 0;
  MatrixXd mid_, dot_;  // node x instant
  std::vector<MatrixXd> xi_c_;
  std::vector<VectorXd> k0_c_, mass_c_;
  MatrixXd block_;
  std::vector<std::size_t> global_;
  std::size_t n_local_ = 0;
};

}  // namespace

ResidualSystem assemble_residual(const DensitySeries& series, const Library& library,
                                 const AssemblyOptions& options) {
  NodeAssembler as(series, library, options.quad_order);
  const std::size_t n = series.grid.periodic_node_count();
  const std::size_t rows = n * as.instants();
  check_dense_allocation(rows, library.size() + 2, "explicit residual system", options.memory_guard);
  ResidualSystem sys;
  sys.instants = as.instants();
  sys.y = VectorXd::Zero(rows);
  sys.xi0 = VectorXd::Zero(rows);
  sys.xi = MatrixXd::Zero(rows, library.size());
  for (std::size_t node = 0; node < n; ++node) {
    as.build(node);
    const auto& a = as.block();
    const auto& g = as.global();
    for (std::size_t t = 0; t < as.instants(); ++t) {
      const std::size_t row = t * n + node;
      sys.xi0(row) = a(t, 0);
      sys.y(row) = -a(t, as.n_local() + 1);
      for (std::size_t q = 1; q <= as.n_local(); ++q) sys.xi(row, g[q] - 1) += a(t, q);
    }
  }
  return sys;
}

NormalEquations assemble_normal_equations(const DensitySeries& series, const Library& library,
                                          const AssemblyOptions& options) {
  NodeAssembler as(series, library, options.quad_order);
  const std::size_t p = library.size() + 1;
  check_dense_allocation(p, p, "normal equations", options.memory_guard);
  NormalEquations ne;
  ne.gram = MatrixXd::Zero(p, p);
  ne.xtb = VectorXd::Zero(p);
  ne.instants = as.instants();
  const std::size_t n = series.grid.periodic_node_count();
  ne.rows = n * as.instants();
  MatrixXd local;
  for (std::size_t node = 0; node < n; ++node) {
    as.build(node);
    const auto& a = as.block();
    const auto& g = as.global();
    const std::size_t k = as.n_local() + 1;
    local.resize(k + 1, k + 1);
    local.setZero();
    local.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose());
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = j; i < k; ++i) ne.gram(g[i], g[j]) += local(i, j);
      ne.xtb(g[j]) += local(k, j);
    }
    ne.btb += local(k, k);
  }
  ne.gram.triangularView<Eigen::StrictlyUpper>() = ne.gram.transpose();
  return ne;
}

NormalEquations normal_equations(const ResidualSystem& system) {
  const auto rows = system.y.size();
  MatrixXd x(rows, system.xi.cols() + 1);
  x.col(0) = system.xi0;
  x.rightCols(system.xi.cols()) = system.xi;
  NormalEquations ne;
  ne.gram = x.transpose() * x;
  ne.xtb = -(x.transpose() * system.y);
  ne.btb = system.y.squaredNorm();
  ne.rows = static_cast<std::size_t>(rows);
  ne.instants = system.instants;
  return ne;
}

double residual_sum_of_squares(const NormalEquations& ne, const VectorXd& c) {
  if (static_cast<std::size_t>(c.size()) != ne.columns()) throw ConfigError("rss: coefficient size mismatch");
  return std::max(0.0, ne.btb - 2.0 * c.dot(ne.xtb) + c.dot(ne.gram * c));
}

double residual_sum_of_squares(const ResidualSystem& system, const VectorXd& c) {
  if (c.size() != system.xi.cols() + 1) throw ConfigError("rss: coefficient size mismatch");
  const VectorXd r = system.y + c(0) * system.xi0 + system.xi * c.tail(c.size() - 1);
  return r.squaredNorm();
}

// ---------------------------------------------------------------------------
// Least squares and elimination on the Gram matrix.

namespace {

struct Scaled {
  std::vector<std::size_t> cols;  // original indices of the nonzero columns
  VectorXd scale;                 // column norms
  MatrixXd gram;                  // unit-diagonal Gram
  VectorXd xtb;
};

Scaled scale_system(const NormalEquations& ne, std::vector<std::size_t>& zero_cols) {
  const std::size_t p = ne.columns();
  if (p == 0) throw ConfigError("regression: no columns");
  const double top = ne.gram.diagonal().maxCoeff();
  Scaled s;
  for (std::size_t j = 0; j < p; ++j) {
    const double gjj = ne.gram(j, j);
    if (gjj > 0.0 && gjj > 1e-28 * top)
      s.cols.push_back(j);
    else
      zero_cols.push_back(j);
  }
  const auto k = static_cast<Eigen::Index>(s.cols.size());
  s.scale.resize(k);
  for (Eigen::Index a = 0; a < k; ++a) s.scale(a) = std::sqrt(ne.gram(s.cols[a], s.cols[a]));
  s.gram.resize(k, k);
  s.xtb.resize(k);
  for (Eigen::Index b = 0; b < k; ++b) {
    for (Eigen::Index a = 0; a < k; ++a)
      s.gram(a, b) = ne.gram(s.cols[a], s.cols[b]) / (s.scale(a) * s.scale(b));
    s.xtb(b) = ne.xtb(s.cols[b]) / s.scale(b);
  }
  return s;
}

// Restricts full-length hint vectors to the scaled column subset.
std::vector<VectorXd> scaled_hints(const std::vector<VectorXd>& hints, const Scaled& s, std::size_t p) {
  std::vector<VectorXd> out;
  for (const auto& h : hints) {
    if (static_cast<std::size_t>(h.size()) != p) throw ConfigError("regression: null hint has the wrong length");
    VectorXd v(s.cols.size());
    for (std::size_t a = 0; a < s.cols.size(); ++a) v(a) = h(s.cols[a]) * s.scale(a);
    if (v.norm() > 0.0) out.push_back(v);
  }
  return out;
}

struct NullAnalysis {
  MatrixXd basis;          // orthonormal null directions (k x q)
  VectorXd solution;       // minimum-norm solution of G c = g
  Eigen::LLT<MatrixXd> llt;  // of G + N N^T
  bool factor_valid = false;
};

bool factor_ok(const Eigen::LLT<MatrixXd>& llt, double tol) {
  if (llt.info() != Eigen::Success) return false;
  const VectorXd diag = MatrixXd(llt.matrixLLT()).diagonal();
  return diag.minCoeff() > 0.0 && diag.array().square().minCoeff() >= tol;
}

MatrixXd orthonormalize(const MatrixXd& v) {
  if (v.cols() == 0) return v;
  Eigen::HouseholderQR<MatrixXd> qr(v);
  return qr.householderQ() * MatrixXd::Identity(v.rows(), v.cols());
}

NullAnalysis analyze_null_space(const MatrixXd& gram, const VectorXd& xtb, const std::vector<VectorXd>& hints,
                                double tol) {
  const auto k = gram.rows();
  NullAnalysis out;
  std::vector<VectorXd> accepted;
  for (const auto& h : hints) {
    const double rq = h.dot(gram * h) / h.squaredNorm();
    if (rq <= tol) accepted.push_back(h / h.norm());
  }
  MatrixXd basis(k, static_cast<Eigen::Index>(accepted.size()));
  for (std::size_t q = 0; q < accepted.size(); ++q) basis.col(static_cast<Eigen::Index>(q)) = accepted[q];
  basis = orthonormalize(basis);
  if (k > 0) {
    out.llt.compute(gram + basis * basis.transpose());
    if (factor_ok(out.llt, tol)) {
      out.basis = basis;
      out.solution = out.llt.solve(xtb);
      out.factor_valid = true;
      return out;
    }
  }
  // Hints do not account for every (near) null direction.
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericalError("regression: eigen decomposition failed");
  const double top = std::max(eig.eigenvalues().maxCoeff(), 1.0);
  std::vector<Eigen::Index> null_idx;
  for (Eigen::Index i = 0; i < k; ++i)
    if (eig.eigenvalues()(i) <= tol * top) null_idx.push_back(i);
  out.basis.resize(k, static_cast<Eigen::Index>(null_idx.size()));
  for (std::size_t q = 0; q < null_idx.size(); ++q) out.basis.col(static_cast<Eigen::Index>(q)) = eig.eigenvectors().col(null_idx[q]);
  out.solution = VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double lambda = eig.eigenvalues()(i);
    if (lambda > tol * top) out.solution += eig.eigenvectors().col(i) * (eig.eigenvectors().col(i).dot(xtb) / lambda);
  }
  return out;
}

std::vector<char> protect_mask(const std::vector<std::size_t>& protect, std::size_t p) {
  std::vector<char> mask(p, 0);
  for (auto j : protect) {
    if (j >= p) throw ConfigError("regression: protected column out of range");
    mask[j] = 1;
  }
  return mask;
}

MatrixXd submatrix(const MatrixXd& m, const std::vector<Eigen::Index>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  MatrixXd out(n, n);
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index a = 0; a < n; ++a) out(a, b) = m(idx[a], idx[b]);
  return out;
}

VectorXd subvector(const VectorXd& v, const std::vector<Eigen::Index>& idx) {
  VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t a = 0; a < idx.size(); ++a) out(static_cast<Eigen::Index>(a)) = v(idx[a]);
  return out;
}

double f_statistic(double before, double after, std::size_t rows, std::size_t p_before, double floor_rss) {
  const double df = static_cast<double>(rows) - static_cast<double>(p_before);
  if (df <= 0.0) return std::numeric_limits<double>::infinity();
  const double denom = std::max(before, floor_rss) / df;
  if (!(denom > 0.0)) return after > before ? std::numeric_limits<double>::infinity() : 0.0;
  return (after - before) / denom;
}

}  // namespace

LeastSquaresSolution solve_least_squares(const NormalEquations& ne, const SolveOptions& options) {
  std::vector<std::size_t> zero_cols;
  const auto s = scale_system(ne, zero_cols);
  const auto analysis = analyze_null_space(s.gram, s.xtb, scaled_hints(options.null_hints, s, ne.columns()),
                                           options.rank_tol);
  LeastSquaresSolution out;
  out.coefficients = VectorXd::Zero(static_cast<Eigen::Index>(ne.columns()));
  for (std::size_t a = 0; a < s.cols.size(); ++a)
    out.coefficients(static_cast<Eigen::Index>(s.cols[a])) = analysis.solution(static_cast<Eigen::Index>(a)) / s.scale(static_cast<Eigen::Index>(a));
  out.rank = s.cols.size() - static_cast<std::size_t>(analysis.basis.cols());
  out.rss = residual_sum_of_squares(ne, out.coefficients);
  out.beta_inv = out.coefficients(0);
  out.theta.assign(out.coefficients.data() + 1, out.coefficients.data() + out.coefficients.size());
  // b = 0 has the zero solution and carries no diffusion estimate to reject.
  if (ne.btb > 0.0 && !(out.beta_inv > 0.0))
    throw NumericalError("non-physical diffusion: estimated beta^{-1} = " + std::to_string(out.beta_inv) +
                         " <= 0; use a finer mesh or more data");
  return out;
}

std::vector<double> f_statistics_from_trace(const std::vector<double>& loss_trace, std::size_t rows,
                                            std::size_t initial_columns, double btb, double rss_floor) {
  std::vector<double> f;
  for (std::size_t k = 1; k < loss_trace.size(); ++k)
    f.push_back(f_statistic(loss_trace[k - 1], loss_trace[k], rows, initial_columns - (k - 1), rss_floor * btb));
  return f;
}

StepwiseResult stepwise_regression(const NormalEquations& ne, const StepwiseOptions& options) {
  if (!(options.f_threshold > 0.0)) throw ConfigError("f_threshold must be positive");
  const std::size_t p = ne.columns();
  const auto is_protected = protect_mask(options.protect, p);
  StepwiseResult res;
  res.coefficients = VectorXd::Zero(static_cast<Eigen::Index>(p));
  std::vector<std::size_t> zero_cols;
  const auto s = scale_system(ne, zero_cols);
  for (auto j : zero_cols) {
    if (!is_protected[j]) {
      res.eliminated.push_back(j);
      ++res.dependent_drops;
    }
  }
  const double floor_rss = options.rss_floor * ne.btb;
  const auto k = static_cast<Eigen::Index>(s.cols.size());
  res.initial_columns = s.cols.size();

  // Active positions in the scaled system.
  std::vector<Eigen::Index> active(k);
  std::iota(active.begin(), active.end(), Eigen::Index{0});
  auto original = [&](Eigen::Index a) { return s.cols[static_cast<std::size_t>(a)]; };
  auto hints = scaled_hints(options.null_hints, s, p);

  // Phase 1: remove exactly dependent columns, guided by the minimum-norm
  // solution (the least needed participating column goes first).
  VectorXd c;
  Eigen::LLT<MatrixXd> llt;
  bool first = true;
  while (true) {
    const MatrixXd g = submatrix(s.gram, active);
    const VectorXd b = subvector(s.xtb, active);
    auto analysis = analyze_null_space(g, b, first ? hints : std::vector<VectorXd>{}, options.rank_tol);
    if (first) {
      res.loss_trace.push_back(std::max(0.0, ne.btb - b.dot(analysis.solution)));
      first = false;
    }
    c = analysis.solution;
    if (analysis.basis.cols() == 0) {
      if (analysis.factor_valid) llt = std::move(analysis.llt);
      else llt.compute(g);
      break;
    }
    MatrixXd null = analysis.basis;
    std::vector<char> dropped(active.size(), 0);
    while (null.cols() > 0) {
      const MatrixXd q = orthonormalize(null);
      const VectorXd weight = q.rowwise().norm();
      double top = 0.0;
      for (Eigen::Index a = 0; a < weight.size(); ++a)
        if (!dropped[a]) top = std::max(top, weight(a));
      Eigen::Index pick = -1;
      for (Eigen::Index a = 0; a < weight.size(); ++a) {
        if (dropped[a] || is_protected[original(active[a])] || weight(a) < 0.1 * top) continue;
        if (pick < 0 || std::abs(c(a)) < std::abs(c(pick))) pick = a;
      }
      if (pick < 0) throw NumericalError("regression: a protected column is linearly dependent on the others");
      Eigen::Index pivot = 0;
      null.row(pick).cwiseAbs().maxCoeff(&pivot);
      const VectorXd u = null.col(pivot);
      c -= u * (c(pick) / u(pick));
      c(pick) = 0.0;
      MatrixXd rest(null.rows(), null.cols() - 1);
      for (Eigen::Index j = 0, o = 0; j < null.cols(); ++j) {
        if (j == pivot) continue;
        rest.col(o) = null.col(j) - u * (null(pick, j) / u(pick));
        rest(pick, o) = 0.0;
        ++o;
      }
      null = rest;
      dropped[pick] = 1;
      res.eliminated.push_back(original(active[pick]));
      ++res.dependent_drops;
      res.loss_trace.push_back(res.loss_trace.back());
      res.f_trace.push_back(0.0);
    }
    std::vector<Eigen::Index> kept;
    for (std::size_t a = 0; a < active.size(); ++a)
      if (!dropped[a]) kept.push_back(active[a]);
    active = kept;
  }

  // Phase 2: backward elimination with an explicit inverse Gram.
  auto n = static_cast<Eigen::Index>(active.size());
  MatrixXd ginv = n > 0 ? MatrixXd(llt.solve(MatrixXd::Identity(n, n))) : MatrixXd();
  double rss = res.loss_trace.back();
  auto refresh_at = n * 3 / 4;
  while (true) {
    Eigen::Index best = -1;
    double best_delta = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (is_protected[original(active[a])]) continue;
      const double delta = c(a) * c(a) / ginv(a, a);
      if (best < 0 || delta < best_delta || (delta == best_delta && active[a] < active[best])) {
        best = a;
        best_delta = delta;
      }
    }
    if (best < 0) break;
    const double after = rss + std::max(best_delta, 0.0);
    const std::size_t p_before = res.initial_columns - (res.loss_trace.size() - 1);
    const double f = f_statistic(rss, after, ne.rows, p_before, floor_rss);
    if (f > options.f_threshold) {
      res.rejected_f = f;
      break;
    }
    res.loss_trace.push_back(after);
    res.f_trace.push_back(f);
    res.eliminated.push_back(original(active[best]));
    rss = after;

    const VectorXd u = ginv.col(best).head(n);
    const double pivot = u(best);
    auto view = ginv.topLeftCorner(n, n);
    view.noalias() -= (u / pivot) * u.transpose();
    c.head(n) -= u * (c(best) / pivot);
    const Eigen::Index last = n - 1;
    if (best != last) {
      view.row(best) = view.row(last);
      view.col(best) = view.col(last);
      c(best) = c(last);
      active[best] = active[last];
    }
    active.pop_back();
    --n;
    if (n > 0 && n <= refresh_at && n >= 32) {
      // Periodic refactorization bounds the drift of repeated downdates.
      const MatrixXd g = submatrix(s.gram, active);
      Eigen::LLT<MatrixXd> fresh(g);
      if (fresh.info() == Eigen::Success) {
        ginv.topLeftCorner(n, n) = fresh.solve(MatrixXd::Identity(n, n));
        c.head(n) = fresh.solve(subvector(s.xtb, active));
      }
      refresh_at = n * 3 / 4;
    }
  }

  std::vector<std::size_t> survivors;
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto j = original(active[a]);
    res.coefficients(static_cast<Eigen::Index>(j)) = c(a) / s.scale(active[a]);
    survivors.push_back(j);
  }
  for (std::size_t j = 0; j < p; ++j)
    if (is_protected[j] && std::find(survivors.begin(), survivors.end(), j) == survivors.end())
      survivors.push_back(j);
  std::sort(survivors.begin(), survivors.end());
  res.active = survivors;
  return res;
}

VsiFit fit_from_normal_equations(const NormalEquations& ne, const Library& library, const StepwiseOptions& stepwise) {
  if (ne.columns() != library.size() + 1) throw ConfigError("fit: normal equations do not match the library");
  StepwiseOptions opts = stepwise;
  if (opts.null_hints.empty()) {
    const auto constant = library.constant_direction();
    VectorXd hint = VectorXd::Zero(static_cast<Eigen::Index>(ne.columns()));
    for (std::size_t j = 0; j < constant.size(); ++j) hint(static_cast<Eigen::Index>(j + 1)) = constant[j];
    opts.null_hints.push_back(hint);
  }
  const auto res = stepwise_regression(ne, opts);
  VsiFit fit;
  fit.beta_inv = res.coefficients(0);
  if (!(fit.beta_inv > 0.0))
    throw NumericalError("non-physical diffusion: estimated beta^{-1} = " + std::to_string(fit.beta_inv) +
                         " <= 0; use a finer mesh or more data");
  fit.library = library.kind();
  fit.library_coefficients.assign(res.coefficients.data() + 1, res.coefficients.data() + res.coefficients.size());
  for (auto j : res.active)
    if (j > 0) fit.active_set.push_back(j - 1);
  fit.loss_trace = res.loss_trace;
  fit.f_trace = res.f_trace;
  fit.f_threshold = opts.f_threshold;
  fit.rejected_f = res.rejected_f;
  fit.rows = ne.rows;
  fit.field = gauge_fix(PotentialField{library.grid(), library.expand(fit.library_coefficients), 1.0 / fit.beta_inv});
  if (fit.active_set.empty()) warn("stepwise regression kept no potential terms; the fit is diffusion-only");
  return fit;
}

VsiFit run_vsi(const DensitySeries& series, const VsiOptions& options) {
  const Library library(series.grid, options.library.value_or(default_library_kind(series.grid.dims())));
  const auto ne = assemble_normal_equations(series, library, options.assembly);
  return fit_from_normal_equations(ne, library, options.stepwise);
}

std::filesystem::path fit_sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".fit.json");
  return p;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void write_vsi_fit(const std::filesystem::path& path, const VsiFit& fit, const json& extra) {
  write_potential(path, fit.field, extra);
  json f_trace = json::array();
  for (double v : fit.f_trace) f_trace.push_back(number_or_null(v));
  json sidecar{{"format", "fpirl-fit"},
               {"version", 1},
               {"active_set", fit.active_set},
               {"loss_trace", fit.loss_trace},
               {"f_trace", f_trace},
               {"f_threshold", number_or_null(fit.f_threshold)},
               {"rejected_f", number_or_null(fit.rejected_f)},
               {"beta_inv", fit.beta_inv},
               {"library", to_string(fit.library)},
               {"rows", fit.rows},
               {"library_coefficients", fit.library_coefficients}};
  for (const auto& [key, value] : extra.items()) sidecar[key] = value;
  write_json(fit_sidecar_path(path), sidecar);
}

VsiFit read_vsi_fit(const std::filesystem::path& path) {
  VsiFit fit;
  fit.field = read_potential(path);
  const auto sidecar_path = fit_sidecar_path(path);
  const auto j = read_json(sidecar_path);
  if (j.value("format", std::string{}) != "fpirl-fit") throw IoError(sidecar_path.string() + ": not a fit sidecar");
  auto as_double = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
  try {
    fit.active_set = j.at("active_set").get<std::vector<std::size_t>>();
    fit.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    for (const auto& v : j.at("f_trace")) fit.f_trace.push_back(as_double(v));
    fit.f_threshold = as_double(j.at("f_threshold"));
    fit.rejected_f = as_double(j.at("rejected_f"));
    fit.beta_inv = j.at("beta_inv").get<double>();
    fit.library = library_kind_from_string(j.at("library").get<std::string>());
    fit.rows = j.at("rows").get<std::size_t>();
    fit.library_coefficients = j.at("library_coefficients").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError(sidecar_path.string() + ": " + e.what());
  }
  return fit;
}

}  // namespace fpirl
