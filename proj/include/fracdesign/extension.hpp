#pragma once

// Weighted extension problem  -div(y^beta grad v) = 0  on the truncated half-space,
// its finite-volume discretization, Dirichlet/mixed solves, the trace
// Dirichlet-to-Neumann reduction, and the boundary-flux realization of the
// fractional Laplacian.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <limits>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "fracdesign/core/error.hpp"
#include "fracdesign/core/parallel.hpp"
#include "fracdesign/core/quadrature.hpp"
#include "fracdesign/mesh.hpp"

namespace fracdesign {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Neumann graph Laplacian of the weighted Dirichlet form: v^T A v is the
/// finite-volume quadrature of  integral y^beta |grad v|^2.  Boundary conditions
/// are imposed at solve time by elimination.
struct DiscreteOperator {
  GridPtr grid;
  SparseMatrix A;

  /// (A v) for a full nodal vector.
  std::vector<double> apply(const std::vector<double>& v) const {
    Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
    Eigen::VectorXd y = A * x;
    return {y.data(), y.data() + y.size()};
  }
};

/// integral_a^b t^s dt for s > -1.
inline double power_integral(double s, double a, double b) {
  return (std::pow(b, s + 1.0) - std::pow(a, s + 1.0)) / (s + 1.0);
}

/// Conductance of the y-edge between nodes j and j+1 per unit trace measure:
/// 1 / integral t^(-beta) dt, exact for one-dimensional weighted-harmonic profiles.
inline double y_edge_conductance(double beta, double a, double b) {
  return 1.0 / ((b - a) * node_weight(-beta, a, b));
}

inline DiscreteOperator assemble_weighted_operator(const GridPtr& grid) {
  const ExtensionGrid& g = *grid;
  const auto x = g.x_nodes();
  const auto y = g.y_nodes();
  const double beta = g.beta();
  const int nx = g.nx(), ny = g.ny();
  const int nz = g.trace_dim() == 2 ? nx : 1;

  // weight integral over the y-dual interval of node j
  std::vector<double> wy(ny);
  for (int j = 0; j < ny; ++j) {
    const double lo = j == 0 ? 0.0 : 0.5 * (y[j - 1] + y[j]);
    const double hi = j + 1 == ny ? y[j] : 0.5 * (y[j] + y[j + 1]);
    wy[j] = (hi - lo) * node_weight(beta, lo, hi);
  }
  std::vector<double> cy(ny - 1);
  for (int j = 0; j + 1 < ny; ++j) cy[j] = y_edge_conductance(beta, y[j], y[j + 1]);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(g.node_count() * (g.trace_dim() == 2 ? 7 : 5));
  std::vector<double> diag(g.node_count(), 0.0);
  auto edge = [&](std::size_t a, std::size_t b, double k) {
    trip.emplace_back(static_cast<int>(a), static_cast<int>(b), -k);
    trip.emplace_back(static_cast<int>(b), static_cast<int>(a), -k);
    diag[a] += k;
    diag[b] += k;
  };
  for (int j = 0; j < ny; ++j) {
    for (int k = 0; k < nz; ++k) {
      const double trans = g.trace_dim() == 2 ? g.dual_dx(k) : 1.0;
      for (int i = 0; i < nx; ++i) {
        const std::size_t t = g.trace_index(i, k);
        const std::size_t p = g.node(t, j);
        if (i + 1 < nx) edge(p, g.node(g.trace_index(i + 1, k), j), wy[j] * trans / (x[i + 1] - x[i]));
        if (g.trace_dim() == 2 && k + 1 < nx)
          edge(p, g.node(g.trace_index(i, k + 1), j), wy[j] * g.dual_dx(i) / (x[k + 1] - x[k]));
        if (j + 1 < ny) edge(p, g.node(t, j + 1), g.trace_cell_measure(t) * cy[j]);
      }
    }
  }
  for (std::size_t p = 0; p < diag.size(); ++p) trip.emplace_back(static_cast<int>(p), static_cast<int>(p), diag[p]);
  DiscreteOperator op{grid, SparseMatrix(static_cast<int>(g.node_count()), static_cast<int>(g.node_count()))};
  op.A.setFromTriplets(trip.begin(), trip.end());
  op.A.makeCompressed();
  return op;
}

/// Discrete energy  v^T A v  restricted to edges whose midpoint satisfies `in_region`
/// (called with trace coordinates and y). Passing no predicate gives the total.
inline double weighted_dirichlet_energy(const DiscreteOperator& op, const ScalarField& v,
                                        const std::function<bool(const Point&, double)>& in_region = {}) {
  const ExtensionGrid& g = *op.grid;
  double e = 0.0;
  for (int col = 0; col < op.A.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(op.A, col); it; ++it) {
      const auto row = static_cast<std::size_t>(it.row());
      if (row >= static_cast<std::size_t>(col)) continue;
      const double d = v.values[row] - v.values[col];
      if (in_region) {
        const std::size_t tc = g.trace_count();
        const Point pa = g.trace_point(row % tc), pb = g.trace_point(col % tc);
        const double ya = g.y_nodes()[row / tc], yb = g.y_nodes()[col / tc];
        if (!in_region({0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])}, 0.5 * (ya + yb))) continue;
      }
      e += -it.value() * d * d;
    }
  }
  return e;
}

/// Bilinear form a(u, w) = u^T A w.
inline double bilinear_form(const DiscreteOperator& op, const ScalarField& u, const ScalarField& w) {
  const auto aw = op.apply(w.values);
  double s = 0.0;
  for (std::size_t p = 0; p < aw.size(); ++p) s += u.values[p] * aw[p];
  return s;
}

// ---------------------------------------------------------------------------
// Dirichlet / mixed solves

enum class LateralBC { zero, reflect, prescribed };
enum class TopBC { zero, zero_flux, prescribed };

/// Trace data with a mask of prescribed nodes; unmasked trace nodes carry the
/// natural (zero weighted flux) condition.
struct DirichletSpec {
  TraceField trace_values;
  std::vector<std::uint8_t> fixed_mask;
  LateralBC lateral_bc = LateralBC::zero;
  TopBC top_bc = TopBC::zero;
  /// Boundary data for `prescribed` lateral/top conditions.
  std::function<double(const Point&, double)> boundary_data;
};

enum class SolveMethod { direct, cg };

struct SolveOptions {
  SolveMethod method = SolveMethod::direct;
  double tol = 1e-10;
  int max_iter = 20000;
};

struct SolveInfo {
  double residual = 0.0;
  int iterations = 0;
};

/// Jacobi-preconditioned conjugate gradients for SPD A. Returns relative residual
/// and iterations; throws NonConvergence at the cap.
inline SolveInfo pcg(const SparseMatrix& A, const Eigen::VectorXd& b, Eigen::VectorXd& x, double tol, int max_iter) {
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    x.setZero();
    return {};
  }
  const Eigen::VectorXd dinv = A.diagonal().cwiseInverse();
  Eigen::VectorXd r = b - A * x;
  Eigen::VectorXd z = dinv.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  double rel = r.norm() / bnorm;
  int it = 0;
  while (rel > tol) {
    if (it >= max_iter) throw NonConvergence("conjugate gradients hit the iteration cap", rel, it);
    const Eigen::VectorXd Ap = A * p;
    const double step = rz / p.dot(Ap);
    x += step * p;
    r -= step * Ap;
    z = dinv.cwiseProduct(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
    rel = r.norm() / bnorm;
    ++it;
  }
  return {rel, it};
}

namespace detail {

/// Fixed node values (NaN = unknown) implied by a spec.
inline std::vector<double> fixed_values(const ExtensionGrid& g, const DirichletSpec& spec) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> fixed(g.node_count(), nan);
  const std::size_t tc = g.trace_count();
  const auto y = g.y_nodes();
  auto data = [&](std::size_t t, int j) {
    require(static_cast<bool>(spec.boundary_data), "prescribed boundary needs boundary_data", "boundary_data");
    return spec.boundary_data(g.trace_point(t), y[j]);
  };
  for (int j = 0; j < g.ny(); ++j) {
    for (std::size_t t = 0; t < tc; ++t) {
      const std::size_t p = g.node(t, j);
      if (j == 0 && spec.fixed_mask[t]) {
        fixed[p] = spec.trace_values[t];
        continue;
      }
      if (g.on_lateral_boundary(t)) {
        if (spec.lateral_bc == LateralBC::zero) fixed[p] = 0.0;
        if (spec.lateral_bc == LateralBC::prescribed) fixed[p] = data(t, j);
      }
      if (j == g.ny() - 1 && std::isnan(fixed[p])) {
        if (spec.top_bc == TopBC::zero) fixed[p] = 0.0;
        if (spec.top_bc == TopBC::prescribed) fixed[p] = data(t, j);
      }
    }
  }
  return fixed;
}

/// Principal submatrix over `keep` (index map: node -> position or -1).
inline SparseMatrix principal_submatrix(const SparseMatrix& A, const std::vector<int>& pos, int m) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(A.nonZeros()));
  for (int col = 0; col < A.outerSize(); ++col) {
    if (pos[col] < 0) continue;
    for (SparseMatrix::InnerIterator it(A, col); it; ++it)
      if (pos[it.row()] >= 0) trip.emplace_back(pos[it.row()], pos[col], it.value());
  }
  SparseMatrix S(m, m);
  S.setFromTriplets(trip.begin(), trip.end());
  S.makeCompressed();
  return S;
}

}  // namespace detail

/// Solves A v = 0 at the nodes flagged in `unknown`, with every other node held at
/// `values`. Post: relative residual <= tol, or NonConvergence with the last residual.
inline ScalarField solve_free_nodes(const DiscreteOperator& op, const ScalarField& values,
                                    const std::vector<std::uint8_t>& unknown, const SolveOptions& opts = {},
                                    SolveInfo* info = nullptr) {
  const ExtensionGrid& g = *op.grid;
  detail::require(opts.tol > 0.0, "tolerance must be positive", "tol");
  detail::require(unknown.size() == g.node_count(), "unknown mask size mismatch", "unknown");
  std::vector<int> pos(g.node_count(), -1);
  int m = 0;
  for (std::size_t p = 0; p < unknown.size(); ++p)
    if (unknown[p]) pos[p] = m++;
  ScalarField v = values;
  if (m == 0) return v;

  // b = -A_UF v_F
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
  for (int col = 0; col < op.A.outerSize(); ++col) {
    if (pos[col] >= 0 || values.values[col] == 0.0) continue;
    for (SparseMatrix::InnerIterator it(op.A, col); it; ++it)
      if (pos[it.row()] >= 0) b[pos[it.row()]] -= it.value() * values.values[col];
  }
  const SparseMatrix Auu = detail::principal_submatrix(op.A, pos, m);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m);
  SolveInfo result;
  const double bnorm = std::max(b.norm(), 1e-300);
  if (opts.method == SolveMethod::cg) {
    result = pcg(Auu, b, x, opts.tol, opts.max_iter);
  } else {
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(Auu);
    if (ldlt.info() != Eigen::Success) throw NonConvergence("sparse factorization failed", 1.0, 0);
    x = ldlt.solve(b);
    Eigen::VectorXd r = b - Auu * x;
    result.residual = r.norm() / bnorm;
    // iterative refinement
    while (result.residual > opts.tol) {
      if (result.iterations >= std::min(opts.max_iter, 10))
        throw NonConvergence("iterative refinement did not reach the tolerance", result.residual, result.iterations);
      x += ldlt.solve(r);
      r = b - Auu * x;
      result.residual = r.norm() / bnorm;
      ++result.iterations;
    }
  }
  for (std::size_t p = 0; p < unknown.size(); ++p)
    if (pos[p] >= 0) v.values[p] = x[pos[p]];
  if (info) *info = result;
  return v;
}

/// Solves the mixed problem: prescribed values on masked trace nodes and on
/// zero/prescribed lateral and top boundaries, natural conditions elsewhere.
/// Post: relative residual <= tol, or NonConvergence carrying the last residual.
inline ScalarField solve_dirichlet(const DiscreteOperator& op, const DirichletSpec& spec,
                                   const SolveOptions& opts = {}, SolveInfo* info = nullptr) {
  const ExtensionGrid& g = *op.grid;
  detail::require(opts.tol > 0.0, "tolerance must be positive", "tol");
  detail::require(spec.fixed_mask.size() == g.trace_count(), "mask size must equal trace count", "fixed_mask");
  detail::require(spec.trace_values.values.size() == g.trace_count(), "trace size mismatch", "trace_values");
  detail::require(std::any_of(spec.fixed_mask.begin(), spec.fixed_mask.end(), [](auto b) { return b != 0; }),
                  "at least one trace node must be prescribed", "fixed_mask");
  for (std::size_t t = 0; t < g.trace_count(); ++t)
    if (spec.fixed_mask[t]) detail::require(std::isfinite(spec.trace_values[t]), "prescribed values must be finite", "trace_values");

  const std::vector<double> fixed = detail::fixed_values(g, spec);
  ScalarField values(op.grid);
  std::vector<std::uint8_t> unknown(g.node_count(), 0);
  for (std::size_t p = 0; p < fixed.size(); ++p) {
    if (std::isnan(fixed[p])) unknown[p] = 1;
    else values.values[p] = fixed[p];
  }
  return solve_free_nodes(op, values, unknown, opts, info);
}

/// Convenience: Dirichlet data on the whole trace.
inline DirichletSpec full_trace_spec(const TraceField& u, LateralBC lat = LateralBC::zero, TopBC top = TopBC::zero) {
  DirichletSpec s;
  s.trace_values = u;
  s.fixed_mask.assign(u.values.size(), 1);
  s.lateral_bc = lat;
  s.top_bc = top;
  return s;
}

// ---------------------------------------------------------------------------
// Trace Dirichlet-to-Neumann reduction

/// Eliminates every non-trace unknown once, leaving the dense Schur complement S
/// on a set of active trace nodes (all other trace nodes are held at zero).
/// For any trace vector u on the active set, u^T S u is the discrete energy of
/// its extension, and mixed trace problems reduce to dense solves with S.
class TraceSystem {
 public:
  TraceSystem(const DiscreteOperator& op, std::vector<std::uint8_t> active, LateralBC lat = LateralBC::zero,
              TopBC top = TopBC::zero)
      : op_(op), lat_(lat), top_(top) {
    const ExtensionGrid& g = *op.grid;
    detail::require(active.size() == g.trace_count(), "active mask size mismatch", "active");
    detail::require(lat != LateralBC::prescribed && top != TopBC::prescribed,
                    "trace reduction supports homogeneous outer conditions only", "bc");
    const std::size_t tc = g.trace_count();
    pos_.assign(g.node_count(), -1);
    trace_pos_.assign(tc, -1);
    for (std::size_t t = 0; t < tc; ++t) {
      if (!active[t] || (lat == LateralBC::zero && g.on_lateral_boundary(t))) continue;
      trace_pos_[t] = static_cast<int>(active_.size());
      active_.push_back(t);
    }
    int m = 0;
    for (int j = 1; j < g.ny(); ++j) {
      if (j == g.ny() - 1 && top == TopBC::zero) break;
      for (std::size_t t = 0; t < tc; ++t) {
        if (lat == LateralBC::zero && g.on_lateral_boundary(t)) continue;
        pos_[g.node(t, j)] = m++;
      }
    }
    interior_count_ = m;
    const SparseMatrix Aii = detail::principal_submatrix(op.A, pos_, m);
    ldlt_.compute(Aii);
    if (ldlt_.info() != Eigen::Success) throw NonConvergence("interior factorization failed", 1.0, 0);

    // coupling A_IT (interior rows, active trace columns) and A_TT
    const int na = static_cast<int>(active_.size());
    std::vector<Eigen::Triplet<double>> trip;
    S_ = Eigen::MatrixXd::Zero(na, na);
    for (int a = 0; a < na; ++a) {
      const auto col = static_cast<int>(active_[a]);
      for (SparseMatrix::InnerIterator it(op.A, col); it; ++it) {
        const auto r = static_cast<std::size_t>(it.row());
        if (pos_[r] >= 0) trip.emplace_back(pos_[r], a, it.value());
        else if (r < tc && trace_pos_[r] >= 0) S_(trace_pos_[r], a) += it.value();
      }
    }
    Ait_ = SparseMatrix(m, na);
    Ait_.setFromTriplets(trip.begin(), trip.end());
    Ait_.makeCompressed();

    constexpr int kBlock = 32;
    const int blocks = (na + kBlock - 1) / kBlock;
    parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t bidx) {
      const int c0 = static_cast<int>(bidx) * kBlock;
      const int cw = std::min(kBlock, na - c0);
      const Eigen::MatrixXd rhs = Eigen::MatrixXd(Ait_.middleCols(c0, cw));
      const Eigen::MatrixXd X = ldlt_.solve(rhs);
      const Eigen::MatrixXd corr = Ait_.transpose() * X;  // A_TI X
      S_.middleCols(c0, cw) -= corr;
    });
    S_ = 0.5 * (S_ + S_.transpose()).eval();
  }

  const DiscreteOperator& op() const { return op_; }
  const GridPtr& grid() const { return op_.grid; }
  const Eigen::MatrixXd& S() const { return S_; }
  const std::vector<std::size_t>& active() const { return active_; }
  /// Position of trace node t in the active set, or -1.
  int position(std::size_t t) const { return trace_pos_[t]; }
  LateralBC lateral_bc() const { return lat_; }
  TopBC top_bc() const { return top_; }

  /// Extension of a trace vector (zero on inactive trace nodes).
  ScalarField extend(const TraceField& u) const {
    const ExtensionGrid& g = *op_.grid;
    Eigen::VectorXd ua(static_cast<Eigen::Index>(active_.size()));
    for (std::size_t a = 0; a < active_.size(); ++a) ua[a] = u[active_[a]];
    const Eigen::VectorXd vi = -ldlt_.solve(Ait_ * ua);
    ScalarField v(op_.grid);
    for (std::size_t a = 0; a < active_.size(); ++a) v.values[active_[a]] = ua[a];
    for (std::size_t p = g.trace_count(); p < g.node_count(); ++p)
      if (pos_[p] >= 0) v.values[p] = vi[pos_[p]];
    return v;
  }

  /// Energy u^T S u of a trace vector.
  double energy(const TraceField& u) const {
    const Eigen::VectorXd ua = gather(u);
    return ua.dot(S_ * ua);
  }

  Eigen::VectorXd gather(const TraceField& u) const {
    Eigen::VectorXd ua(static_cast<Eigen::Index>(active_.size()));
    for (std::size_t a = 0; a < active_.size(); ++a) ua[a] = u[active_[a]];
    return ua;
  }

 private:
  DiscreteOperator op_;
  LateralBC lat_;
  TopBC top_;
  std::vector<int> pos_;
  std::vector<int> trace_pos_;
  std::vector<std::size_t> active_;
  int interior_count_ = 0;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
  SparseMatrix Ait_;
  Eigen::MatrixXd S_;
};

/// Result of a mixed trace problem: prescribed values on `fixed` nodes, free
/// (natural condition) on the rest of the active set.
struct MaskSolution {
  TraceField u;
  double energy = 0.0;
  std::vector<int> free;                 // active-set positions of free nodes
  Eigen::LLT<Eigen::MatrixXd> chol;      // factor of S_FF
  Eigen::VectorXd Su;                    // S u on the active set
};

/// `prescribed[t]` true means u[t] = data[t]; other active nodes are free.
inline MaskSolution solve_mask_problem(const TraceSystem& sys, const std::vector<std::uint8_t>& prescribed,
                                       const TraceField& data) {
  const auto& act = sys.active();
  const Eigen::MatrixXd& S = sys.S();
  MaskSolution sol;
  sol.u = TraceField(sys.grid());
  std::vector<int> fixed;
  for (std::size_t a = 0; a < act.size(); ++a) {
    if (prescribed[act[a]]) {
      fixed.push_back(static_cast<int>(a));
      sol.u[act[a]] = data[act[a]];
    } else {
      sol.free.push_back(static_cast<int>(a));
    }
  }
  const auto nf = static_cast<Eigen::Index>(sol.free.size());
  if (nf > 0) {
    Eigen::MatrixXd Sff(nf, nf);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf);
    for (Eigen::Index r = 0; r < nf; ++r) {
      for (Eigen::Index c = 0; c < nf; ++c) Sff(r, c) = S(sol.free[r], sol.free[c]);
      for (int f : fixed) rhs[r] -= S(sol.free[r], f) * sol.u[act[f]];
    }
    sol.chol.compute(Sff);
    if (sol.chol.info() != Eigen::Success) throw NonConvergence("free-block factorization failed", 1.0, 0);
    const Eigen::VectorXd uf = sol.chol.solve(rhs);
    for (Eigen::Index r = 0; r < nf; ++r) sol.u[act[sol.free[r]]] = uf[r];
  }
  const Eigen::VectorXd ua = sys.gather(sol.u);
  sol.Su = S * ua;
  sol.energy = ua.dot(sol.Su);
  return sol;
}

// ---------------------------------------------------------------------------
// Fractional Laplacian as a boundary flux

/// One-dimensional profile of a single Fourier mode,
///   -(y^beta phi')' + k^2 y^beta phi = 0,  phi(0) = 1,  phi(Ymax) = 0,
/// solved on a fine graded 1D mesh with the same exact-flux discretization.
class WeightedModeProfile {
 public:
  WeightedModeProfile(double alpha, double k, int nodes = 4001, double decay_lengths = 36.0) : k_(k) {
    const double beta = 1.0 - 2.0 * alpha;
    y_ = graded_nodes(decay_lengths / k, nodes, 2.0);
    const int n = nodes;
    std::vector<double> sub(n, 0.0), dia(n, 0.0), sup(n, 0.0), rhs(n, 0.0);
    for (int j = 0; j + 1 < n; ++j) {
      const double c = y_edge_conductance(beta, y_[j], y_[j + 1]);
      dia[j] += c;
      dia[j + 1] += c;
      sup[j] -= c;
      sub[j + 1] -= c;
    }
    for (int j = 0; j < n; ++j) {
      const double lo = j == 0 ? 0.0 : 0.5 * (y_[j - 1] + y_[j]);
      const double hi = j + 1 == n ? y_[j] : 0.5 * (y_[j] + y_[j + 1]);
      dia[j] += k * k * power_integral(beta, lo, hi);
    }
    // Dirichlet rows
    phi_.assign(n, 0.0);
    phi_[0] = 1.0;
    // Thomas on unknowns 1..n-2
    const int m = n - 2;
    std::vector<double> cp(m), dp(m);
    for (int r = 0; r < m; ++r) {
      const int j = r + 1;
      double d = rhs[j] - (j == 1 ? sub[j] * phi_[0] : 0.0);
      const double b = dia[j];
      const double a = r == 0 ? 0.0 : sub[j];
      const double denom = b - a * (r == 0 ? 0.0 : cp[r - 1]);
      cp[r] = sup[j] / denom;
      dp[r] = (d - a * (r == 0 ? 0.0 : dp[r - 1])) / denom;
    }
    for (int r = m - 1; r >= 0; --r) phi_[r + 1] = dp[r] - (r + 1 < m ? cp[r] * phi_[r + 2] : 0.0);
    beta_ = beta;
  }

  double operator()(double y) const {
    if (y >= y_.back()) return 0.0;
    const auto it = std::upper_bound(y_.begin(), y_.end(), y);
    const std::size_t j = static_cast<std::size_t>(it - y_.begin()) - 1;
    const double s = (y - y_[j]) / (y_[j + 1] - y_[j]);
    return (1.0 - s) * phi_[j] + s * phi_[j + 1];
  }

  /// -lim y^beta phi'(y).
  double boundary_flux() const;

 private:
  double k_;
  double beta_ = 0.0;
  std::vector<double> y_, phi_;
};

namespace detail {

/// Extrapolates layer-averaged weighted fluxes q_j = (v_{j+1} - v_j) / integral t^(-beta)
/// of the first three layers to y = 0 using the expansion
///   q(y) = q0 + c1 y^(1+beta) + c2 y^2,
/// whose layer averages (weight t^(-beta)) are computed exactly.
inline double extrapolate_flux(std::span<const double> y, double beta, const double v[4]) {
  Eigen::Matrix3d M;
  Eigen::Vector3d q;
  for (int j = 0; j < 3; ++j) {
    const double a = y[j], b = y[j + 1];
    const double R = power_integral(-beta, a, b);
    q[j] = (v[j + 1] - v[j]) / R;
    M(j, 0) = 1.0;
    M(j, 1) = power_integral(1.0, a, b) / R;            // t^(1+beta) * t^(-beta)
    M(j, 2) = power_integral(2.0 - beta, a, b) / R;     // t^2 * t^(-beta)
  }
  return M.colPivHouseholderQr().solve(q)[0];
}

}  // namespace detail

inline double WeightedModeProfile::boundary_flux() const {
  const double v[4] = {phi_[0], phi_[1], phi_[2], phi_[3]};
  return -detail::extrapolate_flux(y_, beta_, v);
}

/// Ratio between the extension flux and (-Delta)^alpha under the Fourier-multiplier
/// normalization: -lim y^beta v_y = d_alpha (-Delta)^alpha u. Computed from the
/// k = 1 mode profile and cached.
inline double extension_flux_constant(double alpha) {
  static std::map<double, double> cache;
  static std::mutex m;
  std::lock_guard lock(m);
  auto it = cache.find(alpha);
  if (it != cache.end()) return it->second;
  const double d = WeightedModeProfile(alpha, 1.0, 16001).boundary_flux();
  cache.emplace(alpha, d);
  return d;
}

/// Raw boundary flux  -lim_{y->0} y^beta dv/dy  at every trace node, from
/// extrapolation over the first three graded layers (expansion above; exact for
/// the leading three terms).
inline TraceField extension_flux(const ScalarField& v) {
  const ExtensionGrid& g = *v.grid;
  TraceField out(v.grid);
  const auto y = g.y_nodes();
  for (std::size_t t = 0; t < g.trace_count(); ++t) {
    const double vals[4] = {v(t, 0), v(t, 1), v(t, 2), v(t, 3)};
    out[t] = -detail::extrapolate_flux(y, g.beta(), vals);
  }
  return out;
}

/// (-Delta)^alpha of the trace of v, realized as the normalized boundary flux.
inline TraceField fractional_laplacian_via_flux(const ScalarField& v) {
  TraceField f = extension_flux(v);
  const double d = extension_flux_constant(v.grid->alpha());
  for (double& x : f.values) x /= d;
  return f;
}

// ---------------------------------------------------------------------------
// Poisson kernel

/// q_{n,alpha} from the normalization  integral P(x, 1) dx = 1, by quadrature of
/// integral (1 + |x|^2)^(-(n + 2 alpha)/2) dx  (split at |x| = 1, the outer part
/// mapped to a smooth integrand on [0, 1]).
inline double poisson_normalization(int n, double alpha) {
  detail::require(n == 1 || n == 2, "trace dimension must be 1 or 2", "n");
  detail::require(alpha > 0.0 && alpha < 1.0, "order must lie in (0, 1)", "alpha");
  static std::map<std::pair<int, double>, double> cache;
  static std::mutex m;
  std::lock_guard lock(m);
  auto it = cache.find({n, alpha});
  if (it != cache.end()) return it->second;
  const double e = 0.5 * (n + 2.0 * alpha);
  const double surface = n == 1 ? 2.0 : 2.0 * std::numbers::pi;
  const double inner = quad::composite([&](double r) { return std::pow(r, n - 1) * std::pow(1.0 + r * r, -e); },
                                       0.0, 1.0, 8, 20);
  // r = 1/s, s = w^(1/(2 alpha)):  integral_0^1 (1/(2 alpha)) (1 + s^2)^(-e) dw
  const double outer = quad::composite(
      [&](double w) {
        const double s = std::pow(w, 1.0 / (2.0 * alpha));
        return std::pow(1.0 + s * s, -e) / (2.0 * alpha);
      },
      0.0, 1.0, 64, 20);
  const double q = 1.0 / (surface * (inner + outer));
  cache.emplace(std::pair{n, alpha}, q);
  return q;
}

/// P_{n,alpha}(x, y) = q y^(2 alpha) / (|x|^2 + y^2)^((n + 2 alpha)/2).
inline double poisson_kernel(const Point& x, double y, int n, double alpha) {
  detail::require(y > 0.0, "height must be positive", "y");
  const double r2 = x[0] * x[0] + (n == 2 ? x[1] * x[1] : 0.0);
  return poisson_normalization(n, alpha) * std::pow(y, 2.0 * alpha) * std::pow(r2 + y * y, -0.5 * (n + 2.0 * alpha));
}

/// Convolution of the trace data with P(., y), using kernel mass integrated over
/// each trace dual cell (data outside the grid taken as zero).
inline TraceField extend_by_kernel(const TraceField& u, double y) {
  const ExtensionGrid& g = *u.grid;
  const int n = g.trace_dim();
  const double alpha = g.alpha();
  const double q = poisson_normalization(n, alpha);
  const auto x = g.x_nodes();
  const int nx = g.nx();
  TraceField out(u.grid);
  if (n == 1) {
    // mass of P(., y) over [a, b] = q * (G(b/y) - G(a/y)),  G(s) = int_0^s (1+t^2)^(-(1+2a)/2)
    const double e = 0.5 + alpha;
    auto G = [&](double s) {
      const double as = std::abs(s);
      double v = 0.0;
      if (as <= 1.0) {
        v = quad::composite([&](double t) { return std::pow(1.0 + t * t, -e); }, 0.0, as, 2, 16);
      } else {
        v = quad::composite([&](double t) { return std::pow(1.0 + t * t, -e); }, 0.0, 1.0, 2, 16);
        // t = 1/s substitution, then s = w^(1/(2 alpha))
        const double wmax = 1.0, wmin = std::pow(1.0 / as, 2.0 * alpha);
        v += quad::composite(
            [&](double w) {
              const double s = std::pow(w, 1.0 / (2.0 * alpha));
              return std::pow(1.0 + s * s, -e) / (2.0 * alpha);
            },
            wmin, wmax, 16, 16);
      }
      return s < 0 ? -v : v;
    };
    std::vector<double> edges(nx + 1);
    edges[0] = x[0] - 0.5 * (x[1] - x[0]);
    for (int i = 1; i < nx; ++i) edges[i] = 0.5 * (x[i - 1] + x[i]);
    edges[nx] = x[nx - 1] + 0.5 * (x[nx - 1] - x[nx - 2]);
    // on a uniform axis the offsets repeat, so cache G by offset
    std::unordered_map<long long, double> memo;
    auto Gc = [&](double s) {
      const long long key = std::llround(s * 1e10);
      auto it = memo.find(key);
      if (it != memo.end()) return it->second;
      return memo.emplace(key, G(s)).first->second;
    };
    for (int i = 0; i < nx; ++i) {
      std::vector<double> Gv(nx + 1);
      for (int e2 = 0; e2 <= nx; ++e2) Gv[e2] = Gc((edges[e2] - x[i]) / y);
      double s = 0.0;
      for (int j = 0; j < nx; ++j) s += u[j] * (Gv[j + 1] - Gv[j]);
      out[i] = q * s;
    }
    return out;
  }
  // n = 2: cell-integrated weights for nearby cells (tensor Gauss-Legendre,
  // subdivided when y is small against the cell), point weights further out.
  // Clipped boundary cells scale the full-cell weight by their measure.
  const double h = g.spacing();
  const int sub = std::clamp(static_cast<int>(std::ceil(2.0 * h / y)), 1, 16);
  const quad::Rule& r = quad::gauss_legendre(6);
  constexpr int kNear = 3;
  double near_w[2 * kNear + 1][2 * kNear + 1];
  for (int da = -kNear; da <= kNear; ++da)
    for (int db = -kNear; db <= kNear; ++db) {
      const double hs = h / sub;
      double w = 0.0;
      for (int a = 0; a < sub; ++a)
        for (int b = 0; b < sub; ++b)
          for (std::size_t ka = 0; ka < r.nodes.size(); ++ka)
            for (std::size_t kb = 0; kb < r.nodes.size(); ++kb) {
              const double p0 = da * h - 0.5 * h + (a + 0.5 + 0.5 * r.nodes[ka]) * hs;
              const double p1 = db * h - 0.5 * h + (b + 0.5 + 0.5 * r.nodes[kb]) * hs;
              w += 0.25 * r.weights[ka] * r.weights[kb] * hs * hs * poisson_kernel({p0, p1}, y, 2, alpha);
            }
      near_w[da + kNear][db + kNear] = w / (h * h);
    }
  for (std::size_t ti = 0; ti < g.trace_count(); ++ti) {
    const int ia = g.ix(ti), ib = g.iz(ti);
    const Point xi = g.trace_point(ti);
    double s = 0.0;
    for (std::size_t tj = 0; tj < g.trace_count(); ++tj) {
      if (u[tj] == 0.0) continue;
      const int da = g.ix(tj) - ia, db = g.iz(tj) - ib;
      const double m = g.trace_cell_measure(tj);
      if (std::abs(da) <= kNear && std::abs(db) <= kNear) {
        s += near_w[da + kNear][db + kNear] * m * u[tj];
      } else {
        const Point xj = g.trace_point(tj);
        s += poisson_kernel({xj[0] - xi[0], xj[1] - xi[1]}, y, 2, alpha) * m * u[tj];
      }
    }
    out[ti] = s;
  }
  return out;
}

}  // namespace fracdesign
