#pragma once

// Penalized free-boundary functional
//   I_eps(u) = integral y^beta |grad v|^2 + f_eps(|{u > 0} \ D|)
// with u = phi prescribed on D, its minimizers (exhaustive 1D oracle and an
// iterative free-boundary flip scheme), harmonic replacement, and the two-ball
// domain perturbation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "fracdesign/core/error.hpp"
#include "fracdesign/core/parallel.hpp"
#include "fracdesign/extension.hpp"
#include "fracdesign/mesh.hpp"

namespace fracdesign {

struct PenaltyParams {
  double eps = 1.0;
  double omega = 0.5;
};

/// eps > 0, omega > 0, omega <= admissible trace measure.
inline void validate(const PenaltyParams& p, double admissible_measure) {
  detail::require(p.eps > 0.0 && std::isfinite(p.eps), "penalization strength must be positive", "eps");
  detail::require(p.omega > 0.0, "volume budget must be positive", "omega");
  detail::require(p.omega <= admissible_measure, "volume budget exceeds the admissible trace measure", "omega");
}

/// f_eps(s) = (s - omega)/eps for s >= omega, eps (s - omega) below.
inline double f_eps(double s, const PenaltyParams& p) {
  detail::require(s >= 0.0, "volume must be nonnegative", "s");
  return s >= p.omega ? (s - p.omega) / p.eps : p.eps * (s - p.omega);
}

/// Problem data: fixed region D (trace mask) and the data phi prescribed there.
struct Problem {
  GridPtr grid;
  std::vector<std::uint8_t> fixed_region;
  TraceField phi;
};

struct Configuration {
  GridPtr grid;
  std::vector<std::uint8_t> fixed_region;
  TraceField phi;
  TraceField trace_values;
  std::vector<std::uint8_t> positivity_mask;
  ScalarField extension;
  double theta_pos = 1e-9;
};

/// Trace measure of {u > theta} outside D.
inline double positivity_volume(const Configuration& c) {
  const ExtensionGrid& g = *c.grid;
  double v = 0.0;
  for (std::size_t t = 0; t < g.trace_count(); ++t)
    if (c.positivity_mask[t] && !c.fixed_region[t]) v += g.trace_cell_measure(t);
  return v;
}

/// Checks the configuration invariants; throws InvalidArgument naming the broken one.
inline void check_configuration(const Configuration& c, double tol = 1e-9) {
  const ExtensionGrid& g = *c.grid;
  for (std::size_t t = 0; t < g.trace_count(); ++t) {
    const double u = c.trace_values[t];
    if (c.fixed_region[t] && std::abs(u - c.phi[t]) > tol)
      throw InvalidArgument("trace differs from phi on the fixed region", "trace_values");
    if (u < -tol) throw InvalidArgument("trace must be nonnegative", "trace_values");
    if (static_cast<bool>(c.positivity_mask[t]) != (u > c.theta_pos))
      throw InvalidArgument("mask must equal {u > theta_pos}", "positivity_mask");
  }
}

inline double energy_I_eps(const DiscreteOperator& op, const Configuration& c, const PenaltyParams& p) {
  return weighted_dirichlet_energy(op, c.extension) + f_eps(positivity_volume(c), p);
}

inline double energy_I_eps(const Configuration& c, const PenaltyParams& p) {
  return energy_I_eps(assemble_weighted_operator(c.grid), c, p);
}

/// Raised when the iterative minimizer hits its cap; carries the I_eps trajectory.
class MinimizerNonConvergence : public NonConvergence {
 public:
  MinimizerNonConvergence(const std::string& msg, std::vector<double> trajectory)
      : NonConvergence(msg, trajectory.empty() ? 0.0 : trajectory.back(), static_cast<int>(trajectory.size())),
        trajectory_(std::move(trajectory)) {}
  const std::vector<double>& trajectory() const { return trajectory_; }

 private:
  std::vector<double> trajectory_;
};

enum class InitKind { fixed_region, given_mask, random };

struct MinimizeOptions {
  int max_outer = 2000;
  InitKind init = InitKind::fixed_region;
  std::vector<std::uint8_t> initial_mask;  // for InitKind::given_mask
  std::uint64_t seed = 1;
  int pair_candidates = 8;                 // exact evaluations of predicted pair moves
};

/// Outcome of a minimization: the configuration and its functional values.
struct MinimizeResult {
  Configuration config;
  double energy = 0.0;        // I_eps
  double dirichlet = 0.0;     // weighted Dirichlet energy
  double volume = 0.0;
  int iterations = 0;
  std::vector<double> trajectory;
};

/// Shared machinery for one problem: operator, trace reduction, positivity threshold.
class PenaltySolver {
 public:
  explicit PenaltySolver(Problem problem, double solver_tol = 1e-10)
      : pb_(std::move(problem)), op_(assemble_weighted_operator(pb_.grid)), theta_(10.0 * solver_tol) {
    const ExtensionGrid& g = *pb_.grid;
    detail::require(pb_.fixed_region.size() == g.trace_count(), "fixed region mask size mismatch", "fixed_region");
    detail::require(pb_.phi.values.size() == g.trace_count(), "phi size mismatch", "phi");
    for (std::size_t t = 0; t < g.trace_count(); ++t) {
      if (!pb_.fixed_region[t]) continue;
      detail::require(pb_.phi[t] >= 0.0 && std::isfinite(pb_.phi[t]), "phi must be finite and nonnegative on D", "phi");
      detail::require(!g.on_lateral_boundary(t), "fixed region must avoid the lateral boundary", "fixed_region");
    }
    sys_ = std::make_shared<TraceSystem>(op_, std::vector<std::uint8_t>(g.trace_count(), 1));
    for (std::size_t t = 0; t < g.trace_count(); ++t)
      if (!pb_.fixed_region[t] && !g.on_lateral_boundary(t)) admissible_ += g.trace_cell_measure(t);
  }

  const Problem& problem() const { return pb_; }
  const DiscreteOperator& op() const { return op_; }
  const TraceSystem& system() const { return *sys_; }
  const GridPtr& grid() const { return pb_.grid; }
  double theta_pos() const { return theta_; }
  double admissible_measure() const { return admissible_; }

  /// Mask of nodes held at phi (D with phi > 0) or at zero: everything outside `mask`.
  std::vector<std::uint8_t> prescribed(const std::vector<std::uint8_t>& mask) const {
    std::vector<std::uint8_t> fixed(mask.size());
    for (std::size_t t = 0; t < mask.size(); ++t) fixed[t] = pb_.fixed_region[t] || !mask[t];
    return fixed;
  }

  TraceField data() const {
    TraceField d(pb_.grid);
    for (std::size_t t = 0; t < d.values.size(); ++t)
      if (pb_.fixed_region[t]) d[t] = pb_.phi[t];
    return d;
  }

  /// Minimal-energy trace supported on `mask` (u = phi on D, 0 off the mask).
  MaskSolution solve(const std::vector<std::uint8_t>& mask) const {
    return solve_mask_problem(*sys_, prescribed(mask), data());
  }

  double volume(const std::vector<std::uint8_t>& mask) const {
    const ExtensionGrid& g = *pb_.grid;
    double v = 0.0;
    for (std::size_t t = 0; t < mask.size(); ++t)
      if (mask[t] && !pb_.fixed_region[t]) v += g.trace_cell_measure(t);
    return v;
  }

  /// Builds the full configuration (extension, threshold mask) for a trace.
  Configuration configure(const TraceField& u) const {
    Configuration c;
    c.grid = pb_.grid;
    c.fixed_region = pb_.fixed_region;
    c.phi = pb_.phi;
    c.trace_values = u;
    for (double& x : c.trace_values.values) x = std::max(x, 0.0);
    c.theta_pos = theta_;
    c.positivity_mask.resize(u.values.size());
    for (std::size_t t = 0; t < u.values.size(); ++t) c.positivity_mask[t] = c.trace_values[t] > theta_;
    c.extension = sys_->extend(c.trace_values);
    return c;
  }

  MinimizeResult result_for(const MaskSolution& sol, const PenaltyParams& p) const {
    MinimizeResult r;
    r.config = configure(sol.u);
    r.dirichlet = sol.energy;
    r.volume = positivity_volume(r.config);
    r.energy = r.dirichlet + f_eps(r.volume, p);
    return r;
  }

 private:
  Problem pb_;
  DiscreteOperator op_;
  std::shared_ptr<TraceSystem> sys_;
  double theta_;
  double admissible_ = 0.0;
};

namespace detail {

inline bool better(double I, double vol, double bestI, double bestVol) {
  if (!std::isfinite(bestI)) return true;
  const double tol = 1e-12 * (1.0 + std::abs(bestI));
  if (I < bestI - tol) return true;
  return I <= bestI + tol && vol < bestVol;
}

/// Maximal runs of consecutive D nodes in a 1D mask.
inline std::vector<std::pair<int, int>> intervals_of(const std::vector<std::uint8_t>& D) {
  std::vector<std::pair<int, int>> out;
  const int n = static_cast<int>(D.size());
  for (int i = 0; i < n; ++i) {
    if (!D[i]) continue;
    int j = i;
    while (j + 1 < n && D[j + 1]) ++j;
    out.emplace_back(i, j);
    i = j;
  }
  return out;
}

/// Exhaustive scan over positivity intervals [a, b] containing [dl, dr]: bordered
/// Cholesky appends one free node at a time, E = u_D^T S_DD u_D - |L^-1 g|^2.
inline MinimizeResult bruteforce_single(const PenaltySolver& s, const PenaltyParams& p, int dl, int dr) {
  const ExtensionGrid& g = *s.grid();
  const TraceSystem& sys = s.system();
  const Eigen::MatrixXd& S = sys.S();
  const TraceField& phi = s.problem().phi;
  const int nx = g.nx();
  const int lo = 1, hi = nx - 2;
  // D block
  std::vector<int> dpos;
  Eigen::VectorXd uD(dr - dl + 1);
  for (int i = dl; i <= dr; ++i) {
    dpos.push_back(sys.position(i));
    uD[i - dl] = phi[i];
  }
  double ED = 0.0;
  for (std::size_t r = 0; r < dpos.size(); ++r)
    for (std::size_t c = 0; c < dpos.size(); ++c) ED += uD[r] * S(dpos[r], dpos[c]) * uD[c];
  auto gval = [&](int i) {
    double v = 0.0;
    for (std::size_t c = 0; c < dpos.size(); ++c) v += S(sys.position(i), dpos[c]) * uD[c];
    return v;
  };
  const int cap = (dl - lo) + (hi - dr);
  Eigen::MatrixXd Lleft = Eigen::MatrixXd::Zero(std::max(cap, 1), std::max(cap, 1));
  Eigen::VectorXd zleft = Eigen::VectorXd::Zero(std::max(cap, 1));
  std::vector<int> order;  // free nodes in factorization order
  auto append = [&](Eigen::MatrixXd& L, Eigen::VectorXd& z, std::vector<int>& ord, int node) {
    const int k = static_cast<int>(ord.size());
    const int pn = sys.position(node);
    Eigen::VectorXd l(k);
    for (int r = 0; r < k; ++r) {
      double v = S(sys.position(ord[r]), pn);
      for (int c = 0; c < r; ++c) v -= L(r, c) * l[c];
      l[r] = v / L(r, r);
    }
    const double d2 = S(pn, pn) - l.squaredNorm();
    if (!(d2 > 0.0)) throw NonConvergence("loss of positive definiteness in the interval scan", d2, k);
    const double d = std::sqrt(d2);
    for (int c = 0; c < k; ++c) L(k, c) = l[c];
    L(k, k) = d;
    z[k] = (gval(node) - l.dot(z.head(k))) / d;
    ord.push_back(node);
  };
  double bestI = std::numeric_limits<double>::infinity(), bestVol = 0.0;
  int bestA = dl, bestB = dr;
  double volLeft = 0.0;
  for (int a = dl; a >= lo; --a) {
    if (a < dl) {
      append(Lleft, zleft, order, a);
      volLeft += g.trace_cell_measure(a);
    }
    Eigen::MatrixXd L = Lleft;
    Eigen::VectorXd z = zleft;
    std::vector<int> ord = order;
    double zz = z.head(static_cast<Eigen::Index>(ord.size())).squaredNorm();
    double vol = volLeft;
    for (int b = dr; b <= hi; ++b) {
      if (b > dr) {
        append(L, z, ord, b);
        zz += z[static_cast<Eigen::Index>(ord.size()) - 1] * z[static_cast<Eigen::Index>(ord.size()) - 1];
        vol += g.trace_cell_measure(b);
      }
      const double I = ED - zz + f_eps(vol, p);
      if (better(I, vol, bestI, bestVol)) {
        bestI = I;
        bestVol = vol;
        bestA = a;
        bestB = b;
      }
    }
  }
  std::vector<std::uint8_t> mask(g.trace_count(), 0);
  for (int i = bestA; i <= bestB; ++i) mask[i] = 1;
  return s.result_for(s.solve(mask), p);
}

}  // namespace detail

/// Exhaustive 1D minimizer over positivity sets that are intervals containing D
/// (or unions of two intervals containing the two components of D). Returns the
/// global discrete minimizer; ties go to the smaller volume.
inline MinimizeResult minimize_bruteforce_1d(const PenaltySolver& s, const PenaltyParams& p) {
  const ExtensionGrid& g = *s.grid();
  detail::require(g.trace_dim() == 1, "exhaustive minimizer is one-dimensional", "n");
  validate(p, s.admissible_measure());
  const auto& D = s.problem().fixed_region;
  const auto parts = detail::intervals_of(D);
  detail::require(parts.size() == 1 || parts.size() == 2, "D must be one interval or two intervals", "fixed_region");
  bool any_positive = false;
  for (std::size_t t = 0; t < D.size(); ++t) any_positive |= D[t] && s.problem().phi[t] > 0.0;
  if (!any_positive) {
    if (std::all_of(s.problem().phi.values.begin(), s.problem().phi.values.end(), [](double v) { return v == 0.0; }))
      return s.result_for(s.solve(std::vector<std::uint8_t>(D.size(), 0)), p);
    throw InvalidArgument("no admissible candidate: phi <= 0 on all of D", "phi");
  }
  if (parts.size() == 1) return detail::bruteforce_single(s, p, parts[0].first, parts[0].second);

  // two components: enumerate [a1, b1] x [a2, b2] directly
  const int nx = g.nx();
  const auto [l1, r1] = parts[0];
  const auto [l2, r2] = parts[1];
  struct Cand {
    int a1, b1, a2, b2;
  };
  std::vector<Cand> cands;
  for (int a1 = 1; a1 <= l1; ++a1)
    for (int b1 = r1; b1 < l2; ++b1)
      for (int a2 = std::max(b1 + 1, r1 + 1); a2 <= l2; ++a2)
        for (int b2 = r2; b2 <= nx - 2; ++b2) cands.push_back({a1, b1, a2, b2});
  std::vector<double> I(cands.size()), vol(cands.size());
  parallel_for(cands.size(), [&](std::size_t k) {
    std::vector<std::uint8_t> mask(g.trace_count(), 0);
    for (int i = cands[k].a1; i <= cands[k].b1; ++i) mask[i] = 1;
    for (int i = cands[k].a2; i <= cands[k].b2; ++i) mask[i] = 1;
    vol[k] = s.volume(mask);
    I[k] = s.solve(mask).energy + f_eps(vol[k], p);
  });
  std::size_t best = 0;
  for (std::size_t k = 1; k < cands.size(); ++k)
    if (detail::better(I[k], vol[k], I[best], vol[best])) best = k;
  std::vector<std::uint8_t> mask(g.trace_count(), 0);
  for (int i = cands[best].a1; i <= cands[best].b1; ++i) mask[i] = 1;
  for (int i = cands[best].a2; i <= cands[best].b2; ++i) mask[i] = 1;
  return s.result_for(s.solve(mask), p);
}

inline MinimizeResult minimize_bruteforce_1d(const PenaltyParams& p, const Problem& pb) {
  return minimize_bruteforce_1d(PenaltySolver(pb), p);
}

namespace detail {

inline std::vector<std::size_t> trace_neighbors(const ExtensionGrid& g, std::size_t t) {
  std::vector<std::size_t> out;
  const int i = g.ix(t), k = g.iz(t), nx = g.nx();
  if (i > 0) out.push_back(g.trace_index(i - 1, k));
  if (i + 1 < nx) out.push_back(g.trace_index(i + 1, k));
  if (g.trace_dim() == 2) {
    if (k > 0) out.push_back(g.trace_index(i, k - 1));
    if (k + 1 < nx) out.push_back(g.trace_index(i, k + 1));
  }
  return out;
}

struct Flip {
  std::size_t node;
  bool advance;
  double dE;     // exact change of the Dirichlet energy for this flip alone
  double dVol;
};

}  // namespace detail

/// Alternating free-boundary scheme: solve the trace problem on the current
/// positivity mask, then flip boundary nodes using the exact energy change of a
/// single flip (advance p: -(S u)_p^2 / s_pp with s_pp the Schur pivot; retreat p:
/// u_p^2 / (S_FF^-1)_pp) against the change of f_eps. Moves tried in order: the
/// batch of all improving flips, the best flip together with its ties (keeps
/// grid symmetry), and retreat/advance pairs. Every accepted step lowers I_eps.
inline MinimizeResult minimize_iterative(const PenaltySolver& s, const PenaltyParams& p, const MinimizeOptions& opts = {}) {
  const ExtensionGrid& g = *s.grid();
  validate(p, s.admissible_measure());
  detail::require(opts.max_outer >= 1, "iteration cap must be positive", "max_outer");
  const auto& D = s.problem().fixed_region;
  const TraceField& phi = s.problem().phi;
  const std::size_t tc = g.trace_count();
  auto core = [&](std::size_t t) { return D[t] && phi[t] > 0.0; };

  std::vector<std::uint8_t> mask(tc, 0);
  for (std::size_t t = 0; t < tc; ++t) mask[t] = core(t);
  if (opts.init == InitKind::given_mask) {
    detail::require(opts.initial_mask.size() == tc, "initial mask size mismatch", "initial_mask");
    for (std::size_t t = 0; t < tc; ++t)
      if (opts.initial_mask[t] && !D[t] && !g.on_lateral_boundary(t)) mask[t] = 1;
  } else if (opts.init == InitKind::random) {
    std::mt19937_64 rng(opts.seed);
    const int steps = static_cast<int>(rng() % static_cast<std::uint64_t>(std::max(2, g.nx() / 6)));
    for (int st = 0; st < steps; ++st) {
      std::vector<std::uint8_t> next = mask;
      for (std::size_t t = 0; t < tc; ++t) {
        if (mask[t] || D[t] || g.on_lateral_boundary(t)) continue;
        bool touch = false;
        for (std::size_t q : detail::trace_neighbors(g, t)) touch |= mask[q] != 0;
        if (touch && (rng() >> 11) * 0x1.0p-53 < 0.8) next[t] = 1;
      }
      mask = std::move(next);
    }
  }

  const TraceSystem& sys = s.system();
  const Eigen::MatrixXd& S = sys.S();
  auto evaluate = [&](const std::vector<std::uint8_t>& m) {
    MaskSolution sol = s.solve(m);
    const double I = sol.energy + f_eps(s.volume(m), p);
    return std::pair{std::move(sol), I};
  };

  auto [sol, I] = evaluate(mask);
  std::vector<double> traj{I};
  int it = 0;
  for (;; ++it) {
    if (it >= opts.max_outer) throw MinimizerNonConvergence("free-boundary iteration hit the cap", traj);
    const double vol = s.volume(mask);
    const double tol = 1e-12 * (1.0 + std::abs(I));
    // factor data for exact flip gains
    const auto nf = static_cast<Eigen::Index>(sol.free.size());
    std::vector<int> free_index(sys.active().size(), -1);
    for (Eigen::Index r = 0; r < nf; ++r) free_index[sol.free[r]] = static_cast<int>(r);
    Eigen::MatrixXd Linv;
    if (nf > 0) Linv = sol.chol.matrixL().solve(Eigen::MatrixXd::Identity(nf, nf));

    std::vector<detail::Flip> flips;
    for (std::size_t t = 0; t < tc; ++t) {
      const int pos = sys.position(t);
      if (pos < 0 || D[t]) continue;
      bool boundary = false;
      for (std::size_t q : detail::trace_neighbors(g, t)) boundary |= (mask[q] != 0) != (mask[t] != 0);
      if (!boundary) continue;
      const double m = g.trace_cell_measure(t);
      if (mask[t]) {
        const int r = free_index[pos];
        if (r < 0) continue;
        const double sinv = Linv.col(r).squaredNorm();
        flips.push_back({t, false, sol.u[t] * sol.u[t] / sinv, -m});
      } else {
        double piv = S(pos, pos);
        if (nf > 0) {
          Eigen::VectorXd col(nf);
          for (Eigen::Index r = 0; r < nf; ++r) col[r] = S(sol.free[r], pos);
          piv -= (Linv * col).squaredNorm();
        }
        const double su = sol.Su[pos];
        flips.push_back({t, true, -su * su / piv, m});
      }
    }
    auto dI = [&](const detail::Flip& f) { return f.dE + f_eps(vol + f.dVol, p) - f_eps(vol, p); };

    std::vector<std::size_t> improving;
    for (std::size_t k = 0; k < flips.size(); ++k)
      if (dI(flips[k]) < -tol) improving.push_back(k);

    auto try_mask = [&](const std::vector<std::uint8_t>& m) {
      auto cand = evaluate(m);
      if (cand.second < I - tol) {
        mask = m;
        sol = std::move(cand.first);
        I = cand.second;
        traj.push_back(I);
        return true;
      }
      return false;
    };
    auto flipped = [&](const std::vector<std::size_t>& ks) {
      std::vector<std::uint8_t> m = mask;
      for (std::size_t k : ks) m[flips[k].node] = flips[k].advance ? 1 : 0;
      return m;
    };

    if (!improving.empty()) {
      if (improving.size() > 1 && try_mask(flipped(improving))) continue;
      std::size_t best = improving[0];
      for (std::size_t k : improving)
        if (dI(flips[k]) < dI(flips[best])) best = k;
      const double bestI = dI(flips[best]);
      std::vector<std::size_t> ties;
      for (std::size_t k : improving)
        if (flips[k].advance == flips[best].advance && std::abs(dI(flips[k]) - bestI) <= 1e-8 * std::abs(bestI))
          ties.push_back(k);
      if (ties.size() > 1 && try_mask(flipped(ties))) continue;
      if (try_mask(flipped({best}))) continue;
    }

    // pairs: one retreat with one advance, ranked by the sum of single predictions
    struct Pair {
      std::size_t r, a;
      double pred;
    };
    std::vector<Pair> pairs;
    for (std::size_t r = 0; r < flips.size(); ++r) {
      if (flips[r].advance) continue;
      for (std::size_t a = 0; a < flips.size(); ++a) {
        if (!flips[a].advance) continue;
        const double pred = flips[r].dE + flips[a].dE + f_eps(vol + flips[r].dVol + flips[a].dVol, p) - f_eps(vol, p);
        pairs.push_back({r, a, pred});
      }
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return x.pred < y.pred; });
    bool moved = false;
    for (std::size_t k = 0; k < pairs.size() && k < static_cast<std::size_t>(opts.pair_candidates); ++k) {
      if (pairs[k].pred > std::abs(I) * 1e-3 + 1e-9) break;
      if (try_mask(flipped({pairs[k].r, pairs[k].a}))) {
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  MinimizeResult r = s.result_for(sol, p);
  r.iterations = it;
  r.trajectory = std::move(traj);
  return r;
}

inline MinimizeResult minimize_iterative(const PenaltyParams& p, const Problem& pb, const MinimizeOptions& opts = {}) {
  return minimize_iterative(PenaltySolver(pb), p, opts);
}

// ---------------------------------------------------------------------------
// Harmonic replacement

/// Ball in the extended space centred on the trace hyperplane.
struct Ball {
  Point center;
  double radius = 0.0;
};

/// Replaces the extension inside the ball by the weighted-harmonic function with
/// the same values outside (trace nodes in the ball carry the natural condition,
/// nodes of D keep phi). The trace, mask and extension are updated.
inline Configuration harmonic_replacement(const DiscreteOperator& op, const Configuration& c, const Ball& ball,
                                          const SolveOptions& opts = {}) {
  const ExtensionGrid& g = *c.grid;
  const double L = g.half_width();
  detail::require(ball.radius > 0.0, "radius must be positive", "radius");
  detail::require(std::abs(ball.center[0]) + ball.radius < L && ball.radius < g.height() &&
                      (g.trace_dim() == 1 || std::abs(ball.center[1]) + ball.radius < L),
                  "ball must lie inside the grid", "ball");
  std::vector<std::uint8_t> unknown(g.node_count(), 0);
  const std::size_t tc = g.trace_count();
  for (std::size_t p = 0; p < g.node_count(); ++p) {
    const std::size_t t = p % tc;
    if (p < tc && c.fixed_region[t]) continue;
    const Point x = g.trace_point(t);
    const double y = g.y_nodes()[p / tc];
    const double d2 = (x[0] - ball.center[0]) * (x[0] - ball.center[0]) +
                      (g.trace_dim() == 2 ? (x[1] - ball.center[1]) * (x[1] - ball.center[1]) : 0.0) + y * y;
    if (d2 < ball.radius * ball.radius) unknown[p] = 1;
  }
  Configuration out = c;
  out.extension = solve_free_nodes(op, c.extension, unknown, opts);
  out.trace_values = trace_of(out.extension);
  for (std::size_t t = 0; t < tc; ++t) out.positivity_mask[t] = out.trace_values[t] > out.theta_pos;
  return out;
}

// ---------------------------------------------------------------------------
// Two-ball domain perturbation

/// rho(t) = C exp(-1 / (1 - t^2)) on [0, 1), zero beyond; C gives unit integral.
inline double bump_profile(double t) {
  static const double C = 1.0 / quad::composite([](double s) { return std::exp(-1.0 / (1.0 - s * s)); }, 0.0, 1.0, 32, 20);
  if (t < 0.0 || t >= 1.0) return 0.0;
  return C * std::exp(-1.0 / (1.0 - t * t));
}

inline double bump_profile_derivative(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  const double q = 1.0 - t * t;
  return -bump_profile(t) * 2.0 * t / (q * q);
}

/// sup |rho'| on [0, 1] (sampled finely, cached).
inline double bump_profile_lipschitz() {
  static const double v = [] {
    double m = 0.0;
    for (int k = 1; k < 20000; ++k) m = std::max(m, std::abs(bump_profile_derivative(k / 20000.0)));
    return m;
  }();
  return v;
}

/// P(z) = z + gamma r rho(|z - x1| / r) nu1 - gamma r rho(|z - x2| / r) nu2, where
/// |.| is the distance in the extended space and nu_i are trace unit vectors.
struct PerturbationSpec {
  Point x1, x2;
  Point nu1, nu2;
  double radius = 0.0;
  double gamma = 0.0;
};

inline void validate(const PerturbationSpec& sp) {
  const double dist = std::hypot(sp.x1[0] - sp.x2[0], sp.x1[1] - sp.x2[1]);
  detail::require(sp.radius > 0.0 && sp.radius < dist / 100.0, "radius must be below dist(x1, x2)/100", "radius");
  detail::require(std::abs(sp.gamma) * bump_profile_lipschitz() < 1.0, "gamma sup|rho'| must be below 1", "gamma");
  for (int k = 0; k <= 1000; ++k) {
    const double t = k / 1000.0;
    detail::require(std::abs(sp.gamma) * bump_profile(t) <= 1.0 - t + 1e-15, "gamma rho(t) must not exceed 1 - t", "gamma");
  }
  for (const Point& nu : {sp.nu1, sp.nu2})
    detail::require(std::abs(std::hypot(nu[0], nu[1]) - 1.0) < 1e-9, "normals must be unit vectors", "normal");
}

/// Forward map applied to a point of the extended space (trace point, y).
inline Point perturbation_map(const PerturbationSpec& sp, const Point& x, double y) {
  Point out = x;
  const double r1 = std::sqrt((x[0] - sp.x1[0]) * (x[0] - sp.x1[0]) + (x[1] - sp.x1[1]) * (x[1] - sp.x1[1]) + y * y);
  const double r2 = std::sqrt((x[0] - sp.x2[0]) * (x[0] - sp.x2[0]) + (x[1] - sp.x2[1]) * (x[1] - sp.x2[1]) + y * y);
  const double a = sp.gamma * sp.radius * bump_profile(r1 / sp.radius);
  const double b = sp.gamma * sp.radius * bump_profile(r2 / sp.radius);
  for (int d = 0; d < 2; ++d) out[d] += a * sp.nu1[d] - b * sp.nu2[d];
  return out;
}

/// det DP at a point: 1 + s gamma rho'(|z|/r) <z/|z|, nu> within ball i (s = +1, -1).
inline double perturbation_jacobian(const PerturbationSpec& sp, const Point& x, double y) {
  auto term = [&](const Point& c, const Point& nu, double sign) {
    const double z0 = x[0] - c[0], z1 = x[1] - c[1];
    const double rz = std::sqrt(z0 * z0 + z1 * z1 + y * y);
    if (rz == 0.0 || rz >= sp.radius) return 0.0;
    return sign * sp.gamma * bump_profile_derivative(rz / sp.radius) * (z0 * nu[0] + z1 * nu[1]) / rz;
  };
  return 1.0 + term(sp.x1, sp.nu1, 1.0) + term(sp.x2, sp.nu2, -1.0);
}

namespace detail {

inline std::pair<int, double> locate(std::span<const double> axis, double x) {
  if (x <= axis.front()) return {0, 0.0};
  if (x >= axis.back()) return {static_cast<int>(axis.size()) - 2, 1.0};
  const auto it = std::upper_bound(axis.begin(), axis.end(), x);
  const int j = static_cast<int>(it - axis.begin()) - 1;
  return {j, (x - axis[j]) / (axis[j + 1] - axis[j])};
}

/// Multilinear interpolation of a nodal field.
inline double interpolate(const ScalarField& v, const Point& x, double y) {
  const ExtensionGrid& g = *v.grid;
  const auto [i, si] = locate(g.x_nodes(), x[0]);
  const auto [j, sj] = locate(g.y_nodes(), y);
  if (g.trace_dim() == 1) {
    return (1 - si) * (1 - sj) * v(i, j) + si * (1 - sj) * v(i + 1, j) + (1 - si) * sj * v(i, j + 1) +
           si * sj * v(i + 1, j + 1);
  }
  const auto [k, sk] = locate(g.x_nodes(), x[1]);
  double out = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const double w = (a ? si : 1 - si) * (b ? sk : 1 - sk) * (c ? sj : 1 - sj);
        if (w != 0.0) out += w * v(g.trace_index(i + a, k + b), j + c);
      }
  return out;
}

}  // namespace detail

/// v_r(P(z)) = u(z): each node q is pulled back by fixed-point iteration on
/// p = q - (P(p) - p) and the field is interpolated there. Mask recomputed.
inline Configuration perturb_configuration(const Configuration& c, const PerturbationSpec& sp) {
  validate(sp);
  const ExtensionGrid& g = *c.grid;
  Configuration out = c;
  if (sp.gamma == 0.0) return out;
  const std::size_t tc = g.trace_count();
  for (std::size_t p = 0; p < g.node_count(); ++p) {
    const Point q = g.trace_point(p % tc);
    const double y = g.y_nodes()[p / tc];
    Point x = q;
    for (int it = 0; it < 200; ++it) {
      const Point fx = perturbation_map(sp, x, y);
      const Point nx{q[0] - (fx[0] - x[0]), q[1] - (fx[1] - x[1])};
      const double d = std::hypot(nx[0] - x[0], nx[1] - x[1]);
      x = nx;
      if (d < 1e-15) break;
    }
    out.extension.values[p] = detail::interpolate(c.extension, x, y);
  }
  out.trace_values = trace_of(out.extension);
  for (std::size_t t = 0; t < tc; ++t) out.positivity_mask[t] = out.trace_values[t] > out.theta_pos;
  return out;
}

}  // namespace fracdesign
