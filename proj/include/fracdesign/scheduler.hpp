#pragma once

// Outer loop over the penalization strength: a geometric eps schedule with warm
// starts that recovers the volume-constrained problem, plus the volume envelope
// and lambda_eps bound checks along the sweep.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fracdesign/core/error.hpp"
#include "fracdesign/diagnostics.hpp"
#include "fracdesign/penalty.hpp"

namespace fracdesign {

struct EpsSchedule {
  double eps0 = 1.0;
  double ratio = 0.5;
  int max_steps = 8;
  int min_steps = 4;     // steps run before the volume test may stop the sweep
  double vol_tol = 0.0;  // 0 means one trace cell
};

inline void validate(const EpsSchedule& s, double cell) {
  detail::require(s.eps0 > 0.0 && std::isfinite(s.eps0), "initial eps must be positive", "eps0");
  detail::require(s.ratio > 0.0 && s.ratio < 1.0, "ratio must lie in (0, 1)", "ratio");
  detail::require(s.max_steps >= 1, "at least one step is required", "max_steps");
  detail::require(s.min_steps >= 1 && s.min_steps <= s.max_steps, "min_steps must lie in [1, max_steps]", "min_steps");
  detail::require(s.vol_tol == 0.0 || s.vol_tol >= cell * (1 - 1e-12), "volume tolerance must be at least one cell", "vol_tol");
}

struct SweepEntry {
  double eps = 0.0;
  double energy = 0.0;
  double dirichlet = 0.0;
  double volume = 0.0;
  double lambda_est = std::numeric_limits<double>::quiet_NaN();
  std::size_t fb_points = 0;
  int iterations = 0;
};

/// Ordered by decreasing eps.
struct SweepRecord {
  double omega = 0.0;
  double cell = 0.0;
  std::vector<SweepEntry> entries;
};

enum class Minimizer { iterative, bruteforce };

struct SweepOptions {
  Minimizer minimizer = Minimizer::iterative;
  MinimizeOptions minimize;  // init applies to the first step only
  bool check_stability = true;
};

struct ConstrainedResult {
  MinimizeResult terminal;
  double terminal_eps = 0.0;
  SweepRecord record;
  bool attained = false;        // |volume - omega| <= vol_tol at the terminal step
  bool stable = false;          // one further eps step moves the volume by <= one cell
  double stability_change = 0.0;
};

/// Raised when a minimization fails mid-sweep; carries the record so far.
class SweepNonConvergence : public NonConvergence {
 public:
  SweepNonConvergence(const NonConvergence& inner, SweepRecord partial)
      : NonConvergence(std::string("sweep stopped: ") + inner.what(), inner.last_residual(), inner.iterations()),
        partial_(std::move(partial)) {}
  const SweepRecord& partial() const { return partial_; }

 private:
  SweepRecord partial_;
};

/// Median boundary coefficient q over the free boundary, NaN when unavailable.
inline double lambda_estimate(const Configuration& c) {
  try {
    const FreeBoundarySet fb = extract_free_boundary(c);
    if (fb.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (fb.size() == 1) return estimate_q(c, fb.points[0], fb.normals[0]).q;
    return q_constancy_check(c, fb).median;
  } catch (const InvalidArgument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

namespace detail {

inline double max_cell(const ExtensionGrid& g) {
  double m = 0.0;
  for (std::size_t t = 0; t < g.trace_count(); ++t) m = std::max(m, g.trace_cell_measure(t));
  return m;
}

inline MinimizeResult run_minimizer(const PenaltySolver& s, const PenaltyParams& p, const SweepOptions& o,
                                    const MinimizeOptions& mo) {
  if (o.minimizer == Minimizer::bruteforce) return minimize_bruteforce_1d(s, p);
  return minimize_iterative(s, p, mo);
}

}  // namespace detail

inline ConstrainedResult solve_constrained(const PenaltySolver& s, double omega, const EpsSchedule& sched,
                                           const SweepOptions& o = {}) {
  const ExtensionGrid& g = *s.grid();
  const double cell = detail::max_cell(g);
  validate(sched, cell);
  validate(PenaltyParams{sched.eps0, omega}, s.admissible_measure());
  const double tol = sched.vol_tol > 0.0 ? sched.vol_tol : cell;

  ConstrainedResult out;
  out.record.omega = omega;
  out.record.cell = cell;
  MinimizeOptions mo = o.minimize;
  double eps = sched.eps0;
  for (int step = 0; step < sched.max_steps; ++step, eps *= sched.ratio) {
    MinimizeResult r;
    try {
      r = detail::run_minimizer(s, {eps, omega}, o, mo);
    } catch (const NonConvergence& e) {
      throw SweepNonConvergence(e, out.record);
    }
    SweepEntry e;
    e.eps = eps;
    e.energy = r.energy;
    e.dirichlet = r.dirichlet;
    e.volume = r.volume;
    e.lambda_est = lambda_estimate(r.config);
    e.fb_points = extract_free_boundary(r.config).size();
    e.iterations = r.iterations;
    out.record.entries.push_back(e);
    mo.init = InitKind::given_mask;
    mo.initial_mask = r.config.positivity_mask;
    out.terminal = std::move(r);
    out.terminal_eps = eps;
    out.attained = std::abs(e.volume - omega) <= tol;
    if (out.attained && step + 1 >= sched.min_steps) break;
  }
  if (o.check_stability) {
    try {
      const MinimizeResult next = detail::run_minimizer(s, {out.terminal_eps * sched.ratio, omega}, o, mo);
      out.stability_change = std::abs(next.volume - out.terminal.volume);
      out.stable = out.stability_change <= cell * (1 + 1e-12);
    } catch (const NonConvergence&) {
      out.stable = false;
    }
  }
  return out;
}

/// vol(eps) - omega <= C eps: C is the slope of a least-squares line through the
/// positive excess; its intercept must not exceed one cell and no point may sit
/// more than one cell above C eps.
struct EnvelopeFit {
  double C = 0.0;
  double intercept = 0.0;
  double max_residual = 0.0;  // max of vol - omega - C eps
  double min_volume = 0.0;
  bool ok = false;
};

inline EnvelopeFit envelope_fit(const SweepRecord& rec) {
  detail::require(!rec.entries.empty(), "sweep record is empty", "record");
  EnvelopeFit f;
  std::vector<double> ex, ey;
  f.min_volume = std::numeric_limits<double>::infinity();
  for (const SweepEntry& e : rec.entries) {
    ex.push_back(e.eps);
    ey.push_back(std::max(e.volume - rec.omega, 0.0));
    f.min_volume = std::min(f.min_volume, e.volume);
  }
  bool distinct = false;
  for (double x : ex) distinct |= x != ex.front();
  if (distinct) {
    const auto line = detail::line_fit(ex, ey);
    f.intercept = line[0];
    f.C = std::max(line[1], 0.0);
  } else {
    f.C = ey.front() / ex.front();
  }
  f.max_residual = -std::numeric_limits<double>::infinity();
  for (const SweepEntry& e : rec.entries) f.max_residual = std::max(f.max_residual, e.volume - rec.omega - f.C * e.eps);
  const double slack = rec.cell * (1 + 1e-9);
  f.ok = f.max_residual <= slack && f.intercept <= slack && f.min_volume > 0.0;
  return f;
}

struct LambdaBounds {
  double min = 0.0;
  double max = 0.0;
  double spread_ratio = 0.0;
  std::size_t count = 0;
  bool insufficient = false;
  bool ok = false;
};

inline LambdaBounds lambda_sweep(const SweepRecord& rec, double bound = 3.0) {
  detail::require(bound >= 1.0, "spread bound must be at least 1", "bound");
  LambdaBounds b;
  b.min = std::numeric_limits<double>::infinity();
  b.max = 0.0;
  for (const SweepEntry& e : rec.entries) {
    if (!std::isfinite(e.lambda_est) || e.lambda_est <= 0.0) continue;
    ++b.count;
    b.min = std::min(b.min, e.lambda_est);
    b.max = std::max(b.max, e.lambda_est);
  }
  if (b.count < 4) {
    b.insufficient = true;
    return b;
  }
  b.spread_ratio = b.max / b.min;
  b.ok = b.spread_ratio <= bound;
  return b;
}

}  // namespace fracdesign
