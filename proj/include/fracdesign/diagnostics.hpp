#pragma once

// Quantitative checks on computed minimizers: free-boundary extraction, Hoelder
// growth and non-degeneracy at the free boundary, phase densities, Morrey-type
// energy growth, the boundary coefficient q, the Hadamard energy slope and the
// sign of the flux measure.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fracdesign/core/error.hpp"
#include "fracdesign/extension.hpp"
#include "fracdesign/mesh.hpp"
#include "fracdesign/penalty.hpp"

namespace fracdesign {

/// Interface midpoints between positive and zero trace cells outside D.
/// normals[k] is the unit trace vector pointing into {u > 0}.
struct FreeBoundarySet {
  std::vector<Point> points;
  std::vector<Point> normals;
  std::vector<std::pair<std::size_t, std::size_t>> cells;  // (positive node, zero node)
  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

namespace detail {

inline double distance(const Point& a, const Point& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

inline bool positive(const Configuration& c, std::size_t t) { return c.positivity_mask[t] != 0; }

/// Trace interpolation (linear in 1D, bilinear in 2D); clamps to the box.
inline double trace_value_at(const TraceField& u, const Point& x) {
  const ExtensionGrid& g = *u.grid;
  const auto [i, si] = locate(g.x_nodes(), x[0]);
  if (g.trace_dim() == 1) return (1 - si) * u[i] + si * u[i + 1];
  const auto [k, sk] = locate(g.x_nodes(), x[1]);
  return (1 - si) * (1 - sk) * u[g.trace_index(i, k)] + si * (1 - sk) * u[g.trace_index(i + 1, k)] +
         (1 - si) * sk * u[g.trace_index(i, k + 1)] + si * sk * u[g.trace_index(i + 1, k + 1)];
}

/// Trace nodes whose point lies within distance r of x.
inline std::vector<std::size_t> nodes_in_ball(const ExtensionGrid& g, const Point& x, double r) {
  std::vector<std::size_t> out;
  const auto xs = g.x_nodes();
  const auto lo = [&](double c) { return static_cast<int>(std::lower_bound(xs.begin(), xs.end(), c - r) - xs.begin()); };
  const auto hi = [&](double c) { return static_cast<int>(std::upper_bound(xs.begin(), xs.end(), c + r) - xs.begin()); };
  const int i0 = lo(x[0]), i1 = hi(x[0]);
  const int k0 = g.trace_dim() == 1 ? 0 : lo(x[1]);
  const int k1 = g.trace_dim() == 1 ? 1 : hi(x[1]);
  for (int k = k0; k < k1; ++k)
    for (int i = i0; i < i1; ++i) {
      const std::size_t t = g.trace_index(i, k);
      if (distance(g.trace_point(t), x) <= r) out.push_back(t);
    }
  return out;
}

/// Distance from x to the nearest node of D (infinite if D is empty).
inline double distance_to_fixed(const Configuration& c, const Point& x) {
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < c.fixed_region.size(); ++t)
    if (c.fixed_region[t]) d = std::min(d, distance(c.grid->trace_point(t), x));
  return d;
}

inline double distance_to_lateral(const ExtensionGrid& g, const Point& x) {
  const double L = g.half_width();
  double d = L - std::abs(x[0]);
  if (g.trace_dim() == 2) d = std::min(d, L - std::abs(x[1]));
  return d;
}

/// Fit window at a free-boundary point: the innermost two cells are dropped, as
/// are the outer tenth of the box and radii beyond 0.4 dist(x0, D). At most four
/// octaves below the outer radius are used.
inline std::pair<double, double> fit_window(const Configuration& c, const Point& x0) {
  const ExtensionGrid& g = *c.grid;
  const double h = g.spacing();
  const double rmax = std::min(0.4 * distance_to_fixed(c, x0), distance_to_lateral(g, x0) - 0.1 * g.half_width());
  return {std::max(3.0 * h, rmax / 16.0), rmax};
}

inline std::vector<double> log_spaced(double a, double b, int count) {
  std::vector<double> r(count);
  for (int k = 0; k < count; ++k) r[k] = a * std::pow(b / a, count == 1 ? 0.0 : double(k) / (count - 1));
  return r;
}

/// Least-squares line y = a + b x; returns (a, b, stderr of b).
inline std::array<double, 3> line_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  const double b = sxy / sxx, a = my - b * mx;
  double rss = 0;
  for (std::size_t k = 0; k < x.size(); ++k) rss += std::pow(y[k] - a - b * x[k], 2);
  const double se = x.size() > 2 ? std::sqrt(rss / (n - 2) / sxx) : 0.0;
  return {a, b, se};
}

inline double median(std::vector<double> v) {
  detail::require(!v.empty(), "median of an empty set", "values");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline void require_free_boundary_point(const Configuration& c, const Point& x0) {
  const ExtensionGrid& g = *c.grid;
  bool pos = false, zero = false;
  for (std::size_t t : nodes_in_ball(g, x0, (g.trace_dim() == 1 ? 0.51 : 0.75) * g.spacing() + 1e-12)) {
    if (positive(c, t)) pos = true;
    else zero = true;
  }
  detail::require(pos && zero, "point is not on the free boundary", "x0");
}

}  // namespace detail

inline FreeBoundarySet extract_free_boundary(const Configuration& c) {
  const ExtensionGrid& g = *c.grid;
  FreeBoundarySet fb;
  const int nx = g.nx();
  const int nz = g.trace_dim() == 1 ? 1 : nx;
  const double h = g.spacing();
  auto add = [&](std::size_t a, std::size_t b) {
    const bool pa = detail::positive(c, a), pb = detail::positive(c, b);
    if (pa == pb) return;
    const std::size_t tp = pa ? a : b, tz = pa ? b : a;
    if (c.fixed_region[tz]) return;
    const Point xp = g.trace_point(tp), xz = g.trace_point(tz);
    const Point mid{0.5 * (xp[0] + xz[0]), 0.5 * (xp[1] + xz[1])};
    Point nu{0.0, 0.0};
    if (g.trace_dim() == 1) {
      nu[0] = xp[0] > xz[0] ? 1.0 : -1.0;
    } else {
      for (std::size_t t : detail::nodes_in_ball(g, mid, 3.0 * h))
        if (detail::positive(c, t)) {
          const Point x = g.trace_point(t);
          nu[0] += x[0] - mid[0];
          nu[1] += x[1] - mid[1];
        }
      const double len = std::hypot(nu[0], nu[1]);
      nu = len > 0 ? Point{nu[0] / len, nu[1] / len} : Point{xp[0] - xz[0], xp[1] - xz[1]};
      const double l2 = std::hypot(nu[0], nu[1]);
      nu = {nu[0] / l2, nu[1] / l2};
    }
    fb.points.push_back(mid);
    fb.normals.push_back(nu);
    fb.cells.emplace_back(tp, tz);
  };
  for (int k = 0; k < nz; ++k)
    for (int i = 0; i + 1 < nx; ++i) add(g.trace_index(i, k), g.trace_index(i + 1, k));
  if (g.trace_dim() == 2)
    for (int k = 0; k + 1 < nz; ++k)
      for (int i = 0; i < nx; ++i) add(g.trace_index(i, k), g.trace_index(i, k + 1));
  return fb;
}

struct ExponentFit {
  double exponent = 0.0;
  double stderr_ = 0.0;
  std::vector<double> radii;
  std::vector<double> sup_values;
};

/// Slope of log sup_{B_r(x0)} u against log r (u the interpolated trace).
inline ExponentFit fit_growth_exponent(const Configuration& c, const Point& x0, std::vector<double> radii = {}) {
  const ExtensionGrid& g = *c.grid;
  if (radii.empty()) {
    const auto [a, b] = detail::fit_window(c, x0);
    detail::require(b >= 4.0 * a, "fit window spans fewer than two octaves", "radii");
    radii = detail::log_spaced(a, b, 8);
  }
  detail::require(radii.size() >= 4, "at least four radii are required", "radii");
  const auto [rmin, rmax] = std::minmax_element(radii.begin(), radii.end());
  detail::require(*rmax >= 4.0 * *rmin, "radii must span at least two octaves", "radii");
  detail::require(*rmax <= detail::distance_to_lateral(g, x0), "radii must stay inside the domain", "radii");
  ExponentFit fit;
  std::vector<double> lx, ly;
  for (double r : radii) {
    double s = 0.0;
    for (std::size_t t : detail::nodes_in_ball(g, x0, r)) s = std::max(s, c.trace_values[t]);
    // the interpolated trace on the sphere of radius r
    const int m = g.trace_dim() == 1 ? 2 : 64;
    for (int k = 0; k < m; ++k) {
      const double th = 2.0 * std::numbers::pi * k / m;
      s = std::max(s, detail::trace_value_at(c.trace_values, {x0[0] + r * std::cos(th), x0[1] + r * std::sin(th) * (g.trace_dim() == 2)}));
    }
    detail::require(s > 0.0, "u vanishes on a fit ball", "x0");
    fit.radii.push_back(r);
    fit.sup_values.push_back(s);
    lx.push_back(std::log(r));
    ly.push_back(std::log(s));
  }
  const auto line = detail::line_fit(lx, ly);
  fit.exponent = line[1];
  fit.stderr_ = line[2];
  return fit;
}

/// min of u(x) / dist(x, FB)^alpha over sample points (default: positive nodes
/// outside D at least two cells from the free boundary).
inline double nondegeneracy_check(const Configuration& c, const FreeBoundarySet& fb, std::vector<Point> samples = {}) {
  const ExtensionGrid& g = *c.grid;
  detail::require(!fb.empty(), "free boundary is empty", "free_boundary");
  const double h = g.spacing();
  auto dist_fb = [&](const Point& x) {
    double d = std::numeric_limits<double>::infinity();
    for (const Point& p : fb.points) d = std::min(d, detail::distance(p, x));
    return d;
  };
  if (samples.empty()) {
    for (std::size_t t = 0; t < g.trace_count(); ++t)
      if (detail::positive(c, t) && !c.fixed_region[t] && dist_fb(g.trace_point(t)) >= 2.0 * h - 1e-12)
        samples.push_back(g.trace_point(t));
  }
  double m = std::numeric_limits<double>::infinity();
  for (const Point& x : samples) {
    const double d = dist_fb(x);
    detail::require(d >= 2.0 * h - 1e-12, "sample closer than two cells to the free boundary", "samples");
    m = std::min(m, detail::trace_value_at(c.trace_values, x) / std::pow(d, g.alpha()));
  }
  return m;
}

struct DensityResult {
  double zero_phase = 0.0;
  double positive_phase = 0.0;
};

/// Phase measures in trace balls B_r(x0), normalized by half the measure of the
/// ball inside the box (a point on a flat interface scores 1 for both phases).
inline DensityResult density_check(const Configuration& c, const Point& x0, const std::vector<double>& radii) {
  const ExtensionGrid& g = *c.grid;
  detail::require(!radii.empty(), "radii list is empty", "radii");
  detail::require_free_boundary_point(c, x0);
  DensityResult out{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (double r : radii) {
    detail::require(r >= 3.0 * g.spacing() - 1e-12, "radii must be at least three cells", "radii");
    double pos = 0.0, zero = 0.0;
    for (std::size_t t : detail::nodes_in_ball(g, x0, r)) (detail::positive(c, t) ? pos : zero) += g.trace_cell_measure(t);
    const double half = 0.5 * (pos + zero);
    out.zero_phase = std::min(out.zero_phase, zero / half);
    out.positive_phase = std::min(out.positive_phase, pos / half);
  }
  return out;
}

struct MorreyResult {
  std::vector<double> radii;
  std::vector<double> sequence;  // r^-n * energy in the half ball of radius r
  double sup = 0.0;
  double max_octave_growth = 0.0;
  bool bounded = true;
};

inline MorreyResult morrey_growth_check(const DiscreteOperator& op, const Configuration& c, const Point& x0,
                                        const std::vector<double>& radii, double growth_limit = 2.0) {
  const ExtensionGrid& g = *c.grid;
  detail::require(radii.size() >= 2, "at least two radii are required", "radii");
  MorreyResult out;
  out.radii = radii;
  std::sort(out.radii.begin(), out.radii.end());
  for (double r : out.radii) {
    detail::require(r >= 3.0 * g.spacing() - 1e-12, "radii must be at least three cells", "radii");
    detail::require(r <= std::min(detail::distance_to_lateral(g, x0), g.height()), "ball must lie inside the grid", "radii");
    const double e = weighted_dirichlet_energy(op, c.extension, [&](const Point& x, double y) {
      const double d0 = x[0] - x0[0], d1 = g.trace_dim() == 2 ? x[1] - x0[1] : 0.0;
      return d0 * d0 + d1 * d1 + y * y <= r * r;
    });
    out.sequence.push_back(e / std::pow(r, g.trace_dim()));
  }
  out.sup = *std::max_element(out.sequence.begin(), out.sequence.end());
  for (std::size_t i = 0; i < out.radii.size(); ++i)
    for (std::size_t j = i + 1; j < out.radii.size(); ++j)
      if (out.radii[j] >= 2.0 * out.radii[i] * (1 - 1e-12) && out.sequence[i] > 0.0) {
        out.max_octave_growth = std::max(out.max_octave_growth, out.sequence[j] / out.sequence[i]);
        break;
      }
  out.bounded = out.max_octave_growth <= growth_limit;
  return out;
}

struct QEstimate {
  double q = 0.0;
  double offset = 0.0;    // distance from x0 to the fitted zero of the profile, along -nu
  double residual = 0.0;  // rms of u - model, relative to rms u
};

/// Fits u(x0 + t nu) = q (t + delta)^alpha (1 + b t) over `fit_radii`, through
/// the least-squares quadratic u^(1/alpha) = A + B t + C t^2 and q = B^alpha.
/// delta absorbs the sub-cell position of the free boundary relative to x0.
inline QEstimate estimate_q(const Configuration& c, const Point& x0, const Point& nu, std::vector<double> fit_radii = {}) {
  const ExtensionGrid& g = *c.grid;
  const double a = g.alpha();
  detail::require(std::abs(std::hypot(nu[0], nu[1]) - 1.0) < 1e-9, "normal must be a unit vector", "normal");
  if (fit_radii.empty()) {
    const auto [lo, hi] = detail::fit_window(c, x0);
    detail::require(hi > 2.0 * lo, "fit window is empty", "fit_radii");
    fit_radii = detail::log_spaced(lo, hi, 12);
  }
  detail::require(fit_radii.size() >= 4, "at least four fit radii are required", "fit_radii");
  const auto m = static_cast<Eigen::Index>(fit_radii.size());
  Eigen::MatrixXd M(m, 3);
  Eigen::VectorXd u(m), w(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double t = fit_radii[k];
    detail::require(t > 0.0, "fit radii must be positive", "fit_radii");
    const Point x{x0[0] + t * nu[0], x0[1] + t * nu[1]};
    detail::require(detail::distance_to_lateral(g, x) >= 0.0, "fit point leaves the domain", "fit_radii");
    u[k] = detail::trace_value_at(c.trace_values, x);
    detail::require(u[k] > 0.0, "u vanishes on the fit segment", "fit_radii");
    w[k] = std::pow(u[k], 1.0 / a);
    M(k, 0) = 1.0;
    M(k, 1) = t;
    M(k, 2) = t * t;
  }
  const Eigen::Vector3d coef = M.colPivHouseholderQr().solve(w);
  detail::require(coef[1] > 0.0, "profile does not grow away from the free boundary", "x0");
  QEstimate out;
  out.q = std::pow(coef[1], a);
  out.offset = coef[0] / coef[1];
  double rss = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double model = std::pow(std::max(M.row(k).dot(coef), 0.0), a);
    rss += (u[k] - model) * (u[k] - model);
  }
  out.residual = std::sqrt(rss) / u.norm();
  return out;
}

struct QConstancy {
  std::vector<double> q;
  double median = 0.0;
  double spread = 0.0;  // (max - min) / median
};

inline QConstancy q_constancy_check(const Configuration& c, const FreeBoundarySet& fb) {
  detail::require(fb.size() >= 2, "at least two free-boundary points are required", "free_boundary");
  QConstancy out;
  out.q.resize(fb.size());
  parallel_for(fb.size(), [&](std::size_t k) { out.q[k] = estimate_q(c, fb.points[k], fb.normals[k]).q; });
  out.median = detail::median(out.q);
  const auto [lo, hi] = std::minmax_element(out.q.begin(), out.q.end());
  out.spread = (*hi - *lo) / out.median;
  return out;
}

inline QConstancy q_constancy_check(const Configuration& c) { return q_constancy_check(c, extract_free_boundary(c)); }

// ---------------------------------------------------------------------------
// Hadamard slope

namespace detail {

/// Smooth cutoff: 1 on [0, 1/2], 0 beyond 1.
inline double plateau(double s) {
  if (s <= 0.5) return 1.0;
  if (s >= 1.0) return 0.0;
  const double tau = 2.0 * (s - 0.5);
  const auto f = [](double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; };
  return f(1.0 - tau) / (f(1.0 - tau) + f(tau));
}

inline double plateau_lipschitz() {
  static const double v = [] {
    double m = 0.0;
    const int N = 20000;
    for (int k = 0; k < N; ++k) m = std::max(m, std::abs(plateau(0.5 + 0.5 * (k + 1) / N) - plateau(0.5 + 0.5 * k / N)) * 2.0 * N);
    return m;
  }();
  return v;
}

/// Energy of the mask problem (u = phi on D, 0 off the mask, natural elsewhere)
/// on a grid with the given trace axis.
inline double mask_energy(const Configuration& c, const std::vector<double>& x_axis) {
  const GridPtr g = std::make_shared<const ExtensionGrid>(c.grid->with_trace_axis(x_axis));
  const DiscreteOperator op = assemble_weighted_operator(g);
  DirichletSpec spec;
  spec.trace_values = TraceField(g);
  spec.fixed_mask.assign(g->trace_count(), 0);
  for (std::size_t t = 0; t < g->trace_count(); ++t) {
    if (c.fixed_region[t]) {
      spec.fixed_mask[t] = 1;
      spec.trace_values[t] = c.phi[t];
    } else if (!c.positivity_mask[t]) {
      spec.fixed_mask[t] = 1;
    }
  }
  return weighted_dirichlet_energy(op, solve_dirichlet(op, spec));
}

/// Trace axis with nodes near each centre shifted by shift * plateau(|x - centre| / R).
inline std::vector<double> deformed_axis(std::span<const double> x, const std::vector<std::pair<double, double>>& moves,
                                         double R) {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    for (const auto& [centre, shift] : moves) out[i] += shift * plateau(std::abs(x[i] - centre) / R);
  return out;
}

}  // namespace detail

struct HadamardOptions {
  std::vector<double> volumes;  // empty: five values from 0.1% to 1% of omega
  double radius = 0.0;          // deformation radius; 0 picks one from the geometry
  double tolerance = 0.15;      // on |s - lambda^2| / lambda^2
  double pair_factor = 5.0;
};

struct HadamardResult {
  std::vector<double> volumes;
  std::vector<double> energy_changes;  // one-sided retreat at the first FB point
  double slope = 0.0;                  // least-squares s in dE = s V
  std::vector<double> residuals;       // dE - s V
  double lambda = 0.0;                 // median q
  double relative_error = 0.0;         // |s - lambda^2| / lambda^2
  double pair_change = 0.0;            // advance at one point, retreat at another, largest V
  double pair_ratio = 0.0;             // |s V_max| / |pair_change|
  double discrete_slope = 0.0;         // one-cell endpoint move on the original grid
  bool slope_ok = false;
  bool pair_ok = false;
};

/// One-dimensional realization: the trace axis is deformed smoothly so the chosen
/// interface moves by exactly V while D stays fixed; the mask problem is re-solved
/// on the deformed grid and the energy change recorded.
inline HadamardResult hadamard_check(const Configuration& c, const PenaltyParams& p, const HadamardOptions& opts = {}) {
  const ExtensionGrid& g = *c.grid;
  detail::require(g.trace_dim() == 1, "the Hadamard check deforms a one-dimensional trace", "trace_dim");
  const FreeBoundarySet fb = extract_free_boundary(c);
  detail::require(fb.size() >= 2, "at least two free-boundary points are required", "free_boundary");
  const QConstancy qc = q_constancy_check(c, fb);
  HadamardResult out;
  out.lambda = qc.median;
  out.volumes = opts.volumes;
  if (out.volumes.empty()) out.volumes = detail::log_spaced(1e-3 * p.omega, 1e-2 * p.omega, 5);

  const double h = g.spacing();
  double R = opts.radius;
  if (R <= 0.0) {
    R = std::min(0.5 * detail::distance(fb.points[0], fb.points[1]), 0.1 * g.half_width());
    for (const Point& x : fb.points) R = std::min({R, 0.9 * detail::distance_to_fixed(c, x), 0.9 * detail::distance_to_lateral(g, x)});
  }
  detail::require(R >= 4.0 * h, "no room for the boundary deformation", "radius");
  const double vmax = *std::max_element(out.volumes.begin(), out.volumes.end());
  detail::require(vmax * detail::plateau_lipschitz() / R < 0.5, "volume change too large for the deformation radius", "volumes");

  const std::vector<double> x0(g.x_nodes().begin(), g.x_nodes().end());
  const double E0 = detail::mask_energy(c, x0);
  const double c1 = fb.points[0][0], n1 = fb.normals[0][0];
  const double c2 = fb.points[1][0], n2 = fb.normals[1][0];
  out.energy_changes.resize(out.volumes.size());
  // retreat: the interface moves into the positivity set (along nu)
  parallel_for(out.volumes.size(), [&](std::size_t k) {
    out.energy_changes[k] = detail::mask_energy(c, detail::deformed_axis(x0, {{c1, n1 * out.volumes[k]}}, R)) - E0;
  });
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < out.volumes.size(); ++k) {
    num += out.energy_changes[k] * out.volumes[k];
    den += out.volumes[k] * out.volumes[k];
  }
  out.slope = num / den;
  for (std::size_t k = 0; k < out.volumes.size(); ++k) out.residuals.push_back(out.energy_changes[k] - out.slope * out.volumes[k]);
  out.relative_error = std::abs(out.slope - out.lambda * out.lambda) / (out.lambda * out.lambda);
  out.pair_change = detail::mask_energy(c, detail::deformed_axis(x0, {{c1, -n1 * vmax}, {c2, n2 * vmax}}, R)) - E0;
  out.pair_ratio = std::abs(out.slope * vmax) / std::max(std::abs(out.pair_change), 1e-300);

  // one-cell retreat at the first point on the undeformed grid
  Configuration moved = c;
  moved.positivity_mask[fb.cells[0].first] = 0;
  out.discrete_slope = (detail::mask_energy(moved, x0) - E0) / g.trace_cell_measure(fb.cells[0].first);

  out.slope_ok = out.relative_error <= opts.tolerance;
  out.pair_ok = out.pair_ratio >= opts.pair_factor;
  return out;
}

// ---------------------------------------------------------------------------
// Flux measure

struct FluxMeasureStats {
  double interior_max = 0.0;    // max |(-Delta)^a u| on {u>0} at least 3 cells from FB and D
  double near_fb_min = 0.0;     // min of -(-Delta)^a u over zero cells next to the FB
  double negative_mass = 0.0;   // most negative -(-Delta)^a u over zero cells outside D
  double near_fb_mass = 0.0;    // sum of -(-Delta)^a u * cell over cells within 3 cells of FB
  double scale = 0.0;           // max |(-Delta)^a u| over cells next to the FB
};

inline FluxMeasureStats flux_measure_check(const Configuration& c) {
  const ExtensionGrid& g = *c.grid;
  const TraceField f = fractional_laplacian_via_flux(c.extension);
  const FreeBoundarySet fb = extract_free_boundary(c);
  const double h = g.spacing();
  FluxMeasureStats s;
  s.near_fb_min = std::numeric_limits<double>::infinity();
  auto dist_fb = [&](const Point& x) {
    double d = std::numeric_limits<double>::infinity();
    for (const Point& p : fb.points) d = std::min(d, detail::distance(p, x));
    return d;
  };
  for (std::size_t t = 0; t < g.trace_count(); ++t) {
    if (g.on_lateral_boundary(t)) continue;
    const Point x = g.trace_point(t);
    const double dfb = dist_fb(x);
    const double mu = -f[t];
    if (dfb <= 3.0 * h) s.near_fb_mass += mu * g.trace_cell_measure(t);
    if (dfb <= h && !c.fixed_region[t]) s.scale = std::max(s.scale, std::abs(mu));
    if (detail::positive(c, t)) {
      if (!c.fixed_region[t] && dfb >= 3.0 * h && detail::distance_to_fixed(c, x) >= 3.0 * h)
        s.interior_max = std::max(s.interior_max, std::abs(mu));
    } else if (!c.fixed_region[t]) {
      s.negative_mass = std::min(s.negative_mass, mu);
      if (dfb <= h) s.near_fb_min = std::min(s.near_fb_min, mu);
    }
  }
  if (!std::isfinite(s.near_fb_min)) s.near_fb_min = 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Aggregate report

struct DiagnosticsOptions {
  double exponent_tol = 0.07;
  double nondegeneracy_min = 0.1;
  double density_min = 0.2;
  double morrey_growth = 2.0;
  double q_spread_max = 0.1;
  bool hadamard = true;
  HadamardOptions hadamard_opts;
};

struct DiagnosticsReport {
  std::size_t fb_points = 0;
  double holder_exponent = 0.0;
  double holder_stderr = 0.0;
  double holder_worst_deviation = 0.0;
  double nondegeneracy_min_ratio = 0.0;
  DensityResult density_min;
  double morrey_sup = 0.0;
  double morrey_max_octave_growth = 0.0;
  std::vector<double> q_estimates;
  double q_median = 0.0;
  double q_spread = 0.0;
  std::optional<HadamardResult> hadamard;
  FluxMeasureStats flux;
  std::vector<std::string> notes;  // checks that could not run, with the reason
  std::string density_convention = "half-ball: phase measure / (measure of trace ball in box / 2)";

  bool holder_ok = false, nondegeneracy_ok = false, density_ok = false, morrey_ok = false, q_ok = false;
  bool hadamard_ok = false, flux_ok = false;
};

inline DiagnosticsReport run_diagnostics(const Configuration& c, const PenaltyParams& p, const DiagnosticsOptions& o = {}) {
  const ExtensionGrid& g = *c.grid;
  const double alpha = g.alpha();
  DiagnosticsReport r;
  const FreeBoundarySet fb = extract_free_boundary(c);
  r.fb_points = fb.size();
  r.flux = flux_measure_check(c);
  r.flux_ok = r.flux.negative_mass >= -0.05 * std::max(r.flux.scale, 1e-300);
  if (fb.empty()) {
    r.notes.push_back("free boundary is empty");
    return r;
  }

  const DiscreteOperator op = assemble_weighted_operator(c.grid);
  std::vector<ExponentFit> fits(fb.size());
  std::vector<DensityResult> dens(fb.size());
  std::vector<MorreyResult> mor(fb.size());
  std::vector<std::string> errors(fb.size());
  parallel_for(fb.size(), [&](std::size_t k) {
    const Point& x = fb.points[k];
    try {
      fits[k] = fit_growth_exponent(c, x);
      const auto [lo, hi] = detail::fit_window(c, x);
      const std::vector<double> radii = detail::log_spaced(lo, hi, 5);
      dens[k] = density_check(c, x, radii);
      std::vector<double> mr;
      for (double rr : radii)
        if (rr <= g.height()) mr.push_back(rr);
      mor[k] = morrey_growth_check(op, c, x, mr, o.morrey_growth);
    } catch (const InvalidArgument& e) {
      errors[k] = e.what();
    }
  });
  for (std::size_t k = 0; k < fb.size(); ++k)
    if (!errors[k].empty()) {
      std::size_t last = k;
      while (last + 1 < errors.size() && errors[last + 1] == errors[k]) ++last;
      const std::string which = last == k ? "free-boundary point " + std::to_string(k)
                                          : "free-boundary points " + std::to_string(k) + "-" + std::to_string(last);
      r.notes.push_back(which + ": " + errors[k]);
      k = last;
    }
  if (!r.notes.empty()) return r;

  r.density_min = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  double se2 = 0.0;
  for (std::size_t k = 0; k < fb.size(); ++k) {
    r.holder_exponent += fits[k].exponent / fb.size();
    se2 += fits[k].stderr_ * fits[k].stderr_;
    r.holder_worst_deviation = std::max(r.holder_worst_deviation, std::abs(fits[k].exponent - alpha));
    r.density_min.zero_phase = std::min(r.density_min.zero_phase, dens[k].zero_phase);
    r.density_min.positive_phase = std::min(r.density_min.positive_phase, dens[k].positive_phase);
    r.morrey_sup = std::max(r.morrey_sup, mor[k].sup);
    r.morrey_max_octave_growth = std::max(r.morrey_max_octave_growth, mor[k].max_octave_growth);
  }
  r.holder_stderr = std::sqrt(se2) / fb.size();
  r.nondegeneracy_min_ratio = nondegeneracy_check(c, fb);
  if (fb.size() >= 2) {
    const QConstancy qc = q_constancy_check(c, fb);
    r.q_estimates = qc.q;
    r.q_median = qc.median;
    r.q_spread = qc.spread;
    r.q_ok = qc.spread <= o.q_spread_max;
  }
  r.holder_ok = r.holder_worst_deviation <= o.exponent_tol;
  r.nondegeneracy_ok = r.nondegeneracy_min_ratio >= o.nondegeneracy_min;
  r.density_ok = r.density_min.zero_phase >= o.density_min && r.density_min.positive_phase >= o.density_min;
  r.morrey_ok = r.morrey_max_octave_growth <= o.morrey_growth;
  if (o.hadamard && g.trace_dim() == 1 && fb.size() >= 2) {
    try {
      r.hadamard = hadamard_check(c, p, o.hadamard_opts);
      r.hadamard_ok = r.hadamard->slope_ok && r.hadamard->pair_ok;
    } catch (const InvalidArgument& e) {
      r.notes.push_back(std::string("hadamard: ") + e.what());
    }
  }
  return r;
}

}  // namespace fracdesign
