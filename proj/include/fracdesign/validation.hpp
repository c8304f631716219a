#pragma once

// Cross-checks between the independent realizations of (-Delta)^alpha: singular
// quadrature, Fourier multiplier and extension flux, plus the Poisson kernel
// normalization and the half-line alpha-harmonic profile.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "fracdesign/extension.hpp"
#include "fracdesign/fracops.hpp"

namespace fracdesign {

/// Relative L2 discrepancies on u = cos(k x), x in [-pi, pi), with `nodes` periodic
/// trace nodes; the extension uses reflecting sides, which the mode satisfies.
struct TriadCase {
  double alpha = 0.0;
  int k = 0;
  int nodes = 0;
  double quad_spectral = 0.0;
  double flux_spectral = 0.0;
  double flux_quad = 0.0;
  double max() const { return std::max({quad_spectral, flux_spectral, flux_quad}); }
};

struct TriadGrid {
  int nodes = 1024;
  int ny = 160;      // layers of the extension grid
  double Y = 20.0;
  double grading = 2.0;
};

inline TriadGrid refined(const TriadGrid& g, double factor) {
  TriadGrid r = g;
  r.nodes = static_cast<int>(std::lround(g.nodes * factor));
  r.ny = std::max(8, static_cast<int>(std::lround(g.ny * factor)));
  return r;
}

inline std::vector<TriadCase> triad_cases(double alpha, const std::vector<int>& ks, const TriadGrid& tg) {
  detail::require(tg.nodes >= 8 && tg.nodes % 2 == 0, "node count must be even and >= 8", "nodes");
  for (int k : ks) detail::require(k >= 1 && 2 * k < tg.nodes, "wavenumber must be resolved", "k");
  const auto g = build_extension_grid(1, std::numbers::pi, tg.Y, tg.nodes + 1, tg.ny, alpha, tg.grading);
  const DiscreteOperator op = assemble_weighted_operator(g);
  std::vector<TriadCase> out;
  for (int k : ks) {
    const TraceField u = sample_trace(g, [&](const Point& p) { return std::cos(k * p[0]); });
    const TraceField sp = frac_lap_spectral(u, alpha);
    const TraceField qd = frac_lap_quadrature_field(u, alpha, FarFieldModel::periodic());
    const TraceField fl = fractional_laplacian_via_flux(solve_dirichlet(op, full_trace_spec(u, LateralBC::reflect)));
    const double scale = std::pow(static_cast<double>(k), 2.0 * alpha);
    double norm = 0.0, qs = 0.0, fs = 0.0, fq = 0.0;
    for (int i = 0; i < tg.nodes; ++i) {
      norm += std::pow(scale * u[i], 2);
      qs += std::pow(qd[i] - sp[i], 2);
      fs += std::pow(fl[i] - sp[i], 2);
      fq += std::pow(fl[i] - qd[i], 2);
    }
    out.push_back({alpha, k, tg.nodes, std::sqrt(qs / norm), std::sqrt(fs / norm), std::sqrt(fq / norm)});
  }
  return out;
}

/// integral of P_{n,alpha}(x, 1) over R^n: composite quadrature on |x| <= R plus
/// the leading-order tail q R^(-2 alpha) |S^{n-1}| / (2 alpha).
inline double poisson_mass(int n, double alpha, double R = 1000.0) {
  const double surface = n == 1 ? 2.0 : 2.0 * std::numbers::pi;
  const double body = quad::composite(
      [&](double r) { return std::pow(r, n - 1) * poisson_kernel({r, 0.0}, 1.0, n, alpha); }, 0.0, 20.0, 400, 10) +
                      quad::composite(
      [&](double r) { return std::pow(r, n - 1) * poisson_kernel({r, 0.0}, 1.0, n, alpha); }, 20.0, R, 2000, 10);
  const double tail = poisson_normalization(n, alpha) * std::pow(R, -2.0 * alpha) / (2.0 * alpha);
  return surface * (body + tail);
}

/// max |P_{1,1/2}(x, y) - y / (pi (x^2 + y^2))| over a fixed sample set.
inline double half_laplacian_kernel_deviation() {
  double worst = 0.0;
  for (double y : {0.1, 0.5, 1.0, 3.0})
    for (double x : {-4.0, -1.0, -0.3, 0.0, 0.2, 0.7, 2.5, 10.0}) {
      const double classical = y / (std::numbers::pi * (x * x + y * y));
      worst = std::max(worst, std::abs(poisson_kernel({x, 0.0}, y, 1, 0.5) - classical));
    }
  return worst;
}

/// |(-Delta)^alpha (x_+)^alpha| at x against the same quadrature applied to the
/// control (x_+)^(alpha/2). Grid: [-L, L] with `nodes` nodes and power-growth tails.
struct HalfLineCase {
  double alpha = 0.0;
  double x = 0.0;
  double profile = 0.0;
  double control = 0.0;
  double ratio() const { return std::abs(profile) / std::abs(control); }
};

inline std::vector<HalfLineCase> half_line_cases(double alpha, const std::vector<double>& xs, int nodes = 1025, double L = 2.0) {
  const auto g = build_extension_grid(1, L, 1.0, nodes, 8, alpha);
  auto eval = [&](double p, double x) {
    const TraceField u = sample_trace(g, [&](const Point& q) { return std::pow(std::max(q[0], 0.0), p); });
    return frac_lap_quadrature(u, {x, 0.0}, alpha, FarFieldModel::power_growth(p, 0.0, 1.0));
  };
  std::vector<HalfLineCase> out;
  for (double x : xs) out.push_back({alpha, x, eval(alpha, x), eval(0.5 * alpha, x)});
  return out;
}

}  // namespace fracdesign
