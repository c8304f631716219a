#pragma once

// Tensor-product mesh of the truncated upper half-space [-L, L]^n x [0, Y]
// carrying the degenerate weight y^beta, beta = 1 - 2 alpha.
//
// Node ordering is row-major with y slowest: node = j * trace_count + t, where
// the trace index is t = i (n = 1) or t = k * nx + i (n = 2, i along x1).

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "fracdesign/core/error.hpp"

namespace fracdesign {

using Point = std::array<double, 2>;  // trace coordinates; second entry unused for n = 1

/// Cell average (1/(b-a)) * integral_a^b t^beta dt. For a == b returns a^beta.
inline double node_weight(double beta, double a, double b) {
  detail::require(beta > -1.0, "weight exponent must exceed -1 (non-integrable weight)", "beta");
  detail::require(a >= 0.0 && b >= a, "cell span must satisfy 0 <= a <= b", "cell_span");
  if (b == a) return std::pow(a, beta);
  const double p = beta + 1.0;
  return (std::pow(b, p) - std::pow(a, p)) / (p * (b - a));
}

/// y_j = Y (j / (ny - 1))^grading.
inline std::vector<double> graded_nodes(double Y, int ny, double grading) {
  detail::require(ny >= 2, "need at least two nodes", "ny");
  detail::require(grading >= 1.0, "grading exponent must be >= 1", "grading");
  std::vector<double> y(ny);
  for (int j = 0; j < ny; ++j) y[j] = Y * std::pow(static_cast<double>(j) / (ny - 1), grading);
  y.back() = Y;
  return y;
}

/// Length of the dual interval of node k on an axis, clipped to the axis ends.
inline double dual_length(std::span<const double> axis, std::size_t k) {
  const double lo = k == 0 ? axis[0] : 0.5 * (axis[k - 1] + axis[k]);
  const double hi = k + 1 == axis.size() ? axis[k] : 0.5 * (axis[k] + axis[k + 1]);
  return hi - lo;
}

class ExtensionGrid {
 public:
  ExtensionGrid(int n, double L, double Y, int nx, int ny, double alpha, double grading)
      : n_(n), L_(L), Y_(Y), nx_(nx), ny_(ny), alpha_(alpha), beta_(1.0 - 2.0 * alpha), grading_(grading) {
    detail::require(n == 1 || n == 2, "trace dimension must be 1 or 2", "n");
    detail::require(alpha > 0.0 && alpha < 1.0, "order must lie in (0, 1)", "alpha");
    detail::require(L > 0.0, "half width must be positive", "L");
    detail::require(Y > 0.0, "height must be positive", "Y");
    detail::require(nx >= 8, "at least 8 nodes per trace axis", "nx");
    detail::require(ny >= 8, "at least 8 nodes in y", "ny");
    detail::require(grading >= 1.0, "grading exponent must be >= 1", "grading");
    x_.resize(nx);
    for (int i = 0; i < nx; ++i) x_[i] = -L + 2.0 * L * i / (nx - 1);
    x_.back() = L;
    y_ = graded_nodes(Y, ny, grading);
    refresh();
  }

  /// Same grid with the trace axis replaced (used for domain deformations). The
  /// new axis must keep the end points and stay strictly increasing.
  ExtensionGrid with_trace_axis(std::vector<double> x) const {
    detail::require(static_cast<int>(x.size()) == nx_, "axis size mismatch", "x_nodes");
    for (std::size_t i = 1; i < x.size(); ++i)
      detail::require(x[i] > x[i - 1], "trace axis must be strictly increasing", "x_nodes");
    ExtensionGrid g = *this;
    g.x_ = std::move(x);
    g.refresh();
    return g;
  }

  /// Same grid with explicit y nodes (must start at 0 and increase).
  ExtensionGrid with_y_axis(std::vector<double> y) const {
    detail::require(y.size() >= 8 && y.front() == 0.0, "y axis must start at 0 with >= 8 nodes", "y_nodes");
    for (std::size_t j = 1; j < y.size(); ++j)
      detail::require(y[j] > y[j - 1], "y axis must be strictly increasing", "y_nodes");
    ExtensionGrid g = *this;
    g.y_ = std::move(y);
    g.ny_ = static_cast<int>(g.y_.size());
    g.Y_ = g.y_.back();
    g.refresh();
    return g;
  }

  int trace_dim() const { return n_; }
  double half_width() const { return L_; }
  double height() const { return Y_; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double grading() const { return grading_; }

  std::span<const double> x_nodes() const { return x_; }
  std::span<const double> y_nodes() const { return y_; }

  std::size_t trace_count() const { return n_ == 1 ? nx_ : static_cast<std::size_t>(nx_) * nx_; }
  std::size_t node_count() const { return trace_count() * ny_; }
  std::size_t node(std::size_t t, int j) const { return j * trace_count() + t; }
  std::size_t trace_index(int i, int k = 0) const { return n_ == 1 ? i : static_cast<std::size_t>(k) * nx_ + i; }
  int ix(std::size_t t) const { return static_cast<int>(t % nx_); }
  int iz(std::size_t t) const { return n_ == 1 ? 0 : static_cast<int>(t / nx_); }

  Point trace_point(std::size_t t) const { return {x_[ix(t)], n_ == 1 ? 0.0 : x_[iz(t)]}; }

  /// Measure of the trace dual cell (length for n = 1, area for n = 2).
  double trace_cell_measure(std::size_t t) const {
    return n_ == 1 ? dx_[ix(t)] : dx_[ix(t)] * dx_[iz(t)];
  }
  double dual_dx(int i) const { return dx_[i]; }
  double dual_dy(int j) const { return dy_[j]; }
  /// Nominal trace spacing (uniform grids) = 2L / (nx - 1).
  double spacing() const { return 2.0 * L_ / (nx_ - 1); }

  bool on_lateral_boundary(std::size_t t) const {
    const int i = ix(t), k = iz(t);
    if (i == 0 || i == nx_ - 1) return true;
    return n_ == 2 && (k == 0 || k == nx_ - 1);
  }

 private:
  void refresh() {
    dx_.resize(x_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) dx_[i] = dual_length(x_, i);
    dy_.resize(y_.size());
    for (std::size_t j = 0; j < y_.size(); ++j) dy_[j] = dual_length(y_, j);
  }

  int n_;
  double L_, Y_;
  int nx_, ny_;
  double alpha_, beta_, grading_;
  std::vector<double> x_, y_, dx_, dy_;
};

using GridPtr = std::shared_ptr<const ExtensionGrid>;

inline GridPtr build_extension_grid(int n, double L, double Y, int nx, int ny, double alpha,
                                    double grading = 2.0) {
  return std::make_shared<const ExtensionGrid>(n, L, Y, nx, ny, alpha, grading);
}

/// Discrete function on every node of the extension grid.
struct ScalarField {
  GridPtr grid;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(GridPtr g) : grid(std::move(g)), values(grid->node_count(), 0.0) {}
  ScalarField(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    detail::require(values.size() == grid->node_count(), "value count must equal node count", "values");
  }
  double operator()(std::size_t t, int j) const { return values[grid->node(t, j)]; }
};

/// Discrete function on the trace hyperplane {y = 0}.
struct TraceField {
  GridPtr grid;
  std::vector<double> values;

  TraceField() = default;
  explicit TraceField(GridPtr g) : grid(std::move(g)), values(grid->trace_count(), 0.0) {}
  TraceField(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    detail::require(values.size() == grid->trace_count(), "value count must equal trace node count", "values");
  }
  double operator[](std::size_t t) const { return values[t]; }
  double& operator[](std::size_t t) { return values[t]; }
};

/// Samples f(point) on the trace nodes.
template <class F>
TraceField sample_trace(const GridPtr& g, F&& f) {
  TraceField u(g);
  for (std::size_t t = 0; t < g->trace_count(); ++t) u[t] = f(g->trace_point(t));
  return u;
}

inline TraceField trace_of(const ScalarField& v) {
  TraceField u(v.grid);
  std::copy_n(v.values.begin(), u.values.size(), u.values.begin());
  return u;
}

}  // namespace fracdesign
