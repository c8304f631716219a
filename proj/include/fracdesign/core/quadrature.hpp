#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

namespace fracdesign::quad {

struct Rule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

/// Gauss-Legendre rule of the given order (Newton iteration on P_n), cached.
inline const Rule& gauss_legendre(int order) {
  static std::map<int, Rule> cache;
  static std::mutex m;
  std::lock_guard lock(m);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;
  Rule r;
  r.nodes.resize(order);
  r.weights.resize(order);
  for (int i = 0; i < (order + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= order; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = order * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.nodes[i] = -x;
    r.nodes[order - 1 - i] = x;
    r.weights[i] = w;
    r.weights[order - 1 - i] = w;
  }
  return cache.emplace(order, std::move(r)).first->second;
}

/// Fixed-order Gauss-Legendre over [a, b].
template <class F>
double integrate(F&& f, double a, double b, int order = 20) {
  const Rule& r = gauss_legendre(order);
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  double s = 0.0;
  for (std::size_t k = 0; k < r.nodes.size(); ++k) s += r.weights[k] * f(mid + half * r.nodes[k]);
  return s * half;
}

/// Composite Gauss-Legendre with `panels` equal panels over [a, b].
template <class F>
double composite(F&& f, double a, double b, int panels, int order = 20) {
  double s = 0.0;
  const double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) s += integrate(f, a + p * h, a + (p + 1) * h, order);
  return s;
}

/// Composite Gauss-Legendre on [a, b] with panels refined geometrically toward `a`
/// (ratio 1/2), suited to integrable endpoint singularities at `a`.
template <class F>
double graded_toward_left(F&& f, double a, double b, int levels = 40, int order = 20) {
  double s = 0.0;
  double hi = b;
  for (int l = 0; l < levels; ++l) {
    const double lo = a + 0.5 * (hi - a);
    s += integrate(f, lo, hi, order);
    hi = lo;
  }
  return s;
}

}  // namespace fracdesign::quad
