#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fracdesign/extension.hpp"

using namespace fracdesign;

namespace {

// Weighted-harmonic function a + b x + c y^(2 alpha) + d x y^(2 alpha): every term is
// annihilated by div(y^beta grad), and the discretization is exact on it.
struct ExactHarmonic {
  double alpha;
  double operator()(const Point& p, double y) const {
    const double s = std::pow(y, 2.0 * alpha);
    return 0.3 + 0.7 * p[0] - 0.4 * s + 1.1 * p[0] * s + (p[1] != 0.0 ? 0.2 * p[1] : 0.0);
  }
};

double closed_form_flux_constant(double a) {
  return std::pow(2.0, 1.0 - 2.0 * a) * std::tgamma(1.0 - a) / std::tgamma(a);
}

}  // namespace

TEST(Operator, SymmetricWithConstantKernel) {
  for (int n : {1, 2}) {
    const auto g = build_extension_grid(n, 1.0, 1.0, 9, 8, 0.3);
    const auto op = assemble_weighted_operator(g);
    const SparseMatrix At = op.A.transpose();
    EXPECT_NEAR((op.A - At).norm(), 0.0, 1e-14);
    const auto r = op.apply(std::vector<double>(g->node_count(), 2.5));
    for (double x : r) EXPECT_NEAR(x, 0.0, 1e-12);
  }
}

TEST(Operator, EnergyOfLinearFunctions) {
  // beta = 0: energy of v = x on [-1, 1] x [0, 2] is the area, 4
  const auto g = build_extension_grid(1, 1.0, 2.0, 11, 9, 0.5);
  const auto op = assemble_weighted_operator(g);
  ScalarField v(g);
  for (std::size_t p = 0; p < g->node_count(); ++p) v.values[p] = g->trace_point(p % g->trace_count())[0];
  EXPECT_NEAR(weighted_dirichlet_energy(op, v), 4.0, 1e-12);
  // general beta: energy of v = x is 2L * Y^(1+beta)/(1+beta)
  const auto g2 = build_extension_grid(1, 1.0, 2.0, 11, 9, 0.3);
  const auto op2 = assemble_weighted_operator(g2);
  ScalarField w(g2);
  for (std::size_t p = 0; p < g2->node_count(); ++p) w.values[p] = g2->trace_point(p % g2->trace_count())[0];
  EXPECT_NEAR(weighted_dirichlet_energy(op2, w), 2.0 * std::pow(2.0, 1.4) / 1.4, 1e-12);
  // v = y^(2 alpha): energy = 2L * (2 alpha)^2 * Y^(2 alpha)/(2 alpha) exactly
  ScalarField z(g2);
  for (std::size_t p = 0; p < g2->node_count(); ++p) z.values[p] = std::pow(g2->y_nodes()[p / g2->trace_count()], 0.6);
  EXPECT_NEAR(weighted_dirichlet_energy(op2, z), 2.0 * 0.6 * std::pow(2.0, 0.6), 1e-12);
  EXPECT_NEAR(bilinear_form(op2, z, z), weighted_dirichlet_energy(op2, z), 1e-12);
  const double half = weighted_dirichlet_energy(op2, w, [](const Point& p, double) { return p[0] < 0.0; });
  EXPECT_NEAR(half, 0.5 * weighted_dirichlet_energy(op2, w), 1e-12);
}

TEST(SolveDirichlet, ReproducesExactWeightedHarmonic) {
  for (int n : {1, 2}) {
    for (double alpha : {0.25, 0.5, 0.75}) {
      const auto g = build_extension_grid(n, 1.0, 1.5, n == 1 ? 33 : 13, 17, alpha);
      const auto op = assemble_weighted_operator(g);
      const ExactHarmonic h{alpha};
      DirichletSpec s = full_trace_spec(sample_trace(g, [&](const Point& p) { return h(p, 0.0); }),
                                        LateralBC::prescribed, TopBC::prescribed);
      s.boundary_data = h;
      for (SolveMethod m : {SolveMethod::direct, SolveMethod::cg}) {
        SolveInfo info;
        const ScalarField v = solve_dirichlet(op, s, {m, 1e-12, 20000}, &info);
        EXPECT_LE(info.residual, 1e-12);
        double err = 0.0;
        for (std::size_t p = 0; p < g->node_count(); ++p)
          err = std::max(err, std::abs(v.values[p] - h(g->trace_point(p % g->trace_count()), g->y_nodes()[p / g->trace_count()])));
        EXPECT_LT(err, 1e-9) << "n=" << n << " alpha=" << alpha;
      }
    }
  }
}

TEST(SolveDirichlet, RejectsInvalidInput) {
  const auto g = build_extension_grid(1, 1.0, 1.0, 9, 8, 0.5);
  const auto op = assemble_weighted_operator(g);
  DirichletSpec s = full_trace_spec(TraceField(g));
  EXPECT_THROW(solve_dirichlet(op, s, {SolveMethod::direct, 0.0, 10}), InvalidArgument);
  s.fixed_mask.assign(g->trace_count(), 0);
  EXPECT_THROW(solve_dirichlet(op, s), InvalidArgument);
  s.fixed_mask.assign(3, 1);
  EXPECT_THROW(solve_dirichlet(op, s), InvalidArgument);
  DirichletSpec bad = full_trace_spec(TraceField(g));
  bad.trace_values[2] = std::nan("");
  EXPECT_THROW(solve_dirichlet(op, bad), InvalidArgument);
}

TEST(SolveDirichlet, IterationCapReportsResidual) {
  const auto g = build_extension_grid(1, 1.0, 1.0, 33, 17, 0.5);
  const auto op = assemble_weighted_operator(g);
  const DirichletSpec s = full_trace_spec(sample_trace(g, [](const Point& p) { return 1.0 - p[0] * p[0]; }));
  try {
    solve_dirichlet(op, s, {SolveMethod::cg, 1e-12, 3});
    FAIL();
  } catch (const NonConvergence& e) {
    EXPECT_GT(e.last_residual(), 1e-12);
    EXPECT_EQ(e.iterations(), 3);
  }
}

TEST(FluxConstant, MatchesGammaClosedForm) {
  for (double a : {0.2, 0.25, 0.5, 0.6, 0.75})
    EXPECT_NEAR(extension_flux_constant(a) / closed_form_flux_constant(a), 1.0, 2e-4) << a;
  EXPECT_NEAR(extension_flux_constant(0.9) / closed_form_flux_constant(0.9), 1.0, 5e-3);
  EXPECT_NEAR(extension_flux_constant(0.5), 1.0, 2e-4);
}

TEST(ModeProfile, HalfOrderIsExponential) {
  const WeightedModeProfile phi(0.5, 2.0);
  for (double y : {0.1, 0.5, 1.0, 2.0}) EXPECT_NEAR(phi(y), std::exp(-2.0 * y), 2e-4);
}

TEST(SolveDirichlet, CosineModeMatchesProfile) {
  // reflecting sides: the extension of cos(pi x / L) separates exactly
  for (double alpha : {0.25, 0.5, 0.75}) {
    const double L = 1.0, k = std::numbers::pi / L;
    const auto g = build_extension_grid(1, L, 6.0, 65, 65, alpha, 2.5);
    const auto op = assemble_weighted_operator(g);
    const DirichletSpec s =
        full_trace_spec(sample_trace(g, [&](const Point& p) { return std::cos(k * p[0]); }), LateralBC::reflect);
    const ScalarField v = solve_dirichlet(op, s);
    const WeightedModeProfile phi(alpha, k);
    double err = 0.0;
    for (int j = 0; j < g->ny(); ++j) err = std::max(err, std::abs(v(32, j) - phi(g->y_nodes()[j])));
    EXPECT_LT(err, 5e-3) << alpha;
    const TraceField f = fractional_laplacian_via_flux(v);
    EXPECT_NEAR(f[32] / std::pow(k, 2.0 * alpha), 1.0, 0.02) << alpha << " " << phi.boundary_flux() / extension_flux_constant(alpha) / std::pow(k, 2 * alpha);
    EXPECT_NEAR(f[16] / std::pow(k, 2.0 * alpha), std::cos(k * g->x_nodes()[16]), 0.02) << alpha;
  }
}

TEST(ExtensionFlux, HalfLineProfileHasNoFluxOnZeroSide) {
  // v = ((x + sqrt(x^2 + y^2))/2)^alpha is the extension of (x_+)^alpha
  const double alpha = 0.5;
  const auto g = build_extension_grid(1, 2.0, 2.0, 129, 49, alpha);
  const auto op = assemble_weighted_operator(g);
  auto exact = [&](const Point& p, double y) { return std::pow(0.5 * (p[0] + std::hypot(p[0], y)), alpha); };
  DirichletSpec s = full_trace_spec(sample_trace(g, [&](const Point& p) { return exact(p, 0.0); }),
                                    LateralBC::prescribed, TopBC::prescribed);
  s.boundary_data = exact;
  const ScalarField v = solve_dirichlet(op, s);
  // positive side: alpha-harmonic, no flux; zero side: flux -2 alpha (4|x|)^(-alpha)
  const TraceField f = extension_flux(v);
  for (int i = 72; i < 120; ++i) EXPECT_NEAR(f[i], 0.0, 0.02) << g->x_nodes()[i];
  for (int i = 8; i < 56; ++i) {
    const double x = g->x_nodes()[i];
    EXPECT_NEAR(f[i], -2 * alpha * std::pow(4 * std::abs(x), -alpha), 0.02) << x;
  }
}

TEST(TraceSystem, MatchesFullSolve) {
  for (int n : {1, 2}) {
    const auto g = build_extension_grid(n, 1.0, 1.0, n == 1 ? 33 : 11, 12, 0.4);
    const auto op = assemble_weighted_operator(g);
    const TraceSystem sys(op, std::vector<std::uint8_t>(g->trace_count(), 1));
    const TraceField u = sample_trace(g, [](const Point& p) { return (1 - p[0] * p[0]) * (1 + 0.5 * p[1]) + 0.1 * p[0]; });
    const ScalarField v = solve_dirichlet(op, full_trace_spec(u));
    TraceField uz = u;
    for (std::size_t t = 0; t < g->trace_count(); ++t)
      if (g->on_lateral_boundary(t)) uz[t] = 0.0;
    const ScalarField w = sys.extend(uz);
    const ScalarField vz = solve_dirichlet(op, full_trace_spec(uz));
    double err = 0.0;
    for (std::size_t p = 0; p < g->node_count(); ++p) err = std::max(err, std::abs(w.values[p] - vz.values[p]));
    EXPECT_LT(err, 1e-10);
    EXPECT_NEAR(sys.energy(uz), weighted_dirichlet_energy(op, vz), 1e-9 * weighted_dirichlet_energy(op, vz));
    (void)v;
  }
}

TEST(TraceSystem, MaskProblemMatchesMixedSolve) {
  const auto g = build_extension_grid(1, 1.0, 1.0, 41, 14, 0.6);
  const auto op = assemble_weighted_operator(g);
  const TraceSystem sys(op, std::vector<std::uint8_t>(g->trace_count(), 1));
  std::vector<std::uint8_t> fixed(g->trace_count(), 0);
  TraceField data(g);
  for (int i = 0; i < g->nx(); ++i) {
    const double x = g->x_nodes()[i];
    if (std::abs(x) < 0.2) fixed[i] = 1, data[i] = 1.0;
    if (x < -0.6) fixed[i] = 1;
  }
  const MaskSolution sol = solve_mask_problem(sys, fixed, data);
  DirichletSpec s;
  s.trace_values = data;
  s.fixed_mask = fixed;
  const ScalarField v = solve_dirichlet(op, s);
  for (std::size_t t = 0; t < g->trace_count(); ++t) EXPECT_NEAR(sol.u[t], v(t, 0), 1e-9);
  EXPECT_NEAR(sol.energy, weighted_dirichlet_energy(op, v), 1e-9);
  for (int r : sol.free) EXPECT_NEAR(sol.Su[r], 0.0, 1e-9);
}

TEST(TraceSystem, ResultsIndependentOfThreadCount) {
  const auto g = build_extension_grid(1, 1.0, 1.0, 129, 20, 0.5);
  const auto op = assemble_weighted_operator(g);
  set_threads(1);
  const TraceSystem a(op, std::vector<std::uint8_t>(g->trace_count(), 1));
  set_threads(3);
  const TraceSystem b(op, std::vector<std::uint8_t>(g->trace_count(), 1));
  set_threads(0);
  EXPECT_EQ((a.S() - b.S()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PoissonKernel, NormalizationMatchesGammaClosedForm) {
  for (int n : {1, 2})
    for (double a : {0.1, 0.25, 0.5, 0.75, 0.95}) {
      const double q = std::tgamma(0.5 * (n + 2 * a)) / (std::pow(std::numbers::pi, 0.5 * n) * std::tgamma(a));
      EXPECT_NEAR(poisson_normalization(n, a) / q, 1.0, 1e-9) << n << " " << a;
    }
  EXPECT_NEAR(poisson_normalization(1, 0.5), 1.0 / std::numbers::pi, 1e-12);
  EXPECT_THROW(poisson_normalization(3, 0.5), InvalidArgument);
  EXPECT_THROW(poisson_kernel({0.0, 0.0}, 0.0, 1, 0.5), InvalidArgument);
}

TEST(PoissonKernel, UnitMassTruncatedIndependently) {
  // composite quadrature on a truncated line plus the asymptotic tail
  for (double a : {0.3, 0.5, 0.8}) {
    const double y = 0.7, R = 200.0;
    const double body = quad::composite([&](double x) { return poisson_kernel({x, 0.0}, y, 1, a); }, -R, R, 4000, 10);
    const double tail = 2.0 * poisson_normalization(1, a) * std::pow(y, 2 * a) * std::pow(R, -2 * a) / (2 * a);
    EXPECT_NEAR(body + tail, 1.0, 2e-4) << a;
  }
}

TEST(ExtendByKernel, AgreesWithBoundaryValueSolve) {
  const double alpha = 0.5;
  const auto g = build_extension_grid(1, 6.0, 12.0, 241, 81, alpha, 2.0);
  const TraceField u = sample_trace(g, [](const Point& p) { return std::pow(std::max(0.0, 1 - p[0] * p[0]), 2); });
  const auto op = assemble_weighted_operator(g);
  const ScalarField v = solve_dirichlet(op, full_trace_spec(u));
  int j = 1;
  while (g->y_nodes()[j] < 0.5) ++j;
  const double y = g->y_nodes()[j];
  const TraceField w = extend_by_kernel(u, y);
  for (int i = 100; i <= 140; i += 5) EXPECT_NEAR(w[i], v(i, j), 0.01) << g->x_nodes()[i];
}

TEST(ExtendByKernel, ConstantIsReproducedAwayFromEdges) {
  const auto g = build_extension_grid(2, 4.0, 1.0, 41, 8, 0.5);
  const TraceField one = sample_trace(g, [](const Point&) { return 1.0; });
  const TraceField w = extend_by_kernel(one, 0.05);
  EXPECT_NEAR(w[g->trace_index(20, 20)], 1.0, 0.02);
}
