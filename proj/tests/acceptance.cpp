// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [path to fracdesign tool] (criterion 9 runs the tool).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "fracdesign/fracdesign.hpp"

using namespace fracdesign;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("criterion %d %-28s %s  %s\n", id, name.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Problem reference_problem(double alpha, int nx = 513, int ny = 110) {
  Problem pb;
  pb.grid = build_extension_grid(1, 2.0, 2.0, nx, ny, alpha);
  pb.fixed_region.assign(nx, 0);
  pb.phi = TraceField(pb.grid);
  for (int i = 0; i < nx; ++i)
    if (std::abs(pb.grid->x_nodes()[i]) <= 0.25 + 1e-12) pb.fixed_region[i] = 1, pb.phi[i] = 1.0;
  return pb;
}

std::vector<int> transitions(const std::vector<std::uint8_t>& mask) {
  std::vector<int> out;
  for (std::size_t i = 1; i < mask.size(); ++i)
    if (mask[i] != mask[i - 1]) out.push_back(static_cast<int>(i));
  return out;
}

void operator_triad() {
  const double tol = 0.05;
  double worst = 0.0;
  int not_decreasing = 0;
  const TriadGrid fine;  // 1024 periodic nodes
  const TriadGrid coarse = refined(fine, 0.5);
  for (double a : {0.25, 0.5, 0.75}) {
    const auto f = triad_cases(a, {1, 2, 4}, fine);
    const auto c = triad_cases(a, {1, 2, 4}, coarse);
    for (std::size_t k = 0; k < f.size(); ++k) {
      worst = std::max(worst, f[k].max());
      if (!(f[k].max() < c[k].max())) ++not_decreasing;
    }
  }
  report(1, "operator triad", worst <= tol && not_decreasing == 0,
         fmt("max pairwise rel L2 %.2e at %d nodes (tol %.2f); cases not improving %d->%d: %d/9", worst, fine.nodes, tol,
             coarse.nodes, fine.nodes, not_decreasing));
}

void poisson_kernel_check() {
  double worst = 0.0;
  for (int n : {1, 2})
    for (double a : {0.25, 0.5, 0.75}) worst = std::max(worst, std::abs(poisson_mass(n, a) - 1.0));
  const double pointwise = half_laplacian_kernel_deviation();
  report(2, "Poisson kernel", worst <= 1e-3 && pointwise <= 1e-3,
         fmt("max |mass - 1| %.2e (tol 1e-3); n=1 alpha=1/2 pointwise %.2e (tol 1e-3)", worst, pointwise));
}

void half_line_profile() {
  double worst = 0.0;
  for (double a : {0.25, 0.5, 0.75})
    for (const HalfLineCase& h : half_line_cases(a, {0.25, 0.5, 0.75})) worst = std::max(worst, h.ratio());
  report(3, "alpha-harmonic profile", worst <= 0.02, fmt("max |L(x_+^a)| / |L(x_+^(a/2))| = %.2e (tol 0.02)", worst));
}

void minimizer_oracle() {
  double worst_energy = 0.0;
  int worst_cells = 0;
  bool same_topology = true;
  for (double a : {0.25, 0.5, 0.75}) {
    const PenaltySolver s(reference_problem(a));
    for (double eps : {1.0, 0.25, 0.0625}) {
      const PenaltyParams p{eps, 0.5};
      const MinimizeResult bf = minimize_bruteforce_1d(s, p);
      MinimizeOptions o;
      o.init = InitKind::random;
      o.seed = 1;
      const MinimizeResult it = minimize_iterative(s, p, o);
      worst_energy = std::max(worst_energy, std::abs(it.energy - bf.energy) / std::abs(bf.energy));
      const auto ti = transitions(it.config.positivity_mask), tb = transitions(bf.config.positivity_mask);
      if (ti.size() != tb.size()) {
        same_topology = false;
        continue;
      }
      for (std::size_t k = 0; k < ti.size(); ++k) worst_cells = std::max(worst_cells, std::abs(ti[k] - tb[k]));
    }
  }
  report(4, "minimizer oracle", worst_energy <= 1e-6 && worst_cells <= 1 && same_topology,
         fmt("max rel energy gap %.2e (tol 1e-6); max free-boundary offset %d cells (tol 1)%s", worst_energy, worst_cells,
             same_topology ? "" : "; interface count differs"));
}

struct ReferenceRun {
  ConstrainedResult sweep;
  DiagnosticsReport diag;
  double cell = 4.0 / 512;
};

ReferenceRun reference_run() {
  ReferenceRun r;
  const PenaltySolver s(reference_problem(0.5));
  r.sweep = solve_constrained(s, 0.5, EpsSchedule{});
  r.diag = run_diagnostics(r.sweep.terminal.config, {r.sweep.terminal_eps, 0.5});
  return r;
}

void volume_recovery(const ReferenceRun& r) {
  const EnvelopeFit env = envelope_fit(r.sweep.record);
  const double dv = std::abs(r.sweep.terminal.volume - 0.5);
  report(5, "volume recovery", dv <= r.cell * (1 + 1e-12) && env.ok,
         fmt("terminal eps %g volume %.6f (|dv| %.2e, cell %.2e); envelope C %.3g, intercept %.2e, max residual %.2e",
             r.sweep.terminal_eps, r.sweep.terminal.volume, dv, r.cell, env.C, env.intercept, env.max_residual));
}

void regularity(const ReferenceRun& r) {
  const DiagnosticsReport& d = r.diag;
  const bool holder = d.holder_worst_deviation <= 0.07;
  const bool nondeg = d.nondegeneracy_min_ratio >= 0.1;
  const bool density = d.density_min.zero_phase >= 0.2 && d.density_min.positive_phase >= 0.2;
  const bool morrey = d.morrey_max_octave_growth <= 2.0;
  report(6, "regularity / nondegeneracy", holder && nondeg && density && morrey && d.notes.empty(),
         fmt("exponent %.4f (worst |dev| %.4f, tol 0.07); nondeg %.3f (>= 0.1); densities %.3f/%.3f (>= 0.2); Morrey "
             "octave growth %.3f (<= 2)",
             d.holder_exponent, d.holder_worst_deviation, d.nondegeneracy_min_ratio, d.density_min.zero_phase,
             d.density_min.positive_phase, d.morrey_max_octave_growth));
}

void q_constancy(const ReferenceRun& r) {
  const LambdaBounds lb = lambda_sweep(r.sweep.record);
  std::string eps;
  for (const SweepEntry& e : r.sweep.record.entries) eps += fmt("%s%g", eps.empty() ? "" : ",", e.eps);
  report(7, "free-boundary constancy", r.diag.q_spread <= 0.1 && lb.ok,
         fmt("q spread %.2e over %zu points (tol 0.1); lambda over eps {%s}: [%.4f, %.4f] ratio %.3f (tol 3)",
             r.diag.q_spread, r.diag.q_estimates.size(), eps.c_str(), lb.min, lb.max, lb.spread_ratio));
}

void hadamard(const ReferenceRun& r) {
  if (!r.diag.hadamard) {
    report(8, "Hadamard formula", false, "not evaluated");
    return;
  }
  const HadamardResult& h = *r.diag.hadamard;
  const double a = 0.5;
  const double c_alpha = a * a * std::pow(2.0, 1.0 - 2.0 * a) * std::numbers::pi / std::sin(std::numbers::pi * a);
  const double l2 = h.lambda * h.lambda;
  report(8, "Hadamard formula", h.relative_error <= 0.15 && h.pair_ratio >= 5.0,
         fmt("s %.4f vs lambda^2 %.4f: rel err %.3f (tol 0.15); pair ratio %.1f (>= 5); s/lambda^2 %.3f, "
             "s/(c_a lambda^2) %.3f with c_a %.4f; one-cell slope %.4f",
             h.slope, l2, h.relative_error, h.pair_ratio, h.slope / l2, h.slope / (c_alpha * l2), c_alpha, h.discrete_slope));
}

/// Informational: the same measurement on a grid refined 2x in x, so the trend of
/// s / lambda^2 is visible next to the pinned-resolution result.
void hadamard_refinement_note() {
  const PenaltySolver s(reference_problem(0.5, 1025, 220));
  const ConstrainedResult c = solve_constrained(s, 0.5, EpsSchedule{});
  const HadamardResult h = hadamard_check(c.terminal.config, {c.terminal_eps, 0.5});
  const double l2 = h.lambda * h.lambda;
  std::printf("note        criterion 8 at nx=1025 (not gating): s %.4f, lambda^2 %.4f, rel err %.3f, s/lambda^2 %.3f, "
              "s/(pi/4 lambda^2) %.3f\n",
              h.slope, l2, h.relative_error, h.slope / l2, h.slope / (0.25 * std::numbers::pi * l2));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism(const std::string& cli, const std::string& config) {
  if (cli.empty() || !fs::exists(cli)) {
    report(9, "determinism", false, "tool not found: " + cli);
    return;
  }
  const fs::path root = fs::temp_directory_path() / "fracdesign_acceptance";
  fs::remove_all(root);
  struct Run {
    const char* name;
    int threads;
  };
  const Run runs[] = {{"a_t1", 1}, {"b_t1", 1}, {"c_t4", 4}};
  for (const Run& r : runs) {
    const std::string cmd = "\"" + cli + "\" solve \"" + config + "\" --threads " + std::to_string(r.threads) +
                            " --out \"" + (root / r.name).string() + "\" > /dev/null";
    if (std::system(cmd.c_str()) != 0) {
      report(9, "determinism", false, "tool failed: " + cmd);
      return;
    }
  }
  int differing = 0;
  for (const char* f : {"sweep.csv", "report.json"})
    for (const char* other : {"b_t1", "c_t4"})
      if (slurp(root / "a_t1" / f) != slurp(root / other / f)) ++differing;
  const bool nonempty = !slurp(root / "a_t1" / "sweep.csv").empty() && !slurp(root / "a_t1" / "report.json").empty();
  report(9, "determinism", differing == 0 && nonempty,
         fmt("sweep.csv and report.json: %d mismatches over 2 repeats x 2 files (threads 1, 1, 4)", differing));
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  const std::string config = argc > 2 ? argv[2] : "configs/ref1d.json";
  operator_triad();
  poisson_kernel_check();
  half_line_profile();
  minimizer_oracle();
  const ReferenceRun ref = reference_run();
  volume_recovery(ref);
  regularity(ref);
  q_constancy(ref);
  hadamard(ref);
  hadamard_refinement_note();
  determinism(cli, config);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
