// fracdesign: command-line front end.
//
//   fracdesign solve <config.json>          eps sweep + diagnostics + artifacts
//   fracdesign sweep-eps <config.json>      eps sweep only
//   fracdesign diagnose <field.fdf>         diagnostics of a stored minimizer
//   fracdesign validate-operators           operator cross-checks
//   fracdesign oracle-1d <config.json>      brute-force minimizer at every eps
//
// Exit status: 0 success, 2 configuration error, 3 solver non-convergence,
// 4 artifact schema error.

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "fracdesign/fracdesign.hpp"

namespace fs = std::filesystem;
using namespace fracdesign;

namespace {

constexpr int kConfigError = 2;
constexpr int kNonConvergence = 3;
constexpr int kSchemaError = 4;

struct Overrides {
  std::optional<double> alpha, omega, eps0;
  std::optional<int> nx, ny;
  std::optional<std::string> minimizer, out;
  std::optional<long long> seed;
  std::optional<int> threads;
  std::vector<std::string> sets;  // dotted.path=value
};

void set_path(Json& j, const std::string& dotted, Json value) {
  Json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (key.empty()) throw InvalidArgument("empty path component", dotted);
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (!node->is_null() && !node->is_object()) throw InvalidArgument("not an object", dotted.substr(0, dot));
    start = dot + 1;
  }
}

/// Flags win over the file, the file over built-in defaults.
ExperimentConfig resolve_config(const std::string& path, const Overrides& o) {
  Json j = read_json_file(path);
  if (!j.is_object()) throw InvalidArgument("expected an object", "config");
  for (const std::string& s : o.sets) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) throw InvalidArgument("expected path=value", "--set");
    const std::string text = s.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set_path(j, s.substr(0, eq), std::move(value));
  }
  if (o.alpha) set_path(j, "problem.alpha", *o.alpha);
  if (o.omega) set_path(j, "problem.omega", *o.omega);
  if (o.nx) set_path(j, "problem.nx", *o.nx);
  if (o.ny) set_path(j, "problem.ny", *o.ny);
  if (o.eps0) set_path(j, "schedule.eps0", *o.eps0);
  if (o.minimizer) set_path(j, "solver.minimizer", *o.minimizer);
  if (o.out) set_path(j, "output.dir", *o.out);
  if (o.seed) set_path(j, "seed", *o.seed);
  if (o.threads) set_path(j, "threads", *o.threads);
  return parse_config(j);
}

SweepOptions sweep_options(const ExperimentConfig& c) {
  SweepOptions o;
  o.minimizer = c.minimizer == "bruteforce" ? Minimizer::bruteforce : Minimizer::iterative;
  o.minimize.max_outer = c.max_outer;
  o.minimize.pair_candidates = c.pair_candidates;
  o.minimize.seed = c.seed;
  o.minimize.init = c.init == "random" ? InitKind::random : InitKind::fixed_region;
  return o;
}

Json config_echo(const ExperimentConfig& c) {
  Json j = config_to_json(c);
  j.erase("output");  // paths are not results
  return j;
}

void write_report(const ExperimentConfig& c, const Json& report) {
  write_text((fs::path(c.output_dir) / "report.json").string(), report.flatten().dump(2) + "\n");
}

int run_sweep(const ExperimentConfig& c, bool diagnose) {
  set_threads(static_cast<unsigned>(c.threads));
  fs::create_directories(c.output_dir);
  const fs::path dir(c.output_dir);
  const PenaltySolver solver(build_problem(c), c.solver_tol);
  Json report;
  report["status"] = "ok";
  report["seed"] = c.seed;
  report["config"] = config_echo(c);
  ConstrainedResult r;
  try {
    r = solve_constrained(solver, c.omega, c.schedule, sweep_options(c));
  } catch (const SweepNonConvergence& e) {
    write_text((dir / "sweep.csv").string(), sweep_csv(e.partial()));
    report["status"] = "non_convergence";
    report["partial"] = true;
    report["message"] = e.what();
    report["last_residual"] = num(e.last_residual());
    report["iterations"] = e.iterations();
    write_report(c, report);
    std::cerr << "error: " << e.what() << " (partial sweep written)\n";
    return kNonConvergence;
  }
  write_text((dir / "sweep.csv").string(), sweep_csv(r.record));
  const EnvelopeFit env = envelope_fit(r.record);
  const LambdaBounds lb = lambda_sweep(r.record, c.lambda_spread_max);
  report["sweep"] = sweep_json(r, env, lb);
  const PenaltyParams p{r.terminal_eps, c.omega};
  if (c.write_fields)
    write_field_artifact((dir / "minimizer.fdf").string(), r.terminal.config,
                         {{"eps", p.eps}, {"omega", p.omega}, {"seed", c.seed}});
  if (c.write_trace_csv) write_text((dir / "trace.csv").string(), trace_csv(r.terminal.config.trace_values));
  if (diagnose) report["diagnostics"] = diagnostics_json(run_diagnostics(r.terminal.config, p, c.diagnostics));
  write_report(c, report);
  std::cout << "terminal eps " << format_double(r.terminal_eps) << " volume " << format_double(r.terminal.volume)
            << (r.attained ? " (attained)" : " (not attained)") << "\n";
  return 0;
}

int run_oracle(const ExperimentConfig& c) {
  if (c.n != 1) throw InvalidArgument("the brute-force oracle is one-dimensional", "problem.n");
  set_threads(static_cast<unsigned>(c.threads));
  fs::create_directories(c.output_dir);
  const PenaltySolver solver(build_problem(c), c.solver_tol);
  validate(c.schedule, detail::max_cell(*solver.grid()));
  SweepRecord rec;
  rec.omega = c.omega;
  rec.cell = detail::max_cell(*solver.grid());
  double eps = c.schedule.eps0;
  for (int k = 0; k < c.schedule.max_steps; ++k, eps *= c.schedule.ratio) {
    const MinimizeResult r = minimize_bruteforce_1d(solver, {eps, c.omega});
    rec.entries.push_back({eps, r.energy, r.dirichlet, r.volume, lambda_estimate(r.config),
                           extract_free_boundary(r.config).size(), r.iterations});
  }
  write_text((fs::path(c.output_dir) / "sweep.csv").string(), sweep_csv(rec));
  std::cout << sweep_csv(rec);
  return 0;
}

int run_diagnose(const std::string& artifact, std::optional<double> eps, std::optional<double> omega,
                 const std::string& out, int threads) {
  set_threads(static_cast<unsigned>(std::max(threads, 0)));
  const FieldArtifact a = read_field_artifact(artifact);
  const Configuration c = configuration_from_artifact(a);
  const Json meta = a.header.value("meta", Json::object());
  PenaltyParams p;
  p.eps = eps ? *eps : meta.value("eps", 0.0);
  p.omega = omega ? *omega : meta.value("omega", 0.0);
  if (!(p.eps > 0.0)) throw InvalidArgument("artifact carries no eps; pass --eps", "eps");
  if (!(p.omega > 0.0)) throw InvalidArgument("artifact carries no omega; pass --omega", "omega");
  fs::create_directories(out);
  Json report;
  report["status"] = "ok";
  report["eps"] = p.eps;
  report["omega"] = p.omega;
  report["diagnostics"] = diagnostics_json(run_diagnostics(c, p));
  write_text((fs::path(out) / "report.json").string(), report.flatten().dump(2) + "\n");
  std::cout << report.flatten().dump(2) << "\n";
  return 0;
}

int run_validate_operators(int nodes, const std::string& out) {
  // below 256 nodes the 5% tolerance is not expected to hold: report, do not fail
  const bool degraded = nodes < 256;
  const double tol = 0.05;
  bool ok = true;
  Json report;
  report["nodes"] = nodes;
  report["degraded"] = degraded;
  auto line = [&](const std::string& name, double value, double limit) {
    const bool pass = value <= limit;
    std::printf("%-44s %-6s %.3e (limit %.1e)\n", name.c_str(), pass ? "PASS" : (degraded ? "WARN" : "FAIL"), value, limit);
    report[name] = {{"value", num(value)}, {"limit", limit}, {"pass", pass}};
    return pass;
  };
  TriadGrid tg;
  tg.nodes = nodes;
  tg.ny = std::max(16, nodes * 160 / 1024);
  for (double a : {0.25, 0.5, 0.75})
    for (const TriadCase& t : triad_cases(a, {1, 2, 4}, tg)) {
      char name[64];
      std::snprintf(name, sizeof name, "triad alpha=%.2f k=%d", a, t.k);
      const bool pass = line(name, t.max(), tol);
      ok = ok && (pass || degraded);
    }
  for (int n : {1, 2})
    for (double a : {0.25, 0.5, 0.75}) {
      char name[64];
      std::snprintf(name, sizeof name, "poisson mass n=%d alpha=%.2f", n, a);
      ok = line(name, std::abs(poisson_mass(n, a) - 1.0), 1e-3) && ok;
    }
  ok = line("poisson n=1 alpha=0.50 vs y/(pi(x^2+y^2))", half_laplacian_kernel_deviation(), 1e-3) && ok;
  for (double a : {0.25, 0.5, 0.75}) {
    double worst = 0.0;
    for (const HalfLineCase& h : half_line_cases(a, {0.25, 0.5, 0.75})) worst = std::max(worst, h.ratio());
    char name[64];
    std::snprintf(name, sizeof name, "half-line profile alpha=%.2f", a);
    ok = line(name, worst, 0.02) && ok;
  }
  report["pass"] = ok;
  if (!out.empty()) {
    fs::create_directories(out);
    write_text((fs::path(out) / "report.json").string(), report.flatten().dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fractional free-boundary design: penalized solver, eps sweep and diagnostics"};
  app.require_subcommand(1);
  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--threads", o.threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", o.seed, "seed for randomized initialization");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--alpha", o.alpha, "override problem.alpha");
    sub->add_option("--omega", o.omega, "override problem.omega");
    sub->add_option("--nx", o.nx, "override problem.nx");
    sub->add_option("--ny", o.ny, "override problem.ny");
    sub->add_option("--eps0", o.eps0, "override schedule.eps0");
    sub->add_option("--minimizer", o.minimizer, "override solver.minimizer");
    sub->add_option("--set", o.sets, "override any field: dotted.path=value (JSON value)");
  };

  std::string config;
  auto* solve = app.add_subcommand("solve", "eps sweep, diagnostics of the terminal minimizer, artifacts");
  solve->add_option("config", config, "configuration file")->required();
  add_common(solve);
  auto* sweep = app.add_subcommand("sweep-eps", "eps sweep and sweep record only");
  sweep->add_option("config", config, "configuration file")->required();
  add_common(sweep);
  auto* oracle = app.add_subcommand("oracle-1d", "exhaustive 1D minimizer at every eps of the schedule");
  oracle->add_option("config", config, "configuration file")->required();
  add_common(oracle);

  std::string artifact, diag_out = ".";
  std::optional<double> diag_eps, diag_omega;
  int diag_threads = 0;
  auto* diagnose = app.add_subcommand("diagnose", "diagnostics of a stored field artifact");
  diagnose->add_option("artifact", artifact, "FDFIELD1 file")->required();
  diagnose->add_option("--eps", diag_eps, "eps (default: artifact metadata)");
  diagnose->add_option("--omega", diag_omega, "volume budget (default: artifact metadata)");
  diagnose->add_option("--out", diag_out, "output directory");
  diagnose->add_option("--threads", diag_threads, "worker threads (0 = all cores)");

  int nodes = 1024;
  std::string val_out;
  auto* validate_ops = app.add_subcommand("validate-operators", "cross-check the operator realizations");
  validate_ops->add_option("--nodes", nodes, "periodic trace nodes")->check(CLI::Range(8, 1 << 16));
  validate_ops->add_option("--out", val_out, "output directory for report.json");
  validate_ops->add_option("--threads", diag_threads, "worker threads (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), kConfigError);
  }

  try {
    if (*solve) return run_sweep(resolve_config(config, o), true);
    if (*sweep) return run_sweep(resolve_config(config, o), false);
    if (*oracle) return run_oracle(resolve_config(config, o));
    if (*diagnose) return run_diagnose(artifact, diag_eps, diag_omega, diag_out, diag_threads);
    if (*validate_ops) {
      set_threads(static_cast<unsigned>(std::max(diag_threads, 0)));
      if (nodes % 2) throw InvalidArgument("node count must be even", "--nodes");
      return run_validate_operators(nodes, val_out);
    }
  } catch (const SchemaError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kSchemaError;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NonConvergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNonConvergence;
  }
  return 0;
}
