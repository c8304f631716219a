#pragma once

// Experiment configuration (JSON), field artifacts (FDFIELD1 container), sweep CSV
// and the diagnostics report document.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fracdesign/core/error.hpp"
#include "fracdesign/diagnostics.hpp"
#include "fracdesign/mesh.hpp"
#include "fracdesign/penalty.hpp"
#include "fracdesign/scheduler.hpp"

namespace fracdesign {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

struct RegionSpec {
  std::string shape = "ball";          // ball (interval in 1D), box, two_balls
  std::vector<double> center{0.0, 0.0};
  double radius = 0.25;
  double separation = 0.0;             // two_balls: centres at +-separation/2 on the first axis
};

struct DataSpec {
  std::string family = "constant";     // constant, bump, cosine
  double amplitude = 1.0;
  double width = 0.25;                 // bump
  double contrast = 0.5;               // cosine: amplitude (1 + contrast cos(k x))
  double wavenumber = 1.0;
};

struct ExperimentConfig {
  int n = 1;
  double L = 2.0, Y = 2.0;
  int nx = 513, ny = 110;
  double alpha = 0.5, grading = 2.0;
  double omega = 0.5;
  RegionSpec fixed_region;
  DataSpec phi;

  EpsSchedule schedule;

  std::string minimizer = "iterative";
  std::string init = "fixed_region";
  double solver_tol = 1e-10;
  int max_outer = 2000;
  int pair_candidates = 8;

  DiagnosticsOptions diagnostics;
  double lambda_spread_max = 3.0;

  std::string output_dir = "out";
  bool write_fields = true;
  bool write_trace_csv = true;

  std::uint64_t seed = 1;
  int threads = 0;
};

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument("expected an object", path_.empty() ? "config" : path_);
  }

  ~ConfigReader() = default;

  void done() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw InvalidArgument("unknown key", field(key));
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_number()) throw InvalidArgument("expected a number", field(key));
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw InvalidArgument("expected a finite number", field(key));
    return x;
  }

  long long integer(const std::string& key, long long def) {
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_number_integer()) throw InvalidArgument("expected an integer", field(key));
    return v.get<long long>();
  }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_boolean()) throw InvalidArgument("expected true or false", field(key));
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& def, const std::set<std::string>& allowed) {
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_string()) throw InvalidArgument("expected a string", field(key));
    const std::string s = v.get<std::string>();
    if (!allowed.empty() && !allowed.count(s)) throw InvalidArgument("unsupported value '" + s + "'", field(key));
    return s;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> def) {
    if (!has(key)) return def;
    const Json& v = j_.at(key);
    if (!v.is_array()) throw InvalidArgument("expected an array of numbers", field(key));
    std::vector<double> out;
    for (const Json& x : v) {
      if (!x.is_number()) throw InvalidArgument("expected an array of numbers", field(key));
      out.push_back(x.get<double>());
    }
    return out;
  }

  ConfigReader child(const std::string& key) {
    seen_.insert(key);
    static const Json empty = Json::object();
    return ConfigReader(j_.contains(key) ? j_.at(key) : empty, field(key));
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void check(bool cond, const std::string& msg, const std::string& field) {
  if (!cond) throw InvalidArgument(msg, field);
}

}  // namespace detail

inline GridPtr build_grid(const ExperimentConfig& c) { return build_extension_grid(c.n, c.L, c.Y, c.nx, c.ny, c.alpha, c.grading); }

inline bool in_region(const RegionSpec& r, int n, const Point& x) {
  auto d = [&](const Point& c) {
    if (r.shape == "box") return std::max(std::abs(x[0] - c[0]), n == 2 ? std::abs(x[1] - c[1]) : 0.0);
    return std::hypot(x[0] - c[0], n == 2 ? x[1] - c[1] : 0.0);
  };
  const Point c{r.center[0], r.center.size() > 1 ? r.center[1] : 0.0};
  if (r.shape == "two_balls")
    return d({c[0] - 0.5 * r.separation, c[1]}) <= r.radius + 1e-12 || d({c[0] + 0.5 * r.separation, c[1]}) <= r.radius + 1e-12;
  return d(c) <= r.radius + 1e-12;
}

inline double data_value(const DataSpec& s, const RegionSpec& r, int n, const Point& x) {
  if (s.family == "constant") return s.amplitude;
  if (s.family == "bump") {
    const double d2 = std::pow(x[0] - r.center[0], 2) + (n == 2 ? std::pow(x[1] - r.center[1], 2) : 0.0);
    return s.amplitude * std::exp(-0.5 * d2 / (s.width * s.width));
  }
  return s.amplitude * (1.0 + s.contrast * std::cos(s.wavenumber * x[0]));
}

inline Problem build_problem(const ExperimentConfig& c) {
  Problem pb;
  pb.grid = build_grid(c);
  const std::size_t tc = pb.grid->trace_count();
  pb.fixed_region.assign(tc, 0);
  pb.phi = TraceField(pb.grid);
  for (std::size_t t = 0; t < tc; ++t) {
    const Point x = pb.grid->trace_point(t);
    if (in_region(c.fixed_region, c.n, x)) {
      pb.fixed_region[t] = 1;
      pb.phi[t] = data_value(c.phi, c.fixed_region, c.n, x);
    }
  }
  return pb;
}

/// Parses and validates a configuration document. Errors name the offending field
/// by its dotted path.
inline ExperimentConfig parse_config(const Json& j) {
  using detail::check;
  ExperimentConfig c;
  detail::ConfigReader root(j, "");
  {
    auto p = root.child("problem");
    c.n = static_cast<int>(p.integer("n", c.n));
    check(c.n == 1 || c.n == 2, "trace dimension must be 1 or 2", "problem.n");
    c.L = p.number("L", c.L);
    check(c.L > 0.0, "half width must be positive", "problem.L");
    c.Y = p.number("Y", c.Y);
    check(c.Y > 0.0, "height must be positive", "problem.Y");
    c.nx = static_cast<int>(p.integer("nx", c.nx));
    check(c.nx >= 8 && c.nx <= 100000, "nx must lie in [8, 100000]", "problem.nx");
    c.ny = static_cast<int>(p.integer("ny", c.ny));
    check(c.ny >= 8 && c.ny <= 100000, "ny must lie in [8, 100000]", "problem.ny");
    c.alpha = p.number("alpha", c.alpha);
    check(c.alpha > 0.0 && c.alpha < 1.0, "alpha must lie in (0, 1)", "problem.alpha");
    c.grading = p.number("grading", c.grading);
    check(c.grading >= 1.0 && c.grading <= 4.0, "grading must lie in [1, 4]", "problem.grading");
    c.omega = p.number("omega", c.omega);
    check(c.omega > 0.0, "volume budget must be positive", "problem.omega");
    {
      auto r = p.child("fixed_region");
      c.fixed_region.shape = r.string("shape", c.fixed_region.shape, {"ball", "interval", "box", "two_balls"});
      if (c.fixed_region.shape == "interval") c.fixed_region.shape = "ball";
      c.fixed_region.center = r.numbers("center", c.fixed_region.center);
      check(c.fixed_region.center.size() >= static_cast<std::size_t>(c.n) && c.fixed_region.center.size() <= 2,
            "center needs one coordinate per trace dimension", "problem.fixed_region.center");
      c.fixed_region.center.resize(2, 0.0);
      c.fixed_region.radius = r.number("radius", c.fixed_region.radius);
      check(c.fixed_region.radius > 0.0, "radius must be positive", "problem.fixed_region.radius");
      c.fixed_region.separation = r.number("separation", c.fixed_region.separation);
      check(c.fixed_region.shape != "two_balls" || c.fixed_region.separation > 2.0 * c.fixed_region.radius,
            "two_balls separation must exceed the diameter", "problem.fixed_region.separation");
      r.done();
    }
    {
      auto d = p.child("phi");
      c.phi.family = d.string("family", c.phi.family, {"constant", "bump", "cosine"});
      c.phi.amplitude = d.number("amplitude", c.phi.amplitude);
      check(c.phi.amplitude > 0.0, "amplitude must be positive", "problem.phi.amplitude");
      c.phi.width = d.number("width", c.phi.width);
      check(c.phi.width > 0.0, "width must be positive", "problem.phi.width");
      c.phi.contrast = d.number("contrast", c.phi.contrast);
      check(c.phi.contrast >= 0.0 && c.phi.contrast < 1.0, "contrast must lie in [0, 1)", "problem.phi.contrast");
      c.phi.wavenumber = d.number("wavenumber", c.phi.wavenumber);
      d.done();
    }
    p.done();
  }
  {
    auto s = root.child("schedule");
    c.schedule.eps0 = s.number("eps0", c.schedule.eps0);
    check(c.schedule.eps0 > 0.0, "initial eps must be positive", "schedule.eps0");
    c.schedule.ratio = s.number("ratio", c.schedule.ratio);
    check(c.schedule.ratio > 0.0 && c.schedule.ratio < 1.0, "ratio must lie in (0, 1)", "schedule.ratio");
    c.schedule.max_steps = static_cast<int>(s.integer("max_steps", c.schedule.max_steps));
    check(c.schedule.max_steps >= 1 && c.schedule.max_steps <= 64, "max_steps must lie in [1, 64]", "schedule.max_steps");
    c.schedule.min_steps = static_cast<int>(s.integer("min_steps", c.schedule.min_steps));
    check(c.schedule.min_steps >= 1 && c.schedule.min_steps <= c.schedule.max_steps, "min_steps must lie in [1, max_steps]",
          "schedule.min_steps");
    c.schedule.vol_tol = s.number("vol_tol", c.schedule.vol_tol);
    check(c.schedule.vol_tol >= 0.0, "volume tolerance must be nonnegative", "schedule.vol_tol");
    s.done();
  }
  {
    auto s = root.child("solver");
    c.minimizer = s.string("minimizer", c.minimizer, {"iterative", "bruteforce"});
    check(c.minimizer != "bruteforce" || c.n == 1, "the brute-force minimizer is one-dimensional", "solver.minimizer");
    c.init = s.string("init", c.init, {"fixed_region", "random"});
    c.solver_tol = s.number("tol", c.solver_tol);
    check(c.solver_tol > 0.0 && c.solver_tol < 1e-3, "tolerance must lie in (0, 1e-3)", "solver.tol");
    c.max_outer = static_cast<int>(s.integer("max_outer", c.max_outer));
    check(c.max_outer >= 1, "iteration cap must be positive", "solver.max_outer");
    c.pair_candidates = static_cast<int>(s.integer("pair_candidates", c.pair_candidates));
    check(c.pair_candidates >= 0, "pair_candidates must be nonnegative", "solver.pair_candidates");
    s.done();
  }
  {
    auto d = root.child("diagnostics");
    auto& o = c.diagnostics;
    o.exponent_tol = d.number("exponent_tol", o.exponent_tol);
    check(o.exponent_tol > 0.0, "tolerance must be positive", "diagnostics.exponent_tol");
    o.nondegeneracy_min = d.number("nondegeneracy_min", o.nondegeneracy_min);
    check(o.nondegeneracy_min > 0.0, "threshold must be positive", "diagnostics.nondegeneracy_min");
    o.density_min = d.number("density_min", o.density_min);
    check(o.density_min > 0.0 && o.density_min <= 1.0, "threshold must lie in (0, 1]", "diagnostics.density_min");
    o.morrey_growth = d.number("morrey_growth", o.morrey_growth);
    check(o.morrey_growth >= 1.0, "growth bound must be at least 1", "diagnostics.morrey_growth");
    o.q_spread_max = d.number("q_spread_max", o.q_spread_max);
    check(o.q_spread_max > 0.0, "spread bound must be positive", "diagnostics.q_spread_max");
    c.lambda_spread_max = d.number("lambda_spread_max", c.lambda_spread_max);
    check(c.lambda_spread_max >= 1.0, "spread ratio bound must be at least 1", "diagnostics.lambda_spread_max");
    o.hadamard = d.boolean("hadamard", o.hadamard);
    o.hadamard_opts.tolerance = d.number("hadamard_tol", o.hadamard_opts.tolerance);
    check(o.hadamard_opts.tolerance > 0.0, "tolerance must be positive", "diagnostics.hadamard_tol");
    o.hadamard_opts.pair_factor = d.number("pair_factor", o.hadamard_opts.pair_factor);
    check(o.hadamard_opts.pair_factor >= 1.0, "pair factor must be at least 1", "diagnostics.pair_factor");
    o.hadamard_opts.volumes = d.numbers("hadamard_volumes", o.hadamard_opts.volumes);
    for (double v : o.hadamard_opts.volumes) check(v > 0.0, "volumes must be positive", "diagnostics.hadamard_volumes");
    d.done();
  }
  {
    auto o = root.child("output");
    c.output_dir = o.string("dir", c.output_dir, {});
    check(!c.output_dir.empty(), "output directory must be non-empty", "output.dir");
    c.write_fields = o.boolean("fields", c.write_fields);
    c.write_trace_csv = o.boolean("trace_csv", c.write_trace_csv);
    o.done();
  }
  const long long seed = root.integer("seed", static_cast<long long>(c.seed));
  check(seed >= 0, "seed must be nonnegative", "seed");
  c.seed = static_cast<std::uint64_t>(seed);
  c.threads = static_cast<int>(root.integer("threads", c.threads));
  check(c.threads >= 0, "threads must be nonnegative", "threads");
  root.done();

  // cross-field checks against module preconditions
  const Problem pb = build_problem(c);
  const ExtensionGrid& g = *pb.grid;
  double admissible = 0.0, fixed = 0.0;
  for (std::size_t t = 0; t < g.trace_count(); ++t) {
    if (pb.fixed_region[t]) {
      fixed += 1.0;
      check(!g.on_lateral_boundary(t), "fixed region must avoid the lateral boundary", "problem.fixed_region");
    } else if (!g.on_lateral_boundary(t)) {
      admissible += g.trace_cell_measure(t);
    }
  }
  check(fixed > 0.0, "fixed region contains no grid node", "problem.fixed_region");
  check(c.omega <= admissible, "volume budget exceeds the admissible trace measure", "problem.omega");
  return c;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path, "config");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument(std::string("malformed JSON: ") + e.what(), "config");
  }
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["problem"] = {{"n", c.n}, {"L", c.L}, {"Y", c.Y}, {"nx", c.nx}, {"ny", c.ny}, {"alpha", c.alpha},
                  {"grading", c.grading}, {"omega", c.omega},
                  {"fixed_region", {{"shape", c.fixed_region.shape}, {"center", c.fixed_region.center},
                                    {"radius", c.fixed_region.radius}, {"separation", c.fixed_region.separation}}},
                  {"phi", {{"family", c.phi.family}, {"amplitude", c.phi.amplitude}, {"width", c.phi.width},
                           {"contrast", c.phi.contrast}, {"wavenumber", c.phi.wavenumber}}}};
  j["schedule"] = {{"eps0", c.schedule.eps0}, {"ratio", c.schedule.ratio}, {"max_steps", c.schedule.max_steps},
                   {"min_steps", c.schedule.min_steps}, {"vol_tol", c.schedule.vol_tol}};
  j["solver"] = {{"minimizer", c.minimizer}, {"init", c.init}, {"tol", c.solver_tol}, {"max_outer", c.max_outer},
                 {"pair_candidates", c.pair_candidates}};
  const auto& o = c.diagnostics;
  j["diagnostics"] = {{"exponent_tol", o.exponent_tol}, {"nondegeneracy_min", o.nondegeneracy_min},
                      {"density_min", o.density_min}, {"morrey_growth", o.morrey_growth},
                      {"q_spread_max", o.q_spread_max}, {"lambda_spread_max", c.lambda_spread_max},
                      {"hadamard", o.hadamard}, {"hadamard_tol", o.hadamard_opts.tolerance},
                      {"pair_factor", o.hadamard_opts.pair_factor}, {"hadamard_volumes", o.hadamard_opts.volumes}};
  j["output"] = {{"dir", c.output_dir}, {"fields", c.write_fields}, {"trace_csv", c.write_trace_csv}};
  j["seed"] = c.seed;
  return j;
}

// ---------------------------------------------------------------------------
// Field artifacts
//
// Layout: 8-byte magic "FDFIELD1", uint64 little-endian header length, UTF-8 JSON
// header, then each array listed in header["arrays"] as little-endian float64 in
// row-major node order (node = j * trace_count + t).

inline constexpr char kFieldMagic[8] = {'F', 'D', 'F', 'I', 'E', 'L', 'D', '1'};
inline constexpr int kFieldVersion = 1;

struct FieldArtifact {
  Json header;
  std::map<std::string, std::vector<double>> arrays;
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double x) { put_u64(os, std::bit_cast<std::uint64_t>(x)); }

inline std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

}  // namespace detail

inline Json grid_header(const ExtensionGrid& g) {
  return {{"n", g.trace_dim()}, {"L", g.half_width()}, {"Y", g.height()}, {"nx", g.nx()}, {"ny", g.ny()},
          {"alpha", g.alpha()}, {"beta", g.beta()}, {"grading", g.grading()}};
}

inline Json field_header(const Configuration& c, const Json& extra = Json::object()) {
  const ExtensionGrid& g = *c.grid;
  Json h;
  h["format"] = "FDFIELD1";
  h["version"] = kFieldVersion;
  h["grid"] = grid_header(g);
  h["theta_pos"] = c.theta_pos;
  h["arrays"] = Json::array({{{"name", "trace"}, {"count", g.trace_count()}},
                             {{"name", "fixed_region"}, {"count", g.trace_count()}},
                             {{"name", "phi"}, {"count", g.trace_count()}},
                             {{"name", "extension"}, {"count", g.node_count()}}});
  if (!extra.empty()) h["meta"] = extra;
  return h;
}

inline void write_field_artifact(const std::string& path, const Configuration& c, const Json& extra = Json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  const std::string header = field_header(c, extra).dump();
  os.write(kFieldMagic, 8);
  detail::put_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (double x : c.trace_values.values) detail::put_f64(os, x);
  for (std::uint8_t b : c.fixed_region) detail::put_f64(os, b ? 1.0 : 0.0);
  for (double x : c.phi.values) detail::put_f64(os, x);
  for (double x : c.extension.values) detail::put_f64(os, x);
}

inline FieldArtifact parse_field_artifact(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  if (size < 16) throw SchemaError("truncated artifact at offset " + std::to_string(size) + ": expected 16 header bytes");
  if (std::memcmp(p, kFieldMagic, 8) != 0) throw SchemaError("bad magic at offset 0: expected FDFIELD1");
  const std::uint64_t hlen = detail::get_u64(p + 8);
  if (hlen > size - 16) throw SchemaError("truncated artifact at offset 16: header length " + std::to_string(hlen) + " exceeds file");
  FieldArtifact a;
  try {
    a.header = Json::parse(bytes.substr(16, hlen));
  } catch (const Json::parse_error& e) {
    throw SchemaError(std::string("malformed header at offset 16: ") + e.what());
  }
  auto need = [&](const char* key) -> const Json& {
    if (!a.header.contains(key)) throw SchemaError(std::string("header field '") + key + "' missing");
    return a.header.at(key);
  };
  if (need("format") != "FDFIELD1") throw SchemaError("header field 'format' must be FDFIELD1");
  if (need("version") != kFieldVersion) throw SchemaError("header field 'version' unsupported");
  const Json& grid = need("grid");
  for (const char* key : {"n", "L", "Y", "nx", "ny", "alpha", "grading"})
    if (!grid.contains(key) || !grid.at(key).is_number()) throw SchemaError(std::string("header field 'grid.") + key + "' missing");
  const Json& arrays = need("arrays");
  if (!arrays.is_array()) throw SchemaError("header field 'arrays' must be a list");
  std::size_t off = 16 + hlen;
  for (const Json& spec : arrays) {
    if (!spec.contains("name") || !spec.contains("count") || !spec.at("count").is_number_unsigned())
      throw SchemaError("header field 'arrays' entries need name and count");
    const std::string name = spec.at("name").get<std::string>();
    const std::uint64_t count = spec.at("count").get<std::uint64_t>();
    if (count > (size - off) / 8)
      throw SchemaError("truncated artifact at offset " + std::to_string(off) + ": array '" + name + "' needs " +
                        std::to_string(count * 8) + " bytes, " + std::to_string(size - off) + " remain");
    std::vector<double> v(count);
    for (std::uint64_t k = 0; k < count; ++k) v[k] = std::bit_cast<double>(detail::get_u64(p + off + 8 * k));
    off += 8 * count;
    a.arrays[name] = std::move(v);
  }
  if (off != size) throw SchemaError("trailing bytes at offset " + std::to_string(off));
  return a;
}

inline FieldArtifact read_field_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open artifact " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_field_artifact(ss.str());
}

/// Rebuilds the configuration stored in an artifact; the grid comes from the header.
inline Configuration configuration_from_artifact(const FieldArtifact& a) {
  const Json& gh = a.header.at("grid");
  GridPtr g;
  try {
    g = build_extension_grid(gh.at("n").get<int>(), gh.at("L").get<double>(), gh.at("Y").get<double>(),
                             gh.at("nx").get<int>(), gh.at("ny").get<int>(), gh.at("alpha").get<double>(),
                             gh.at("grading").get<double>());
  } catch (const InvalidArgument& e) {
    throw SchemaError(std::string("header field 'grid' invalid: ") + e.what());
  }
  auto arr = [&](const char* name, std::size_t count) -> const std::vector<double>& {
    const auto it = a.arrays.find(name);
    if (it == a.arrays.end()) throw SchemaError(std::string("array '") + name + "' missing");
    if (it->second.size() != count) throw SchemaError(std::string("array '") + name + "' has the wrong length");
    return it->second;
  };
  Configuration c;
  c.grid = g;
  c.theta_pos = a.header.value("theta_pos", 1e-9);
  c.trace_values = TraceField(g, arr("trace", g->trace_count()));
  c.phi = TraceField(g, arr("phi", g->trace_count()));
  const auto& fr = arr("fixed_region", g->trace_count());
  c.fixed_region.resize(fr.size());
  for (std::size_t t = 0; t < fr.size(); ++t) c.fixed_region[t] = fr[t] != 0.0;
  c.positivity_mask.resize(g->trace_count());
  for (std::size_t t = 0; t < g->trace_count(); ++t) c.positivity_mask[t] = c.trace_values[t] > c.theta_pos;
  c.extension = ScalarField(g, arr("extension", g->node_count()));
  return c;
}

// ---------------------------------------------------------------------------
// CSV and report

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string sweep_csv(const SweepRecord& r) {
  std::string out = "eps,volume,energy,lambda_est,fb_points\n";
  for (const SweepEntry& e : r.entries)
    out += format_double(e.eps) + "," + format_double(e.volume) + "," + format_double(e.energy) + "," +
           format_double(e.lambda_est) + "," + std::to_string(e.fb_points) + "\n";
  return out;
}

inline std::string trace_csv(const TraceField& u) {
  const ExtensionGrid& g = *u.grid;
  std::string out = g.trace_dim() == 1 ? "x,u\n" : "x,z,u\n";
  for (std::size_t t = 0; t < g.trace_count(); ++t) {
    const Point x = g.trace_point(t);
    out += format_double(x[0]) + ",";
    if (g.trace_dim() == 2) out += format_double(x[1]) + ",";
    out += format_double(u[t]) + "\n";
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

/// JSON numbers: non-finite values become null.
inline Json num(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json diagnostics_json(const DiagnosticsReport& r) {
  Json j;
  j["fb_points"] = r.fb_points;
  j["holder_exponent"] = {{"value", num(r.holder_exponent)}, {"stderr", num(r.holder_stderr)},
                          {"worst_deviation", num(r.holder_worst_deviation)}};
  j["nondegeneracy_min_ratio"] = num(r.nondegeneracy_min_ratio);
  j["density_min"] = {{"zero_phase", num(r.density_min.zero_phase)},
                      {"positive_phase", num(r.density_min.positive_phase)},
                      {"convention", r.density_convention}};
  j["morrey"] = {{"sup", num(r.morrey_sup)}, {"max_octave_growth", num(r.morrey_max_octave_growth)}};
  Json qs = Json::array();
  for (double q : r.q_estimates) qs.push_back(num(q));
  j["q"] = {{"estimates", qs}, {"median", num(r.q_median)}, {"spread", num(r.q_spread)}};
  if (r.hadamard) {
    const HadamardResult& h = *r.hadamard;
    Json vs = Json::array(), es = Json::array(), rs = Json::array();
    for (std::size_t k = 0; k < h.volumes.size(); ++k) {
      vs.push_back(num(h.volumes[k]));
      es.push_back(num(h.energy_changes[k]));
      rs.push_back(num(h.residuals[k]));
    }
    j["hadamard"] = {{"volumes", vs},
                     {"energy_changes", es},
                     {"slope", num(h.slope)},
                     {"residuals", rs},
                     {"lambda", num(h.lambda)},
                     {"relative_error", num(h.relative_error)},
                     {"pair_change", num(h.pair_change)},
                     {"pair_ratio", num(h.pair_ratio)},
                     {"discrete_slope", num(h.discrete_slope)}};
  }
  j["flux_measure"] = {{"interior_max", num(r.flux.interior_max)}, {"near_fb_min", num(r.flux.near_fb_min)},
                       {"negative_mass", num(r.flux.negative_mass)}, {"near_fb_mass", num(r.flux.near_fb_mass)},
                       {"scale", num(r.flux.scale)}};
  j["pass"] = {{"holder", r.holder_ok},     {"nondegeneracy", r.nondegeneracy_ok}, {"density", r.density_ok},
               {"morrey", r.morrey_ok},     {"q_constancy", r.q_ok},               {"hadamard", r.hadamard_ok},
               {"flux_measure", r.flux_ok}};
  j["notes"] = r.notes;
  return j;
}

inline Json sweep_json(const ConstrainedResult& r, const EnvelopeFit& env, const LambdaBounds& lb) {
  Json j;
  j["terminal"] = {{"eps", num(r.terminal_eps)},
                   {"volume", num(r.terminal.volume)},
                   {"energy", num(r.terminal.energy)},
                   {"dirichlet", num(r.terminal.dirichlet)},
                   {"iterations", r.terminal.iterations}};
  j["attained"] = r.attained;
  j["stable"] = r.stable;
  j["stability_change"] = num(r.stability_change);
  j["envelope"] = {{"C", num(env.C)}, {"intercept", num(env.intercept)}, {"max_residual", num(env.max_residual)},
                   {"min_volume", num(env.min_volume)}, {"ok", env.ok}};
  j["lambda_bounds"] = {{"min", num(lb.min)}, {"max", num(lb.max)}, {"spread_ratio", num(lb.spread_ratio)},
                        {"count", lb.count}, {"insufficient", lb.insufficient}, {"ok", lb.ok}};
  return j;
}

}  // namespace fracdesign
