#include "fbsde/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include "fbsde/errors.hpp"
#include "fbsde/lp_lab.hpp"
#include "fbsde/oracles.hpp"
#include "fbsde/table_io.hpp"

namespace fbsde {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::pair<ExperimentKind, std::string_view> kKinds[] = {
    {ExperimentKind::Solve, "solve"},   {ExperimentKind::Field, "field"},
    {ExperimentKind::LpVerify, "lp-verify"}, {ExperimentKind::Stability, "stability"},
    {ExperimentKind::Lq, "lq"},         {ExperimentKind::Oracle, "oracle"},
    {ExperimentKind::KpGate, "kp-gate"},
};

constexpr double kMaxSeed = 9007199254740992.0;  // 2^53: seeds stay exact in tables

// ---- json access helpers -------------------------------------------------

std::string join(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError("unknown key '" + it.key() + "'" + (where.empty() ? "" : " in '" + where + "'"));
    }
  }
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double number_at(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError("'" + path + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError("'" + path + "' must be finite");
  return d;
}

double get_number(const json& obj, const char* key, double fallback, const std::string& where) {
  const json* v = find(obj, key);
  return v ? number_at(*v, join(where, key)) : fallback;
}

double require_number(const json& obj, const char* key, const std::string& where) {
  const json* v = find(obj, key);
  if (!v) throw ConfigError("missing field '" + join(where, key) + "'");
  return number_at(*v, join(where, key));
}

std::uint64_t count_at(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) throw ConfigError("'" + path + "' must be non-negative");
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  throw ConfigError("'" + path + "' must be a non-negative integer");
}

std::uint64_t get_count(const json& obj, const char* key, std::uint64_t fallback, const std::string& where) {
  const json* v = find(obj, key);
  return v ? count_at(*v, join(where, key)) : fallback;
}

std::vector<double> number_list(const json& v, const std::string& path) {
  if (v.is_number()) return {number_at(v, path)};
  if (!v.is_array()) throw ConfigError("'" + path + "' must be a number or an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number_at(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<double> get_list(const json& obj, const char* key, std::vector<double> fallback, const std::string& where) {
  const json* v = find(obj, key);
  return v ? number_list(*v, join(where, key)) : fallback;
}

json list_json(const std::vector<double>& v) {
  json a = json::array();
  for (double d : v) a.push_back(d);
  return a;
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

// ---- time profiles ----------------------------------------------------------

// A number is a constant; an array is polynomial coefficients c0 + c1 t + ...
TimeProfile scalar_profile(const json& v, const std::string& path) {
  if (v.is_number()) return constant_profile(number_at(v, path));
  if (v.is_array() && !v.empty()) return polynomial_profile(number_list(v, path));
  throw ConfigError("'" + path + "' must be a number or a non-empty coefficient array");
}

void check_profile(const json& v, const std::string& path) { (void)scalar_profile(v, path); }

MatrixProfile matrix_literal(const json& v, int rows, int cols, const std::string& path) {
  const auto shape = std::to_string(rows) + "x" + std::to_string(cols);
  if (v.is_number()) {
    if (rows != cols && !(rows == 1 && cols == 1)) {
      throw ConfigError("'" + path + "' must be a " + shape + " matrix (scalar shorthand needs a square block)");
    }
    const double c = number_at(v, path);
    return constant_matrix(c * Mat::Identity(rows, cols));
  }
  if (!v.is_array() || static_cast<int>(v.size()) != rows) throw ConfigError("'" + path + "' must be a " + shape + " matrix");
  std::vector<TimeProfile> entries;
  bool constant = true;
  Mat fixed(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const json& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw ConfigError("'" + path + "' row " + std::to_string(i) + " must have " + std::to_string(cols) + " entries");
    }
    for (int j = 0; j < cols; ++j) {
      const auto entry_path = path + "[" + std::to_string(i) + "][" + std::to_string(j) + "]";
      const json& e = row[static_cast<std::size_t>(j)];
      entries.push_back(scalar_profile(e, entry_path));
      if (e.is_number()) {
        fixed(i, j) = e.get<double>();
      } else {
        constant = false;
      }
    }
  }
  if (constant) return constant_matrix(fixed);
  return [entries, rows, cols](double t) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = entries[static_cast<std::size_t>(i * cols + j)](t);
    return m;
  };
}

// Matrix literal or {"piecewise": {"nodes": [...], "values": [literal, ...]}}.
MatrixProfile matrix_profile(const json& v, int rows, int cols, const std::string& path) {
  if (v.is_object()) {
    check_keys(v, {"piecewise"}, path);
    const json& pw = v.at("piecewise");
    const auto pw_path = path + ".piecewise";
    check_keys(pw, {"nodes", "values"}, pw_path);
    if (!pw.contains("nodes")) throw ConfigError("missing field '" + pw_path + ".nodes'");
    if (!pw.contains("values")) throw ConfigError("missing field '" + pw_path + ".values'");
    auto nodes = number_list(pw["nodes"], pw_path + ".nodes");
    const json& vals = pw["values"];
    if (!vals.is_array() || vals.size() != nodes.size() || nodes.empty()) {
      throw ConfigError("'" + pw_path + ".values' must hold one matrix per node");
    }
    if (!std::is_sorted(nodes.begin(), nodes.end())) throw ConfigError("'" + pw_path + ".nodes' must be increasing");
    std::vector<Mat> mats;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const auto entry_path = pw_path + ".values[" + std::to_string(i) + "]";
      if (vals[i].is_number()) {
        mats.push_back(matrix_literal(vals[i], rows, cols, entry_path)(0.0));
        continue;
      }
      // values inside a piecewise profile are constant literals
      const json& m = vals[i];
      if (!m.is_array() || static_cast<int>(m.size()) != rows) throw ConfigError("'" + entry_path + "' has the wrong shape");
      for (const auto& row : m)
        for (const auto& e : row)
          if (!e.is_number()) throw ConfigError("'" + entry_path + "' entries must be numbers");
      mats.push_back(matrix_literal(m, rows, cols, entry_path)(0.0));
    }
    return piecewise_constant(std::move(nodes), std::move(mats));
  }
  return matrix_literal(v, rows, cols, path);
}

VectorProfile vector_profile(const json& v, int dim, const std::string& path) {
  if (v.is_number() && dim == 1) return constant_vector(Vec::Constant(1, number_at(v, path)));
  if (!v.is_array() || static_cast<int>(v.size()) != dim) {
    throw ConfigError("'" + path + "' must be a vector with " + std::to_string(dim) + " entries");
  }
  std::vector<TimeProfile> entries;
  bool constant = true;
  Vec fixed(dim);
  for (int i = 0; i < dim; ++i) {
    const json& e = v[static_cast<std::size_t>(i)];
    entries.push_back(scalar_profile(e, path + "[" + std::to_string(i) + "]"));
    if (e.is_number()) {
      fixed(i) = e.get<double>();
    } else {
      constant = false;
    }
  }
  if (constant) return constant_vector(fixed);
  return [entries, dim](double t) {
    Vec out(dim);
    for (int i = 0; i < dim; ++i) out(i) = entries[static_cast<std::size_t>(i)](t);
    return out;
  };
}

Vec constant_vector_literal(const json& v, int dim, const std::string& path) {
  auto list = number_list(v, path);
  if (static_cast<int>(list.size()) != dim) {
    throw ConfigError("'" + path + "' must have " + std::to_string(dim) + " entries");
  }
  return to_vec(list);
}

int dimension(const json& obj, const char* key, int fallback, const std::string& where) {
  const auto d = get_count(obj, key, static_cast<std::uint64_t>(fallback), where);
  if (d < 1 || d > 2) throw ConfigError("'" + join(where, key) + "' must be 1 or 2");
  return static_cast<int>(d);
}

// ---- problem families ------------------------------------------------------------

json canonical_example1(json p) {
  check_keys(p, {"family", "a", "b", "c", "xi"}, "problem");
  if (!p.contains("a")) p["a"] = 1.0;
  if (!p.contains("b")) p["b"] = 0.0;
  if (!p.contains("c")) p["c"] = 1.0;
  if (!p.contains("xi")) p["xi"] = 1.0;
  for (const char* k : {"a", "b", "c"}) check_profile(p[k], std::string("problem.") + k);
  number_at(p["xi"], "problem.xi");
  return p;
}

json canonical_gaussian(json p) {
  check_keys(p, {"family", "slope", "xi"}, "problem");
  p["slope"] = get_number(p, "slope", 1.0, "problem");
  p["xi"] = get_number(p, "xi", 0.0, "problem");
  return p;
}

const std::initializer_list<std::string_view> kAffineBlockKeys = {"x", "y", "z", "c"};

json canonical_affine(json p) {
  check_keys(p, {"family", "n", "m", "xi", "drift", "diffusion", "driver", "terminal"}, "problem");
  const int n = dimension(p, "n", 1, "problem");
  const int m = dimension(p, "m", 1, "problem");
  p["n"] = n;
  p["m"] = m;
  if (!p.contains("xi")) p["xi"] = list_json(std::vector<double>(static_cast<std::size_t>(n), 0.0));
  constant_vector_literal(p["xi"], n, "problem.xi");
  for (const char* block : {"drift", "diffusion", "driver"}) {
    if (!p.contains(block)) continue;
    const std::string where = std::string("problem.") + block;
    check_keys(p[block], kAffineBlockKeys, where);
    const int rows = std::string(block) == "driver" ? m : n;
    const json& b = p[block];
    if (b.contains("x")) matrix_profile(b["x"], rows, n, where + ".x");
    if (b.contains("y")) matrix_profile(b["y"], rows, m, where + ".y");
    if (b.contains("z")) matrix_profile(b["z"], rows, m, where + ".z");
    if (b.contains("c")) vector_profile(b["c"], rows, where + ".c");
  }
  if (p.contains("terminal")) {
    check_keys(p["terminal"], {"x", "c"}, "problem.terminal");
    const json& b = p["terminal"];
    if (b.contains("x")) matrix_literal(b["x"], m, n, "problem.terminal.x");
    if (b.contains("c")) constant_vector_literal(b["c"], m, "problem.terminal.c");
  }
  return p;
}

json canonical_monomials(const json& list, bool terminal, const std::string& path) {
  if (!list.is_array()) throw ConfigError("'" + path + "' must be an array of monomials");
  json out = json::array();
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto where = path + "[" + std::to_string(i) + "]";
    const json& mono = list[i];
    if (terminal) {
      check_keys(mono, {"coef", "x"}, where);
    } else {
      check_keys(mono, {"coef", "t", "x", "y", "z"}, where);
    }
    json c;
    c["coef"] = require_number(mono, "coef", where);
    for (const char* e : {"t", "x", "y", "z"}) {
      if (terminal && std::string(e) != "x") continue;
      c[e] = get_count(mono, e, 0, where);
    }
    out.push_back(c);
  }
  return out;
}

json canonical_polynomial(json p) {
  check_keys(p, {"family", "xi", "drift", "diffusion", "driver", "terminal", "L", "K", "L_sigma"}, "problem");
  p["xi"] = get_number(p, "xi", 0.0, "problem");
  for (const char* k : {"L", "K", "L_sigma"}) {
    const double v = require_number(p, k, "problem");
    if (v < 0) throw ConfigError(std::string("'problem.") + k + "' must be non-negative");
    p[k] = v;
  }
  for (const char* k : {"drift", "diffusion", "driver", "terminal"}) {
    p[k] = canonical_monomials(p.contains(k) ? p[k] : json::array(), std::string(k) == "terminal",
                               std::string("problem.") + k);
  }
  return p;
}

json canonical_lq(json p) {
  check_keys(p, {"family", "n", "m_u", "x0", "A", "B", "C", "D", "Q", "S", "R", "H", "b", "sigma", "q", "rho", "h",
                 "delta_R"},
             "problem");
  const int n = dimension(p, "n", 1, "problem");
  const int mu = dimension(p, "m_u", 1, "problem");
  p["n"] = n;
  p["m_u"] = mu;
  if (!p.contains("x0")) p["x0"] = list_json(std::vector<double>(static_cast<std::size_t>(n), 0.0));
  constant_vector_literal(p["x0"], n, "problem.x0");
  p["delta_R"] = get_number(p, "delta_R", 1e-8, "problem");
  return p;
}

json canonical_problem(const json& problem) {
  if (!problem.is_object()) throw ConfigError("'problem' must be an object");
  const json* family = find(problem, "family");
  if (!family) throw ConfigError("missing field 'problem.family'");
  if (!family->is_string()) throw ConfigError("'problem.family' must be a string");
  const auto name = family->get<std::string>();
  json p;
  if (name == "example1") {
    p = canonical_example1(problem);
  } else if (name == "gaussian-linear") {
    p = canonical_gaussian(problem);
  } else if (name == "affine") {
    p = canonical_affine(problem);
  } else if (name == "polynomial") {
    p = canonical_polynomial(problem);
  } else if (name == "lq-hamiltonian") {
    p = canonical_lq(problem);
    // shape checks of every block
    lq_spec_from_config(p, GridSettings{});
  } else {
    throw ConfigError("unknown problem family '" + name +
                      "' (expected example1, gaussian-linear, affine, polynomial or lq-hamiltonian)");
  }
  return p;
}

std::string family_of(const json& problem) { return problem.at("family").get<std::string>(); }

Vec initial_of(const json& problem) {
  const auto family = family_of(problem);
  if (family == "lq-hamiltonian") return constant_vector_literal(problem["x0"], problem["n"].get<int>(), "problem.x0");
  if (family == "affine") return constant_vector_literal(problem["xi"], problem["n"].get<int>(), "problem.xi");
  return Vec::Constant(1, problem["xi"].get<double>());
}

// ---- config sections ---------------------------------------------------------------

void parse_solver(const json& s, SolverParams& out) {
  check_keys(s, {"delta_scale", "picard_tol", "picard_max_iter", "quadrature_nodes", "contraction_guard", "spatial"},
             "solver");
  out.delta_scale = get_number(s, "delta_scale", out.delta_scale, "solver");
  out.picard_tol = get_number(s, "picard_tol", out.picard_tol, "solver");
  out.picard_max_iter = static_cast<int>(get_count(s, "picard_max_iter", static_cast<std::uint64_t>(out.picard_max_iter), "solver"));
  out.quadrature_nodes = get_count(s, "quadrature_nodes", out.quadrature_nodes, "solver");
  out.contraction_guard = get_number(s, "contraction_guard", out.contraction_guard, "solver");
  if (const json* sp = find(s, "spatial")) {
    check_keys(*sp, {"center", "half_width", "n_nodes"}, "solver.spatial");
    if (const json* c = find(*sp, "center")) out.spatial.center = to_vec(number_list(*c, "solver.spatial.center"));
    out.spatial.half_width = get_number(*sp, "half_width", out.spatial.half_width, "solver.spatial");
    out.spatial.n_nodes = get_count(*sp, "n_nodes", out.spatial.n_nodes, "solver.spatial");
  }
  try {
    validate(out);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("solver: ") + e.what());
  }
}

void parse_lp(const json& s, LpSettings& out) {
  check_keys(s, {"p_values", "xi_ladder", "offsets", "n_probes", "probe_radius"}, "lp");
  out.p_values = get_list(s, "p_values", out.p_values, "lp");
  out.xi_ladder = get_list(s, "xi_ladder", out.xi_ladder, "lp");
  out.offsets = get_list(s, "offsets", out.offsets, "lp");
  out.n_probes = get_count(s, "n_probes", out.n_probes, "lp");
  out.probe_radius = get_number(s, "probe_radius", out.probe_radius, "lp");
}

void parse_kp(const json& s, KpSettings& out, bool required) {
  check_keys(s, {"p", "bdg_upper", "bdg_lower", "L_sigma", "K", "sqrt_C1"}, "kp");
  out.p = get_number(s, "p", out.p, "kp");
  if (const json* v = find(s, "bdg_upper")) out.bdg_upper = number_at(*v, "kp.bdg_upper");
  if (const json* v = find(s, "bdg_lower")) out.bdg_lower = number_at(*v, "kp.bdg_lower");
  if (required) {
    out.L_sigma = require_number(s, "L_sigma", "kp");
    out.K = require_number(s, "K", "kp");
  } else {
    out.L_sigma = get_number(s, "L_sigma", out.L_sigma, "kp");
    out.K = get_number(s, "K", out.K, "kp");
  }
  if (const json* v = find(s, "sqrt_C1")) out.sqrt_C1 = number_at(*v, "kp.sqrt_C1");
}

void parse_lq(const json& s, LqSettings& out) {
  check_keys(s, {"epsilon", "n_perturbations", "certificate_samples", "xi_prime"}, "lq");
  out.epsilon = get_number(s, "epsilon", out.epsilon, "lq");
  out.n_perturbations = static_cast<int>(get_count(s, "n_perturbations", static_cast<std::uint64_t>(out.n_perturbations), "lq"));
  out.certificate_samples = get_count(s, "certificate_samples", out.certificate_samples, "lq");
  out.xi_prime = get_list(s, "xi_prime", out.xi_prime, "lq");
}

std::string default_output_dir() {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return "fbsde_lab_out";
}

void validate_config(const ExperimentConfig& c) {
  if (!(c.grid.T > c.grid.t0)) throw ConfigError("'grid.T' must exceed 'grid.t0'");
  if (c.grid.n_steps == 0) throw ConfigError("'grid.n_steps' must be positive");
  if (c.n_paths == 0) throw ConfigError("'monte_carlo.n_paths' must be positive");
  if (static_cast<double>(c.seed) > kMaxSeed) throw ConfigError("'seed' must not exceed 2^53");
  if (c.output_dir.empty()) throw ConfigError("'output_dir' must not be empty");

  const bool needs_problem = c.kind != ExperimentKind::KpGate;
  if (needs_problem && c.problem.is_null()) throw ConfigError("missing field 'problem'");
  const std::string family = c.problem.is_null() ? "" : family_of(c.problem);
  if (c.kind == ExperimentKind::Lq && family != "lq-hamiltonian") {
    throw ConfigError("kind 'lq' needs problem family 'lq-hamiltonian'");
  }
  if (c.kind == ExperimentKind::Oracle && family != "example1" && family != "gaussian-linear") {
    throw ConfigError("kind 'oracle' needs problem family 'example1' or 'gaussian-linear'");
  }
  if (c.kind == ExperimentKind::LpVerify || c.kind == ExperimentKind::Stability) {
    if (c.lp.p_values.empty()) throw ConfigError("'lp.p_values' must not be empty");
    for (double p : c.lp.p_values)
      if (!(p >= 1.0)) throw ConfigError("'lp.p_values' entries must be at least 1");
  }
  if (c.kind == ExperimentKind::LpVerify) {
    if (c.lp.xi_ladder.empty()) throw ConfigError("'lp.xi_ladder' must not be empty");
    if (c.lp.n_probes < 2) throw ConfigError("'lp.n_probes' must be at least 2");
    if (!(c.lp.probe_radius > 0)) throw ConfigError("'lp.probe_radius' must be positive");
  }
  if (c.kind == ExperimentKind::Stability) {
    if (c.lp.offsets.empty()) throw ConfigError("'lp.offsets' must not be empty");
    for (double o : c.lp.offsets)
      if (o == 0.0) throw ConfigError("'lp.offsets' entries must be non-zero");
  }
  if (c.kind == ExperimentKind::KpGate) {
    if (!(c.kp.p > 1.0)) throw ConfigError("'kp.p' must exceed 1");
    if (c.kp.L_sigma < 0 || c.kp.K < 0) throw ConfigError("'kp.L_sigma' and 'kp.K' must be non-negative");
  }
  if (c.kind == ExperimentKind::Lq) {
    if (c.lq.n_perturbations < 1) throw ConfigError("'lq.n_perturbations' must be positive");
    if (!(c.lq.epsilon > 0)) throw ConfigError("'lq.epsilon' must be positive");
    if (c.lq.certificate_samples == 0) throw ConfigError("'lq.certificate_samples' must be positive");
    if (!c.lq.xi_prime.empty() && static_cast<int>(c.lq.xi_prime.size()) != c.problem["n"].get<int>()) {
      throw ConfigError("'lq.xi_prime' must match the state dimension");
    }
  }
}

}  // namespace

std::string_view to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kKinds)
    if (k == kind) return name;
  return "unknown";
}

std::optional<ExperimentKind> parse_kind(std::string_view name) {
  for (const auto& [k, n] : kKinds)
    if (n == name) return k;
  return std::nullopt;
}

ExperimentConfig parse_config(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end());
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, document.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (document[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    if (auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
    throw ConfigError("config parse error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                      what);
  }
  check_keys(doc, {"kind", "seed", "problem", "grid", "monte_carlo", "solver", "lp", "kp", "lq", "output_dir"}, "");

  ExperimentConfig c;
  const json* kind = find(doc, "kind");
  if (!kind) throw ConfigError("missing field 'kind'");
  if (!kind->is_string()) throw ConfigError("'kind' must be a string");
  const auto parsed = parse_kind(kind->get<std::string>());
  if (!parsed) {
    throw ConfigError("unknown kind '" + kind->get<std::string>() +
                      "' (expected solve, field, lp-verify, stability, lq, oracle or kp-gate)");
  }
  c.kind = *parsed;

  const json* seed = find(doc, "seed");
  if (!seed) throw ConfigError("missing field 'seed'");
  c.seed = count_at(*seed, "seed");

  if (const json* p = find(doc, "problem")) c.problem = canonical_problem(*p);

  if (const json* g = find(doc, "grid")) {
    check_keys(*g, {"t0", "T", "n_steps"}, "grid");
    c.grid.t0 = get_number(*g, "t0", c.grid.t0, "grid");
    c.grid.T = get_number(*g, "T", c.grid.T, "grid");
    c.grid.n_steps = get_count(*g, "n_steps", c.grid.n_steps, "grid");
  }
  if (const json* mc = find(doc, "monte_carlo")) {
    check_keys(*mc, {"n_paths"}, "monte_carlo");
    c.n_paths = get_count(*mc, "n_paths", c.n_paths, "monte_carlo");
  }
  if (const json* s = find(doc, "solver")) parse_solver(*s, c.solver);
  if (const json* s = find(doc, "lp")) parse_lp(*s, c.lp);
  if (const json* s = find(doc, "kp")) {
    parse_kp(*s, c.kp, c.kind == ExperimentKind::KpGate);
  } else if (c.kind == ExperimentKind::KpGate) {
    throw ConfigError("missing field 'kp'");
  }
  if (const json* s = find(doc, "lq")) parse_lq(*s, c.lq);
  if (const json* o = find(doc, "output_dir")) {
    if (!o->is_string()) throw ConfigError("'output_dir' must be a string");
    c.output_dir = o->get<std::string>();
  } else {
    c.output_dir = default_output_dir();
  }
  validate_config(c);
  return c;
}

json to_json(const ExperimentConfig& c) {
  json doc;
  doc["kind"] = std::string(to_string(c.kind));
  doc["seed"] = c.seed;
  if (!c.problem.is_null()) doc["problem"] = c.problem;
  doc["grid"] = {{"t0", c.grid.t0}, {"T", c.grid.T}, {"n_steps", c.grid.n_steps}};
  doc["monte_carlo"] = {{"n_paths", c.n_paths}};
  json spatial = {{"half_width", c.solver.spatial.half_width}, {"n_nodes", c.solver.spatial.n_nodes}};
  if (c.solver.spatial.center.size() > 0) {
    spatial["center"] = list_json(std::vector<double>(c.solver.spatial.center.data(),
                                                      c.solver.spatial.center.data() + c.solver.spatial.center.size()));
  }
  doc["solver"] = {{"delta_scale", c.solver.delta_scale},
                   {"picard_tol", c.solver.picard_tol},
                   {"picard_max_iter", c.solver.picard_max_iter},
                   {"quadrature_nodes", c.solver.quadrature_nodes},
                   {"contraction_guard", c.solver.contraction_guard},
                   {"spatial", spatial}};
  doc["lp"] = {{"p_values", list_json(c.lp.p_values)},
               {"xi_ladder", list_json(c.lp.xi_ladder)},
               {"offsets", list_json(c.lp.offsets)},
               {"n_probes", c.lp.n_probes},
               {"probe_radius", c.lp.probe_radius}};
  json kp = {{"p", c.kp.p}, {"L_sigma", c.kp.L_sigma}, {"K", c.kp.K}};
  if (c.kp.bdg_upper) kp["bdg_upper"] = *c.kp.bdg_upper;
  if (c.kp.bdg_lower) kp["bdg_lower"] = *c.kp.bdg_lower;
  if (c.kp.sqrt_C1) kp["sqrt_C1"] = *c.kp.sqrt_C1;
  doc["kp"] = kp;
  doc["lq"] = {{"epsilon", c.lq.epsilon},
               {"n_perturbations", c.lq.n_perturbations},
               {"certificate_samples", c.lq.certificate_samples},
               {"xi_prime", list_json(c.lq.xi_prime)}};
  doc["output_dir"] = c.output_dir;
  return doc;
}

std::string emit_config(const ExperimentConfig& config) { return to_json(config).dump(2) + "\n"; }

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_json(a) == to_json(b); }

// ---- problem construction ---------------------------------------------------------------

namespace {

struct Monomial {
  double coef;
  int t, x, y, z;
};

std::vector<Monomial> monomials(const json& list) {
  std::vector<Monomial> out;
  for (const auto& m : list) {
    auto e = [&](const char* k) { return m.contains(k) ? m[k].get<int>() : 0; };
    out.push_back({m["coef"].get<double>(), e("t"), e("x"), e("y"), e("z")});
  }
  return out;
}

double evaluate(const std::vector<Monomial>& ms, double t, double x, double y, double z) {
  double s = 0.0;
  for (const auto& m : ms) s += m.coef * std::pow(t, m.t) * std::pow(x, m.x) * std::pow(y, m.y) * std::pow(z, m.z);
  return s;
}

FBSDEProblem polynomial_problem(const json& p, const GridSettings& grid) {
  const auto drift = monomials(p["drift"]), diffusion = monomials(p["diffusion"]), driver = monomials(p["driver"]),
             terminal = monomials(p["terminal"]);
  FBSDEProblem prob;
  prob.name = "polynomial";
  prob.t0 = grid.t0;
  prob.T = grid.T;
  prob.xi = Vec::Constant(1, p["xi"].get<double>());
  auto wrap = [](std::vector<Monomial> ms) -> CoefficientMap {
    return [ms](double t, const Vec& x, const Vec& y, const Vec& z) {
      return Vec::Constant(1, evaluate(ms, t, x(0), y(0), z(0)));
    };
  };
  prob.coefficients.drift = wrap(drift);
  prob.coefficients.diffusion = wrap(diffusion);
  prob.coefficients.driver = wrap(driver);
  prob.coefficients.terminal = [terminal](const Vec& x) { return Vec::Constant(1, evaluate(terminal, 0.0, x(0), 0, 0)); };
  prob.coefficients.L = p["L"].get<double>();
  prob.coefficients.K = p["K"].get<double>();
  prob.coefficients.L_sigma = p["L_sigma"].get<double>();
  prob.coefficients.diffusion_depends_on_z =
      std::any_of(diffusion.begin(), diffusion.end(), [](const Monomial& m) { return m.z > 0 && m.coef != 0.0; });
  return prob;
}

struct AffineMaps {
  MatrixProfile x, y, z;
  VectorProfile c;
};

AffineMaps affine_block(const json& p, const char* name, int rows, int n, int m) {
  AffineMaps maps{constant_matrix(Mat::Zero(rows, n)), constant_matrix(Mat::Zero(rows, m)),
                  constant_matrix(Mat::Zero(rows, m)), constant_vector(Vec::Zero(rows))};
  if (!p.contains(name)) return maps;
  const json& b = p[name];
  const std::string where = std::string("problem.") + name;
  if (b.contains("x")) maps.x = matrix_profile(b["x"], rows, n, where + ".x");
  if (b.contains("y")) maps.y = matrix_profile(b["y"], rows, m, where + ".y");
  if (b.contains("z")) maps.z = matrix_profile(b["z"], rows, m, where + ".z");
  if (b.contains("c")) maps.c = vector_profile(b["c"], rows, where + ".c");
  return maps;
}

FBSDEProblem affine_problem(const json& p, const GridSettings& grid) {
  const int n = p["n"].get<int>(), m = p["m"].get<int>();
  const auto drift = affine_block(p, "drift", n, n, m);
  const auto diffusion = affine_block(p, "diffusion", n, n, m);
  const auto driver = affine_block(p, "driver", m, n, m);
  Mat Hx = Mat::Zero(m, n);
  Vec hc = Vec::Zero(m);
  if (p.contains("terminal")) {
    const json& t = p["terminal"];
    if (t.contains("x")) Hx = matrix_literal(t["x"], m, n, "problem.terminal.x")(0.0);
    if (t.contains("c")) hc = constant_vector_literal(t["c"], m, "problem.terminal.c");
  }

  FBSDEProblem prob;
  prob.name = "affine";
  prob.n = n;
  prob.m = m;
  prob.t0 = grid.t0;
  prob.T = grid.T;
  prob.xi = constant_vector_literal(p["xi"], n, "problem.xi");
  auto wrap = [](AffineMaps a) -> CoefficientMap {
    return [a](double t, const Vec& x, const Vec& y, const Vec& z) -> Vec {
      return a.x(t) * x + a.y(t) * y + a.z(t) * z + a.c(t);
    };
  };
  prob.coefficients.drift = wrap(drift);
  prob.coefficients.diffusion = wrap(diffusion);
  prob.coefficients.driver = wrap(driver);
  prob.coefficients.terminal = [Hx, hc](const Vec& x) -> Vec { return Hx * x + hc; };

  // constants as sup over grid nodes of Frobenius norms (an upper bound of the operator norms)
  const TimeGrid tg = build_grid(grid.t0, grid.T, grid.n_steps);
  double K = Hx.norm(), L = Hx.norm() + hc.norm(), L_sigma = 0.0;
  for (double t : tg.points()) {
    for (const AffineMaps* a : {&drift, &diffusion, &driver}) {
      K = std::max({K, a->x(t).norm(), a->y(t).norm(), a->z(t).norm()});
      L = std::max(L, a->x(t).norm() + a->y(t).norm() + a->z(t).norm() + a->c(t).norm());
    }
    L_sigma = std::max(L_sigma, diffusion.z(t).norm());
  }
  prob.coefficients.K = K;
  prob.coefficients.L = L;
  prob.coefficients.L_sigma = L_sigma;
  prob.coefficients.diffusion_depends_on_z = L_sigma > 0.0;
  return prob;
}

}  // namespace

LQSpec lq_spec_from_config(const json& p, const GridSettings& grid) {
  const int n = p.at("n").get<int>(), mu = p.at("m_u").get<int>();
  LQSpec spec = LQSpec::zero(n, mu, grid.t0, grid.T);
  struct M {
    const char* key;
    MatrixProfile* target;
    int rows, cols;
  };
  const M mats[] = {{"A", &spec.A, n, n}, {"B", &spec.B, n, mu}, {"C", &spec.C, n, n}, {"D", &spec.D, n, mu},
                    {"Q", &spec.Q, n, n}, {"S", &spec.S, mu, n}, {"R", &spec.R, mu, mu}};
  for (const auto& m : mats) {
    if (p.contains(m.key)) *m.target = matrix_profile(p[m.key], m.rows, m.cols, std::string("problem.") + m.key);
  }
  if (p.contains("H")) spec.H = matrix_literal(p["H"], n, n, "problem.H")(0.0);
  struct V {
    const char* key;
    VectorProfile* target;
    int dim;
  };
  const V vecs[] = {{"b", &spec.b, n}, {"sigma", &spec.sigma, n}, {"q", &spec.q, n}, {"rho", &spec.rho, mu}};
  for (const auto& v : vecs) {
    if (p.contains(v.key)) *v.target = vector_profile(p[v.key], v.dim, std::string("problem.") + v.key);
  }
  if (p.contains("h")) spec.h = constant_vector_literal(p["h"], n, "problem.h");
  if (p.contains("delta_R")) spec.delta_R = p["delta_R"].get<double>();
  return spec;
}

FBSDEProblem problem_from_config(const json& problem, const GridSettings& grid) {
  const auto family = family_of(problem);
  const TimeGrid tg = build_grid(grid.t0, grid.T, grid.n_steps);
  if (family == "example1") {
    Example1Params e;
    e.a = scalar_profile(problem["a"], "problem.a");
    e.b = scalar_profile(problem["b"], "problem.b");
    e.c = scalar_profile(problem["c"], "problem.c");
    e.t0 = grid.t0;
    e.T = grid.T;
    e.xi = problem["xi"].get<double>();
    return example1_problem(e, tg);
  }
  if (family == "gaussian-linear") {
    return gaussian_linear_problem(problem["slope"].get<double>(), grid.t0, grid.T, problem["xi"].get<double>());
  }
  if (family == "affine") return affine_problem(problem, grid);
  if (family == "polynomial") return polynomial_problem(problem, grid);
  if (family == "lq-hamiltonian") {
    const LQSpec spec = lq_spec_from_config(problem, grid);
    return build_hamiltonian_fbsde(spec, initial_of(problem), tg.points());
  }
  throw ConfigError("unknown problem family '" + family + "'");
}

// ---- orchestration ------------------------------------------------------------------

namespace {

class Run {
 public:
  explicit Run(const ExperimentConfig& c)
      : cfg(c), dir(c.output_dir), grid(build_grid(c.grid.t0, c.grid.T, c.grid.n_steps)) {}

  const ExperimentConfig& cfg;
  fs::path dir;
  TimeGrid grid;
  RunReport report;
  json results = json::object();

  Table table(std::vector<std::string> columns) const {
    columns.emplace_back("seed");
    columns.emplace_back("n_steps");
    return Table{std::move(columns), {}};
  }

  void add(Table& t, std::vector<double> row) const {
    row.push_back(static_cast<double>(cfg.seed));
    row.push_back(static_cast<double>(cfg.grid.n_steps));
    t.add_row(std::move(row));
  }

  void write(const std::string& name, const Table& t) {
    write_file_atomic(dir / name, to_csv(t));
    report.files.push_back(dir / name);
  }

  void warn(const std::vector<std::string>& ws) {
    for (const auto& w : ws)
      if (std::find(report.warnings.begin(), report.warnings.end(), w) == report.warnings.end())
        report.warnings.push_back(w);
  }

  BrownianEnsemble noise() const { return sample_brownian(grid, cfg.n_paths, derive_seed(cfg.seed, "brownian")); }

  /// One field for several initial points: the spatial grid is centered
  /// on their midpoint and widened by half their spread unless a center is
  /// configured.
  DecouplingField field_for(const FBSDEProblem& problem, const std::vector<Vec>& initials) {
    SolverParams params = cfg.solver;
    if (params.spatial.center.size() == 0 && !initials.empty()) {
      Vec lo = initials.front(), hi = initials.front();
      for (const auto& v : initials) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
      }
      params.spatial.center = 0.5 * (lo + hi);
      params.spatial.half_width += 0.5 * (hi - lo).maxCoeff();
    }
    DecouplingField field = build_decoupling_field(problem, params, grid);
    warn(field.diagnostics.warnings);
    results["field_diagnostics"] = diagnostics_json(field);
    return field;
  }

  static json diagnostics_json(const DecouplingField& f) {
    const auto& d = f.diagnostics;
    return {{"delta_initial", d.delta_initial},
            {"delta_final", d.delta_final},
            {"delta_halvings", d.delta_halvings},
            {"max_picard_iterations", d.max_picard_iterations},
            {"max_contraction_ratio", d.max_contraction_ratio},
            {"grid_escape_events", d.grid_escape_events},
            {"interpolation_error_bound", f.interpolation_error_bound()}};
  }

  SolutionEnsemble solve(const FBSDEProblem& problem, const DecouplingField& field, const BrownianEnsemble& w) {
    SolutionEnsemble sol = solve_global(problem, field, w);
    sol.provenance.params = describe(cfg.solver);
    warn(sol.warnings);
    return sol;
  }
};

double max_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

json mean_json(const MeanEstimate& e) { return {{"mean", e.mean}, {"half_width", e.half_width}}; }

std::vector<std::string> component_columns(const char* name, std::size_t dim) {
  std::vector<std::string> cols;
  for (std::size_t d = 0; d < dim; ++d) {
    const auto base = std::string(name) + std::to_string(d);
    cols.push_back(base + "_mean");
    cols.push_back(base + "_sd");
  }
  return cols;
}

void append_moments(std::vector<double>& row, const PathEnsemble& e, std::size_t k) {
  const auto P = static_cast<double>(e.n_paths());
  for (std::size_t d = 0; d < e.dimension(); ++d) {
    double s = 0.0, ss = 0.0;
    for (std::size_t p = 0; p < e.n_paths(); ++p) s += e.at(p, k)[d];
    const double mean = s / P;
    for (std::size_t p = 0; p < e.n_paths(); ++p) ss += (e.at(p, k)[d] - mean) * (e.at(p, k)[d] - mean);
    row.push_back(mean);
    row.push_back(e.n_paths() > 1 ? std::sqrt(ss / (P - 1.0)) : 0.0);
  }
}

Table solution_table(const Run& run, const SolutionEnsemble& sol) {
  std::vector<std::string> cols{"t"};
  for (auto [name, e] : {std::pair{"X", &sol.X}, std::pair{"Y", &sol.Y}, std::pair{"Z", &sol.Z}}) {
    auto c = component_columns(name, e->dimension());
    cols.insert(cols.end(), c.begin(), c.end());
  }
  cols.emplace_back("n_paths");
  Table t = run.table(cols);
  for (std::size_t k = 0; k < sol.grid().n_points(); ++k) {
    std::vector<double> row{sol.grid()[k]};
    append_moments(row, sol.X, k);
    append_moments(row, sol.Y, k);
    append_moments(row, sol.Z, k);
    row.push_back(static_cast<double>(sol.n_paths()));
    run.add(t, row);
  }
  return t;
}

// RMS over paths of |a - b| at node k.
double rms_at(const PathEnsemble& a, const PathEnsemble& b, std::size_t k) {
  double s = 0.0;
  for (std::size_t p = 0; p < a.n_paths(); ++p) s += (a.vec(p, k) - b.vec(p, k)).squaredNorm();
  return std::sqrt(s / static_cast<double>(a.n_paths()));
}

std::optional<SolutionEnsemble> reference_solution(const json& problem, const GridSettings& g,
                                                   const BrownianEnsemble& w) {
  const auto family = family_of(problem);
  if (family == "example1") {
    Example1Params e;
    e.a = scalar_profile(problem["a"], "problem.a");
    e.b = scalar_profile(problem["b"], "problem.b");
    e.c = scalar_profile(problem["c"], "problem.c");
    e.t0 = g.t0;
    e.T = g.T;
    e.xi = problem["xi"].get<double>();
    return example1_closed_form(e, w);
  }
  if (family == "gaussian-linear") {
    return gaussian_linear_oracle(problem["slope"].get<double>(), w, problem["xi"].get<double>());
  }
  return std::nullopt;
}

json rms_summary(const SolutionEnsemble& sol, const SolutionEnsemble& ref) {
  double y = 0.0, z = 0.0;
  const std::size_t N = sol.grid().n_points();
  for (std::size_t k = 0; k < N; ++k) {
    const double ey = rms_at(sol.Y, ref.Y, k), ez = rms_at(sol.Z, ref.Z, k);
    y += ey * ey;
    z += ez * ez;
  }
  return {{"rms_error_Y", std::sqrt(y / static_cast<double>(N))}, {"rms_error_Z", std::sqrt(z / static_cast<double>(N))}};
}

void run_solve(Run& run) {
  const FBSDEProblem problem = problem_from_config(run.cfg.problem, run.cfg.grid);
  const auto field = run.field_for(problem, {problem.xi});
  const auto w = run.noise();
  const SolutionEnsemble sol = run.solve(problem, field, w);
  run.write("solution_table.csv", solution_table(run, sol));
  std::vector<double> y0(sol.n_paths());
  for (std::size_t p = 0; p < sol.n_paths(); ++p) y0[p] = sol.Y.at(p, 0)[0];
  run.results["Y0"] = mean_json(estimate_mean(y0));
  run.results["terminal_residual_max"] = max_of(sol.terminal_residual);
  run.results["samples_outside_grid"] = sol.samples_outside_grid;
  if (auto ref = reference_solution(run.cfg.problem, run.cfg.grid, w)) run.results["closed_form"] = rms_summary(sol, *ref);
}

void run_field(Run& run) {
  const FBSDEProblem problem = problem_from_config(run.cfg.problem, run.cfg.grid);
  const auto field = run.field_for(problem, {problem.xi});
  const auto& axes = field.axes();
  std::vector<std::string> cols{"t"};
  for (int d = 0; d < axes.dimension(); ++d) cols.push_back("x" + std::to_string(d));
  for (int j = 0; j < field.m(); ++j) cols.push_back("u" + std::to_string(j));
  Table t = run.table(cols);
  for (std::size_t i = 0; i < field.n_times(); ++i) {
    for (std::size_t f = 0; f < axes.n_nodes(); ++f) {
      std::vector<double> row{field.times()[i]};
      const Vec x = axes.node(f);
      for (int d = 0; d < axes.dimension(); ++d) row.push_back(x(d));
      const auto u = field.slice(i).at(f);
      for (int j = 0; j < field.m(); ++j) row.push_back(u(j));
      run.add(t, row);
    }
  }
  run.write("field.csv", t);
  const auto profile = field_lipschitz_profile(field);
  Table lp = run.table({"t", "lipschitz"});
  for (std::size_t i = 0; i < profile.size(); ++i) run.add(lp, {field.times()[i], profile[i]});
  run.write("lipschitz_profile.csv", lp);
  run.results["lipschitz_max"] = max_of(profile);
}

std::vector<std::string> stability_columns() {
  return {"p",           "xi_norm",     "xi_prime_norm", "gap",           "sup_dx_mean",      "sup_dx_hw",
          "sup_dy_mean", "sup_dy_hw",   "dz_energy_mean", "dz_energy_hw", "implied_constant", "kappa",
          "violation_rate", "n_paths"};
}

void add_stability_row(const Run& run, Table& t, const StabilityReport& r) {
  std::vector<double> row{r.p, r.xi.norm(), r.xi_prime.norm(), (r.xi - r.xi_prime).norm()};
  for (const auto& e : r.estimates) {
    row.push_back(e.mean);
    row.push_back(e.half_width);
  }
  row.push_back(r.implied_constant);
  row.push_back(r.kappa);
  row.push_back(r.violation_rate);
  row.push_back(static_cast<double>(r.n_paths));
  run.add(t, row);
}

json stability_json(const StabilityReport& r) {
  return {{"p", r.p},
          {"gap", (r.xi - r.xi_prime).norm()},
          {"implied_constant", r.implied_constant},
          {"kappa", r.kappa},
          {"violation_rate", r.violation_rate}};
}

void run_stability(Run& run) {
  const FBSDEProblem base = problem_from_config(run.cfg.problem, run.cfg.grid);
  std::vector<Vec> initials{base.xi};
  for (double o : run.cfg.lp.offsets) initials.push_back(base.xi + Vec::Constant(base.n, o));
  const auto field = run.field_for(base, initials);
  const double slope = max_of(field_lipschitz_profile(field));
  const auto w = run.noise();
  const SolutionEnsemble a = run.solve(base, field, w);
  Table t = run.table(stability_columns());
  json entries = json::array();
  for (std::size_t i = 1; i < initials.size(); ++i) {
    const SolutionEnsemble b = run.solve(with_initial(base, initials[i]), field, w);
    for (double p : run.cfg.lp.p_values) {
      const auto r = estimate_stability(a, b, p, slope);
      add_stability_row(run, t, r);
      entries.push_back(stability_json(r));
    }
  }
  run.write("stability_table.csv", t);
  run.results["field_slope_bound"] = slope;
  run.results["stability"] = entries;
}

void run_lp_verify(Run& run) {
  const FBSDEProblem base = problem_from_config(run.cfg.problem, run.cfg.grid);
  std::vector<Vec> initials;
  for (double x : run.cfg.lp.xi_ladder) initials.push_back(Vec::Constant(base.n, x));
  const auto field = run.field_for(base, initials);
  const double slope = max_of(field_lipschitz_profile(field));
  const auto w = run.noise();
  std::vector<SolutionEnsemble> ladder;
  for (const auto& xi : initials) ladder.push_back(run.solve(with_initial(base, xi), field, w));

  Table lp = run.table({"p", "xi_norm", "sup_x_mean", "sup_x_hw", "sup_y_mean", "sup_y_hw", "z_energy_mean",
                        "z_energy_hw", "implied_constant", "spread", "n_paths"});
  Table st = run.table(stability_columns());
  json lp_json = json::array(), st_json = json::array();
  double c1 = 0.0;
  for (double p : run.cfg.lp.p_values) {
    const auto rep = estimate_lp_bound(ladder, p);
    for (const auto& r : rep.entries) {
      std::vector<double> row{p, r.xi_norm};
      for (const auto& e : r.estimates) {
        row.push_back(e.mean);
        row.push_back(e.half_width);
      }
      row.push_back(r.implied_constant);
      row.push_back(rep.spread);
      row.push_back(static_cast<double>(r.n_paths));
      run.add(lp, row);
    }
    lp_json.push_back({{"p", p}, {"spread", rep.spread}});
    for (std::size_t i = 0; i + 1 < ladder.size(); ++i) {
      if ((initials[i] - initials[i + 1]).norm() == 0.0) continue;
      const auto r = estimate_stability(ladder[i], ladder[i + 1], p, slope);
      add_stability_row(run, st, r);
      st_json.push_back(stability_json(r));
      if (p == run.cfg.lp.p_values.front()) c1 = std::max(c1, r.implied_constant);
    }
  }
  run.write("lp_table.csv", lp);
  run.write("stability_table.csv", st);
  run.results["lp"] = lp_json;
  run.results["stability"] = st_json;
  run.results["field_slope_bound"] = slope;

  const auto probe = probe_assumptions(base, run.cfg.lp.n_probes, run.cfg.lp.probe_radius,
                                       derive_seed(run.cfg.seed, "probe"));
  json probes = {{"growth", probe.growth},       {"K_b", probe.K_b},   {"K_sigma_xy", probe.K_sigma_xy},
                 {"L_sigma_z", probe.L_sigma_z}, {"K_f", probe.K_f},   {"K_Phi", probe.K_Phi},
                 {"K", probe.K()},               {"violations", probe.violations.size()}};
  for (const auto& v : probe.violations) {
    run.warn({"probe: " + v.constant + " probed " + format_double(v.probed) + " exceeds declared " +
              format_double(v.declared)});
  }
  run.results["probe"] = probes;

  json gates = json::array();
  for (double p : run.cfg.lp.p_values) {
    if (!(p > 1.0)) continue;
    const double kp = compute_kp(KpInputs::with_default_constants(p));
    const std::optional<double> sqrt_c1 = c1 > 0 ? std::optional<double>(std::sqrt(c1)) : std::nullopt;
    const auto v = smallness_gates(kp, probe.L_sigma_z, probe.K(), sqrt_c1);
    json g = {{"p", p}, {"K_p", kp}, {"h51_product", v.h51_product}, {"h51", v.h51}};
    if (v.theorem51) {
      g["theorem51_product"] = *v.theorem51_product;
      g["theorem51"] = *v.theorem51;
    }
    gates.push_back(g);
  }
  run.results["gates"] = gates;

  if (c1 > 0) {
    const double horizon = run.cfg.grid.T - run.cfg.grid.t0;
    const double delta = field.diagnostics.delta_final > 0 ? field.diagnostics.delta_final : horizon;
    const int k = std::max(1, static_cast<int>(std::ceil(horizon / delta - 1e-12)));
    const auto audit = audit_constant_growth(c1, run.cfg.lp.p_values.front(), k);
    run.results["constant_growth"] = {{"C1", c1},
                                      {"k", k},
                                      {"value", audit.saturated ? json("inf") : json(audit.value)},
                                      {"saturated", audit.saturated}};
    if (audit.saturated) run.warn({"constant-growth audit saturated"});
  }
}

std::vector<double> flatten(const Mat& m) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

void run_lq(Run& run) {
  const auto& cfg = run.cfg;
  const LQSpec spec = lq_spec_from_config(cfg.problem, cfg.grid);
  const Vec x0 = initial_of(cfg.problem);
  const auto times = run.grid.points();
  const auto assumptions = check_lq_assumptions(spec, times);
  run.results["assumptions"] = {{"min_eig_state_weight", assumptions.min_eig_state_weight},
                                {"min_eig_R", assumptions.min_eig_R},
                                {"min_eig_H", assumptions.min_eig_H},
                                {"sup_norm_D", assumptions.sup_norm_D}};
  const auto cert = monotonicity_certificate(spec, cfg.lq.certificate_samples, derive_seed(cfg.seed, "certificate"), times);
  run.results["certificate"] = {{"c1", cert.c1},
                                {"c2", cert.c2},
                                {"n_samples", cert.n_samples},
                                {"worst_residual", cert.worst_residual},
                                {"identity_residual", cert.identity_residual}};

  const Vec xi_prime = cfg.lq.xi_prime.empty() ? Vec::Zero(spec.n) : to_vec(cfg.lq.xi_prime);
  const FBSDEProblem problem = build_hamiltonian_fbsde(spec, x0, times);
  const auto field = run.field_for(problem, {x0, xi_prime});
  const auto w = run.noise();
  const SolutionEnsemble sol = run.solve(problem, field, w);
  const PathEnsemble control = optimal_control_from_solution(spec, sol);
  const double stationarity = stationarity_residual(spec, sol, control);
  const auto cost = simulate_cost(spec, control, w, x0);

  std::optional<RiccatiTable> riccati;
  try {
    riccati = riccati_oracle(spec, run.grid);
  } catch (const InvalidArgument& e) {
    run.warn({std::string("riccati oracle skipped: ") + e.what()});
  }

  std::vector<std::string> cost_cols{"J", "J_half_width", "stationarity_residual", "n_paths"};
  if (riccati) cost_cols.emplace_back("riccati_value");
  Table ct = run.table(cost_cols);
  std::vector<double> cost_row{cost.cost.mean, cost.cost.half_width, stationarity, static_cast<double>(cfg.n_paths)};
  if (riccati) cost_row.push_back(riccati->value(x0));
  run.add(ct, cost_row);
  run.write("cost_table.csv", ct);
  run.results["cost"] = mean_json(cost.cost);
  run.results["stationarity_residual"] = stationarity;

  const auto opt = optimality_test(spec, control, w, x0, cfg.lq.n_perturbations, cfg.lq.epsilon,
                                   derive_seed(cfg.seed, "perturbation"));
  Table ot = run.table({"index", "epsilon", "base_cost", "cost_plus", "cost_minus", "margin", "tolerance",
                        "second_difference"});
  for (std::size_t i = 0; i < opt.perturbations.size(); ++i) {
    const auto& r = opt.perturbations[i];
    run.add(ot, {static_cast<double>(i), opt.epsilon, opt.base_cost, r.cost_plus, r.cost_minus, r.margin, r.tolerance,
                 r.second_difference});
  }
  run.write("optimality_table.csv", ot);
  run.results["optimality"] = {{"min_margin", opt.min_margin},
                               {"mean_margin", opt.mean_margin},
                               {"min_second_difference", opt.min_second_difference}};

  if (riccati) {
    std::vector<std::string> cols{"t"};
    for (int i = 0; i < spec.n; ++i)
      for (int j = 0; j < spec.n; ++j) cols.push_back("P" + std::to_string(i) + std::to_string(j));
    for (int i = 0; i < spec.m_u; ++i)
      for (int j = 0; j < spec.n; ++j) cols.push_back("gain" + std::to_string(i) + std::to_string(j));
    Table rt = run.table(cols);
    for (std::size_t k = 0; k < riccati->times.size(); ++k) {
      std::vector<double> row{riccati->times[k]};
      for (double v : flatten(riccati->P[k])) row.push_back(v);
      for (double v : flatten(riccati->gain[k])) row.push_back(v);
      run.add(rt, row);
    }
    run.write("riccati_table.csv", rt);
    const Mat slope0 = field.gradient(cfg.grid.t0, x0);
    run.results["riccati"] = {{"value", riccati->value(x0)},
                              {"P0", flatten(riccati->P.front())},
                              {"field_slope_t0", flatten(slope0)},
                              {"slope_gap", (slope0 - riccati->P.front()).norm()}};
  }

  if ((xi_prime - x0).norm() > 0) {
    const SolutionEnsemble other = run.solve(build_hamiltonian_fbsde(spec, xi_prime, times), field, w);
    const auto pr = ito_pairing_residual(spec, sol, other);
    Table pt = run.table({"residual", "half_width", "terminal_term", "integral_term", "initial_term", "n_paths"});
    run.add(pt, {pr.residual, pr.half_width, pr.terminal_term, pr.integral_term, pr.initial_term,
                 static_cast<double>(cfg.n_paths)});
    run.write("pairing_table.csv", pt);
    run.results["pairing"] = {{"residual", pr.residual}, {"half_width", pr.half_width}};
  }

  const double kp = compute_kp(KpInputs::with_default_constants(2.0));
  const auto gate = smallness_gates(kp, problem.coefficients.L_sigma, problem.coefficients.K);
  run.results["gate"] = {{"K_p", kp},
                         {"L_sigma", problem.coefficients.L_sigma},
                         {"K", problem.coefficients.K},
                         {"h51_product", gate.h51_product},
                         {"h51", gate.h51}};
}

void run_oracle(Run& run) {
  const FBSDEProblem problem = problem_from_config(run.cfg.problem, run.cfg.grid);
  const auto w = run.noise();
  const SolutionEnsemble ref = *reference_solution(run.cfg.problem, run.cfg.grid, w);
  const auto field = run.field_for(problem, {problem.xi});
  const SolutionEnsemble sol = run.solve(problem, field, w);
  Table t = run.table({"t", "X_mean", "Y_mean", "Z_mean", "rms_error_X", "rms_error_Y", "rms_error_Z", "n_paths"});
  for (std::size_t k = 0; k < run.grid.n_points(); ++k) {
    double x = 0, y = 0, z = 0;
    for (std::size_t p = 0; p < ref.n_paths(); ++p) {
      x += ref.X.scalar(p, k);
      y += ref.Y.scalar(p, k);
      z += ref.Z.scalar(p, k);
    }
    const auto P = static_cast<double>(ref.n_paths());
    run.add(t, {run.grid[k], x / P, y / P, z / P, rms_at(sol.X, ref.X, k), rms_at(sol.Y, ref.Y, k),
                rms_at(sol.Z, ref.Z, k), P});
  }
  run.write("oracle_table.csv", t);
  const auto residual = backward_residual(ref, problem, w);
  run.results["oracle_backward_residual_max"] = max_of(residual);
  run.results["solver_vs_oracle"] = rms_summary(sol, ref);
}

void run_kp_gate(Run& run) {
  const auto& kp = run.cfg.kp;
  KpInputs in = KpInputs::with_default_constants(kp.p);
  if (kp.bdg_upper) in.bdg_upper = *kp.bdg_upper;
  if (kp.bdg_lower) in.bdg_lower = *kp.bdg_lower;
  const double value = compute_kp(in);
  const auto v = smallness_gates(value, kp.L_sigma, kp.K, kp.sqrt_C1);
  std::vector<std::string> cols{"p", "bdg_upper", "bdg_lower", "K_p", "L_sigma", "K", "h51_product", "h51"};
  std::vector<double> row{kp.p, in.bdg_upper, in.bdg_lower, value, kp.L_sigma, kp.K, v.h51_product, v.h51 ? 1.0 : 0.0};
  json r = {{"p", kp.p},         {"bdg_upper", in.bdg_upper}, {"bdg_lower", in.bdg_lower}, {"K_p", value},
            {"L_sigma", kp.L_sigma}, {"K", kp.K},            {"h51_product", v.h51_product}, {"h51", v.h51}};
  if (v.theorem51) {
    cols.insert(cols.end(), {"sqrt_C1", "theorem51_product", "theorem51"});
    row.insert(row.end(), {*kp.sqrt_C1, *v.theorem51_product, *v.theorem51 ? 1.0 : 0.0});
    r["sqrt_C1"] = *kp.sqrt_C1;
    r["theorem51_product"] = *v.theorem51_product;
    r["theorem51"] = *v.theorem51;
  }
  Table t = run.table(cols);
  run.add(t, row);
  run.write("kp_table.csv", t);
  run.results["kp"] = r;
}

template <class E>
[[noreturn]] void rethrow_as(const E& e, std::string_view kind) {
  throw E("experiment " + std::string(kind) + ": " + e.what());
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const auto kind = to_string(config.kind);
  Run run(config);
  try {
    switch (config.kind) {
      case ExperimentKind::Solve: run_solve(run); break;
      case ExperimentKind::Field: run_field(run); break;
      case ExperimentKind::LpVerify: run_lp_verify(run); break;
      case ExperimentKind::Stability: run_stability(run); break;
      case ExperimentKind::Lq: run_lq(run); break;
      case ExperimentKind::Oracle: run_oracle(run); break;
      case ExperimentKind::KpGate: run_kp_gate(run); break;
    }
  } catch (const PicardDivergence& e) {
    rethrow_as(e, kind);
  } catch (const NonFiniteState& e) {
    rethrow_as(e, kind);
  } catch (const CoefficientEvaluationError& e) {
    rethrow_as(e, kind);
  } catch (const NumericalError& e) {
    rethrow_as(e, kind);
  } catch (const ConfigError& e) {
    rethrow_as(e, kind);
  } catch (const InvalidArgument& e) {
    rethrow_as(e, kind);
  } catch (const IoError& e) {
    rethrow_as(e, kind);
  }

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json files = json::array();
  for (const auto& f : run.report.files) files.push_back(f.filename().string());
  files.push_back("report.json");
  run.report.document = {{"artifact_version", std::string(kArtifactVersion)},
                         {"kind", std::string(kind)},
                         {"config", to_json(config)},
                         {"wall_clock_seconds", seconds},
                         {"results", run.results},
                         {"warnings", run.report.warnings},
                         {"files", files}};
  try {
    write_file_atomic(run.dir / "report.json", run.report.document.dump(2) + "\n");
  } catch (const IoError& e) {
    rethrow_as(e, kind);
  }
  run.report.files.push_back(run.dir / "report.json");
  return run.report;
}

}  // namespace fbsde
