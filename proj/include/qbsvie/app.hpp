#ifndef QBSVIE_APP_HPP
#define QBSVIE_APP_HPP

// Batch front-end: config validation, experiments, result bundles, emission.
// Needs the single-header nlohmann/json (json.hpp) on the include path.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "qbsvie/bsde.hpp"
#include "qbsvie/bsvie.hpp"
#include "qbsvie/driver.hpp"
#include "qbsvie/expression.hpp"
#include "qbsvie/generator.hpp"
#include "qbsvie/grid.hpp"
#include "qbsvie/risk.hpp"

namespace qbsvie::app {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

class IoError : public std::runtime_error {
 public:
  IoError(const std::string& what, std::string path) : std::runtime_error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// Config schema (a JSON Schema subset: type, properties, additionalProperties,
// required, enum, minimum, exclusiveMinimum, items, $ref into definitions)

inline const json& config_schema() {
  static const json schema = json::parse(R"({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "qbsvie run configuration",
  "type": "object",
  "additionalProperties": false,
  "required": ["experiment", "driver", "generator"],
  "properties": {
    "experiment": {"type": "string", "enum": ["solve-type1", "solve-type2", "partition-convergence",
                                              "risk-axioms", "bsde-oracle", "inconsistency-demo"]},
    "horizon": {"type": "number", "exclusiveMinimum": 0},
    "driver": {
      "type": "object", "additionalProperties": false, "required": ["steps"],
      "properties": {
        "backend": {"type": "string", "enum": ["lattice", "path-tree", "monte-carlo"]},
        "steps": {"type": "integer", "minimum": 1},
        "paths": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "basis_degree": {"type": "integer", "minimum": 0},
        "path_tree_cap": {"type": "integer", "minimum": 1}
      }
    },
    "generator": {"$ref": "#/definitions/generator"},
    "position": {
      "type": "object", "additionalProperties": false, "required": ["class"],
      "properties": {
        "class": {"type": "string", "enum": ["constant", "linear_terminal", "call_terminal", "running_max",
                                             "custom_expression"]},
        "c": {"type": "number"},
        "a": {"type": "number"},
        "K": {"type": "number"},
        "expression": {"type": "string"}
      }
    },
    "tolerances": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "picard": {"type": "number", "exclusiveMinimum": 0},
        "picard_max_iter": {"type": "integer", "minimum": 1},
        "inner": {"type": "number", "exclusiveMinimum": 0},
        "inner_max_iter": {"type": "integer", "minimum": 1},
        "outer": {"type": "number", "exclusiveMinimum": 0},
        "outer_max_iter": {"type": "integer", "minimum": 1}
      }
    },
    "partition": {
      "type": "object", "additionalProperties": false,
      "properties": {"levels": {"type": "array", "items": {"type": "integer", "minimum": 1}}}
    },
    "ladder": {"type": "array", "items": {"type": "integer", "minimum": 1}},
    "risk": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "r0": {"type": "number", "minimum": 0},
        "instances": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "tolerance": {"type": "number", "exclusiveMinimum": 0}
      }
    },
    "output": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "dir": {"type": "string"},
        "format": {"type": "string", "enum": ["json", "csv", "both"]}
      }
    }
  },
  "definitions": {
    "generator": {
      "type": "object", "additionalProperties": false, "required": ["name"],
      "properties": {
        "name": {"type": "string", "enum": ["zero", "linear_y", "quadratic_half", "entropic", "coherent_abs",
                                           "convex_sqrt", "entropic_weighted", "sin_zprime", "sum", "custom"]},
        "a": {"type": "number"},
        "gamma": {"type": "number"},
        "gbar": {"type": "number"},
        "c": {"type": "number"},
        "terms": {"type": "array", "items": {"$ref": "#/definitions/generator"}},
        "expression": {"type": "string"},
        "q": {"type": "number"},
        "L": {"type": "number", "minimum": 0},
        "beta": {"type": "number", "minimum": 0},
        "h": {"type": "number", "minimum": 0},
        "zprime_bound": {"type": "number", "minimum": 0},
        "monotone_in_y": {"type": "boolean"}
      }
    }
  }
})");
  return schema;
}

namespace detail {

inline bool has_type(const json& v, const std::string& type) {
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  return false;
}

inline void validate_node(const json& v, const json& schema, const json& root, const std::string& path) {
  const std::string at = path.empty() ? "(root)" : path;
  if (schema.contains("$ref")) {
    const std::string ref = schema["$ref"];
    const std::string prefix = "#/definitions/";
    validate_node(v, root["definitions"][ref.substr(prefix.size())], root, path);
    return;
  }
  if (schema.contains("type") && !has_type(v, schema["type"]))
    throw ValidationError("config: " + at + " must be of type " + schema["type"].get<std::string>());
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& e : schema["enum"]) found = found || e == v;
    if (!found) throw ValidationError("config: " + at + " = " + v.dump() + " is not one of " + schema["enum"].dump());
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (schema.contains("minimum") && x < schema["minimum"].get<double>())
      throw ValidationError("config: " + at + " must be >= " + schema["minimum"].dump());
    if (schema.contains("exclusiveMinimum") && !(x > schema["exclusiveMinimum"].get<double>()))
      throw ValidationError("config: " + at + " must be > " + schema["exclusiveMinimum"].dump());
  }
  if (v.is_object()) {
    const json props = schema.value("properties", json::object());
    for (const auto& key : schema.value("required", json::array()))
      if (!v.contains(key.get<std::string>()))
        throw ValidationError("config: " + at + " is missing required key '" + key.get<std::string>() + "'");
    for (auto it = v.begin(); it != v.end(); ++it) {
      const std::string child = path.empty() ? it.key() : path + "." + it.key();
      if (!props.contains(it.key())) {
        if (!schema.value("additionalProperties", true)) throw ValidationError("config: unknown key '" + child + "'");
        continue;
      }
      validate_node(it.value(), props[it.key()], root, child);
    }
  }
  if (v.is_array() && schema.contains("items"))
    for (std::size_t k = 0; k < v.size(); ++k)
      validate_node(v[k], schema["items"], root, path + "[" + std::to_string(k) + "]");
}

}  // namespace detail

inline void validate_config(const json& config) { detail::validate_node(config, config_schema(), config_schema(), ""); }

/// Applies `key.path=value`; the value is parsed as JSON when possible, else taken as a string.
inline void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' is not of the form key.path=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &config;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ValidationError("override '" + assignment + "' has an empty path segment");
    parts.push_back(part);
  }
  for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
    if (!node->is_object()) throw ValidationError("override '" + assignment + "': '" + parts[k] + "' is not an object");
    node = &(*node)[parts[k]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ValidationError("override '" + assignment + "': parent is not an object");
  (*node)[parts.back()] = value;
}

/// FNV-1a over the canonical dump (object keys are sorted).
inline std::string config_hash(const json& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Builders

inline Generator build_generator(const json& spec) {
  const std::string name = spec.at("name");
  auto allow = [&](std::initializer_list<const char*> keys) {
    for (auto it = spec.begin(); it != spec.end(); ++it) {
      if (it.key() == "name") continue;
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) throw ValidationError("generator '" + name + "' takes no parameter '" + it.key() + "'");
    }
  };
  auto need = [&](const char* key) -> double {
    if (!spec.contains(key)) throw ValidationError("generator '" + name + "' needs parameter '" + key + "'");
    return spec[key].get<double>();
  };
  if (name == "zero") return allow({}), catalog::zero();
  if (name == "quadratic_half") return allow({}), catalog::quadratic_half();
  if (name == "linear_y") return allow({"a"}), catalog::linear_y(need("a"));
  if (name == "entropic") return allow({"gamma"}), catalog::entropic(need("gamma"));
  if (name == "coherent_abs") return allow({"gbar"}), catalog::coherent_abs(need("gbar"));
  if (name == "convex_sqrt") return allow({"gbar"}), catalog::convex_sqrt(need("gbar"));
  if (name == "entropic_weighted") return allow({"gbar"}), catalog::entropic_weighted(need("gbar"));
  if (name == "sin_zprime") return allow({"c"}), catalog::sin_zprime(need("c"));
  if (name == "sum") {
    allow({"terms"});
    if (!spec.contains("terms") || spec["terms"].empty()) throw ValidationError("generator 'sum' needs terms");
    Generator g = build_generator(spec["terms"][0]);
    for (std::size_t k = 1; k < spec["terms"].size(); ++k) g = catalog::sum(g, build_generator(spec["terms"][k]));
    return g;
  }
  // custom: rest(t, s, y, z, zp) from an expression, plus optional (q/2) z^2
  allow({"expression", "q", "L", "gamma", "beta", "h", "zprime_bound", "monotone_in_y"});
  if (!spec.contains("expression")) throw ValidationError("generator 'custom' needs an expression");
  const Expression e = Expression::compile(spec["expression"], {"t", "s", "y", "z", "zp"});
  Certificate c;
  c.L = spec.value("L", 0.0);
  c.gamma = spec.value("gamma", 0.0);
  c.beta = spec.value("beta", 0.0);
  const double h = spec.value("h", 0.0);
  c.h = [h](double) { return h; };
  c.h_sup = h;
  c.zprime_bound = spec.value("zprime_bound", std::numeric_limits<double>::infinity());
  if (!e.uses(4)) c.zprime_bound = 0.0;
  return catalog::custom(
      "custom(" + e.text() + ")",
      [e](double t, double s, double y, double z, double zp) { return e({t, s, y, z, zp}); }, spec.value("q", 0.0),
      e.uses(2), e.uses(4), spec.value("monotone_in_y", false), c);
}

inline PositionProcess build_position(const json& spec) {
  const std::string cls = spec.at("class");
  auto need = [&](const char* key) -> double {
    if (!spec.contains(key)) throw ValidationError("position '" + cls + "' needs parameter '" + key + "'");
    return spec[key].get<double>();
  };
  if (cls == "constant") return constant_position(need("c"));
  if (cls == "linear_terminal") return linear_terminal(need("a"));
  if (cls == "call_terminal") return call_terminal(need("K"));
  if (cls == "running_max") return running_max_position();
  if (!spec.contains("expression")) throw ValidationError("position 'custom_expression' needs an expression");
  const Expression e = Expression::compile(spec["expression"], {"t", "W_T", "max_W"});
  const bool path_dependent = e.uses(2);
  return {[e, path_dependent](double t, std::size_t, const PathView& p) {
            return e({t, p.terminal_w(), path_dependent ? p.running_max() : 0.0});
          },
          path_dependent, "custom_expression(" + e.text() + ")"};
}

inline Driver build_driver_from(const json& config, std::optional<std::size_t> steps = std::nullopt) {
  const json& d = config.at("driver");
  DriverSpec spec;
  spec.backend = backend_from_string(d.value("backend", std::string("lattice")));
  spec.paths = d.value("paths", spec.paths);
  spec.seed = d.value("seed", spec.seed);
  spec.basis_degree = d.value("basis_degree", spec.basis_degree);
  spec.path_tree_cap = d.value("path_tree_cap", spec.path_tree_cap);
  return Driver(make_uniform_grid(config.value("horizon", 1.0), steps.value_or(d.at("steps").get<std::size_t>())),
                spec);
}

inline PicardConfig picard_from(const json& config, const Driver& driver) {
  PicardConfig c = PicardConfig::for_driver(driver);
  const json tol = config.value("tolerances", json::object());
  c.tol = tol.value("picard", c.tol);
  c.max_iter = tol.value("picard_max_iter", c.max_iter);
  c.inner.inner_tol = tol.value("inner", c.inner.inner_tol);
  c.inner.inner_max_iter = tol.value("inner_max_iter", c.inner.inner_max_iter);
  return c;
}

// ---------------------------------------------------------------------------
// Result bundle

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ZRow {
  std::size_t i = 0, j = 0;
  std::vector<double> values;
  friend bool operator==(const ZRow&, const ZRow&) = default;
};

struct Level {
  std::size_t N = 0;
  double error = 0.0;
  std::optional<double> ratio;  // previous error / this error
  friend bool operator==(const Level&, const Level&) = default;
};

struct ResultBundle {
  int schema_version = kSchemaVersion;
  std::string experiment;
  Provenance provenance;
  json config;
  double horizon = 1.0;
  std::map<std::string, double> summary;
  std::string y_label = "Y";
  std::vector<std::vector<double>> Y;  // per step, node values
  std::vector<ZRow> Z;
  std::vector<Level> convergence;
  json diagnostics = json::object();

  /// Records finite values only; non-finite ones go to diagnostics as strings.
  void put(const std::string& key, double v) {
    if (std::isfinite(v)) {
      summary[key] = v;
    } else {
      diagnostics["non_finite"][key] = std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    }
  }

  friend bool operator==(const ResultBundle&, const ResultBundle&) = default;
};

inline void to_json(json& j, const Provenance& p) {
  j = {{"config_hash", p.config_hash}, {"seed", p.seed}, {"version", p.version}};
}
inline void from_json(const json& j, Provenance& p) {
  j.at("config_hash").get_to(p.config_hash);
  j.at("seed").get_to(p.seed);
  j.at("version").get_to(p.version);
}
inline void to_json(json& j, const ZRow& r) { j = {{"i", r.i}, {"j", r.j}, {"values", r.values}}; }
inline void from_json(const json& j, ZRow& r) {
  j.at("i").get_to(r.i);
  j.at("j").get_to(r.j);
  j.at("values").get_to(r.values);
}
inline void to_json(json& j, const Level& l) {
  j = {{"N", l.N}, {"error", l.error}, {"ratio", l.ratio ? json(*l.ratio) : json(nullptr)}};
}
inline void from_json(const json& j, Level& l) {
  j.at("N").get_to(l.N);
  j.at("error").get_to(l.error);
  if (j.at("ratio").is_null()) {
    l.ratio.reset();
  } else {
    l.ratio = j["ratio"].get<double>();
  }
}
inline void to_json(json& j, const ResultBundle& b) {
  j = {{"schema_version", b.schema_version},
       {"experiment", b.experiment},
       {"provenance", b.provenance},
       {"config", b.config},
       {"horizon", b.horizon},
       {"summary", b.summary},
       {"fields", {{"y_label", b.y_label}, {"Y", b.Y}, {"Z", b.Z}}},
       {"convergence", b.convergence},
       {"diagnostics", b.diagnostics}};
}
inline void from_json(const json& j, ResultBundle& b) {
  j.at("schema_version").get_to(b.schema_version);
  j.at("experiment").get_to(b.experiment);
  j.at("provenance").get_to(b.provenance);
  b.config = j.at("config");
  j.at("horizon").get_to(b.horizon);
  j.at("summary").get_to(b.summary);
  j.at("fields").at("y_label").get_to(b.y_label);
  j.at("fields").at("Y").get_to(b.Y);
  j.at("fields").at("Z").get_to(b.Z);
  j.at("convergence").get_to(b.convergence);
  b.diagnostics = j.at("diagnostics");
}

// ---------------------------------------------------------------------------
// Experiments

namespace detail {

inline std::vector<std::vector<double>> dump(const std::vector<NodeFunction>& fs) {
  std::vector<std::vector<double>> out;
  out.reserve(fs.size());
  for (const auto& f : fs) out.push_back(f.values);
  return out;
}

inline json bound_json(const BoundDiagnostics& b) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(v > 0 ? "inf" : "-inf"); };
  return {{"alpha_constant", b.alpha_constant},
          {"alpha_margin", num(b.alpha_margin)},
          {"alpha_holds", b.alpha_holds},
          {"bmo", b.bmo},
          {"bmo_budget", num(b.bmo_budget)},
          {"bmo_within_budget", b.bmo_within_budget},
          {"briand_hu_holds", b.briand_hu.holds},
          {"briand_hu_worst_margin", num(b.briand_hu.worst_margin)},
          {"briand_hu_violations", b.briand_hu.violations}};
}

inline void put_residual(ResultBundle& b, const BsvieResidual& r) {
  b.put("residual_expectation", r.expectation);
  b.put("residual_representation", r.representation);
  if (!std::isnan(r.pathwise)) b.put("residual_pathwise", r.pathwise);
}

/// Pure (q/2) z^2 generators: Y = ln E[e^{q psi}] / q is the exact discrete solution on binary drivers.
inline std::optional<double> pure_quadratic_q(const json& gspec) {
  const std::string name = gspec.at("name");
  if (name == "quadratic_half") return 1.0;
  if (name == "entropic") return 1.0 / gspec.at("gamma").get<double>();
  if (name == "entropic_weighted") return 2.0 * gspec.at("gbar").get<double>();
  return std::nullopt;
}

inline NodeFunction exponential_oracle(const Driver& driver, const NodeFunction& psi, double q, std::size_t k) {
  NodeFunction e = psi;
  e.kind = Measurability::adapted;
  double shift = -std::numeric_limits<double>::infinity();
  for (double v : e.values) shift = std::max(shift, q * v);
  for (double& v : e.values) v = std::exp(q * v - shift);
  NodeFunction out = driver.conditional_expectation(e, k);
  for (double& v : out.values) v = (std::log(v) + shift) / q;
  return out;
}

inline void run_type1(const json& config, ResultBundle& b) {
  const Driver driver = build_driver_from(config);
  const Generator g = build_generator(config.at("generator"));
  const PositionProcess psi = build_position(config.at("position"));
  if (g.uses_zprime) throw ValidationError("solve-type1: generator depends on z'; use solve-type2");
  const PicardConfig pc = picard_from(config, driver);
  const Type1Solution sol = g.uses_y ? solve_type1_general(driver, g, psi, pc) : solve_type1_special(driver, g, psi, pc.inner);
  b.Y = dump(sol.Y);
  for (std::size_t i = 0; i < sol.Z.size(); ++i)
    for (std::size_t j = i; j < sol.Z.size(); ++j) b.Z.push_back({i, j, sol.z(i, j).values});
  b.put("Y0", sol.Y[0][0]);
  b.put("picard_iterations", sol.picard.iterations);
  b.put("picard_max_ratio_after_first", sol.picard.max_ratio_after_first());
  put_residual(b, bsvie_residual(driver, g, psi, sol));
  b.diagnostics["bounds"] = bound_json(sol.bounds);
  b.diagnostics["picard"] = {{"differences", sol.picard.differences}, {"ratios", sol.picard.ratios},
                             {"tolerance", pc.tol}};

  if (const auto q = pure_quadratic_q(config.at("generator")); q && driver.is_binary()) {
    double err = 0.0;
    for (std::size_t i = 0; i <= driver.steps(); ++i) {
      const NodeFunction o = exponential_oracle(driver, driver.evaluate_position(psi, i), *q, i);
      for (std::size_t n = 0; n < o.size(); ++n) err = std::max(err, std::abs(o[n] - sol.Y[i][n]));
    }
    b.put("exponential_oracle_error", err);
    if (config.at("position").at("class") == "linear_terminal") {
      // Y(t) = a t W(t) + q a^2 t^2 (T - t) / 2
      const double a = config["position"]["a"], T = driver.grid().horizon();
      double cerr = 0.0;
      for (std::size_t i = 0; i <= driver.steps(); ++i) {
        const double t = driver.grid()[i];
        for (std::size_t n = 0; n < sol.Y[i].size(); ++n)
          cerr = std::max(cerr, std::abs(sol.Y[i][n] - (a * t * driver.w(i, n) + 0.5 * *q * a * a * t * t * (T - t))));
      }
      b.put("closed_form_error", cerr);
    }
  }
}

inline void run_type2(const json& config, ResultBundle& b) {
  const Driver driver = build_driver_from(config);
  const Generator g = build_generator(config.at("generator"));
  const PositionProcess psi = build_position(config.at("position"));
  OuterConfig oc = OuterConfig::for_driver(driver);
  oc.picard = picard_from(config, driver);
  const json tol = config.value("tolerances", json::object());
  oc.tol = tol.value("outer", oc.picard.tol);
  oc.max_iter = tol.value("outer_max_iter", oc.max_iter);
  const Type2MSolution sol = solve_type2_msolution(driver, g, psi, oc);
  b.Y = dump(sol.Y);
  for (std::size_t i = 0; i < sol.Z.size(); ++i)
    for (std::size_t j = 0; j < sol.Z.size(); ++j) b.Z.push_back({i, j, sol.z(i, j).values});
  b.put("Y0", sol.Y[0][0]);
  b.put("outer_iterations", sol.outer_iterations);
  const MResidual mr = msolution_residuals(sol, driver);
  b.put("msolution_residual", mr.sup);
  b.put("msolution_residual_rms", mr.rms);
  put_residual(b, bsvie_residual(driver, g, psi, sol));
  b.diagnostics["outer_changes"] = sol.outer_changes;
}

inline void run_partition(const json& config, ResultBundle& b) {
  const Driver driver = build_driver_from(config);
  const Generator g = build_generator(config.at("generator"));
  const PositionProcess psi = build_position(config.at("position"));
  const PicardConfig pc = picard_from(config, driver);
  const std::vector<std::size_t> levels = config.value("partition", json::object())
                                              .value("levels", std::vector<std::size_t>{2, 4, 8, 16, 32});
  const Type1Solution ref = g.uses_y ? solve_type1_general(driver, g, psi, pc) : solve_type1_special(driver, g, psi, pc.inner);
  b.Y = dump(ref.Y);
  std::optional<double> prev;
  bool nonincreasing = true;
  for (std::size_t np : levels) {
    const PartitionScheme ps = cascaded_partition_scheme(driver, g, psi, make_uniform_grid(driver.grid().horizon(), np),
                                                         pc.inner);
    const double err = sup_distance(ps.Y, ref.Y);
    Level l{np, err, std::nullopt};
    if (prev) {
      l.ratio = err > 0.0 ? *prev / err : std::numeric_limits<double>::infinity();
      if (!std::isfinite(*l.ratio)) l.ratio.reset();
      nonincreasing = nonincreasing && err <= *prev;
    }
    prev = err;
    b.convergence.push_back(l);
  }
  b.put("final_error", prev.value_or(0.0));
  b.put("picard_tolerance", pc.tol);
  b.put("nonincreasing", nonincreasing ? 1.0 : 0.0);
}

inline void run_risk(const json& config, ResultBundle& b) {
  const Driver driver = build_driver_from(config);
  const Generator g0 = build_generator(config.at("generator"));
  const json r = config.value("risk", json::object());
  const RiskMeasureSpec spec = make_risk_spec(r.value("r0", 0.0), g0, driver.grid().horizon());
  AxiomCheckConfig ac = AxiomCheckConfig::for_driver(driver);
  ac.picard = picard_from(config, driver);
  ac.instances = r.value("instances", ac.instances);
  ac.seed = r.value("seed", ac.seed);
  ac.tolerance = r.value("tolerance", ac.tolerance);
  const RiskReport rep = check_axioms(driver, spec, ac);
  b.y_label = "rho";
  if (config.contains("position")) {
    b.Y = dump(rho(driver, spec, build_position(config["position"]), ac.picard));
    b.put("rho0", b.Y[0][0]);
  }
  json verdicts = json::array();
  for (const auto& v : rep.verdicts) {
    b.put("worst_" + to_string(v.axiom), v.worst_violation);
    verdicts.push_back({{"axiom", to_string(v.axiom)},
                        {"claimed", v.claimed},
                        {"passed", v.passed()},
                        {"worst_violation", v.worst_violation},
                        {"tolerance", v.tolerance},
                        {"instances", v.instances},
                        {"witness_seed", v.witness_seed},
                        {"witness_step", v.witness_step},
                        {"witness_node", v.witness_node}});
  }
  b.put("all_claimed_pass", rep.all_claimed_pass() ? 1.0 : 0.0);
  b.put("discount_model_gap", rep.discount_model_gap);
  b.diagnostics["verdicts"] = verdicts;
  b.diagnostics["classification"] = {{"convex", spec.convex}, {"coherent", spec.coherent}};
  b.diagnostics["instance_seeds"] = {{"first", ac.seed}, {"count", ac.instances}};
}

inline void run_bsde_oracle(const json& config, ResultBundle& b) {
  const Generator g = build_generator(config.at("generator"));
  const json pos = config.value("position", json{{"class", "linear_terminal"}, {"a", 1.0}});
  const PositionProcess psi = build_position(pos);
  const auto q = pure_quadratic_q(config.at("generator"));
  auto solve_on = [&](const Driver& driver) {
    return solve_bsde(driver, g, driver.evaluate_position(psi, driver.steps()), picard_from(config, driver).inner);
  };
  // xi = psi(T); for xi = a T W(T) and g = (q/2) z^2, Y(0) = q a^2 T^3 / 2
  std::optional<double> continuum;
  const double T = config.value("horizon", 1.0);
  if (q && pos.at("class") == "linear_terminal") {
    const double a = pos["a"];
    continuum = 0.5 * *q * a * a * T * T * T;
  }

  const Driver driver = build_driver_from(config);
  const BsdeSolution sol = solve_on(driver);
  b.Y = dump(sol.Y);
  for (std::size_t j = 0; j < sol.Z.size(); ++j) b.Z.push_back({0, j, sol.Z[j].values});
  b.put("Y0", sol.Y[0][0]);
  if (continuum) {
    b.put("continuum_value", *continuum);
    b.put("continuum_error", std::abs(sol.Y[0][0] - *continuum));
  }
  if (q && driver.is_binary()) b.put("lattice_oracle_error", std::abs(exponential_oracle(driver, sol.xi, *q, 0)[0] - sol.Y[0][0]));
  const BoundReport br = briand_hu_bound_check(driver, sol, BriandHuCertificate{g.cert.gamma, g.cert.beta, g.cert.h});
  b.diagnostics["briand_hu_holds"] = br.holds;
  b.put("bmo", bmo_norm_estimate(driver, sol).value);

  if (config.contains("ladder")) {
    if (!continuum)
      throw ValidationError("bsde-oracle: a ladder needs a closed form (pure quadratic generator, linear_terminal position)");
    std::optional<double> prev;
    for (std::size_t n : config["ladder"].get<std::vector<std::size_t>>()) {
      const double err = std::abs(solve_on(build_driver_from(config, n)).Y[0][0] - *continuum);
      Level l{n, err, std::nullopt};
      if (prev && err > 0.0) l.ratio = *prev / err;
      prev = err;
      b.convergence.push_back(l);
    }
  }
}

/// The naive family: each outer t_i valued by its own BSDE on [0, T] with
/// terminal psi(t_i). Gap = max over t_i < t_r of |Y(t_i; t_r) - Y(t_r; t_r)|.
inline void run_inconsistency(const json& config, ResultBundle& b) {
  const Driver driver = build_driver_from(config);
  const Generator g = build_generator(config.at("generator"));
  const PositionProcess psi = build_position(config.at("position"));
  if (g.uses_zprime) throw ValidationError("inconsistency-demo: generator must not depend on z'");
  const PicardConfig pc = picard_from(config, driver);
  const Type1Solution sol = g.uses_y ? solve_type1_general(driver, g, psi, pc) : solve_type1_special(driver, g, psi, pc.inner);
  const BsvieResidual res = bsvie_residual(driver, g, psi, sol);

  const std::size_t N = driver.steps();
  ::qbsvie::detail::check_implicit_step(driver, g);
  std::vector<BsdeSolution> naive;
  naive.reserve(N + 1);
  for (std::size_t i = 0; i <= N; ++i)
    naive.push_back(::qbsvie::detail::solve_from(driver, g, driver.grid()[i], driver.evaluate_position(psi, i), 0,
                                                 nullptr, nullptr, pc.inner));
  double gap = 0.0;
  std::size_t wi = 0, wr = 0;
  for (std::size_t i = 0; i <= N; ++i)
    for (std::size_t r = i + 1; r <= N; ++r)
      for (std::size_t n = 0; n < driver.node_count(r); ++n) {
        const double d = std::abs(naive[i].Y[r][n] - naive[r].Y[r][n]);
        if (d > gap) {
          gap = d;
          wi = i;
          wr = r;
        }
      }
  std::vector<NodeFunction> naive_diag;
  for (std::size_t i = 0; i <= N; ++i) naive_diag.push_back(naive[i].Y[i]);
  b.Y = dump(sol.Y);
  b.put("Y0", sol.Y[0][0]);
  b.put("naive_gap", gap);
  b.put("naive_gap_outer", static_cast<double>(wi));
  b.put("naive_gap_time", static_cast<double>(wr));
  b.put("naive_diagonal_vs_bsvie", sup_distance(naive_diag, sol.Y));
  b.put("solver_tolerance", pc.tol);
  b.put("bsvie_consistency_residual", res.expectation);
  put_residual(b, res);
  b.diagnostics["naive_diagonal"] = dump(naive_diag);
}

}  // namespace detail

/// Validates `config` and runs its experiment.
inline ResultBundle run(const json& config) {
  validate_config(config);
  ResultBundle b;
  b.experiment = config.at("experiment");
  b.config = config;
  b.horizon = config.value("horizon", 1.0);
  b.provenance.config_hash = config_hash(config);
  b.provenance.seed = config.at("driver").value("seed", DriverSpec{}.seed);
  const std::string& e = b.experiment;
  if (e != "risk-axioms" && e != "bsde-oracle" && !config.contains("position"))
    throw ValidationError("config: experiment '" + e + "' needs a position");
  try {
    if (e == "solve-type1") detail::run_type1(config, b);
    else if (e == "solve-type2") detail::run_type2(config, b);
    else if (e == "partition-convergence") detail::run_partition(config, b);
    else if (e == "risk-axioms") detail::run_risk(config, b);
    else if (e == "bsde-oracle") detail::run_bsde_oracle(config, b);
    else detail::run_inconsistency(config, b);
  } catch (const SolverFailure& f) {
    throw SolverFailure(f.what(), "experiment " + e + ": " + f.where(), f.history());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot open for writing", p.string());
  os.precision(17);
  return os;
}

inline void close_out(std::ofstream& os, const std::filesystem::path& p) {
  os.flush();
  if (!os) throw IoError("write failed", p.string());
}

inline void csv_header(std::ostream& os, const ResultBundle& b) {
  os << "# experiment=" << b.experiment << " config_hash=" << b.provenance.config_hash
     << " seed=" << b.provenance.seed << " version=" << b.provenance.version << "\n";
}

inline void stats(std::ostream& os, const std::vector<double>& v) {
  double lo = v.empty() ? 0.0 : v[0], hi = lo;
  long double acc = 0.0L;
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    acc += x;
  }
  os << static_cast<double>(v.empty() ? 0.0L : acc / static_cast<long double>(v.size())) << "," << lo << "," << hi
     << ",";
  for (std::size_t k = 0; k < v.size(); ++k) os << (k ? " " : "") << v[k];
}

}  // namespace detail

/// Writes bundle.json and/or y.csv, z.csv, convergence.csv under `dir`.
/// Returns the paths written.
inline std::vector<std::filesystem::path> emit(const ResultBundle& b, const std::filesystem::path& dir,
                                               const std::string& format) {
  if (format != "json" && format != "csv" && format != "both")
    throw ValidationError("emit: format must be json | csv | both");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory (" + ec.message() + ")", dir.string());
  std::vector<std::filesystem::path> written;
  if (format != "csv") {
    const auto p = dir / "bundle.json";
    auto os = detail::open_out(p);
    os << json(b).dump(2) << "\n";
    detail::close_out(os, p);
    written.push_back(p);
  }
  if (format != "json") {
    const double dt = b.Y.size() > 1 ? b.horizon / static_cast<double>(b.Y.size() - 1) : b.horizon;
    if (!b.Y.empty()) {
      const auto p = dir / "y.csv";
      auto os = detail::open_out(p);
      detail::csv_header(os, b);
      os << "i,t,mean,min,max,nodes\n";
      for (std::size_t i = 0; i < b.Y.size(); ++i) {
        os << i << "," << static_cast<double>(i) * dt << ",";
        detail::stats(os, b.Y[i]);
        os << "\n";
      }
      detail::close_out(os, p);
      written.push_back(p);
    }
    if (!b.Z.empty()) {
      const auto p = dir / "z.csv";
      auto os = detail::open_out(p);
      detail::csv_header(os, b);
      os << "i,j,t,s,mean,min,max,nodes\n";
      for (const ZRow& r : b.Z) {
        os << r.i << "," << r.j << "," << static_cast<double>(r.i) * dt << "," << static_cast<double>(r.j) * dt << ",";
        detail::stats(os, r.values);
        os << "\n";
      }
      detail::close_out(os, p);
      written.push_back(p);
    }
    if (!b.convergence.empty()) {
      const auto p = dir / "convergence.csv";
      auto os = detail::open_out(p);
      detail::csv_header(os, b);
      os << "N,error,ratio\n";
      for (const Level& l : b.convergence) {
        os << l.N << "," << l.error << ",";
        if (l.ratio) os << *l.ratio;
        os << "\n";
      }
      detail::close_out(os, p);
      written.push_back(p);
    }
  }
  return written;
}

}  // namespace qbsvie::app

#endif  // QBSVIE_APP_HPP
