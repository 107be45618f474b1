#pragma once

#include <cmath>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <toml.hpp>

#include "measure_flow/curve.hpp"
#include "measure_flow/error.hpp"
#include "measure_flow/io.hpp"
#include "measure_flow/kernels.hpp"
#include "measure_flow/measure.hpp"
#include "measure_flow/nonlinear_solver.hpp"

namespace measure_flow {

struct WeightSpec {
  std::string kind = "unit";  // unit | exponential | piecewise | polynomial | auto
  double rate = 0.0;
  std::vector<double> rates;
  double target = 0.1;        // contraction target for auto
  bool combined = false;      // min with the polynomial-exponential weight
};

struct SolverSpec {
  double tol = 1e-10;
  std::size_t max_iter = 80;
  CurveNorm norm = CurveNorm::flat;
};

struct SweepSpec {
  std::string objective = "mass_in_region";  // mass_in_region | exit_time
  std::vector<double> region_lower, region_upper;
  double ramp_width = 0.1;
  double time = 0.0;        // evaluation time of mass_in_region; 0 means t_end
  double threshold = 0.5;   // exit_time: fraction of the initial region mass
  double h_min = -0.4, h_max = 0.4;
  std::size_t h_count = 9;
  double lambda = 1e-3;
};

struct ExperimentSpec {
  std::string kind = "solve";  // solve | sensitivity | counterexample | validate | sweep
  std::optional<std::vector<double>> exact_velocity;  // solve: particles should move at this speed
  double h = 0.0;
  double lambda0 = 0.1;
  std::size_t rungs = 6;
  CurveNorm norm = CurveNorm::z_upper;
  double decay_lambda = 1e-2;
  std::size_t decay_steps = 6;
  std::vector<double> continuity_h;
  double derivative_lambda = 1e-3;
  std::optional<std::pair<std::string, Params>> pairing;  // f(x_1) for <q, f>
  SweepSpec sweep;
};

struct ValidateSpec {
  std::optional<double> declared_sup_m_plus;
};

struct ScenarioConfig {
  std::string name;
  std::filesystem::path source_dir;
  std::size_t dim = 1;
  ParticleMeasure initial_measure;
  FieldModel model{1, zero_coefficient(1, 1), zero_coefficient(1, 1), zero_coefficient(1, 1), zero_coefficient(1, 1)};
  TimeGrid grid;
  double alpha = 0.5;
  WeightSpec weight;
  SolverSpec solver;
  ExperimentSpec experiment;
  ValidateSpec validate;
};

namespace detail {

// Reads typed values and reports failures by dotted key and source line.
class ConfigReader {
 public:
  explicit ConfigReader(std::string file) : file_(std::move(file)) {}

  [[noreturn]] void fail(const std::string& key, const toml::node* at, const std::string& msg) const {
    std::string where = "`" + key + "`";
    if (at != nullptr && at->source().begin.line > 0) where += " (" + file_ + " line " + std::to_string(at->source().begin.line) + ")";
    throw Error(Errc::config_error, where + ": " + msg);
  }

  static std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
  }

  void allow_only(const toml::table& t, const std::string& prefix, std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto&& [k, v] : t) {
      if (!ok.count(std::string(k.str()))) {
        std::string list;
        for (const char* s : keys) list += std::string(list.empty() ? "" : ", ") + s;
        fail(join(prefix, std::string(k.str())), &v, "unknown key (valid: " + list + ")");
      }
    }
  }

  const toml::table* table(const toml::table& t, const std::string& prefix, const char* key, bool required) const {
    const toml::node* n = t.get(key);
    if (n == nullptr) {
      if (required) fail(join(prefix, key), &t, "missing required table");
      return nullptr;
    }
    if (!n->is_table()) fail(join(prefix, key), n, "expected a table");
    return n->as_table();
  }

  std::optional<double> number(const toml::table& t, const std::string& prefix, const char* key) const {
    const toml::node* n = t.get(key);
    if (n == nullptr) return std::nullopt;
    if (!n->is_number()) fail(join(prefix, key), n, "expected a number");
    const double v = n->value<double>().value();
    if (!std::isfinite(v)) fail(join(prefix, key), n, "value is not finite");
    return v;
  }

  double number(const toml::table& t, const std::string& prefix, const char* key, double fallback) const {
    return number(t, prefix, key).value_or(fallback);
  }

  double required_number(const toml::table& t, const std::string& prefix, const char* key) const {
    auto v = number(t, prefix, key);
    if (!v) fail(join(prefix, key), &t, "missing required key");
    return *v;
  }

  std::size_t count(const toml::table& t, const std::string& prefix, const char* key, std::size_t fallback) const {
    const toml::node* n = t.get(key);
    if (n == nullptr) return fallback;
    if (!n->is_integer() || n->value<std::int64_t>().value() < 0) fail(join(prefix, key), n, "expected a non-negative integer");
    return static_cast<std::size_t>(n->value<std::int64_t>().value());
  }

  std::optional<std::string> string(const toml::table& t, const std::string& prefix, const char* key) const {
    const toml::node* n = t.get(key);
    if (n == nullptr) return std::nullopt;
    if (!n->is_string()) fail(join(prefix, key), n, "expected a string");
    return n->value<std::string>().value();
  }

  std::optional<bool> boolean(const toml::table& t, const std::string& prefix, const char* key) const {
    const toml::node* n = t.get(key);
    if (n == nullptr) return std::nullopt;
    if (!n->is_boolean()) fail(join(prefix, key), n, "expected true or false");
    return n->value<bool>().value();
  }

  std::vector<double> numbers(const toml::node& n, const std::string& key) const {
    const toml::array* a = n.as_array();
    if (a == nullptr) fail(key, &n, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *a) {
      if (!e.is_number()) fail(key, &e, "expected an array of numbers");
      out.push_back(e.value<double>().value());
      if (!std::isfinite(out.back())) fail(key, &e, "value is not finite");
    }
    return out;
  }

  std::optional<std::vector<double>> numbers(const toml::table& t, const std::string& prefix, const char* key) const {
    const toml::node* n = t.get(key);
    if (n == nullptr) return std::nullopt;
    return numbers(*n, join(prefix, key));
  }

  // { name = "...", <param> = <number>, ... }
  std::pair<std::string, Params> named(const toml::node& n, const std::string& key) const {
    if (n.is_string()) return {n.value<std::string>().value(), {}};
    const toml::table* t = n.as_table();
    if (t == nullptr) fail(key, &n, "expected a name string or a { name = ..., ... } table");
    auto name = string(*t, key, "name");
    if (!name) fail(join(key, "name"), t, "missing required key");
    Params p;
    for (auto&& [k, v] : *t) {
      if (k.str() == "name") continue;
      if (!v.is_number()) fail(join(key, std::string(k.str())), &v, "parameters must be numbers");
      p[std::string(k.str())] = v.value<double>().value();
    }
    return {*name, p};
  }

  // Rethrows a registry error under this key without doubling the error prefix.
  [[noreturn]] void rethrow(const std::string& key, const toml::node* at, const Error& e) const {
    std::string msg = e.what();
    const std::string prefix = std::string(errc_name(e.code())) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    fail(key, at, msg);
  }

  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

inline Coefficient read_coefficient(const ConfigReader& r, const toml::table* t, const std::string& key, std::size_t dim,
                                    std::size_t components) {
  if (t == nullptr) return zero_coefficient(dim, components);
  r.allow_only(*t, key, {"outer", "kernel"});
  Coefficient c;
  const toml::node* kn = t->get("kernel");
  try {
    if (kn == nullptr) {
      c.kernel = gaussian_kernel(dim, 1.0);
    } else {
      auto [name, p] = r.named(*kn, key + ".kernel");
      c.kernel = make_kernel(name, dim, p);
    }
  } catch (const Error& e) {
    if (e.code() != Errc::config_error) throw;
    r.rethrow(key + ".kernel", kn, e);
  }
  const toml::node* on = t->get("outer");
  if (on == nullptr) r.fail(key + ".outer", t, "missing required key");
  std::vector<const toml::node*> parts;
  if (const toml::array* a = on->as_array()) {
    for (const auto& e : *a) parts.push_back(&e);
  } else {
    parts.push_back(on);
  }
  if (parts.size() != components) {
    r.fail(key + ".outer", on, "expected " + std::to_string(components) + " outer function" + (components == 1 ? "" : "s"));
  }
  for (const toml::node* p : parts) {
    auto [name, params] = r.named(*p, key + ".outer");
    try {
      c.components.push_back(make_outer(name, params));
    } catch (const Error& e) {
      if (e.code() != Errc::config_error) throw;
      r.rethrow(key + ".outer", p, e);
    }
  }
  return c;
}

inline ParticleMeasure read_initial_measure(const ConfigReader& r, const toml::table& t, std::size_t dim,
                                            const std::filesystem::path& base) {
  r.allow_only(t, "initial_measure", {"csv", "positions", "weights"});
  if (auto csv = r.string(t, "initial_measure", "csv")) {
    if (t.get("positions") || t.get("weights")) r.fail("initial_measure", &t, "give either `csv` or `positions`/`weights`");
    std::filesystem::path p(*csv);
    if (p.is_relative()) p = base / p;
    try {
      ParticleMeasure mu = read_measure_csv(p.string(), dim);
      if (mu.dim() != dim) r.fail("initial_measure.csv", t.get("csv"), "measure dimension differs from `dim`");
      return mu;
    } catch (const Error& e) {
      if (e.code() == Errc::config_error) throw;
      r.rethrow("initial_measure.csv", t.get("csv"), e);
    }
  }
  const toml::node* pn = t.get("positions");
  if (pn == nullptr) r.fail("initial_measure.positions", &t, "missing required key (or give `csv`)");
  const toml::array* pa = pn->as_array();
  if (pa == nullptr) r.fail("initial_measure.positions", pn, "expected an array");
  std::vector<double> coords;
  for (const auto& e : *pa) {
    if (e.is_number()) {
      if (dim != 1) r.fail("initial_measure.positions", &e, "each position needs " + std::to_string(dim) + " coordinates");
      coords.push_back(e.value<double>().value());
    } else {
      auto p = r.numbers(e, "initial_measure.positions");
      if (p.size() != dim) r.fail("initial_measure.positions", &e, "each position needs " + std::to_string(dim) + " coordinates");
      coords.insert(coords.end(), p.begin(), p.end());
    }
  }
  auto weights = r.numbers(t, "initial_measure", "weights");
  if (!weights) r.fail("initial_measure.weights", &t, "missing required key");
  if (weights->size() * dim != coords.size()) r.fail("initial_measure.weights", t.get("weights"), "one weight per position required");
  return ParticleMeasure(dim, std::move(coords), std::move(*weights));
}

inline WeightSpec read_weight(const ConfigReader& r, const toml::node* n) {
  WeightSpec w;
  if (n == nullptr) return w;
  if (n->is_string()) {
    w.kind = n->value<std::string>().value();
  } else if (const toml::table* t = n->as_table()) {
    r.allow_only(*t, "weight", {"kind", "rate", "rates", "target", "combined"});
    w.kind = r.string(*t, "weight", "kind").value_or("unit");
    w.rate = r.number(*t, "weight", "rate", 0.0);
    w.rates = r.numbers(*t, "weight", "rates").value_or(std::vector<double>{});
    w.target = r.number(*t, "weight", "target", 0.1);
    w.combined = r.boolean(*t, "weight", "combined").value_or(false);
    if (w.kind == "auto" && !(w.target > 0.0 && w.target < 1.0)) r.fail("weight.target", t, "must lie in (0, 1)");
    if (w.kind == "piecewise" && w.rates.empty()) r.fail("weight.rates", t, "missing required key");
  } else {
    r.fail("weight", n, "expected a kind string or a table");
  }
  if (w.kind != "unit" && w.kind != "exponential" && w.kind != "piecewise" && w.kind != "polynomial" && w.kind != "auto") {
    r.fail("weight.kind", n, "unknown weight `" + w.kind + "` (valid: unit, exponential, piecewise, polynomial, auto)");
  }
  return w;
}

inline CurveNorm read_norm(const ConfigReader& r, const toml::table& t, const std::string& prefix, CurveNorm fallback) {
  auto s = r.string(t, prefix, "norm");
  if (!s) return fallback;
  try {
    return parse_curve_norm(*s);
  } catch (const Error& e) {
    r.rethrow(ConfigReader::join(prefix, "norm"), t.get("norm"), e);
  }
}

inline void check_h(const ConfigReader& r, const toml::table& t, const std::string& key, double h) {
  if (!(h > -0.5 && h < 0.5)) r.fail(key, t.get(key.substr(key.rfind('.') + 1)), "must lie in (-1/2, 1/2)");
}

inline ExperimentSpec read_experiment(const ConfigReader& r, const toml::table* t, std::size_t dim, double model_h) {
  ExperimentSpec e;
  e.h = model_h;
  if (t == nullptr) return e;
  const std::string P = "experiment";
  e.kind = r.string(*t, P, "kind").value_or("solve");
  if (e.kind == "solve") {
    r.allow_only(*t, P, {"kind", "exact_velocity"});
    e.exact_velocity = r.numbers(*t, P, "exact_velocity");
    if (e.exact_velocity && e.exact_velocity->size() != dim) r.fail("experiment.exact_velocity", t, "needs one entry per axis");
  } else if (e.kind == "sensitivity" || e.kind == "counterexample") {
    r.allow_only(*t, P, {"kind", "h", "lambda0", "rungs", "norm", "decay_lambda", "decay_steps", "continuity_h",
                         "derivative_lambda", "pairing"});
    e.h = r.number(*t, P, "h", e.kind == "counterexample" ? 0.1 : model_h);
    check_h(r, *t, "experiment.h", e.h);
    e.lambda0 = r.number(*t, P, "lambda0", 0.1);
    if (!(e.lambda0 > 0.0)) r.fail("experiment.lambda0", t, "must be positive");
    e.rungs = r.count(*t, P, "rungs", 6);
    if (e.rungs < 3) r.fail("experiment.rungs", t, "at least 3 rungs are needed");
    e.norm = read_norm(r, *t, P, CurveNorm::z_upper);
    e.decay_lambda = r.number(*t, P, "decay_lambda", 1e-2);
    e.decay_steps = r.count(*t, P, "decay_steps", e.kind == "sensitivity" ? 6 : 0);
    e.continuity_h = r.numbers(*t, P, "continuity_h").value_or(std::vector<double>{});
    for (double h : e.continuity_h) {
      if (!(h > -0.5 && h < 0.5)) r.fail("experiment.continuity_h", t, "entries must lie in (-1/2, 1/2)");
    }
    e.derivative_lambda = r.number(*t, P, "derivative_lambda", 1e-3);
    if (const toml::node* p = t->get("pairing")) {
      e.pairing = r.named(*p, "experiment.pairing");
      try {
        make_outer(e.pairing->first, e.pairing->second);
      } catch (const Error& err) {
        r.rethrow("experiment.pairing", p, err);
      }
    }
  } else if (e.kind == "validate") {
    r.allow_only(*t, P, {"kind"});
  } else if (e.kind == "sweep") {
    r.allow_only(*t, P, {"kind", "objective", "region_lower", "region_upper", "ramp_width", "time", "threshold", "h_min",
                         "h_max", "h_count", "lambda"});
    SweepSpec& s = e.sweep;
    s.objective = r.string(*t, P, "objective").value_or("mass_in_region");
    if (s.objective != "mass_in_region" && s.objective != "exit_time") {
      r.fail("experiment.objective", t->get("objective"),
             "unknown objective `" + s.objective + "` (valid: mass_in_region, exit_time)");
    }
    auto lo = r.numbers(*t, P, "region_lower");
    auto hi = r.numbers(*t, P, "region_upper");
    if (!lo) r.fail("experiment.region_lower", t, "missing required key");
    if (!hi) r.fail("experiment.region_upper", t, "missing required key");
    if (lo->size() != dim || hi->size() != dim) r.fail("experiment.region_lower", t, "region bounds need one entry per axis");
    for (std::size_t k = 0; k < dim; ++k) {
      if (!((*lo)[k] < (*hi)[k])) r.fail("experiment.region_upper", t, "must exceed region_lower on every axis");
    }
    s.region_lower = *lo;
    s.region_upper = *hi;
    s.ramp_width = r.number(*t, P, "ramp_width", 0.1);
    if (!(s.ramp_width > 0.0)) r.fail("experiment.ramp_width", t, "must be positive");
    s.time = r.number(*t, P, "time", 0.0);
    s.threshold = r.number(*t, P, "threshold", 0.5);
    if (!(s.threshold > 0.0 && s.threshold < 1.0)) r.fail("experiment.threshold", t, "must lie in (0, 1)");
    s.h_min = r.number(*t, P, "h_min", -0.4);
    s.h_max = r.number(*t, P, "h_max", 0.4);
    check_h(r, *t, "experiment.h_min", s.h_min);
    check_h(r, *t, "experiment.h_max", s.h_max);
    if (!(s.h_min < s.h_max)) r.fail("experiment.h_max", t, "must exceed h_min");
    s.h_count = r.count(*t, P, "h_count", 9);
    if (s.h_count < 2) r.fail("experiment.h_count", t, "at least 2 samples are needed");
    s.lambda = r.number(*t, P, "lambda", 1e-3);
    if (!(s.lambda > 0.0)) r.fail("experiment.lambda", t, "must be positive");
  } else {
    r.fail("experiment.kind", t->get("kind"),
           "unknown experiment `" + e.kind + "` (valid: solve, sensitivity, counterexample, validate, sweep)");
  }
  return e;
}

}  // namespace detail

inline ScenarioConfig parse_config(const toml::table& root, const std::string& file,
                                   const std::filesystem::path& base_dir) {
  detail::ConfigReader r(file);
  r.allow_only(root, "", {"name", "dim", "alpha", "initial_measure", "model", "grid", "weight", "solver", "experiment",
                          "validate"});
  ScenarioConfig c;
  c.source_dir = base_dir;
  c.name = r.string(root, "", "name").value_or(std::filesystem::path(file).stem().string());

  const std::size_t dim = r.count(root, "", "dim", 1);
  if (dim == 0) r.fail("dim", root.get("dim"), "must be at least 1");
  c.dim = dim;
  c.alpha = r.number(root, "", "alpha", 0.5);
  if (!(c.alpha > 0.0 && c.alpha <= 1.0)) r.fail("alpha", root.get("alpha"), "must lie in (0, 1]");

  const toml::table* grid = r.table(root, "", "grid", true);
  r.allow_only(*grid, "grid", {"t_end", "dt"});
  const double t_end = r.required_number(*grid, "grid", "t_end");
  const double dt = r.required_number(*grid, "grid", "dt");
  if (!(dt > 0.0)) r.fail("grid.dt", grid->get("dt"), "must be positive");
  if (!(t_end > 0.0)) r.fail("grid.t_end", grid->get("t_end"), "must be positive");
  try {
    c.grid = TimeGrid(t_end, dt);
  } catch (const Error& e) {
    r.rethrow("grid", grid, e);
  }

  const toml::table* mu = r.table(root, "", "initial_measure", true);
  c.initial_measure = detail::read_initial_measure(r, *mu, dim, base_dir);

  const toml::table* model = r.table(root, "", "model", true);
  r.allow_only(*model, "model", {"h", "v0", "v1", "m0", "m1", "crowd"});
  const double h = r.number(*model, "model", "h", 0.0);
  detail::check_h(r, *model, "model.h", h);
  Coefficient v0 = detail::read_coefficient(r, r.table(*model, "model", "v0", false), "model.v0", dim, dim);
  Coefficient v1 = detail::read_coefficient(r, r.table(*model, "model", "v1", false), "model.v1", dim, dim);
  Coefficient m0 = detail::read_coefficient(r, r.table(*model, "model", "m0", false), "model.m0", dim, 1);
  Coefficient m1 = detail::read_coefficient(r, r.table(*model, "model", "m1", false), "model.m1", dim, 1);
  c.model = FieldModel(dim, std::move(v0), std::move(v1), std::move(m0), std::move(m1), h);
  if (const toml::table* crowd = r.table(*model, "model", "crowd", false)) {
    r.allow_only(*crowd, "model.crowd", {"strength", "radius", "default_heading"});
    if (dim != 2) r.fail("model.crowd", crowd, "the crowd term needs dim = 2");
    CrowdTerm ct;
    ct.strength = r.number(*crowd, "model.crowd", "strength", 1.0);
    ct.radius = r.number(*crowd, "model.crowd", "radius", 1.0);
    if (!(ct.radius > 0.0)) r.fail("model.crowd.radius", crowd, "must be positive");
    ct.default_heading = r.numbers(*crowd, "model.crowd", "default_heading").value_or(std::vector<double>{1.0, 0.0});
    if (ct.default_heading.size() != 2) r.fail("model.crowd.default_heading", crowd, "needs two entries");
    c.model.set_crowd(ct);
  }

  c.weight = detail::read_weight(r, root.get("weight"));

  if (const toml::table* s = r.table(root, "", "solver", false)) {
    r.allow_only(*s, "solver", {"tol", "max_iter", "norm"});
    c.solver.tol = r.number(*s, "solver", "tol", c.solver.tol);
    if (!(c.solver.tol > 0.0)) r.fail("solver.tol", s, "must be positive");
    c.solver.max_iter = r.count(*s, "solver", "max_iter", c.solver.max_iter);
    if (c.solver.max_iter == 0) r.fail("solver.max_iter", s, "must be positive");
    c.solver.norm = detail::read_norm(r, *s, "solver", c.solver.norm);
  }

  c.experiment = detail::read_experiment(r, r.table(root, "", "experiment", false), dim, h);

  if (const toml::table* v = r.table(root, "", "validate", false)) {
    r.allow_only(*v, "validate", {"declared_sup_m_plus"});
    c.validate.declared_sup_m_plus = r.number(*v, "validate", "declared_sup_m_plus");
  }
  return c;
}

inline ScenarioConfig parse_config_string(const std::string& text, const std::string& name = "<string>",
                                          const std::filesystem::path& base_dir = ".") {
  try {
    const toml::table root = toml::parse(text, name);
    return parse_config(root, name, base_dir);
  } catch (const toml::parse_error& e) {
    throw Error(Errc::config_error, name + " line " + std::to_string(e.source().begin.line) + ": " +
                                        std::string(e.description()));
  }
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::config_error, "cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::filesystem::path p(path);
  return parse_config_string(ss.str(), p.filename().string(), p.has_parent_path() ? p.parent_path() : ".");
}

// ---------------------------------------------------------------------------------------

inline WeightFunction weight_from_spec(const ScenarioConfig& c, const FieldModel& model) {
  const WeightSpec& w = c.weight;
  WeightFunction out;
  if (w.kind == "unit") {
    out = unit_weight();
  } else if (w.kind == "exponential") {
    out = exponential_weight(w.rate);
  } else if (w.kind == "piecewise") {
    out = piecewise_exponential_weight(w.rates);
  } else if (w.kind == "polynomial") {
    out = polynomial_exponential_weight(w.rate);
  } else {
    CalibrationOptions opt;
    opt.distance = {c.solver.norm, c.alpha};
    out = calibrate_weight(model, c.initial_measure, c.grid, w.target, opt);
  }
  return w.combined ? combined_weight(out) : out;
}

}  // namespace measure_flow
