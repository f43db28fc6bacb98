#pragma once

// Scenario configuration and orchestration behind the command-line tool.
//
// A scenario is a JSON object. Every kind accepts "seed" and "checks"; the
// other keys depend on the kind (see README.md for the schema). Unknown keys
// are rejected. `resolve` validates everything before `run` writes anything.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "emf/consumption.hpp"
#include "emf/equivalence.hpp"
#include "emf/io.hpp"
#include "emf/lq.hpp"
#include "emf/measures.hpp"
#include "emf/mfsde.hpp"
#include "emf/quadrature.hpp"
#include "emf/rng.hpp"
#include "emf/version.hpp"

namespace emf::scenario {

using json = nlohmann::ordered_json;

/// Configuration that violates a precondition. Maps to exit status 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Kind { norm_suite, picard, lq, consumption, mp_verify };

inline std::string kind_name(Kind k) {
  switch (k) {
    case Kind::norm_suite: return "norm-suite";
    case Kind::picard: return "picard";
    case Kind::lq: return "lq";
    case Kind::consumption: return "consumption";
    case Kind::mp_verify: return "mp-verify";
  }
  return "";
}

inline Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::norm_suite, Kind::picard, Kind::lq, Kind::consumption, Kind::mp_verify}) {
    if (kind_name(k) == s) return k;
  }
  throw ConfigError("unknown scenario kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Reading JSON objects with defaults and strict key checking
// ---------------------------------------------------------------------------

class Block {
 public:
  Block(const json& j, std::string path) : path_(std::move(path)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ConfigError(path_ + " must be a JSON object");
    j_ = j;
  }

  double number(const std::string& key, double fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(where(key) + " must be finite");
    return d;
  }

  double positive(const std::string& key, double fallback) {
    const double d = number(key, fallback);
    if (!(d > 0.0)) throw ConfigError(where(key) + " must be > 0 (got " + io::format_double(d) + ")");
    return d;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t min) {
    used_.insert(key);
    std::int64_t v = fallback;
    if (j_.contains(key)) {
      const auto& x = j_.at(key);
      if (!x.is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      v = x.get<std::int64_t>();
    }
    if (v < min) {
      throw ConfigError(where(key) + " must be >= " + std::to_string(min) + " (got " +
                        std::to_string(v) + ")");
    }
    return v;
  }

  std::string string(const std::string& key, const std::string& fallback,
                     const std::vector<std::string>& allowed) {
    used_.insert(key);
    std::string v = fallback;
    if (j_.contains(key)) {
      if (!j_.at(key).is_string()) throw ConfigError(where(key) + " must be a string");
      v = j_.at(key).get<std::string>();
    }
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      throw ConfigError(where(key) + " has unsupported value '" + v + "'");
    }
    return v;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(where(key) + " must be an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }

  const json* child(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  /// Rejects keys that were never read.
  void finish() const {
    std::vector<std::string> unknown;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) unknown.push_back(it.key());
    }
    if (!unknown.empty()) {
      std::string msg = "unknown key";
      if (unknown.size() > 1) msg += "s";
      msg += " in " + path_ + ":";
      for (const auto& k : unknown) msg += " '" + k + "'";
      throw ConfigError(msg);
    }
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

 private:
  json j_ = json::object();
  std::string path_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Typed configuration
// ---------------------------------------------------------------------------

struct CheckSpec {
  std::string name;
  double threshold = 0.0;
};

struct GridSpec {
  double t_end = 1.0;
  double dt = 1e-3;
};

struct NormSuite {
  NormConfig norm;
  double dirac_at = 0.0;
  double dirac_y_max = 400.0;
  std::int64_t pairs = 1000;
  std::int64_t sample_size = 20;
};

struct PicardScenario {
  GridSpec grid;
  std::int64_t particles = 10000;
  double picard_tol = 1e-10;
  std::int64_t picard_max_iters = 50;
  std::int64_t export_particles = 20;
  // drift a E[X] + b x + c; diffusion s + v x; jumps gamma = g * mark
  double x0 = 1.0;
  double mean_coef = 1.0;
  double state_coef = 0.0;
  double constant = 0.0;
  double sigma = 0.5;
  double sigma_state = 0.0;
  std::vector<JumpAtom> jumps;
  double jump_scale = 0.0;
};

struct LQScenario {
  GridSpec grid;
  std::int64_t particles = 1000;
  double picard_tol = 1e-10;
  std::int64_t picard_max_iters = 50;
  lq::LQParams params;
  std::vector<double> lambdas = {0.1};
};

struct ConsumptionScenario {
  GridSpec grid{40.0, 1e-2};
  std::int64_t particles = 1000;
  consumption::ConsumptionParams params;
  std::vector<double> ladder = {5.0, 10.0, 20.0, 40.0};
  std::string mode = "lift";
  std::int64_t volterra_particles = 8;
};

struct MpScenario {
  std::vector<std::string> examples = {"lq", "consumption"};
  double perturbation = 0.1;
  std::int64_t directions = 5;
  equivalence::Thresholds thresholds;
  LQScenario lq;
  ConsumptionScenario consumption;
};

struct ScenarioConfig {
  Kind kind = Kind::norm_suite;
  std::uint64_t seed = 1;
  NormSuite norm;
  PicardScenario picard;
  LQScenario lq;
  ConsumptionScenario consumption;
  MpScenario mp;
  std::vector<CheckSpec> checks;
  json resolved;  // canonical form with defaults filled in
};

/// Per-subcommand overrides from command-line flags, keyed by parameter name.
using Overrides = std::map<std::string, double>;

namespace detail {

inline GridSpec read_grid(Block& parent, GridSpec fallback, const std::string& path) {
  const json* g = parent.child("grid");
  Block b(g ? *g : json(), path + ".grid");
  GridSpec out;
  out.t_end = b.positive("t_end", fallback.t_end);
  out.dt = b.positive("dt", fallback.dt);
  b.finish();
  try {
    TimeGrid(out.t_end, out.dt);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ".grid: " + e.what());
  }
  return out;
}

inline json grid_json(const GridSpec& g) { return json{{"t_end", g.t_end}, {"dt", g.dt}}; }

inline void apply(const Overrides& o, const std::string& key, double& target) {
  if (auto it = o.find(key); it != o.end()) target = it->second;
}

inline void apply_int(const Overrides& o, const std::string& key, std::int64_t& target) {
  if (auto it = o.find(key); it != o.end()) target = static_cast<std::int64_t>(it->second);
}

/// Default check names and thresholds per kind.
inline std::vector<CheckSpec> default_checks(Kind k) {
  switch (k) {
    case Kind::norm_suite:
      return {{"c0_constant", 1e-8}, {"dirac_norm", 1e-6}, {"lipschitz_bound", 0.0}};
    case Kind::picard:
      return {{"converged", 0.0}, {"contraction", 1.0}, {"mean_oracle", 3.0}};
    case Kind::lq:
      return {{"fixed_point_residual", 1e-9},
              {"directional_optimality", 0.0},
              {"necessary_residual", 5e-2},
              {"mean_tracking", 1.0}};
    case Kind::consumption:
      return {{"budget_equality", 1e-6},
              {"adjoint_identity", 1e-12},
              {"necessary_residual", 1e-10},
              {"admissible", 1.0},
              {"transversality_decay", 0.05}};
    case Kind::mp_verify:
      return {{"equivalence", 0.0}};
  }
  return {};
}

inline std::vector<CheckSpec> read_checks(const json* j, Kind kind) {
  const auto defaults = default_checks(kind);
  if (!j) return defaults;
  if (!j->is_array()) throw ConfigError("checks must be an array");
  std::vector<CheckSpec> out;
  for (const auto& item : *j) {
    std::string name;
    std::optional<double> threshold;
    if (item.is_string()) {
      name = item.get<std::string>();
    } else {
      Block b(item, "checks[]");
      name = b.string("name", "", [&] {
        std::vector<std::string> names;
        for (const auto& d : defaults) names.push_back(d.name);
        return names;
      }());
      if (b.has("threshold")) threshold = b.number("threshold", 0.0);
      b.finish();
    }
    auto it = std::find_if(defaults.begin(), defaults.end(),
                           [&](const CheckSpec& c) { return c.name == name; });
    if (it == defaults.end()) {
      throw ConfigError("check '" + name + "' is not available for " + kind_name(kind));
    }
    out.push_back({name, threshold.value_or(it->threshold)});
  }
  return out;
}

inline json checks_json(const std::vector<CheckSpec>& checks) {
  json out = json::array();
  for (const auto& c : checks) out.push_back(json{{"name", c.name}, {"threshold", c.threshold}});
  return out;
}

inline LQScenario read_lq(Block& top, const json* block, const Overrides& o,
                          const std::string& path, LQScenario d = {}) {
  Block b(block ? *block : json(), path);
  LQScenario s = d;
  s.params.b0 = b.number("b0", d.params.b0);
  s.params.sigma0 = b.number("sigma0", d.params.sigma0);
  s.params.x0 = b.number("x0", d.params.x0);
  s.lambdas = b.numbers("lambdas", d.lambdas);
  if (const json* jumps = b.child("jumps")) {
    if (!jumps->is_array()) throw ConfigError(path + ".jumps must be an array");
    s.params.jumps.clear();
    for (const auto& j : *jumps) {
      Block jb(j, path + ".jumps[]");
      lq::JumpMark m;
      m.mark = jb.number("mark", 0.0);
      m.rate = jb.number("rate", 0.0);
      m.gamma0 = jb.number("gamma0", 0.0);
      jb.finish();
      s.params.jumps.push_back(m);
    }
  }
  b.finish();
  s.grid = read_grid(top, d.grid, path);
  s.particles = top.integer("particles", d.particles, 1);
  s.picard_tol = top.positive("picard_tol", d.picard_tol);
  s.picard_max_iters = top.integer("picard_max_iters", d.picard_max_iters, 1);

  apply(o, "b0", s.params.b0);
  apply(o, "sigma0", s.params.sigma0);
  apply(o, "x0", s.params.x0);
  apply(o, "T", s.grid.t_end);
  apply(o, "dt", s.grid.dt);
  apply_int(o, "N", s.particles);

  s.params.T = s.grid.t_end;
  try {
    s.params.validate();
    TimeGrid(s.grid.t_end, s.grid.dt);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (s.particles < 1) throw ConfigError(path + ": N must be >= 1");
  for (double l : s.lambdas) {
    if (!(l >= 0.0)) throw ConfigError(path + ".lambdas must be >= 0");
  }
  return s;
}

inline json lq_json(const LQScenario& s) {
  json jumps = json::array();
  for (const auto& j : s.params.jumps) {
    jumps.push_back(json{{"mark", j.mark}, {"rate", j.rate}, {"gamma0", j.gamma0}});
  }
  return json{{"grid", grid_json(s.grid)},
              {"particles", s.particles},
              {"picard_tol", s.picard_tol},
              {"picard_max_iters", s.picard_max_iters},
              {"lq",
               {{"b0", s.params.b0},
                {"sigma0", s.params.sigma0},
                {"x0", s.params.x0},
                {"jumps", jumps},
                {"lambdas", s.lambdas}}}};
}

inline ConsumptionScenario read_consumption(Block& top, const json* block, const Overrides& o,
                                            const std::string& path,
                                            ConsumptionScenario d = {}) {
  Block b(block ? *block : json(), path);
  ConsumptionScenario s = d;
  s.params.beta = b.number("beta", d.params.beta);
  s.params.rho = b.number("rho", d.params.rho);
  s.params.delta = b.number("delta", d.params.delta);
  s.params.x0 = b.number("x0", d.params.x0);
  s.ladder = b.numbers("ladder", d.ladder);
  s.mode = b.string("mode", d.mode, {"lift", "convolution"});
  s.volterra_particles = b.integer("volterra_particles", d.volterra_particles, 0);
  b.finish();
  s.grid = read_grid(top, d.grid, path);
  s.particles = top.integer("particles", d.particles, 1);

  apply(o, "beta", s.params.beta);
  apply(o, "rho", s.params.rho);
  apply(o, "delta", s.params.delta);
  apply(o, "x0", s.params.x0);
  apply(o, "t_max", s.grid.t_end);
  apply(o, "dt", s.grid.dt);
  apply_int(o, "N", s.particles);

  s.params.t_max = s.grid.t_end;
  try {
    s.params.validate();
    const TimeGrid grid(s.grid.t_end, s.grid.dt);
    for (double T : s.ladder) {
      if (!(T > 0.0) || T > grid.t_end() * (1.0 + 1e-12)) {
        throw std::invalid_argument("ladder horizons must lie in (0, t_max]");
      }
      grid.node_at(T);
    }
    consumption::budget_p0_initial(s.params);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (s.particles < 1) throw ConfigError(path + ": N must be >= 1");
  return s;
}

inline json consumption_json(const ConsumptionScenario& s) {
  return json{{"grid", grid_json(s.grid)},
              {"particles", s.particles},
              {"consumption",
               {{"beta", s.params.beta},
                {"rho", s.params.rho},
                {"delta", s.params.delta},
                {"x0", s.params.x0},
                {"ladder", s.ladder},
                {"mode", s.mode},
                {"volterra_particles", s.volterra_particles}}}};
}

}  // namespace detail

/// Validates `config` for `kind`, applies flag overrides and fills defaults.
/// Throws ConfigError naming the violated precondition.
inline ScenarioConfig resolve(Kind kind, const json& config, const Overrides& overrides = {},
                              std::optional<std::uint64_t> seed_override = std::nullopt) {
  using namespace detail;
  Block top(config, "config");
  ScenarioConfig cfg;
  cfg.kind = kind;
  if (top.has("scenario")) {
    const auto declared = top.string("scenario", "", {"norm-suite", "picard", "lq", "consumption",
                                                      "mp-verify"});
    if (parse_kind(declared) != kind) {
      throw ConfigError("config declares scenario '" + declared + "' but the subcommand is '" +
                        kind_name(kind) + "'");
    }
  }
  {
    const json* s = top.child("seed");
    if (s) {
      if (!s->is_number_unsigned() && !(s->is_number_integer() && s->get<std::int64_t>() >= 0)) {
        throw ConfigError("config.seed must be a nonnegative integer");
      }
      cfg.seed = s->get<std::uint64_t>();
    }
    if (seed_override) cfg.seed = *seed_override;
  }
  cfg.checks = read_checks(top.child("checks"), kind);

  json resolved{{"scenario", kind_name(kind)}, {"seed", cfg.seed}};

  switch (kind) {
    case Kind::norm_suite: {
      const json* j = top.child("norm");
      Block b(j ? *j : json(), "config.norm");
      auto& s = cfg.norm;
      s.norm.n = static_cast<int>(b.integer("n", 4, 2));
      s.norm.y_max = b.positive("y_max", 50.0);
      s.norm.n_quad = static_cast<int>(b.integer("n_quad", 4001, 5));
      s.dirac_at = b.number("dirac_at", 0.0);
      s.dirac_y_max = b.positive("dirac_y_max", 400.0);
      s.pairs = b.integer("pairs", 1000, 1);
      s.sample_size = b.integer("sample_size", 20, 1);
      b.finish();
      if (auto it = overrides.find("n"); it != overrides.end()) s.norm.n = static_cast<int>(it->second);
      apply_int(overrides, "pairs", s.pairs);
      try {
        s.norm.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config.norm: ") + e.what());
      }
      for (const auto& c : cfg.checks) {
        if (c.name == "c0_constant" && s.norm.n < 4) {
          throw ConfigError("config.norm.n must be >= 4 for the c0_constant check");
        }
      }
      if (s.pairs < 1) throw ConfigError("config.norm.pairs must be >= 1");
      resolved["norm"] = json{{"n", s.norm.n},           {"y_max", s.norm.y_max},
                              {"n_quad", s.norm.n_quad}, {"dirac_at", s.dirac_at},
                              {"dirac_y_max", s.dirac_y_max}, {"pairs", s.pairs},
                              {"sample_size", s.sample_size}};
      break;
    }
    case Kind::picard: {
      auto& s = cfg.picard;
      const json* j = top.child("picard");
      Block b(j ? *j : json(), "config.picard");
      s.x0 = b.number("x0", s.x0);
      s.mean_coef = b.number("mean_coef", s.mean_coef);
      s.state_coef = b.number("state_coef", s.state_coef);
      s.constant = b.number("constant", s.constant);
      s.sigma = b.number("sigma", s.sigma);
      s.sigma_state = b.number("sigma_state", s.sigma_state);
      s.jump_scale = b.number("jump_scale", s.jump_scale);
      if (const json* jumps = b.child("jumps")) {
        if (!jumps->is_array()) throw ConfigError("config.picard.jumps must be an array");
        for (const auto& jj : *jumps) {
          Block jb(jj, "config.picard.jumps[]");
          JumpAtom a;
          a.mark = jb.number("mark", 0.0);
          a.rate = jb.number("rate", 0.0);
          jb.finish();
          if (!(a.rate >= 0.0)) throw ConfigError("config.picard.jumps[].rate must be >= 0");
          s.jumps.push_back(a);
        }
      }
      b.finish();
      s.grid = read_grid(top, s.grid, "config");
      s.particles = top.integer("particles", s.particles, 1);
      s.picard_tol = top.positive("picard_tol", s.picard_tol);
      s.picard_max_iters = top.integer("picard_max_iters", s.picard_max_iters, 1);
      s.export_particles = top.integer("export_particles", s.export_particles, 0);
      apply(overrides, "T", s.grid.t_end);
      apply(overrides, "dt", s.grid.dt);
      apply_int(overrides, "N", s.particles);
      try {
        TimeGrid(s.grid.t_end, s.grid.dt);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config.grid: ") + e.what());
      }
      if (s.particles < 1) throw ConfigError("config.particles must be >= 1");
      json jumps = json::array();
      for (const auto& a : s.jumps) jumps.push_back(json{{"mark", a.mark}, {"rate", a.rate}});
      resolved["grid"] = grid_json(s.grid);
      resolved["particles"] = s.particles;
      resolved["picard_tol"] = s.picard_tol;
      resolved["picard_max_iters"] = s.picard_max_iters;
      resolved["export_particles"] = s.export_particles;
      resolved["picard"] = json{{"x0", s.x0},
                                {"mean_coef", s.mean_coef},
                                {"state_coef", s.state_coef},
                                {"constant", s.constant},
                                {"sigma", s.sigma},
                                {"sigma_state", s.sigma_state},
                                {"jumps", jumps},
                                {"jump_scale", s.jump_scale}};
      break;
    }
    case Kind::lq: {
      cfg.lq = read_lq(top, top.child("lq"), overrides, "config");
      const json block = lq_json(cfg.lq);
      for (const auto& [k, v] : block.items()) resolved[k] = v;
      break;
    }
    case Kind::consumption: {
      cfg.consumption = read_consumption(top, top.child("consumption"), overrides, "config");
      const json block = consumption_json(cfg.consumption);
      for (const auto& [k, v] : block.items()) resolved[k] = v;
      break;
    }
    case Kind::mp_verify: {
      auto& s = cfg.mp;
      const json* j = top.child("mp");
      Block b(j ? *j : json(), "config.mp");
      if (const json* ex = b.child("examples")) {
        if (!ex->is_array() || ex->empty()) {
          throw ConfigError("config.mp.examples must be a non-empty array");
        }
        s.examples.clear();
        for (const auto& e : *ex) {
          if (!e.is_string() || (e != "lq" && e != "consumption")) {
            throw ConfigError("config.mp.examples entries must be \"lq\" or \"consumption\"");
          }
          s.examples.push_back(e.get<std::string>());
        }
      }
      s.perturbation = b.positive("perturbation", s.perturbation);
      s.directions = b.integer("directions", s.directions, 1);
      s.thresholds.gateaux = b.positive("gateaux_threshold", s.thresholds.gateaux);
      s.thresholds.residual = b.positive("residual_threshold", s.thresholds.residual);

      LQScenario lq_defaults;
      lq_defaults.particles = 16;
      const json* lqj = b.child("lq");
      {
        json inner = lqj ? *lqj : json::object();
        if (!inner.is_object()) throw ConfigError("config.mp.lq must be an object");
        Block lb(inner, "config.mp.lq");
        json params = json::object();
        for (const char* key : {"b0", "sigma0", "x0", "jumps"}) {
          if (lb.has(key)) params[key] = inner.at(key);
          lb.child(key);
        }
        json wrapper = json::object();
        for (const char* key : {"grid", "particles", "picard_tol", "picard_max_iters"}) {
          if (lb.has(key)) wrapper[key] = inner.at(key);
          lb.child(key);
        }
        lb.finish();
        Block wb(wrapper, "config.mp.lq");
        s.lq = read_lq(wb, &params, {}, "config.mp.lq", lq_defaults);
        wb.finish();
      }
      ConsumptionScenario c_defaults;
      c_defaults.grid = {20.0, 1e-2};
      c_defaults.particles = 64;
      const json* cj = b.child("consumption");
      {
        json inner = cj ? *cj : json::object();
        if (!inner.is_object()) throw ConfigError("config.mp.consumption must be an object");
        Block cb(inner, "config.mp.consumption");
        json params = json::object();
        for (const char* key : {"beta", "rho", "delta", "x0"}) {
          if (cb.has(key)) params[key] = inner.at(key);
          cb.child(key);
        }
        json wrapper = json::object();
        for (const char* key : {"grid", "particles"}) {
          if (cb.has(key)) wrapper[key] = inner.at(key);
          cb.child(key);
        }
        cb.finish();
        c_defaults.ladder = {};
        Block wb(wrapper, "config.mp.consumption");
        s.consumption = read_consumption(wb, &params, {}, "config.mp.consumption", c_defaults);
        wb.finish();
      }
      b.finish();
      apply(overrides, "perturbation", s.perturbation);
      if (!(s.perturbation > 0.0)) throw ConfigError("config.mp.perturbation must be > 0");

      auto lq_part = detail::lq_json(s.lq);
      json lq_resolved{{"b0", s.lq.params.b0},
                       {"sigma0", s.lq.params.sigma0},
                       {"x0", s.lq.params.x0},
                       {"jumps", lq_part["lq"]["jumps"]},
                       {"grid", lq_part["grid"]},
                       {"particles", s.lq.particles},
                       {"picard_tol", s.lq.picard_tol},
                       {"picard_max_iters", s.lq.picard_max_iters}};
      json c_resolved{{"beta", s.consumption.params.beta},
                      {"rho", s.consumption.params.rho},
                      {"delta", s.consumption.params.delta},
                      {"x0", s.consumption.params.x0},
                      {"grid", grid_json(s.consumption.grid)},
                      {"particles", s.consumption.particles}};
      resolved["mp"] = json{{"examples", s.examples},
                            {"perturbation", s.perturbation},
                            {"directions", s.directions},
                            {"gateaux_threshold", s.thresholds.gateaux},
                            {"residual_threshold", s.thresholds.residual},
                            {"lq", lq_resolved},
                            {"consumption", c_resolved}};
      break;
    }
  }
  top.finish();
  resolved["checks"] = checks_json(cfg.checks);
  cfg.resolved = std::move(resolved);
  return cfg;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct Artifact {
  std::string name;
  std::string contents;
};

struct RunResult {
  int exit_code = 0;
  json summary;
  std::vector<io::CheckResult> checks;
  std::vector<std::string> failing;
  std::vector<Artifact> artifacts;  // summary.json last
};

namespace detail {

inline double threshold_of(const std::vector<CheckSpec>& checks, const std::string& name) {
  for (const auto& c : checks) {
    if (c.name == name) return c.threshold;
  }
  return 0.0;
}

inline bool requested(const std::vector<CheckSpec>& checks, const std::string& name) {
  return std::any_of(checks.begin(), checks.end(), [&](const CheckSpec& c) { return c.name == name; });
}

/// Records a check `value <= threshold` (or `<` when strict).
struct CheckList {
  const std::vector<CheckSpec>& specs;
  std::vector<io::CheckResult> results;

  void add(const std::string& name, json params, double value, bool strict = false) {
    if (!requested(specs, name)) return;
    const double th = threshold_of(specs, name);
    io::CheckResult r;
    r.check = name;
    r.parameters = std::move(params);
    r.value = value;
    r.threshold = th;
    r.pass = strict ? value < th : value <= th;
    results.push_back(std::move(r));
  }
};

inline SolverConfig solver(const GridSpec& g, std::int64_t particles, double tol,
                           std::int64_t iters, std::uint64_t seed) {
  SolverConfig s;
  s.grid = TimeGrid(g.t_end, g.dt);
  s.n_particles = static_cast<std::size_t>(particles);
  s.picard_tol = tol;
  s.picard_max_iters = static_cast<int>(iters);
  s.seed = seed;
  return s;
}

inline json ladder_json(const TransversalityReport& r) {
  json pts = json::array();
  for (const auto& p : r.ladder) {
    pts.push_back(json{{"T", p.horizon}, {"value", p.value}, {"standard_error", p.standard_error}});
  }
  return json{{"points", pts},
              {"epsilon", r.epsilon},
              {"tail_nonnegative", r.tail_nonnegative},
              {"log_slope", std::isfinite(r.log_slope) ? json(r.log_slope) : json(nullptr)},
              {"p1_term", "structurally zero"}};
}

// -- norm-suite -------------------------------------------------------------

inline json run_norm(const ScenarioConfig& cfg, CheckList& checks, std::vector<Artifact>& files) {
  const auto& s = cfg.norm;
  json res = json::object();
  if (requested(cfg.checks, "c0_constant")) {
    const int n = s.norm.n;
    const auto e = quad::integrate_to_infinity(
        [n](double y) { return 2.0 * y * y * std::pow(1.0 + y, -n); }, 0.0);
    const double c0 = c0_constant(n);
    res["c0_constant"] = c0;
    res["c0_quadrature"] = e.value;
    checks.add("c0_constant", json{{"n", n}}, std::abs(c0 - e.value));
  }
  {
    NormConfig dc = s.norm;
    dc.y_max = s.dirac_y_max;
    const auto v = norm_sq(SignedMeasure(EmpiricalMeasure::dirac(s.dirac_at)), dc);
    const double exact = 2.0 / (s.norm.n - 1.0);
    res["dirac_norm"] = json{{"value", v.value}, {"exact", exact}, {"tail_bound", v.tail_bound},
                             {"quadrature_error", v.quadrature_error}};
    checks.add("dirac_norm", json{{"a", s.dirac_at}, {"n", s.norm.n}, {"y_max", dc.y_max}},
               std::abs(v.value - exact));
  }
  if (requested(cfg.checks, "lipschitz_bound")) {
    const auto pairs = static_cast<std::size_t>(s.pairs);
    const auto m = static_cast<std::size_t>(s.sample_size);
    std::vector<double> lhs(pairs), rhs(pairs), idx(pairs);
    std::vector<int> violated(pairs, 0);
    frequency_rule(s.norm);
    for (std::size_t j = 0; j < pairs; ++j) {
      RandomStream rng(derive_seed(cfg.seed, j));
      const double scale = 0.05 + 2.0 * rng.uniform();
      const double shift = rng.normal();
      const double noise = rng.uniform();
      std::vector<double> a(m), b(m);
      for (std::size_t i = 0; i < m; ++i) {
        a[i] = rng.normal();
        b[i] = scale * a[i] + shift + noise * rng.normal();
      }
      const auto bc = lipschitz_bound_check(a, b, s.norm);
      lhs[j] = bc.lhs;
      rhs[j] = bc.rhs;
      idx[j] = static_cast<double>(j);
      violated[j] = bc.holds ? 0 : 1;
    }
    double count = 0.0;
    for (int v : violated) count += v;
    res["lipschitz_pairs"] = pairs;
    res["lipschitz_violations"] = count;
    checks.add("lipschitz_bound", json{{"pairs", pairs}, {"sample_size", m}, {"n", s.norm.n}}, count);
    files.push_back({"lipschitz.csv", io::csv_columns({"pair", "lhs", "rhs"}, {&idx, &lhs, &rhs})});
  }
  return res;
}

// -- picard -----------------------------------------------------------------

inline json run_picard(const ScenarioConfig& cfg, CheckList& checks, std::vector<Artifact>& files) {
  const auto& s = cfg.picard;
  const auto sc = solver(s.grid, s.particles, s.picard_tol, s.picard_max_iters, cfg.seed);
  MfSdeProblem prob;
  prob.x0 = s.x0;
  prob.coefficients.drift = [a = s.mean_coef, b = s.state_coef, c = s.constant](
                                const CoefficientArgs& args) {
    return a * args.law.mean() + b * args.x + c;
  };
  if (s.sigma != 0.0 || s.sigma_state != 0.0) {
    prob.coefficients.diffusion = [sg = s.sigma, v = s.sigma_state](const CoefficientArgs& args) {
      return sg + v * args.x;
    };
  }
  if (!s.jumps.empty() && s.jump_scale != 0.0) {
    prob.jumps.atoms = s.jumps;
    prob.coefficients.jump = [g = s.jump_scale](const CoefficientArgs&, double mark) {
      return g * mark;
    };
  }
  const auto ens = picard_solve(prob, zero_control(), sc);

  const double rate = s.mean_coef + s.state_coef;
  const double T = s.grid.t_end;
  const double exact = rate == 0.0 ? s.x0 + s.constant * T
                                   : (s.x0 + s.constant / rate) * std::exp(rate * T) -
                                         s.constant / rate;
  const double mean_T = ens.law[sc.grid.nodes() - 1].mean();
  const double scale = sc.grid.dt() + 1.0 / std::sqrt(static_cast<double>(s.particles));

  double worst_ratio = 0.0;
  const auto& d = ens.iterate_distances;
  for (std::size_t k = 2; k < d.size(); ++k) {
    if (d[k - 1] > 0.0) worst_ratio = std::max(worst_ratio, d[k] / d[k - 1]);
  }

  checks.add("converged", json{{"picard_tol", s.picard_tol}, {"max_iters", s.picard_max_iters}},
             ens.converged ? 0.0 : 1.0);
  checks.add("contraction", json{{"iterations", ens.picard_iterations}}, worst_ratio, true);
  checks.add("mean_oracle", json{{"exact", exact}, {"mean", mean_T}, {"unit", "dt + N^-1/2"}},
             std::abs(mean_T - exact) / scale);

  files.push_back({"ensemble.csv", io::ensemble_csv(ens, static_cast<std::size_t>(s.export_particles))});
  files.push_back({"law_summary.csv", io::law_summary_csv(ens.law)});
  return json{{"picard_iterations", ens.picard_iterations},
              {"converged", ens.converged},
              {"iterate_distances", ens.iterate_distances},
              {"mean_T", mean_T},
              {"mean_T_exact", exact},
              {"max_contraction_ratio", worst_ratio},
              {"moment_2", moment_diagnostics(ens, 2.0)}};
}

// -- lq ---------------------------------------------------------------------

inline json run_lq(const ScenarioConfig& cfg, CheckList& checks, std::vector<Artifact>& files) {
  const auto& s = cfg.lq;
  const auto sc = solver(s.grid, s.particles, s.picard_tol, s.picard_max_iters, cfg.seed);
  const auto rep = lq::verify_lq_optimality(s.params, sc, s.lambdas);
  const auto& Y = rep.riccati.Y;
  const auto times = sc.grid.times();

  json dirs = json::array();
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& d : rep.directions) {
    dirs.push_back(json{{"direction", d.name},
                        {"lambda", d.lambda},
                        {"J", d.J},
                        {"gain", d.gain},
                        {"standard_error", d.standard_error},
                        {"tolerance", d.tolerance},
                        {"holds", d.holds}});
    worst = std::max(worst, d.gain - d.tolerance);
  }
  if (rep.directions.empty()) worst = 0.0;

  checks.add("fixed_point_residual", json{{"sweeps", rep.riccati.sweeps}},
             rep.riccati.fixed_point_residual);
  checks.add("directional_optimality",
             json{{"lambdas", s.lambdas}, {"battery", "+-1, +-t, +-sin"},
                  {"value", "max over directions of gain - (dt + 3 SE)"}},
             worst);
  checks.add("necessary_residual", json{{"information", "trivial"}, {"particles", s.particles}},
             rep.residual_sup, true);
  checks.add("mean_tracking", json{{"tolerance", rep.mean_tracking_tolerance},
                                   {"value", "error / (3 (N^-1/2 + dt))"}},
             rep.mean_tracking_error / rep.mean_tracking_tolerance);

  files.push_back({"riccati.csv", io::csv_columns({"t", "Y", "K_mean", "u_hat_mean", "X_mean"},
                                                  {&times, &Y, &rep.K_mean, &rep.u_hat_mean,
                                                   &rep.mean_path})});
  json out{{"Y_T", rep.riccati.Y_T},
           {"riccati_sweeps", rep.riccati.sweeps},
           {"fixed_point_residual", rep.riccati.fixed_point_residual},
           {"u_hat_0_mean", rep.u_hat_mean.front()},
           {"J_hat", rep.J_hat},
           {"J_hat_standard_error", rep.J_hat_standard_error},
           {"directions", dirs},
           {"necessary_residual_sup", rep.residual_sup},
           {"mean_tracking_error", rep.mean_tracking_error}};
  if (s.params.b0 == 0.0) {
    out["Y_T_closed_form"] = lq::riccati_closed_form_b0_zero(s.params.x0, s.params.T);
  }
  return out;
}

// -- consumption ------------------------------------------------------------

inline json run_consumption(const ScenarioConfig& cfg, CheckList& checks,
                            std::vector<Artifact>& files) {
  const auto& s = cfg.consumption;
  const auto sc = solver(s.grid, s.particles, 1e-10, 1, cfg.seed);
  const auto mode = s.mode == "lift" ? consumption::Mode::lift : consumption::Mode::convolution;
  SolutionEnsemble ens;
  const auto rep = consumption::simulate_optimal_wealth(
      s.params, sc, s.ladder, mode, &ens, static_cast<std::size_t>(s.volterra_particles));
  const auto times = sc.grid.times();

  double identity = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    identity = std::max(identity, std::abs(rep.u_hat[k] * rep.p0[k] -
                                           std::exp(-s.params.delta * times[k])));
  }
  const auto residual =
      necessary_residual(consumption::hamiltonian_spec(s.params), ens, open_loop(rep.u_hat),
                         AdjointPath::deterministic(rep.p0), Information::trivial);
  const double target_slope = rep.lambda0 - 1.0 / s.params.rho;

  checks.add("budget_equality", json{{"x0", s.params.x0}}, std::abs(rep.budget_residual));
  checks.add("adjoint_identity", json{{"identity", "u_hat p0 = exp(-delta t)"}}, identity);
  checks.add("necessary_residual", json{{"information", "trivial"}}, residual.sup_norm());
  checks.add("admissible", json{{"value", "rho * lambda0"}}, s.params.rho * rep.lambda0, true);
  if (detail::requested(cfg.checks, "transversality_decay")) {
    const double slope = rep.product_ladder.log_slope;
    checks.add("transversality_decay",
               json{{"ladder", s.ladder}, {"fitted_slope", std::isfinite(slope) ? json(slope) : json(nullptr)},
                    {"expected_slope", target_slope}},
               std::isfinite(slope) ? std::abs(slope - target_slope)
                                    : std::numeric_limits<double>::infinity());
  }

  files.push_back({"consumption.csv", io::csv_columns({"t", "p0", "u_hat"}, {&times, &rep.p0, &rep.u_hat})});
  files.push_back({"law_summary.csv", io::law_summary_csv(ens.law)});
  return json{{"lambda0", rep.lambda0},
              {"p0_init", rep.p0_init},
              {"budget_residual", rep.budget_residual},
              {"transversality_ladder", ladder_json(rep.product_ladder)},
              {"admissible", rep.admissible},
              {"difference_ladder", ladder_json(rep.difference_ladder)},
              {"truncated_budget", rep.truncated_budget},
              {"square_integrability", rep.square_integrability},
              {"volterra_sup_difference", rep.volterra_sup_difference},
              {"volterra_relative_difference", rep.volterra_relative_difference},
              {"mode", s.mode}};
}

// -- mp-verify --------------------------------------------------------------

inline json probe_json(const equivalence::ControlProbe& p) {
  return json{{"gateaux", p.gateaux},
              {"direction_sup", p.scales},
              {"gateaux_max_normalized", p.gateaux_max},
              {"residual_sup", p.residual_sup}};
}

inline json run_mp(const ScenarioConfig& cfg, CheckList& checks, std::vector<Artifact>& files) {
  const auto& s = cfg.mp;
  json out = json::object();
  std::string csv = "example,control,direction,gateaux,direction_sup\n";
  for (const auto& ex : s.examples) {
    equivalence::Report r;
    if (ex == "lq") {
      const auto sc = solver(s.lq.grid, s.lq.particles, s.lq.picard_tol, s.lq.picard_max_iters,
                             cfg.seed);
      r = equivalence::lq_report(s.lq.params, sc, s.perturbation,
                                 static_cast<std::size_t>(s.directions), s.thresholds);
    } else {
      const auto sc = solver(s.consumption.grid, s.consumption.particles, 1e-10, 1, cfg.seed);
      r = equivalence::consumption_report(s.consumption.params, sc, s.perturbation,
                                          static_cast<std::size_t>(s.directions), s.thresholds);
    }
    const double violated = (r.at_optimum.gateaux_max < s.thresholds.gateaux ? 0.0 : 1.0) +
                            (r.at_optimum.residual_sup < s.thresholds.residual ? 0.0 : 1.0) +
                            (r.at_perturbed.gateaux_max >= s.thresholds.gateaux ? 0.0 : 1.0) +
                            (r.at_perturbed.residual_sup >= s.thresholds.residual ? 0.0 : 1.0);
    checks.add("equivalence",
               json{{"example", ex},
                    {"perturbation", s.perturbation},
                    {"gateaux_threshold", s.thresholds.gateaux},
                    {"residual_threshold", s.thresholds.residual},
                    {"value", "number of violated conditions out of 4"}},
               violated);
    out[ex] = json{{"at_optimum", probe_json(r.at_optimum)},
                   {"at_perturbed", probe_json(r.at_perturbed)},
                   {"below_at_optimum", r.below_at_optimum},
                   {"above_at_perturbed", r.above_at_perturbed}};
    for (const auto* probe : {&r.at_optimum, &r.at_perturbed}) {
      const char* label = probe == &r.at_optimum ? "optimum" : "perturbed";
      for (std::size_t j = 0; j < probe->gateaux.size(); ++j) {
        csv += ex + "," + label + "," + std::to_string(j) + "," +
               io::format_double(probe->gateaux[j]) + "," + io::format_double(probe->scales[j]) +
               "\n";
      }
    }
  }
  files.push_back({"gateaux.csv", csv});
  return out;
}

}  // namespace detail

/// Runs a resolved scenario and returns the artifacts in memory; `write`
/// puts them on disk.
inline RunResult execute(const ScenarioConfig& cfg) {
  RunResult rr;
  detail::CheckList checks{cfg.checks, {}};
  json results;
  switch (cfg.kind) {
    case Kind::norm_suite: results = detail::run_norm(cfg, checks, rr.artifacts); break;
    case Kind::picard: results = detail::run_picard(cfg, checks, rr.artifacts); break;
    case Kind::lq: results = detail::run_lq(cfg, checks, rr.artifacts); break;
    case Kind::consumption: results = detail::run_consumption(cfg, checks, rr.artifacts); break;
    case Kind::mp_verify: results = detail::run_mp(cfg, checks, rr.artifacts); break;
  }
  json check_list = json::array();
  for (const auto& c : checks.results) {
    check_list.push_back(io::to_json(c));
    if (!c.pass) rr.failing.push_back(c.check);
  }
  rr.checks = std::move(checks.results);
  rr.exit_code = rr.failing.empty() ? 0 : 1;
  rr.summary = json{{"version", kVersion},
                    {"scenario", kind_name(cfg.kind)},
                    {"config", cfg.resolved},
                    {"results", results},
                    {"checks", check_list},
                    {"failing", rr.failing},
                    {"pass", rr.failing.empty()}};
  rr.artifacts.push_back({"summary.json", rr.summary.dump(2) + "\n"});
  return rr;
}

inline void write(const RunResult& rr, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& a : rr.artifacts) io::write_text((out_dir / a.name).string(), a.contents);
}

}  // namespace emf::scenario
