#pragma once

// Serialisation: measures and noise to JSON, ensembles and law summaries to
// CSV, verification reports. Doubles are written in shortest round-trip form
// so that identical results give identical bytes.

#include <charconv>
#include <cstddef>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "emf/drivers.hpp"
#include "emf/measures.hpp"
#include "emf/mfsde.hpp"

namespace emf::io {

using json = nlohmann::ordered_json;

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const EmpiricalMeasure& m) {
  json atoms = json::array();
  for (const auto& a : m.atoms()) atoms.push_back(json::array({a.x, a.w}));
  return json{{"atoms", std::move(atoms)}};
}

inline json to_json(const SignedMeasure& m) {
  json atoms = json::array();
  for (const auto& a : m.atoms()) atoms.push_back(json::array({a.x, a.w}));
  return json{{"atoms", std::move(atoms)}};
}

namespace detail {
inline std::vector<Atom> read_atoms(const json& j) {
  if (!j.is_object() || !j.contains("atoms") || j.size() != 1) {
    throw std::invalid_argument("measure JSON must be {\"atoms\": [[x, w], ...]}");
  }
  std::vector<Atom> atoms;
  for (const auto& a : j.at("atoms")) {
    if (!a.is_array() || a.size() != 2) throw std::invalid_argument("atom must be [x, w]");
    atoms.push_back({a[0].get<double>(), a[1].get<double>()});
  }
  return atoms;
}
}  // namespace detail

inline EmpiricalMeasure empirical_from_json(const json& j) {
  return EmpiricalMeasure::from_atoms(detail::read_atoms(j));
}

inline SignedMeasure signed_from_json(const json& j) { return SignedMeasure(detail::read_atoms(j)); }

inline json to_json(const NoiseRealization& n) {
  json jumps = json::array();
  for (const auto& e : n.jump_events) jumps.push_back(json::array({e.step, e.mark}));
  return json{{"seed", n.seed},
              {"dt", n.dt},
              {"brownian_increments", n.brownian_increments},
              {"jump_events", std::move(jumps)}};
}

inline NoiseRealization noise_from_json(const json& j) {
  NoiseRealization n;
  n.seed = j.at("seed").get<std::uint64_t>();
  n.dt = j.at("dt").get<double>();
  n.brownian_increments = j.at("brownian_increments").get<std::vector<double>>();
  for (const auto& e : j.at("jump_events")) {
    n.jump_events.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>()});
  }
  return n;
}

/// One verification outcome: {check, parameters, value, threshold, pass}.
struct CheckResult {
  std::string check;
  json parameters = json::object();
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

inline json to_json(const CheckResult& c) {
  return json{{"check", c.check},
              {"parameters", c.parameters},
              {"value", c.value},
              {"threshold", c.threshold},
              {"pass", c.pass}};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Header row followed by one row per entry of equally long columns.
inline std::string csv_columns(const std::vector<std::string>& header,
                               const std::vector<const std::vector<double>*>& columns) {
  if (header.size() != columns.size() || columns.empty()) {
    throw std::invalid_argument("csv_columns: header and columns differ");
  }
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c) out += ',';
    out += header[c];
  }
  out += '\n';
  const std::size_t rows = columns.front()->size();
  for (const auto* col : columns) {
    if (col->size() != rows) throw std::invalid_argument("csv_columns: ragged columns");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (c) out += ',';
      out += format_double((*columns[c])[r]);
    }
    out += '\n';
  }
  return out;
}

/// particle,t,x for the first `max_particles` particles.
inline std::string ensemble_csv(const SolutionEnsemble& ens, std::size_t max_particles) {
  std::string out = "particle,t,x\n";
  const auto& grid = ens.grid();
  const std::size_t n = std::min(max_particles, ens.particles());
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = std::to_string(i);
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      out += id;
      out += ',';
      out += format_double(grid.time(k));
      out += ',';
      out += format_double(ens.paths[i][k]);
      out += '\n';
    }
  }
  return out;
}

/// t,mean,variance,q05,q50,q95 per node of a law path.
inline std::string law_summary_csv(const LawPath& law) {
  std::string out = "t,mean,variance,q05,q50,q95\n";
  for (std::size_t k = 0; k < law.size(); ++k) {
    const auto& m = law[k];
    const double row[] = {law.grid().time(k), m.mean(),         m.variance(),
                          m.quantile(0.05),   m.quantile(0.5), m.quantile(0.95)};
    for (std::size_t c = 0; c < 6; ++c) {
      if (c) out += ',';
      out += format_double(row[c]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace emf::io
