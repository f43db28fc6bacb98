// Command-line entry point: one scenario per invocation.
//
//   emf <subcommand> [--config PATH] [--seed N] [--out DIR] [--threads N] [parameter flags]
//
// Exit status: 0 when every requested check passes, 1 when a check fails,
// 2 when the configuration is invalid (nothing is written in that case).

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "emf/parallel.hpp"
#include "emf/scenario.hpp"
#include "emf/version.hpp"

namespace {

using emf::scenario::ConfigError;
using emf::scenario::Kind;
using json = nlohmann::ordered_json;

struct Flag {
  std::string name;  // parameter name in Overrides
  std::string option;
  std::string help;
};

const std::map<Kind, std::vector<Flag>>& parameter_flags() {
  static const std::map<Kind, std::vector<Flag>> flags = {
      {Kind::norm_suite, {{"n", "--n", "weight exponent n"}, {"pairs", "--pairs", "coupled sample pairs"}}},
      {Kind::picard,
       {{"T", "--T", "horizon"}, {"dt", "--dt", "time step"}, {"N", "--N", "particles"}}},
      {Kind::lq,
       {{"b0", "--b0", "drift constant b0"},
        {"sigma0", "--sigma0", "volatility constant sigma0"},
        {"x0", "--x0", "initial state"},
        {"T", "--T", "horizon"},
        {"dt", "--dt", "time step"},
        {"N", "--N", "particles"}}},
      {Kind::consumption,
       {{"beta", "--beta", "wealth volatility"},
        {"rho", "--rho", "kernel rate"},
        {"delta", "--delta", "utility discount rate"},
        {"x0", "--x0", "initial wealth"},
        {"t_max", "--t-max", "truncation horizon"},
        {"dt", "--dt", "time step"},
        {"N", "--N", "particles"}}},
      {Kind::mp_verify, {{"perturbation", "--perturbation", "constant shift of the optimum"}}},
  };
  return flags;
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field SDEs with memory: simulation and maximum-principle checks"};
  app.set_version_flag("--version", std::string(emf::kVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::optional<int> threads;
  app.add_option("--config", config_path, "scenario JSON file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "base seed (overrides the config)");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--threads", threads,
                 std::string("worker threads (default: $") + emf::kThreadsEnv + " or 1)")
      ->check(CLI::PositiveNumber);

  std::map<Kind, CLI::App*> subs;
  std::map<Kind, std::map<std::string, std::optional<double>>> values;
  const std::vector<std::pair<Kind, std::string>> descriptions = {
      {Kind::norm_suite, "measure-metric checks"},
      {Kind::picard, "Picard iteration on a linear mean-field benchmark"},
      {Kind::lq, "mean-field LQ example: Riccati, optimal control, optimality battery"},
      {Kind::consumption, "optimal consumption with exponential memory"},
      {Kind::mp_verify, "first-order condition equivalence on both examples"},
  };
  for (const auto& [kind, text] : descriptions) {
    auto* sub = app.add_subcommand(emf::scenario::kind_name(kind), text);
    sub->fallthrough();
    for (const auto& f : parameter_flags().at(kind)) {
      sub->add_option(f.option, values[kind][f.name], f.help);
    }
    subs[kind] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Kind kind = Kind::norm_suite;
  for (const auto& [k, sub] : subs) {
    if (sub->parsed()) kind = k;
  }

  if (threads) {
    emf::set_thread_count(*threads);
  } else if (const char* env = std::getenv(emf::kThreadsEnv)) {
    int n = 0;
    const std::string text(env);
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
    if (ec != std::errc() || end != text.data() + text.size() || n < 1) {
      std::cerr << "emf: invalid configuration: " << emf::kThreadsEnv
                << " must be a positive integer (got '" << text << "')\n";
      return 2;
    }
    emf::set_thread_count(n);
  }

  emf::scenario::Overrides overrides;
  for (const auto& [name, v] : values[kind]) {
    if (v) overrides[name] = *v;
  }

  emf::scenario::ScenarioConfig cfg;
  try {
    cfg = emf::scenario::resolve(kind, read_config(config_path), overrides, seed);
  } catch (const ConfigError& e) {
    std::cerr << "emf: invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "emf: invalid configuration: " << e.what() << "\n";
    return 2;
  }

  try {
    const auto rr = emf::scenario::execute(cfg);
    emf::scenario::write(rr, out_dir);
    for (const auto& c : rr.checks) {
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.check << " value=" << c.value
                << " threshold=" << c.threshold << "\n";
    }
    if (rr.exit_code != 0) {
      std::cerr << "emf: failing checks:";
      for (const auto& f : rr.failing) std::cerr << ' ' << f;
      std::cerr << "\n";
    }
    return rr.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "emf: " << e.what() << "\n";
    return 1;
  }
}
