#pragma once

// Joint check of the two first-order conditions on the worked examples: the
// directional derivative of J and the necessary-condition residual should be
// small together at the candidate optimum and large together at a control
// shifted by a constant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "emf/consumption.hpp"
#include "emf/lq.hpp"
#include "emf/mfsde.hpp"
#include "emf/mp.hpp"
#include "emf/rng.hpp"

namespace emf::equivalence {

struct Thresholds {
  double gateaux = 5e-2;   // on |dJ| / sup|pi|
  double residual = 5e-2;  // on the residual sup-norm
};

struct ControlProbe {
  std::vector<double> gateaux;  // dJ along each direction
  std::vector<double> scales;   // sup|pi| of each direction
  double gateaux_max = 0.0;     // max |dJ| / sup|pi|
  double residual_sup = 0.0;
};

struct Report {
  std::string example;
  double perturbation = 0.0;
  Thresholds thresholds;
  ControlProbe at_optimum;
  ControlProbe at_perturbed;
  bool below_at_optimum = false;  // both small at uhat
  bool above_at_perturbed = false;  // both large at uhat + c
  bool holds() const { return below_at_optimum && above_at_perturbed; }
};

namespace detail {
inline double sup_abs(const ForwardPath& v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

inline void finish(Report& r) {
  const auto& t = r.thresholds;
  r.below_at_optimum =
      r.at_optimum.gateaux_max < t.gateaux && r.at_optimum.residual_sup < t.residual;
  r.above_at_perturbed =
      r.at_perturbed.gateaux_max >= t.gateaux && r.at_perturbed.residual_sup >= t.residual;
}

template <class ResidualFn>
ControlProbe probe(const PerformanceSpec& perf, const Simulator& sim, const ControlPolicy& u,
                   const std::vector<ForwardPath>& directions, ResidualFn&& residual) {
  ControlProbe out;
  for (const auto& d : directions) {
    const double g = gateaux_J(perf, sim, u, open_loop(d)).value();
    const double s = sup_abs(d);
    out.gateaux.push_back(g);
    out.scales.push_back(s);
    out.gateaux_max = std::max(out.gateaux_max, std::abs(g) / s);
  }
  out.residual_sup = residual(u);
  return out;
}
}  // namespace detail

/// Bounded random directions pi(t) = a + b t/T + c sin(pi t/T), a, b, c
/// uniform on [-1, 1], from streams derived from `seed`.
inline std::vector<ForwardPath> random_directions(const TimeGrid& grid, std::size_t count,
                                                  std::uint64_t seed) {
  std::vector<ForwardPath> out;
  const double T = grid.t_end();
  constexpr double pi = 3.14159265358979323846;
  for (std::size_t j = 0; j < count; ++j) {
    RandomStream rng(derive_seed(seed ^ 0x9d1c3a5b7e2f4081ULL, j));
    const double a = 2.0 * rng.uniform() - 1.0;
    const double b = 2.0 * rng.uniform() - 1.0;
    const double c = 2.0 * rng.uniform() - 1.0;
    ForwardPath d(grid.nodes());
    for (std::size_t k = 0; k < d.size(); ++k) {
      const double t = grid.time(k);
      d[k] = a + b * t / T + c * std::sin(pi * t / T);
    }
    out.push_back(std::move(d));
  }
  return out;
}

inline Report lq_report(const lq::LQParams& p, const SolverConfig& cfg, double perturbation,
                        std::size_t directions, Thresholds th = {}) {
  Report r;
  r.example = "lq";
  r.perturbation = perturbation;
  r.thresholds = th;
  const auto opt = lq::build_optimal_control(p, cfg);
  const auto prob = lq::problem(p);
  const auto perf = lq::performance();
  const auto hspec = lq::hamiltonian_spec(p);
  const Simulator sim = [&](const ControlPolicy& u) { return picard_solve(prob, u, cfg); };
  const auto dirs = random_directions(cfg.grid, directions, cfg.seed);
  auto residual = [&](const ControlPolicy& u) {
    const auto ens = sim(u);
    return necessary_residual(hspec, ens, u, lq::terminal_adjoint(ens), Information::trivial)
        .sup_norm();
  };
  r.at_optimum = detail::probe(perf, sim, opt.policy, dirs, residual);
  const auto shifted = perturbed(opt.policy, constant_control(1.0), perturbation);
  r.at_perturbed = detail::probe(perf, sim, shifted, dirs, residual);
  detail::finish(r);
  return r;
}

inline Report consumption_report(const consumption::ConsumptionParams& p, const SolverConfig& cfg,
                                 double perturbation, std::size_t directions,
                                 Thresholds th = {}) {
  Report r;
  r.example = "consumption";
  r.perturbation = perturbation;
  r.thresholds = th;
  const double p0_init = consumption::budget_p0_initial(p);
  const auto p0 = consumption::adjoint_p0(p, p0_init, cfg.grid);
  const auto uhat = open_loop(consumption::optimal_consumption_path(p, p0_init, cfg.grid));
  const auto perf = consumption::performance(p);
  const auto hspec = consumption::hamiltonian_spec(p);
  const Simulator sim = [&](const ControlPolicy& u) {
    return consumption::simulate_ensemble(p, u, cfg, consumption::Mode::lift);
  };
  const auto dirs = consumption::budget_neutral_directions(p, cfg.grid, directions);
  const auto adjoint = AdjointPath::deterministic(p0);
  auto residual = [&](const ControlPolicy& u) {
    const auto ens = sim(u);
    return necessary_residual(hspec, ens, u, adjoint, Information::trivial).sup_norm();
  };
  r.at_optimum = detail::probe(perf, sim, uhat, dirs, residual);
  const auto shifted = perturbed(uhat, constant_control(1.0), perturbation);
  r.at_perturbed = detail::probe(perf, sim, shifted, dirs, residual);
  detail::finish(r);
  return r;
}

}  // namespace emf::equivalence
