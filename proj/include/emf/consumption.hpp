#pragma once

// Optimal consumption with exponential-kernel memory in the wealth drift.
//
//   dX = ( int_0^t exp(-rho r) X(t - r) dr - u(t) ) dt + beta X dB,  X(0) = x0
//   J(u) = E[ int_0^inf exp(-delta t) ln u(t) dt ]
//
// The deterministic adjoint p0(t) = p0(0) exp(-t/rho + (1 - exp(-rho t))/rho^2),
// the consumption uhat = exp(-delta t)/p0(t), and p0(0) fixed by the budget
// int exp(-rho t) uhat dt = x0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "emf/drivers.hpp"
#include "emf/measures.hpp"
#include "emf/mfsde.hpp"
#include "emf/mp.hpp"
#include "emf/parallel.hpp"
#include "emf/quadrature.hpp"
#include "emf/rng.hpp"
#include "emf/time_grid.hpp"

namespace emf::consumption {

struct ConsumptionParams {
  double beta = 0.2;
  double rho = 1.0;
  double delta = 1.0;
  double x0 = 1.0;
  double t_max = 40.0;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument(std::string("ConsumptionParams: ") + name + " must be > 0");
      }
    };
    positive(beta, "beta");
    positive(rho, "rho");
    positive(delta, "delta");
    positive(x0, "x0");
    positive(t_max, "t_max");
  }
};

/// Raised when the closed-form adjoint and its ODE integration disagree.
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double adjoint_p0_at(const ConsumptionParams& p, double p0_init, double t) {
  return p0_init * std::exp(-t / p.rho + (1.0 - std::exp(-p.rho * t)) / (p.rho * p.rho));
}

/// Closed-form adjoint on the grid, cross-checked against RK4 integration of
/// dp0 = -(1/rho)(1 - exp(-rho t)) p0 dt with steps of at most 1e-3.
inline ForwardPath adjoint_p0(const ConsumptionParams& p, double p0_init, const TimeGrid& grid) {
  if (!(p0_init > 0.0)) throw std::invalid_argument("adjoint_p0: p0_init must be > 0");
  if (!(p.rho > 0.0)) throw std::invalid_argument("adjoint_p0: rho must be > 0");
  ForwardPath out(grid.nodes());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = adjoint_p0_at(p, p0_init, grid.time(k));

  const auto sub = static_cast<std::size_t>(std::ceil(grid.dt() / 1e-3 - 1e-9));
  const double h = grid.dt() / static_cast<double>(sub);
  auto f = [&](double t, double v) { return -(1.0 - std::exp(-p.rho * t)) / p.rho * v; };
  double v = p0_init;
  double t = 0.0;
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    for (std::size_t s = 0; s < sub; ++s) {
      const double k1 = f(t, v);
      const double k2 = f(t + 0.5 * h, v + 0.5 * h * k1);
      const double k3 = f(t + 0.5 * h, v + 0.5 * h * k2);
      const double k4 = f(t + h, v + h * k3);
      v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
    }
    worst = std::max(worst, std::abs(v - out[k + 1]) / std::abs(out[k + 1]));
  }
  if (worst > 1e-8) {
    std::ostringstream msg;
    msg << "adjoint_p0: closed form and ODE integration differ by " << worst << " (relative)";
    throw ConsistencyError(msg.str());
  }
  return out;
}

/// uhat(t) = (1/p0(0)) exp((1/rho - delta) t - (1 - exp(-rho t))/rho^2).
inline double optimal_consumption(const ConsumptionParams& p, double p0_init, double t) {
  if (!(p0_init > 0.0)) throw std::invalid_argument("optimal_consumption: p0_init must be > 0");
  if (!(t >= 0.0)) throw std::invalid_argument("optimal_consumption: t must be >= 0");
  return std::exp((1.0 / p.rho - p.delta) * t - (1.0 - std::exp(-p.rho * t)) / (p.rho * p.rho)) /
         p0_init;
}

inline ForwardPath optimal_consumption_path(const ConsumptionParams& p, double p0_init,
                                            const TimeGrid& grid) {
  ForwardPath u(grid.nodes());
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = optimal_consumption(p, p0_init, grid.time(k));
  return u;
}

/// p0(0) = (1/x0) int_0^inf exp((1/rho - delta - rho) t - (1 - exp(-rho t))/rho^2) dt.
inline double budget_p0_initial(const ConsumptionParams& p) {
  p.validate();
  const double a = 1.0 / p.rho - p.delta - p.rho;
  if (!(a < 0.0)) {
    std::ostringstream msg;
    msg << "budget_p0_initial: the integral diverges unless 1/rho - delta - rho < 0 (got " << a
        << ")";
    throw std::invalid_argument(msg.str());
  }
  const double r2 = p.rho * p.rho;
  const auto e = quad::integrate_to_infinity(
      [&](double t) { return std::exp(a * t - (1.0 - std::exp(-p.rho * t)) / r2); }, 0.0);
  return e.value / p.x0;
}

/// int_0^inf exp(-rho t) uhat(t) dt - x0.
inline double budget_residual(const ConsumptionParams& p, double p0_init) {
  const auto e = quad::integrate_to_infinity(
      [&](double t) { return std::exp(-p.rho * t) * optimal_consumption(p, p0_init, t); }, 0.0);
  return e.value - p.x0;
}

// ---------------------------------------------------------------------------
// Uncontrolled mean wealth y0 and its growth rate
// ---------------------------------------------------------------------------

/// y0 on the grid from y'' + rho y' - y = 0, y(0) = x0, y'(0) = 0, by RK4 with
/// steps of at most 1e-3.
inline ForwardPath y0_path(const ConsumptionParams& p, const TimeGrid& grid) {
  const auto sub = static_cast<std::size_t>(std::ceil(grid.dt() / 1e-3 - 1e-9));
  const double h = grid.dt() / static_cast<double>(sub);
  ForwardPath out(grid.nodes());
  double y = p.x0, v = 0.0;
  out[0] = y;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    for (std::size_t s = 0; s < sub; ++s) {
      // (y, v)' = (v, y - rho v)
      const double k1y = v, k1v = y - p.rho * v;
      const double k2y = v + 0.5 * h * k1v, k2v = (y + 0.5 * h * k1y) - p.rho * (v + 0.5 * h * k1v);
      const double k3y = v + 0.5 * h * k2v, k3v = (y + 0.5 * h * k2y) - p.rho * (v + 0.5 * h * k2v);
      const double k4y = v + h * k3v, k4v = (y + h * k3y) - p.rho * (v + h * k3v);
      y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
      v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    out[k + 1] = y;
  }
  return out;
}

/// Direct trapezoid iteration of y(t) = x0 + int_0^t (1/rho)(1 - exp(rho(s - t))) y(s) ds.
/// O(n^2); kept as a cross-check of the ODE reduction.
inline ForwardPath y0_volterra(const ConsumptionParams& p, const TimeGrid& grid) {
  const double dt = grid.dt();
  ForwardPath y(grid.nodes(), p.x0);
  for (std::size_t k = 1; k < y.size(); ++k) {
    const double t = grid.time(k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double w = j == 0 ? 0.5 : 1.0;  // kernel vanishes at s = t
      s += w * (1.0 - std::exp(p.rho * (grid.time(j) - t))) / p.rho * y[j];
    }
    y[k] = p.x0 + s * dt;
  }
  return y;
}

/// Growth rate of y0: slope of log y0 over the final third of [0, t_max].
inline double lyapunov_exponent(const ConsumptionParams& p) {
  if (!(p.rho > 0.0)) throw std::invalid_argument("lyapunov_exponent: rho must be > 0");
  const double dt = 1e-3;
  const TimeGrid grid(std::round(p.t_max / dt) * dt, dt);
  const auto y = y0_path(p, grid);
  std::vector<double> ts, ls;
  const std::size_t start = (2 * grid.steps()) / 3;
  for (std::size_t k = start; k < y.size(); ++k) {
    ts.push_back(grid.time(k));
    ls.push_back(std::log(y[k]));
  }
  return quad::regression_slope(ts, ls);
}

/// Admissibility requires rho < 1 / lambda0.
inline bool admissible(const ConsumptionParams& p, double lambda0) { return p.rho * lambda0 < 1.0; }

// ---------------------------------------------------------------------------
// Wealth simulation
// ---------------------------------------------------------------------------

enum class Mode { convolution, lift };

inline MfSdeProblem problem(const ConsumptionParams& p) {
  MfSdeProblem prob;
  prob.x0 = p.x0;
  const auto F = LinearFunctionalSpec::exponential(p.rho);
  prob.coefficients.drift = [F](const CoefficientArgs& a) {
    return apply_functional(F, a.memory) - a.u;
  };
  const double beta = p.beta;
  prob.coefficients.diffusion = [beta](const CoefficientArgs& a) { return beta * a.x; };
  return prob;
}

inline LiftCoefficients lift_coefficients(const ConsumptionParams& p) {
  const double beta = p.beta;
  return {[](const LiftArgs& a) { return a.lifted - a.u; },
          [beta](const LiftArgs& a) { return beta * a.x; }};
}

/// Wealth paths on the given noise. The dynamics carry no law dependence, so
/// one pass against a placeholder law is the exact solution of the scheme.
inline ForwardPath simulate_path(const ConsumptionParams& p, const ControlPolicy& control,
                                 std::size_t particle, const NoiseRealization& noise,
                                 const TimeGrid& grid, Mode mode) {
  static const EmpiricalMeasure placeholder = EmpiricalMeasure::dirac(0.0);
  const auto law = LawPath::constant(grid, placeholder);
  if (mode == Mode::lift) {
    return markovian_lift_simulate(LinearFunctionalSpec::exponential(p.rho), lift_coefficients(p),
                                   p.x0, law, control, particle, noise, grid)
        .x;
  }
  return simulate_given_law(problem(p), law, control, particle, noise, grid);
}

/// Euler discretisation of the Volterra form
///   X(t) = x0 + int_0^t (1/rho)(1 - exp(rho(s - t))) X(s) ds - int_0^t u ds + int_0^t beta X dB.
inline ForwardPath simulate_volterra(const ConsumptionParams& p, const ControlPolicy& control,
                                     std::size_t particle, const NoiseRealization& noise,
                                     const TimeGrid& grid) {
  const double dt = grid.dt();
  ForwardPath x(grid.nodes(), p.x0);
  double consumed = 0.0;
  double stochastic = 0.0;
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double t = grid.time(k);
    consumed += (control ? control({particle, k, t, x[k]}) : 0.0) * dt;
    stochastic += p.beta * x[k] * noise.brownian_increments[k];
    const double t_next = grid.time(k + 1);
    double drift = 0.0;
    for (std::size_t j = 0; j <= k; ++j) {
      drift += (1.0 - std::exp(p.rho * (grid.time(j) - t_next))) / p.rho * x[j];
    }
    x[k + 1] = p.x0 + drift * dt - consumed + stochastic;
  }
  return x;
}

inline SolutionEnsemble simulate_ensemble(const ConsumptionParams& p, const ControlPolicy& control,
                                          const SolverConfig& cfg, Mode mode) {
  cfg.validate();
  const JumpMeasureSpec none;
  std::vector<ForwardPath> paths(cfg.n_particles);
  parallel_for(cfg.n_particles, [&](std::size_t i) {
    const auto noise = sample_noise(cfg.grid, none, derive_seed(cfg.seed, i));
    paths[i] = simulate_path(p, control, i, noise, cfg.grid, mode);
  });
  SolutionEnsemble out;
  out.law = law_of(paths, cfg.grid);
  out.paths = std::move(paths);
  out.picard_iterations = 1;
  out.converged = true;
  return out;
}

inline PerformanceSpec performance(const ConsumptionParams& p) {
  PerformanceSpec perf;
  const double delta = p.delta;
  perf.running_reward = [delta](const CoefficientArgs& a) {
    return std::exp(-delta * a.t) * std::log(a.u);
  };
  return perf;
}

inline HamiltonianSpec hamiltonian_spec(const ConsumptionParams& p) {
  const auto prob = problem(p);
  HamiltonianSpec h;
  const double delta = p.delta;
  h.running_reward = [delta](const CoefficientArgs& a) {
    return std::exp(-delta * a.t) * std::log(a.u);
  };
  h.coefficients = prob.coefficients;
  h.control_gradient = [delta](const CoefficientArgs& a, const AdjointValues& adj) {
    return std::exp(-delta * a.t) / a.u - adj.p0;
  };
  return h;
}

/// Directions pi with int_0^{t_max} exp(-rho t) pi dt = 0 on the grid
/// (trapezoid), so that u + lambda pi spends the same discounted budget.
inline std::vector<ForwardPath> budget_neutral_directions(const ConsumptionParams& p,
                                                          const TimeGrid& grid,
                                                          std::size_t count = 5) {
  const std::size_t n = grid.nodes();
  ForwardPath disc(n), disc2(n);
  for (std::size_t k = 0; k < n; ++k) {
    disc[k] = std::exp(-p.rho * grid.time(k));
    disc2[k] = disc[k] * disc[k];
  }
  const double norm = quad::trapezoid(disc2, grid.dt());
  const double T = grid.t_end();
  const std::vector<std::function<double(double)>> shapes = {
      [](double) { return 1.0; },
      [T](double t) { return t / T; },
      [](double t) { return std::sin(t); },
      [](double t) { return -std::cos(t); },
      [](double t) { return std::exp(-0.5 * t); },
      [](double t) { return std::sin(2.0 * t); },
  };
  std::vector<ForwardPath> out;
  for (std::size_t d = 0; d < std::min(count, shapes.size()); ++d) {
    ForwardPath phi(n), weighted(n);
    for (std::size_t k = 0; k < n; ++k) {
      phi[k] = shapes[d](grid.time(k));
      weighted[k] = disc[k] * phi[k];
    }
    const double c = quad::trapezoid(weighted, grid.dt()) / norm;
    for (std::size_t k = 0; k < n; ++k) phi[k] -= c * disc[k];
    out.push_back(std::move(phi));
  }
  return out;
}

struct WealthReport {
  double lambda0 = 0.0;
  bool admissible = false;
  double p0_init = 0.0;
  double budget_residual = 0.0;
  double truncated_budget = 0.0;  // int_0^{t_max} exp(-rho t) uhat dt
  double square_integrability = 0.0;  // E int_0^{t_max} X^2 dt
  TransversalityReport product_ladder;     // p0(T) E[Xhat(T)]
  TransversalityReport difference_ladder;  // E[p0(T)(X(T) - Xhat(T))], X under 0.9 uhat
  double volterra_sup_difference = 0.0;    // Volterra form vs main scheme, sup over nodes of RMS
  double volterra_relative_difference = 0.0;  // the same divided by sup over nodes of RMS wealth
  ForwardPath p0;
  ForwardPath u_hat;
};

/// Optimal wealth ensemble and its report. Inadmissible parameters produce a
/// warning and the simulation proceeds. The Volterra cross-simulation is
/// O(steps^2) per particle and runs on at most `volterra_particles` particles.
inline WealthReport simulate_optimal_wealth(const ConsumptionParams& p, const SolverConfig& cfg,
                                            std::vector<double> ladder, Mode mode,
                                            SolutionEnsemble* ensemble_out = nullptr,
                                            std::size_t volterra_particles = 16) {
  p.validate();
  cfg.validate();
  WealthReport rep;
  rep.lambda0 = lyapunov_exponent(p);
  rep.admissible = admissible(p, rep.lambda0);
  if (!rep.admissible) {
    std::clog << "emf: rho * lambda0 = " << p.rho * rep.lambda0
              << " >= 1; the transversality argument does not apply\n";
  }
  rep.p0_init = budget_p0_initial(p);
  rep.budget_residual = budget_residual(p, rep.p0_init);
  const auto& grid = cfg.grid;
  rep.p0 = adjoint_p0(p, rep.p0_init, grid);
  rep.u_hat = optimal_consumption_path(p, rep.p0_init, grid);
  {
    ForwardPath w(grid.nodes());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::exp(-p.rho * grid.time(k)) * rep.u_hat[k];
    rep.truncated_budget = quad::trapezoid(w, grid.dt());
  }

  const auto uhat = open_loop(rep.u_hat);
  const auto ens = simulate_ensemble(p, uhat, cfg, mode);

  ForwardPath second(grid.nodes());
  for (std::size_t k = 0; k < grid.nodes(); ++k) second[k] = ens.law[k].second_moment();
  rep.square_integrability = quad::trapezoid(second, grid.dt());

  std::vector<LadderPoint> product;
  for (double T : ladder) {
    const std::size_t k = grid.node_at(T);
    const auto& m = ens.law[k];
    const double se = std::sqrt(m.variance() / static_cast<double>(ens.particles()));
    product.push_back({T, rep.p0[k] * m.mean(), rep.p0[k] * se});
  }
  rep.product_ladder = finish_ladder(std::move(product));

  ForwardPath scaled = rep.u_hat;
  for (double& v : scaled) v *= 0.9;
  const auto ens_u = simulate_ensemble(p, open_loop(scaled), cfg, mode);
  rep.difference_ladder =
      transversality_check(AdjointPath::deterministic(rep.p0), ens_u, ens, ladder);

  const std::size_t nv = std::min(volterra_particles, cfg.n_particles);
  std::vector<double> sq(grid.nodes(), 0.0);
  std::vector<ForwardPath> diffs(nv);
  const JumpMeasureSpec none;
  parallel_for(nv, [&](std::size_t i) {
    const auto noise = sample_noise(grid, none, derive_seed(cfg.seed, i));
    const auto v = simulate_volterra(p, uhat, i, noise, grid);
    diffs[i].resize(grid.nodes());
    for (std::size_t k = 0; k < grid.nodes(); ++k) diffs[i][k] = v[k] - ens.paths[i][k];
  });
  double scale = 0.0;
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    double s = 0.0, m = 0.0;
    for (std::size_t i = 0; i < nv; ++i) {
      s += diffs[i][k] * diffs[i][k];
      m += ens.paths[i][k] * ens.paths[i][k];
    }
    rep.volterra_sup_difference =
        std::max(rep.volterra_sup_difference, std::sqrt(s / static_cast<double>(nv)));
    scale = std::max(scale, std::sqrt(m / static_cast<double>(nv)));
  }
  rep.volterra_relative_difference = scale > 0.0 ? rep.volterra_sup_difference / scale : 0.0;

  if (ensemble_out) *ensemble_out = ens;
  return rep;
}

/// sup over nodes of the particle RMS difference between the lift and the
/// convolution schemes on the same noise.
inline double lift_convolution_gap(const ConsumptionParams& p, const ControlPolicy& control,
                                   const std::vector<NoiseRealization>& noise,
                                   const TimeGrid& grid) {
  std::vector<ForwardPath> diffs(noise.size());
  parallel_for(noise.size(), [&](std::size_t i) {
    const auto a = simulate_path(p, control, i, noise[i], grid, Mode::lift);
    const auto b = simulate_path(p, control, i, noise[i], grid, Mode::convolution);
    diffs[i].resize(grid.nodes());
    for (std::size_t k = 0; k < grid.nodes(); ++k) diffs[i][k] = a[k] - b[k];
  });
  double sup = 0.0;
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    double s = 0.0;
    for (const auto& d : diffs) s += d[k] * d[k];
    sup = std::max(sup, std::sqrt(s / static_cast<double>(diffs.size())));
  }
  return sup;
}

}  // namespace emf::consumption
