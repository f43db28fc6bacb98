#pragma once

// Mean-field linear-quadratic example.
//
//   dX = E[X](b0 + u) dt + sigma0 E[X] dB + int gamma0(zeta) E[X] N~(dt, dzeta)
//   J(u) = E[ -1/2 X(T)^2 - 1/2 int_0^T u^2 dt ]
//
// Y(t) = E[Xhat(t)] solves the nonlocal Riccati equation Y' = b0 Y - Y^2 Y(T),
// Y(0) = x0, and the candidate optimum is uhat(t) = -Y(t) K(t) with
// K(t) = E[Xhat(T) | F_t].

#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "emf/drivers.hpp"
#include "emf/mfsde.hpp"
#include "emf/mp.hpp"
#include "emf/parallel.hpp"
#include "emf/time_grid.hpp"

namespace emf::lq {

struct JumpMark {
  double mark = 0.0;
  double rate = 0.0;
  double gamma0 = 0.0;  // jump size factor, must exceed -1
};

struct LQParams {
  double b0 = 0.0;
  double sigma0 = 0.0;
  std::vector<JumpMark> jumps;
  double x0 = 1.0;
  double T = 1.0;

  void validate() const {
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("LQParams: T must be > 0");
    if (!std::isfinite(b0) || !std::isfinite(sigma0) || !std::isfinite(x0)) {
      throw std::invalid_argument("LQParams: b0, sigma0 and x0 must be finite");
    }
    for (const auto& j : jumps) {
      if (!(j.gamma0 > -1.0)) {
        throw std::invalid_argument("LQParams: gamma0 must exceed -1 at every mark (got " +
                                    std::to_string(j.gamma0) + ")");
      }
      if (!(j.rate >= 0.0)) throw std::invalid_argument("LQParams: jump rates must be >= 0");
    }
  }

  JumpMeasureSpec jump_measure() const {
    JumpMeasureSpec s;
    for (const auto& j : jumps) s.atoms.push_back({j.mark, j.rate});
    return s;
  }

  double gamma0(double mark) const {
    for (const auto& j : jumps) {
      if (j.mark == mark) return j.gamma0;
    }
    return 0.0;
  }

  bool deterministic() const {
    if (sigma0 != 0.0) return false;
    for (const auto& j : jumps) {
      if (j.rate > 0.0 && j.gamma0 != 0.0) return false;
    }
    return true;
  }
};

class RiccatiError : public std::runtime_error {
 public:
  RiccatiError(const std::string& what, std::vector<double> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

struct RiccatiSolution {
  ForwardPath Y;
  double Y_T = 0.0;
  int sweeps = 0;
  std::vector<double> history;  // c after each sweep
  double fixed_point_residual = 0.0;  // |c - Y(T)| of the final integration
};

namespace detail {
inline ForwardPath integrate_riccati(double b0, double c, double x0, const TimeGrid& grid) {
  ForwardPath y(grid.nodes());
  y[0] = x0;
  const double h = grid.dt();
  auto f = [&](double v) { return b0 * v - c * v * v; };
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double v = y[k];
    const double k1 = f(v);
    const double k2 = f(v + 0.5 * h * k1);
    const double k3 = f(v + 0.5 * h * k2);
    const double k4 = f(v + h * k3);
    y[k + 1] = v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}
}  // namespace detail

/// Fixed point on c = Y(T): integrate Y' = b0 Y - c Y^2 by RK4, then
/// c <- c + 0.5 (Y(T) - c), until the update is below 1e-10.
inline RiccatiSolution riccati_solve(const LQParams& p, double dt) {
  p.validate();
  const TimeGrid grid(p.T, dt);
  RiccatiSolution out;
  double c = p.x0;
  for (int sweep = 1; sweep <= 200; ++sweep) {
    auto y = detail::integrate_riccati(p.b0, c, p.x0, grid);
    const double yt = y.back();
    if (!std::isfinite(yt)) {
      out.history.push_back(yt);
      throw RiccatiError("riccati_solve: integration blew up at sweep " + std::to_string(sweep),
                         out.history);
    }
    const double next = c + 0.5 * (yt - c);
    out.history.push_back(next);
    const bool done = std::abs(next - c) < 1e-10;
    c = next;
    if (done) {
      out.Y = detail::integrate_riccati(p.b0, c, p.x0, grid);
      out.Y_T = c;
      out.sweeps = sweep;
      out.fixed_point_residual = std::abs(c - out.Y.back());
      return out;
    }
  }
  std::ostringstream msg;
  msg << "riccati_solve: no convergence after 200 sweeps; last iterates";
  for (std::size_t i = out.history.size() > 5 ? out.history.size() - 5 : 0; i < out.history.size();
       ++i) {
    msg << ' ' << out.history[i];
  }
  throw RiccatiError(msg.str(), out.history);
}

/// Positive root of x0 T c^2 + c - x0 = 0: Y(T) when b0 = 0.
inline double riccati_closed_form_b0_zero(double x0, double T) {
  if (x0 == 0.0) return 0.0;
  const double a = x0 * T;
  return (-1.0 + std::sqrt(1.0 + 4.0 * a * x0)) / (2.0 * a);
}

/// K(t) = Y(T) + int Y sigma0 dB + int int Y gamma0 N~, Euler on the grid of Y.
inline ForwardPath k_martingale(const LQParams& p, const ForwardPath& Y,
                                const NoiseRealization& noise) {
  if (noise.brownian_increments.size() + 1 != Y.size()) {
    throw std::invalid_argument("k_martingale: noise does not match the Riccati grid");
  }
  const double dt = noise.dt;
  double comp = 0.0;
  for (const auto& j : p.jumps) comp += j.rate * j.gamma0;
  ForwardPath k(Y.size());
  k[0] = Y.back();
  for (std::size_t s = 0; s + 1 < Y.size(); ++s) {
    double dk = Y[s] * p.sigma0 * noise.brownian_increments[s];
    double jumps = 0.0;
    for (const auto& e : noise.jumps_at(s)) jumps += p.gamma0(e.mark);
    dk += Y[s] * (jumps - comp * dt);
    k[s + 1] = k[s] + dk;
  }
  return k;
}

/// uhat(t) = -Y(t) K(t).
inline ForwardPath optimal_control(const LQParams& /*p*/, const ForwardPath& Y,
                                   const ForwardPath& K) {
  if (Y.size() != K.size()) throw std::invalid_argument("optimal_control: Y and K differ in size");
  ForwardPath u(Y.size());
  for (std::size_t k = 0; k < Y.size(); ++k) u[k] = -Y[k] * K[k];
  return u;
}

// ---------------------------------------------------------------------------
// Problem plumbing for the generic solvers
// ---------------------------------------------------------------------------

inline MfSdeProblem problem(const LQParams& p) {
  MfSdeProblem prob;
  prob.x0 = p.x0;
  prob.jumps = p.jump_measure();
  const double b0 = p.b0;
  const double s0 = p.sigma0;
  prob.coefficients.drift = [b0](const CoefficientArgs& a) { return a.law.mean() * (b0 + a.u); };
  if (s0 != 0.0) {
    prob.coefficients.diffusion = [s0](const CoefficientArgs& a) { return s0 * a.law.mean(); };
  }
  if (!p.jumps.empty()) {
    prob.coefficients.jump = [p](const CoefficientArgs& a, double mark) {
      return p.gamma0(mark) * a.law.mean();
    };
  }
  return prob;
}

inline PerformanceSpec performance() {
  PerformanceSpec perf;
  perf.running_reward = [](const CoefficientArgs& a) { return -0.5 * a.u * a.u; };
  perf.terminal = [](double x, const EmpiricalMeasure&) { return -0.5 * x * x; };
  return perf;
}

inline HamiltonianSpec hamiltonian_spec(const LQParams& p) {
  const auto prob = problem(p);
  HamiltonianSpec h;
  h.running_reward = [](const CoefficientArgs& a) { return -0.5 * a.u * a.u; };
  h.coefficients = prob.coefficients;
  h.jumps = prob.jumps;
  h.control_gradient = [](const CoefficientArgs& a, const AdjointValues& adj) {
    return -a.u + adj.p0 * a.law.mean();
  };
  return h;
}

struct OptimalControl {
  RiccatiSolution riccati;
  std::vector<ForwardPath> K;      // one per particle
  std::vector<ForwardPath> u_hat;  // one per particle
  ControlPolicy policy;
};

/// Riccati solution, K on each particle's noise, and uhat as a control policy.
inline OptimalControl build_optimal_control(const LQParams& p, const SolverConfig& cfg) {
  OptimalControl out;
  out.riccati = riccati_solve(p, cfg.grid.dt());
  const auto prob = problem(p);
  out.K.resize(cfg.n_particles);
  out.u_hat.resize(cfg.n_particles);
  parallel_for(cfg.n_particles, [&](std::size_t i) {
    const auto noise = particle_noise(prob, cfg, i);
    out.K[i] = k_martingale(p, out.riccati.Y, noise);
    out.u_hat[i] = optimal_control(p, out.riccati.Y, out.K[i]);
  });
  out.policy = per_particle(out.u_hat);
  return out;
}

/// Adjoint used for the necessary-condition residual: p0(t) = -X(T) per
/// particle. Its conditional expectation given F_t is -K(t) for the exact
/// law; here the terminal value is read from the simulated closed-loop
/// ensemble, so the trivial-information residual tests the Riccati optimum
/// against the simulated dynamics rather than against itself.
inline AdjointPath terminal_adjoint(const SolutionEnsemble& ens) {
  AdjointPath a;
  const std::size_t nodes = ens.grid().nodes();
  a.p0.resize(ens.particles());
  for (std::size_t i = 0; i < ens.particles(); ++i) {
    a.p0[i] = ForwardPath(nodes, -ens.paths[i].back());
  }
  return a;
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

struct Perturbation {
  std::string name;
  std::function<double(double t)> shape;
};

/// {+1, -1, +t, -t, +sin t, -sin t}.
inline std::vector<Perturbation> standard_battery() {
  return {
      {"+1", [](double) { return 1.0; }},
      {"-1", [](double) { return -1.0; }},
      {"+t", [](double t) { return t; }},
      {"-t", [](double t) { return -t; }},
      {"+sin", [](double t) { return std::sin(t); }},
      {"-sin", [](double t) { return -std::sin(t); }},
  };
}

inline ControlPolicy shape_policy(std::function<double(double)> shape) {
  return [shape = std::move(shape)](const ControlArgs& a) { return shape(a.t); };
}

struct DirectionResult {
  std::string name;
  double lambda = 0.0;
  double J = 0.0;              // J(uhat + lambda pi)
  double gain = 0.0;           // J(uhat + lambda pi) - J(uhat), paired
  double standard_error = 0.0;  // of the paired gain
  double tolerance = 0.0;       // dt + 3 SE
  bool holds = false;           // J(uhat) >= J(uhat + lambda pi) - tolerance
};

struct OptimalityReport {
  RiccatiSolution riccati;
  double J_hat = 0.0;
  double J_hat_standard_error = 0.0;
  std::vector<DirectionResult> directions;
  ResidualPaths residual;
  double residual_sup = 0.0;
  double mean_tracking_error = 0.0;  // sup_t |E_N[Xhat(t)] - Y(t)|
  double mean_tracking_tolerance = 0.0;
  ForwardPath mean_path;
  ForwardPath u_hat_mean;
  ForwardPath K_mean;
  bool all_directions_hold = false;
};

/// Closed-loop check of the candidate optimum: J(uhat) against the battery at
/// each lambda on common noise, the trivial-information residual, and mean
/// tracking of Y.
inline OptimalityReport verify_lq_optimality(const LQParams& p, const SolverConfig& cfg,
                                             std::vector<double> lambdas = {0.1},
                                             std::vector<Perturbation> battery = standard_battery()) {
  p.validate();
  cfg.validate();
  OptimalityReport rep;
  auto opt = build_optimal_control(p, cfg);
  rep.riccati = opt.riccati;
  const auto prob = problem(p);
  const auto perf = performance();

  const auto ens = picard_solve(prob, opt.policy, cfg);
  const auto j_hat = evaluate_performance(perf, ens, opt.policy);
  rep.J_hat = j_hat.mean;
  rep.J_hat_standard_error = j_hat.standard_error;
  rep.mean_path = ens.mean_path();

  const std::size_t nodes = cfg.grid.nodes();
  rep.u_hat_mean.assign(nodes, 0.0);
  rep.K_mean.assign(nodes, 0.0);
  for (std::size_t k = 0; k < nodes; ++k) {
    double su = 0.0, sk = 0.0;
    for (std::size_t i = 0; i < cfg.n_particles; ++i) {
      su += opt.u_hat[i][k];
      sk += opt.K[i][k];
    }
    rep.u_hat_mean[k] = su / static_cast<double>(cfg.n_particles);
    rep.K_mean[k] = sk / static_cast<double>(cfg.n_particles);
  }

  for (std::size_t k = 0; k < nodes; ++k) {
    rep.mean_tracking_error =
        std::max(rep.mean_tracking_error, std::abs(rep.mean_path[k] - opt.riccati.Y[k]));
  }
  rep.mean_tracking_tolerance =
      3.0 * (1.0 / std::sqrt(static_cast<double>(cfg.n_particles)) + cfg.grid.dt());

  rep.all_directions_hold = true;
  for (double lambda : lambdas) {
    for (const auto& d : battery) {
      const auto u = perturbed(opt.policy, shape_policy(d.shape), lambda);
      const auto e = picard_solve(prob, u, cfg);
      const auto j = evaluate_performance(perf, e, u);
      const auto gain = performance_difference(j, j_hat);
      DirectionResult r;
      r.name = d.name;
      r.lambda = lambda;
      r.J = j.mean;
      r.gain = gain.mean;
      r.standard_error = gain.standard_error;
      r.tolerance = cfg.grid.dt() + 3.0 * gain.standard_error;
      r.holds = r.gain <= r.tolerance;
      rep.all_directions_hold = rep.all_directions_hold && r.holds;
      rep.directions.push_back(r);
    }
  }

  rep.residual = necessary_residual(hamiltonian_spec(p), ens, opt.policy, terminal_adjoint(ens),
                                    Information::trivial);
  rep.residual_sup = rep.residual.sup_norm();
  return rep;
}

/// Deterministic-case oracle: -1/2 Y(T)^2 - 1/2 int uhat^2 dt by the
/// trapezoid rule over the Riccati path.
inline double deterministic_value(const RiccatiSolution& r, double dt) {
  std::vector<double> u2(r.Y.size());
  for (std::size_t k = 0; k < r.Y.size(); ++k) {
    const double u = -r.Y[k] * r.Y_T;
    u2[k] = u * u;
  }
  return -0.5 * r.Y_T * r.Y_T - 0.5 * quad::trapezoid(u2, dt);
}

}  // namespace emf::lq
