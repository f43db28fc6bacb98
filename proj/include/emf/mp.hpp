#pragma once

// Maximum-principle tooling: the Hamiltonian, the derivative process Z of the
// state with respect to a control perturbation, directional derivatives of
// the performance functional, necessary-condition residuals and
// transversality ladders.
//
//   H = f + p0 b + q0 sigma + sum_k r0(zeta_k) gamma(., zeta_k) nu_k + <p1, M'>
//
// Adjoint processes are supplied by the caller (the worked examples have them
// in closed form); nothing here solves a backward equation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "emf/drivers.hpp"
#include "emf/measures.hpp"
#include "emf/mfsde.hpp"
#include "emf/parallel.hpp"
#include "emf/quadrature.hpp"

namespace emf {

/// Adjoint values at one (particle, node).
struct AdjointValues {
  double p0 = 0.0;
  double q0 = 0.0;
  std::span<const double> r0;                   // one value per jump atom
  const SignedMeasure* law_derivative = nullptr;  // M'(t), when a p1 action is used
};

struct HamiltonianSpec {
  Coefficient running_reward;
  CoefficientSpec coefficients;
  JumpMeasureSpec jumps;
  /// m' -> <p1, m'>; absent means the measure-valued adjoint term is zero.
  std::function<double(const SignedMeasure&)> p1_action;
  /// Optional analytic dH/du.
  std::function<double(const CoefficientArgs&, const AdjointValues&)> control_gradient;
};

inline double hamiltonian(const HamiltonianSpec& spec, const CoefficientArgs& args,
                          const AdjointValues& adj) {
  const auto& c = spec.coefficients;
  double h = spec.running_reward ? spec.running_reward(args) : 0.0;
  if (c.drift) h += adj.p0 * c.drift(args);
  if (c.diffusion) h += adj.q0 * c.diffusion(args);
  if (c.jump && !adj.r0.empty()) {
    const auto& atoms = spec.jumps.atoms;
    if (adj.r0.size() != atoms.size()) {
      throw std::invalid_argument("hamiltonian: r0 needs one value per jump atom");
    }
    for (std::size_t m = 0; m < atoms.size(); ++m) {
      h += adj.r0[m] * c.jump(args, atoms[m].mark) * atoms[m].rate;
    }
  }
  if (spec.p1_action && adj.law_derivative) h += spec.p1_action(*adj.law_derivative);
  return h;
}

/// dH/du: analytic when declared, else a central difference.
inline double hamiltonian_control_gradient(const HamiltonianSpec& spec, const CoefficientArgs& args,
                                           const AdjointValues& adj) {
  if (spec.control_gradient) return spec.control_gradient(args, adj);
  const double h = 1e-6 * std::max(1.0, std::abs(args.u));
  CoefficientArgs up = args;
  CoefficientArgs down = args;
  up.u = args.u + h;
  down.u = args.u - h;
  return (hamiltonian(spec, up, adj) - hamiltonian(spec, down, adj)) / (2.0 * h);
}

/// d^2H/du^2 by a central second difference.
inline double hamiltonian_control_curvature(const HamiltonianSpec& spec,
                                            const CoefficientArgs& args, const AdjointValues& adj,
                                            double step = 1e-4) {
  const double h = step * std::max(1.0, std::abs(args.u));
  CoefficientArgs up = args;
  CoefficientArgs down = args;
  up.u = args.u + h;
  down.u = args.u - h;
  return (hamiltonian(spec, up, adj) - 2.0 * hamiltonian(spec, args, adj) +
          hamiltonian(spec, down, adj)) /
         (h * h);
}

// ---------------------------------------------------------------------------
// Adjoint paths
// ---------------------------------------------------------------------------

/// (p0, q0, r0) on the grid. Each component holds either a single path shared
/// by all particles (a deterministic adjoint) or one path per particle; an
/// empty component is identically zero. Values past the last node are zero.
struct AdjointPath {
  std::vector<ForwardPath> p0;
  std::vector<ForwardPath> q0;
  std::vector<std::vector<double>> r0;  // per particle, r0[i][k * n_marks + m]
  std::size_t n_marks = 0;

  static AdjointPath deterministic(ForwardPath p0_path) {
    AdjointPath a;
    a.p0.push_back(std::move(p0_path));
    return a;
  }

  double p0_at(std::size_t i, std::size_t k) const { return value(p0, i, k); }
  double q0_at(std::size_t i, std::size_t k) const { return value(q0, i, k); }

  std::span<const double> r0_at(std::size_t i, std::size_t k) const {
    if (r0.empty() || n_marks == 0) return {};
    const auto& row = r0.size() == 1 ? r0.front() : r0.at(i);
    if ((k + 1) * n_marks > row.size()) return {};
    return {row.data() + k * n_marks, n_marks};
  }

 private:
  static double value(const std::vector<ForwardPath>& c, std::size_t i, std::size_t k) {
    if (c.empty()) return 0.0;
    const auto& path = c.size() == 1 ? c.front() : c.at(i);
    return k < path.size() ? path[k] : 0.0;
  }
};

// ---------------------------------------------------------------------------
// Derivative process
// ---------------------------------------------------------------------------

/// Direction of the linearisation at one (particle, node), for declared
/// analytic partials.
struct Direction {
  double z;
  PathSegment z_memory;
  double law_mean_shift;  // E[Z(t)]
  double du;
};

struct Linearization {
  std::function<double(const CoefficientArgs&, const Direction&)> drift;
  std::function<double(const CoefficientArgs&, const Direction&)> diffusion;
};

struct DerivativeProcess {
  std::vector<ForwardPath> z;  // one per particle
  double max_partial_discrepancy = 0.0;
  bool partials_mismatch = false;
};

/// Z = d/dlambda X^{u + lambda pi} at lambda = 0 by the Euler scheme of the
/// linearised equation, Z(0) = 0. Directional derivatives of each coefficient
/// along (Z, Z_t, DM, DM_t, pi) are central differences in which the state,
/// its memory and the law path are all moved to X +- h Z; the law channel is
/// the empirical law of the perturbed ensemble. The noise is the one of
/// `cfg`, matching the base ensemble. When `declared` partials are given they
/// are compared with the differences and a relative gap above 1e-4 is flagged.
inline DerivativeProcess derivative_process(const MfSdeProblem& problem,
                                            const SolutionEnsemble& base,
                                            const ControlPolicy& control,
                                            const ControlPolicy& perturbation,
                                            const SolverConfig& cfg,
                                            const Linearization* declared = nullptr,
                                            double fd_step = 1e-6) {
  const auto& grid = cfg.grid;
  const std::size_t n = base.particles();
  if (n != cfg.n_particles || base.law.size() != grid.nodes()) {
    throw std::invalid_argument("derivative_process: base ensemble does not match the config");
  }
  const double h = fd_step;
  const double dt = grid.dt();
  const auto& coeffs = problem.coefficients;

  std::vector<NoiseRealization> noise(n);
  parallel_for(n, [&](std::size_t i) { noise[i] = particle_noise(problem, cfg, i); });

  DerivativeProcess out;
  out.z.assign(n, ForwardPath(grid.nodes(), 0.0));
  std::vector<ForwardPath> xp(n, ForwardPath(grid.nodes(), 0.0));
  std::vector<ForwardPath> xm(n, ForwardPath(grid.nodes(), 0.0));
  LawPath law_p = base.law;
  LawPath law_m = base.law;
  std::vector<double> discrepancy(n, 0.0);

  for (std::size_t k = 0; k < grid.steps(); ++k) {
    std::vector<double> sp(n), sm(n);
    double mean_z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = base.paths[i][k];
      const double z = out.z[i][k];
      xp[i][k] = x + h * z;
      xm[i][k] = x - h * z;
      sp[i] = xp[i][k];
      sm[i] = xm[i][k];
      mean_z += z;
    }
    mean_z /= static_cast<double>(n);
    law_p.set(k, EmpiricalMeasure::from_samples(std::move(sp)));
    law_m.set(k, EmpiricalMeasure::from_samples(std::move(sm)));
    const double t = grid.time(k);

    parallel_for(n, [&](std::size_t i) {
      const double x = base.paths[i][k];
      const double u = control ? control({i, k, t, x}) : 0.0;
      const double du = perturbation ? perturbation({i, k, t, x}) : 0.0;
      const CoefficientArgs ap{t,
                               k,
                               xp[i][k],
                               PathSegment(std::span<const double>(xp[i].data(), k + 1), k,
                                           Orientation::reversed, dt),
                               law_p[k],
                               law_p,
                               u + h * du};
      const CoefficientArgs am{t,
                               k,
                               xm[i][k],
                               PathSegment(std::span<const double>(xm[i].data(), k + 1), k,
                                           Orientation::reversed, dt),
                               law_m[k],
                               law_m,
                               u - h * du};
      auto diff = [&](const Coefficient& f) {
        return f ? (f(ap) - f(am)) / (2.0 * h) : 0.0;
      };
      const double db = diff(coeffs.drift);
      const double dsigma = diff(coeffs.diffusion);
      double dz = db * dt + dsigma * noise[i].brownian_increments[k];
      if (coeffs.jump) {
        for (const auto& e : noise[i].jumps_at(k)) {
          dz += (coeffs.jump(ap, e.mark) - coeffs.jump(am, e.mark)) / (2.0 * h);
        }
        double comp = 0.0;
        for (const auto& a : problem.jumps.atoms) {
          if (a.rate > 0.0) {
            comp += a.rate * (coeffs.jump(ap, a.mark) - coeffs.jump(am, a.mark)) / (2.0 * h);
          }
        }
        dz -= comp * dt;
      }
      out.z[i][k + 1] = out.z[i][k] + dz;

      if (declared) {
        const CoefficientArgs a0{t,
                                 k,
                                 x,
                                 PathSegment(std::span<const double>(base.paths[i].data(), k + 1),
                                             k, Orientation::reversed, dt),
                                 base.law[k],
                                 base.law,
                                 u};
        const Direction dir{out.z[i][k],
                            PathSegment(std::span<const double>(out.z[i].data(), k + 1), k,
                                        Orientation::reversed, dt),
                            mean_z, du};
        auto gap = [](double fd, double an) {
          return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
        };
        double g = 0.0;
        if (declared->drift) g = std::max(g, gap(db, declared->drift(a0, dir)));
        if (declared->diffusion) g = std::max(g, gap(dsigma, declared->diffusion(a0, dir)));
        discrepancy[i] = std::max(discrepancy[i], g);
      }
    });
  }
  for (double d : discrepancy) out.max_partial_discrepancy = std::max(out.max_partial_discrepancy, d);
  out.partials_mismatch = out.max_partial_discrepancy > 1e-4;
  return out;
}

// ---------------------------------------------------------------------------
// Performance functional and its directional derivative
// ---------------------------------------------------------------------------

/// J(u) = E[ int_0^T f dt + g(X(T), M(T)) ]; running reward integrated with
/// the trapezoid rule over the grid.
struct PerformanceSpec {
  Coefficient running_reward;
  std::function<double(double x, const EmpiricalMeasure& law)> terminal;
};

struct PerformanceValue {
  double mean = 0.0;
  double standard_error = 0.0;
  std::vector<double> per_particle;
};

namespace detail {
inline PerformanceValue summarize(std::vector<double> v) {
  PerformanceValue out;
  const double n = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  out.mean = m;
  out.standard_error = v.size() > 1 ? std::sqrt(s / (n - 1.0) / n) : 0.0;
  out.per_particle = std::move(v);
  return out;
}
}  // namespace detail

inline PerformanceValue evaluate_performance(const PerformanceSpec& perf,
                                             const SolutionEnsemble& ens,
                                             const ControlPolicy& control) {
  const auto& grid = ens.grid();
  const double dt = grid.dt();
  std::vector<double> per(ens.particles(), 0.0);
  parallel_for(ens.particles(), [&](std::size_t i) {
    const auto& x = ens.paths[i];
    double acc = 0.0;
    if (perf.running_reward) {
      for (std::size_t k = 0; k < grid.nodes(); ++k) {
        const double t = grid.time(k);
        const double u = control ? control({i, k, t, x[k]}) : 0.0;
        const CoefficientArgs args{t,
                                   k,
                                   x[k],
                                   PathSegment(std::span<const double>(x.data(), k + 1), k,
                                               Orientation::reversed, dt),
                                   ens.law[k],
                                   ens.law,
                                   u};
        const double w = (k == 0 || k + 1 == grid.nodes()) ? 0.5 : 1.0;
        acc += w * perf.running_reward(args);
      }
      acc *= dt;
    }
    if (perf.terminal) acc += perf.terminal(x.back(), ens.law[grid.nodes() - 1]);
    per[i] = acc;
  });
  return detail::summarize(std::move(per));
}

/// Paired difference J(a) - J(b) over ensembles simulated on common noise.
inline PerformanceValue performance_difference(const PerformanceValue& a,
                                               const PerformanceValue& b) {
  if (a.per_particle.size() != b.per_particle.size()) {
    throw std::invalid_argument("performance_difference: ensembles differ in size");
  }
  std::vector<double> d(a.per_particle.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.per_particle[i] - b.per_particle[i];
  return detail::summarize(std::move(d));
}

/// Simulates the controlled system on fixed noise and returns the ensemble.
using Simulator = std::function<SolutionEnsemble(const ControlPolicy&)>;

struct GateauxEstimate {
  std::vector<double> lambdas;
  std::vector<double> estimates;
  std::vector<double> standard_errors;
  double extrapolated = 0.0;  // Richardson combination of the two smallest steps
  double value() const { return extrapolated; }
};

/// d/dlambda J(u + lambda pi) at 0 by central differences on common noise,
/// (J(u + lambda pi) - J(u - lambda pi)) / (2 lambda), for each lambda.
inline GateauxEstimate gateaux_J(const PerformanceSpec& perf, const Simulator& simulate,
                                 const ControlPolicy& u, const ControlPolicy& pi,
                                 std::vector<double> lambdas = {1e-2, 1e-3}) {
  if (lambdas.empty()) throw std::invalid_argument("gateaux_J: no step sizes");
  std::sort(lambdas.begin(), lambdas.end(), std::greater<>());
  GateauxEstimate out;
  for (double lambda : lambdas) {
    if (!(lambda > 0.0)) throw std::invalid_argument("gateaux_J: step sizes must be positive");
    const auto up = perturbed(u, pi, lambda);
    const auto down = perturbed(u, pi, -lambda);
    const auto jp = evaluate_performance(perf, simulate(up), up);
    const auto jm = evaluate_performance(perf, simulate(down), down);
    const auto d = performance_difference(jp, jm);
    out.lambdas.push_back(lambda);
    out.estimates.push_back(d.mean / (2.0 * lambda));
    out.standard_errors.push_back(d.standard_error / (2.0 * lambda));
  }
  const std::size_t m = out.estimates.size();
  if (m == 1) {
    out.extrapolated = out.estimates[0];
  } else {
    const double r = out.lambdas[m - 2] / out.lambdas[m - 1];
    out.extrapolated =
        out.estimates[m - 1] + (out.estimates[m - 1] - out.estimates[m - 2]) / (r * r - 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Necessary condition and transversality
// ---------------------------------------------------------------------------

enum class Information { full, trivial };

/// E[dH/du | G_t] on the grid. `trivial`: one row, the ensemble mean per node.
/// `full`: one row per particle.
struct ResidualPaths {
  Information info = Information::trivial;
  std::vector<ForwardPath> values;

  double sup_norm() const {
    double s = 0.0;
    for (const auto& row : values) {
      for (double v : row) s = std::max(s, std::abs(v));
    }
    return s;
  }
};

inline ResidualPaths necessary_residual(const HamiltonianSpec& spec, const SolutionEnsemble& ens,
                                        const ControlPolicy& control, const AdjointPath& adjoint,
                                        Information info) {
  const auto& grid = ens.grid();
  const double dt = grid.dt();
  const std::size_t n = ens.particles();
  std::vector<std::optional<SignedMeasure>> law_derivatives(grid.nodes());
  if (spec.p1_action) {
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      law_derivatives[k] = law_derivative(ens.law, grid.time(k)).derivative;
    }
  }
  std::vector<ForwardPath> per(n, ForwardPath(grid.nodes(), 0.0));
  parallel_for(n, [&](std::size_t i) {
    const auto& x = ens.paths[i];
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      const double t = grid.time(k);
      const double u = control ? control({i, k, t, x[k]}) : 0.0;
      const CoefficientArgs args{t,
                                 k,
                                 x[k],
                                 PathSegment(std::span<const double>(x.data(), k + 1), k,
                                             Orientation::reversed, dt),
                                 ens.law[k],
                                 ens.law,
                                 u};
      const AdjointValues adj{adjoint.p0_at(i, k), adjoint.q0_at(i, k), adjoint.r0_at(i, k),
                              law_derivatives[k] ? &*law_derivatives[k] : nullptr};
      per[i][k] = hamiltonian_control_gradient(spec, args, adj);
    }
  });
  ResidualPaths out;
  out.info = info;
  if (info == Information::full) {
    out.values = std::move(per);
  } else {
    ForwardPath mean(grid.nodes(), 0.0);
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += per[i][k];
      mean[k] = s / static_cast<double>(n);
    }
    out.values.push_back(std::move(mean));
  }
  return out;
}

struct LadderPoint {
  double horizon = 0.0;
  double value = 0.0;
  double standard_error = 0.0;
};

struct TransversalityReport {
  std::vector<LadderPoint> ladder;
  double epsilon = 0.0;         // 3 standard errors of the last point
  bool tail_nonnegative = true;  // last value >= -epsilon
  double log_slope = std::numeric_limits<double>::quiet_NaN();  // d log|value| / dT
  bool p1_term_structurally_zero = true;
};

namespace detail {
inline double ladder_slope(const std::vector<LadderPoint>& ladder) {
  std::vector<double> xs, ys;
  for (const auto& p : ladder) {
    if (p.value != 0.0 && std::isfinite(p.value)) {
      xs.push_back(p.horizon);
      ys.push_back(std::log(std::abs(p.value)));
    }
  }
  if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  return quad::regression_slope(xs, ys);
}
}  // namespace detail

inline TransversalityReport finish_ladder(std::vector<LadderPoint> ladder) {
  TransversalityReport out;
  out.ladder = std::move(ladder);
  if (!out.ladder.empty()) {
    out.epsilon = 3.0 * out.ladder.back().standard_error;
    out.tail_nonnegative = out.ladder.back().value >= -out.epsilon;
  }
  out.log_slope = detail::ladder_slope(out.ladder);
  return out;
}

/// E[p0(T) (X(T) - Xhat(T))] along a ladder of horizons. The pairing of p1
/// with M(T) - Mhat(T) is not realised and is reported as structurally zero.
inline TransversalityReport transversality_check(const AdjointPath& p0,
                                                 const SolutionEnsemble& ens_u,
                                                 const SolutionEnsemble& ens_uhat,
                                                 std::span<const double> horizons) {
  if (ens_u.particles() != ens_uhat.particles()) {
    throw std::invalid_argument("transversality_check: ensembles differ in size");
  }
  const auto& grid = ens_uhat.grid();
  std::vector<LadderPoint> ladder;
  for (double T : horizons) {
    const std::size_t k = grid.node_at(T);
    std::vector<double> v(ens_u.particles());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = p0.p0_at(i, k) * (ens_u.paths[i][k] - ens_uhat.paths[i][k]);
    }
    const auto s = detail::summarize(std::move(v));
    ladder.push_back({T, s.mean, s.standard_error});
  }
  return finish_ladder(std::move(ladder));
}

}  // namespace emf
