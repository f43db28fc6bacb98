#pragma once

// Euler scheme for mean-field SDEs with memory in the state path and in the
// law path, and the Picard iteration over law paths.
//
//   dX(t) = b dt + sigma dB(t) + int gamma(., zeta) N~(dt, dzeta)
//
// where every coefficient sees (t, X(t), X_t, M(t), M_t, u(t)) with X_t the
// reversed memory segment and M(t) the law of X(t).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "emf/drivers.hpp"
#include "emf/measures.hpp"
#include "emf/parallel.hpp"
#include "emf/rng.hpp"
#include "emf/time_grid.hpp"

namespace emf {

/// Thrown when a coefficient returns a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CoefficientArgs {
  double t;
  std::size_t step;
  double x;
  PathSegment memory;         // reversed: memory[j] = X(t - j dt)
  const EmpiricalMeasure& law;  // M(t)
  const LawPath& law_path;    // nodes 0..step are the law history
  double u;
};

using Coefficient = std::function<double(const CoefficientArgs&)>;
using JumpCoefficient = std::function<double(const CoefficientArgs&, double mark)>;

/// b, sigma, gamma. Missing functions are zero. The declared constants are
/// bookkeeping for the contraction monitor and are not checked.
struct CoefficientSpec {
  Coefficient drift;
  Coefficient diffusion;
  JumpCoefficient jump;
  double declared_lipschitz = std::numeric_limits<double>::quiet_NaN();
  double declared_bound = std::numeric_limits<double>::quiet_NaN();
};

struct MfSdeProblem {
  double x0 = 0.0;
  CoefficientSpec coefficients;
  JumpMeasureSpec jumps;
};

// ---------------------------------------------------------------------------
// Controls
// ---------------------------------------------------------------------------

struct ControlArgs {
  std::size_t particle;
  std::size_t step;
  double t;
  double x;
};

using ControlPolicy = std::function<double(const ControlArgs&)>;

inline ControlPolicy constant_control(double c) {
  return [c](const ControlArgs&) { return c; };
}

inline ControlPolicy zero_control() { return constant_control(0.0); }

/// Deterministic open-loop control given on the grid nodes.
inline ControlPolicy open_loop(ForwardPath values) {
  auto v = std::make_shared<const ForwardPath>(std::move(values));
  return [v](const ControlArgs& a) { return (*v)[std::min(a.step, v->size() - 1)]; };
}

/// Open-loop control with one path per particle.
inline ControlPolicy per_particle(std::vector<ForwardPath> values) {
  auto v = std::make_shared<const std::vector<ForwardPath>>(std::move(values));
  return [v](const ControlArgs& a) {
    const auto& path = (*v)[a.particle];
    return path[std::min(a.step, path.size() - 1)];
  };
}

/// u + lambda * pi.
inline ControlPolicy perturbed(ControlPolicy u, ControlPolicy pi, double lambda) {
  return [u = std::move(u), pi = std::move(pi), lambda](const ControlArgs& a) {
    return u(a) + lambda * pi(a);
  };
}

// ---------------------------------------------------------------------------
// Configuration and results
// ---------------------------------------------------------------------------

struct SolverConfig {
  TimeGrid grid;
  std::size_t n_particles = 1000;
  double picard_tol = 1e-10;
  int picard_max_iters = 50;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_particles < 1) throw std::invalid_argument("SolverConfig: n_particles must be >= 1");
    if (!(picard_tol > 0.0)) throw std::invalid_argument("SolverConfig: picard_tol must be > 0");
    if (picard_max_iters < 1) {
      throw std::invalid_argument("SolverConfig: picard_max_iters must be >= 1");
    }
  }
};

struct SolutionEnsemble {
  std::vector<ForwardPath> paths;  // one per particle
  LawPath law;                     // empirical law of each time slice
  int picard_iterations = 0;
  std::vector<double> iterate_distances;
  bool converged = false;

  std::size_t particles() const { return paths.size(); }
  const TimeGrid& grid() const { return law.grid(); }

  /// Time slice k across particles.
  std::vector<double> slice(std::size_t k) const {
    std::vector<double> out(paths.size());
    for (std::size_t i = 0; i < paths.size(); ++i) out[i] = paths[i][k];
    return out;
  }

  /// Ensemble mean at every node, summed in particle order.
  ForwardPath mean_path() const {
    ForwardPath m(grid().nodes(), 0.0);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = law[k].mean();
    return m;
  }
};

inline LawPath law_of(const std::vector<ForwardPath>& paths, const TimeGrid& grid) {
  std::vector<EmpiricalMeasure> measures;
  measures.reserve(grid.nodes());
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    std::vector<double> slice(paths.size());
    for (std::size_t i = 0; i < paths.size(); ++i) slice[i] = paths[i][k];
    measures.push_back(EmpiricalMeasure::from_samples(std::move(slice)));
  }
  return LawPath(grid, std::move(measures));
}

/// Noise of particle i: its stream is fixed by (seed, i) and reused by every
/// Picard iteration and by every control evaluated on the same configuration.
inline NoiseRealization particle_noise(const MfSdeProblem& problem, const SolverConfig& cfg,
                                       std::size_t i) {
  return sample_noise(cfg.grid, problem.jumps, derive_seed(cfg.seed, i));
}

namespace detail {

inline double checked(double v, const char* what, const CoefficientArgs& a) {
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "non-finite " << what << " at step " << a.step << " (t=" << a.t << ", x=" << a.x
        << ", u=" << a.u << ", law mean=" << a.law.mean() << ")";
    throw NumericalError(msg.str());
  }
  return v;
}

/// X(t+dt) - X(t) for one Euler step.
inline double euler_increment(const MfSdeProblem& problem, const CoefficientArgs& args,
                              double dt, double dB, std::span<const JumpEvent> jumps) {
  const auto& c = problem.coefficients;
  double dx = 0.0;
  if (c.drift) dx += checked(c.drift(args), "drift", args) * dt;
  if (c.diffusion) dx += checked(c.diffusion(args), "diffusion", args) * dB;
  if (c.jump) {
    for (const auto& e : jumps) dx += checked(c.jump(args, e.mark), "jump coefficient", args);
    double compensator = 0.0;
    for (const auto& a : problem.jumps.atoms) {
      if (a.rate > 0.0) compensator += a.rate * checked(c.jump(args, a.mark), "jump coefficient", args);
    }
    dx -= compensator * dt;
  }
  return dx;
}

}  // namespace detail

/// One particle path against a frozen law path (one inner step of the Picard
/// scheme). The memory segment is a view into the path built so far.
inline ForwardPath simulate_given_law(const MfSdeProblem& problem, const LawPath& frozen_law,
                                      const ControlPolicy& control, std::size_t particle,
                                      const NoiseRealization& noise, const TimeGrid& grid) {
  if (frozen_law.size() != grid.nodes()) {
    throw std::invalid_argument("simulate_given_law: law path does not match the grid");
  }
  if (noise.brownian_increments.size() != grid.steps()) {
    throw std::invalid_argument("simulate_given_law: noise does not match the grid");
  }
  ForwardPath x(grid.nodes(), 0.0);
  x[0] = problem.x0;
  const double dt = grid.dt();
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double t = grid.time(k);
    const double u = control ? control({particle, k, t, x[k]}) : 0.0;
    const CoefficientArgs args{t,
                               k,
                               x[k],
                               PathSegment(std::span<const double>(x.data(), k + 1), k,
                                           Orientation::reversed, dt),
                               frozen_law[k],
                               frozen_law,
                               u};
    x[k + 1] = x[k] + detail::euler_increment(problem, args, dt, noise.brownian_increments[k],
                                              noise.jumps_at(k));
  }
  return x;
}

/// sup over nodes of the ensemble root-mean-square difference.
inline double iterate_distance(const std::vector<ForwardPath>& a, const std::vector<ForwardPath>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("iterate_distance: ensembles differ in size");
  }
  const std::size_t nodes = a.front().size();
  double sup = 0.0;
  for (std::size_t k = 0; k < nodes; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i][k] - b[i][k];
      s += d * d;
    }
    sup = std::max(sup, std::sqrt(s / static_cast<double>(a.size())));
  }
  return sup;
}

/// Picard iteration over law paths. Starts from `initial` when given, else
/// from the constant Dirac law at x0 (with constant particle paths). Each
/// iteration resimulates every particle on its frozen noise against the
/// previous law path; stops when successive particle iterates are closer than
/// picard_tol in sup-over-grid RMS.
inline SolutionEnsemble picard_solve(const MfSdeProblem& problem, const ControlPolicy& control,
                                     const SolverConfig& cfg,
                                     const SolutionEnsemble* initial = nullptr) {
  cfg.validate();
  const auto& grid = cfg.grid;
  const std::size_t n = cfg.n_particles;

  std::vector<ForwardPath> prev_paths;
  LawPath prev_law;
  if (initial) {
    if (initial->particles() != n || initial->law.size() != grid.nodes()) {
      throw std::invalid_argument("picard_solve: initial ensemble does not match the config");
    }
    prev_paths = initial->paths;
    prev_law = initial->law;
  } else {
    prev_paths.assign(n, ForwardPath(grid.nodes(), problem.x0));
    prev_law = LawPath::constant(grid, EmpiricalMeasure::dirac(problem.x0));
  }

  std::vector<NoiseRealization> noise(n);
  parallel_for(n, [&](std::size_t i) { noise[i] = particle_noise(problem, cfg, i); });

  SolutionEnsemble out;
  for (int it = 1; it <= cfg.picard_max_iters; ++it) {
    std::vector<ForwardPath> next(n);
    parallel_for(n, [&](std::size_t i) {
      next[i] = simulate_given_law(problem, prev_law, control, i, noise[i], grid);
    });
    const double d = iterate_distance(next, prev_paths);
    out.iterate_distances.push_back(d);
    prev_paths = std::move(next);
    prev_law = law_of(prev_paths, grid);
    out.picard_iterations = it;
    if (d < cfg.picard_tol) {
      out.converged = true;
      break;
    }
  }
  out.paths = std::move(prev_paths);
  out.law = std::move(prev_law);
  return out;
}

/// Cross-check mode: all particles advance together and each step uses the
/// current empirical law. Law-path nodes after the current step hold the
/// Dirac mass at x0.
inline SolutionEnsemble interacting_particle_solve(const MfSdeProblem& problem,
                                                   const ControlPolicy& control,
                                                   const SolverConfig& cfg) {
  cfg.validate();
  const auto& grid = cfg.grid;
  const std::size_t n = cfg.n_particles;
  std::vector<NoiseRealization> noise(n);
  parallel_for(n, [&](std::size_t i) { noise[i] = particle_noise(problem, cfg, i); });
  std::vector<ForwardPath> paths(n, ForwardPath(grid.nodes(), problem.x0));
  LawPath law = LawPath::constant(grid, EmpiricalMeasure::dirac(problem.x0));
  const double dt = grid.dt();
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    std::vector<double> slice(n);
    for (std::size_t i = 0; i < n; ++i) slice[i] = paths[i][k];
    law.set(k, EmpiricalMeasure::from_samples(std::move(slice)));
    const double t = grid.time(k);
    parallel_for(n, [&](std::size_t i) {
      auto& x = paths[i];
      const double u = control ? control({i, k, t, x[k]}) : 0.0;
      const CoefficientArgs args{t,
                                 k,
                                 x[k],
                                 PathSegment(std::span<const double>(x.data(), k + 1), k,
                                             Orientation::reversed, dt),
                                 law[k],
                                 law,
                                 u};
      x[k + 1] = x[k] + detail::euler_increment(problem, args, dt,
                                                noise[i].brownian_increments[k],
                                                noise[i].jumps_at(k));
    });
  }
  SolutionEnsemble out;
  out.law = law_of(paths, grid);
  out.paths = std::move(paths);
  out.picard_iterations = 1;
  out.converged = true;
  return out;
}

// ---------------------------------------------------------------------------
// Markovian lift of an exponential memory kernel
// ---------------------------------------------------------------------------

struct LiftArgs {
  double t;
  std::size_t step;
  double x;
  double lifted;  // A(t) = int_0^t exp(-rho (t - s)) X(s) ds
  const EmpiricalMeasure& law;
  double u;
};

struct LiftCoefficients {
  std::function<double(const LiftArgs&)> drift;
  std::function<double(const LiftArgs&)> diffusion;
};

struct LiftPath {
  ForwardPath x;
  ForwardPath lifted;
};

/// Simulates the state augmented with A(t): A(0) = 0, dA = (X - rho A) dt,
/// which reproduces <F, X_t> for F = exponential(rho).
inline LiftPath markovian_lift_simulate(const LinearFunctionalSpec& kernel,
                                        const LiftCoefficients& coeffs, double x0,
                                        const LawPath& law, const ControlPolicy& control,
                                        std::size_t particle, const NoiseRealization& noise,
                                        const TimeGrid& grid) {
  if (!kernel.is_exponential()) {
    throw std::invalid_argument("markovian_lift_simulate: requires an exponential kernel, got " +
                                kernel.name());
  }
  const double rho = kernel.rho();
  const double dt = grid.dt();
  LiftPath out{ForwardPath(grid.nodes(), x0), ForwardPath(grid.nodes(), 0.0)};
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double t = grid.time(k);
    const double x = out.x[k];
    const double a = out.lifted[k];
    const double u = control ? control({particle, k, t, x}) : 0.0;
    const LiftArgs args{t, k, x, a, law[k], u};
    double dx = 0.0;
    if (coeffs.drift) dx += coeffs.drift(args) * dt;
    if (coeffs.diffusion) dx += coeffs.diffusion(args) * noise.brownian_increments[k];
    if (!std::isfinite(dx)) {
      throw NumericalError("markovian_lift_simulate: non-finite increment at step " +
                           std::to_string(k));
    }
    out.x[k + 1] = x + dx;
    out.lifted[k + 1] = a + (x - rho * a) * dt;
  }
  return out;
}

/// Lifted dynamics for every particle of a configuration, on the same noise
/// streams picard_solve uses (no jumps).
inline std::vector<LiftPath> lift_ensemble(const LinearFunctionalSpec& kernel,
                                           const LiftCoefficients& coeffs, double x0,
                                           const LawPath& law, const ControlPolicy& control,
                                           const SolverConfig& cfg) {
  cfg.validate();
  std::vector<LiftPath> out(cfg.n_particles);
  const JumpMeasureSpec none;
  parallel_for(cfg.n_particles, [&](std::size_t i) {
    const auto noise = sample_noise(cfg.grid, none, derive_seed(cfg.seed, i));
    out[i] = markovian_lift_simulate(kernel, coeffs, x0, law, control, i, noise, cfg.grid);
  });
  return out;
}

/// E[sup_t |X(t)|^p] over the ensemble.
inline double moment_diagnostics(const SolutionEnsemble& ens, double p) {
  if (!(p >= 2.0)) throw std::invalid_argument("moment_diagnostics: p must be >= 2");
  if (ens.paths.empty()) throw std::invalid_argument("moment_diagnostics: empty ensemble");
  double acc = 0.0;
  for (const auto& path : ens.paths) {
    double sup = 0.0;
    for (double x : path) sup = std::max(sup, std::abs(x));
    acc += std::pow(sup, p);
  }
  return acc / static_cast<double>(ens.paths.size());
}

}  // namespace emf
