#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "emf/consumption.hpp"
#include "emf/lq.hpp"
#include "emf/mp.hpp"
#include "emf/rng.hpp"

namespace {

using namespace emf;

// Holds what a CoefficientArgs references.
struct ArgsFixture {
  TimeGrid grid{1.0, 0.1};
  std::vector<double> path;
  LawPath law;

  ArgsFixture(const EmpiricalMeasure& m, double x) : path(grid.nodes(), x) {
    law = LawPath::constant(grid, m);
  }

  CoefficientArgs at(std::size_t k, double u) const {
    return {grid.time(k), k, path[k],
            PathSegment(std::span<const double>(path.data(), k + 1), k, Orientation::reversed,
                        grid.dt()),
            law[k], law, u};
  }
};

SolverConfig config(double T, double dt, std::size_t n, std::uint64_t seed = 1) {
  SolverConfig c;
  c.grid = TimeGrid(T, dt);
  c.n_particles = n;
  c.seed = seed;
  return c;
}

TEST(Hamiltonian, EmptySpecIsZero) {
  const ArgsFixture f(EmpiricalMeasure::dirac(2.0), 1.0);
  EXPECT_EQ(hamiltonian(HamiltonianSpec{}, f.at(3, 0.7), AdjointValues{1.0, 2.0}), 0.0);
}

TEST(Hamiltonian, LqSpecAtUnitMean) {
  lq::LQParams p;
  p.b0 = 1.0;
  const auto spec = lq::hamiltonian_spec(p);
  const ArgsFixture f(EmpiricalMeasure::from_samples({0.5, 1.5}), 0.3);
  EXPECT_DOUBLE_EQ(hamiltonian(spec, f.at(2, 0.0), AdjointValues{1.0, 0.0}), 1.0);
}

TEST(Hamiltonian, ConsumptionSpecAtUnitConsumption) {
  consumption::ConsumptionParams p;
  p.delta = 1e-300;  // exp(-delta t) = 1 to double precision
  const auto spec = consumption::hamiltonian_spec(p);
  const ArgsFixture f(EmpiricalMeasure::dirac(0.0), 2.0);
  const auto args = f.at(5, 1.0);
  const double memory = apply_functional(LinearFunctionalSpec::exponential(p.rho), args.memory);
  const double p0 = 0.8, q0 = -0.3;
  EXPECT_NEAR(hamiltonian(spec, args, AdjointValues{p0, q0}),
              p0 * (memory - 1.0) + q0 * p.beta * 2.0, 1e-14);
}

TEST(Hamiltonian, LinearInAdjointsBySuperposition) {
  lq::LQParams p;
  p.b0 = 0.4;
  p.sigma0 = 0.3;
  p.jumps = {{0.5, 1.0, 0.2}, {-0.5, 2.0, -0.4}};
  auto spec = lq::hamiltonian_spec(p);
  spec.p1_action = [](const SignedMeasure& m) { return 0.0 * m.total_mass(); };
  RandomStream rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const ArgsFixture f(EmpiricalMeasure::from_samples({rng.normal(), rng.normal()}), rng.normal());
    const auto args = f.at(4, rng.normal());
    const std::vector<double> ra = {rng.normal(), rng.normal()};
    const std::vector<double> rb = {rng.normal(), rng.normal()};
    const std::vector<double> rs = {ra[0] + rb[0], ra[1] + rb[1]};
    const std::vector<double> r0 = {0.0, 0.0};
    const AdjointValues a{rng.normal(), rng.normal(), ra};
    const AdjointValues b{rng.normal(), rng.normal(), rb};
    const AdjointValues sum{a.p0 + b.p0, a.q0 + b.q0, rs};
    const double h0 = hamiltonian(spec, args, AdjointValues{0.0, 0.0, r0});
    const double lhs = hamiltonian(spec, args, sum) - h0;
    const double rhs = (hamiltonian(spec, args, a) - h0) + (hamiltonian(spec, args, b) - h0);
    EXPECT_NEAR(lhs, rhs, 1e-12 * (1.0 + std::abs(lhs)));
  }
}

TEST(Hamiltonian, RejectsWrongNumberOfJumpAdjoints) {
  lq::LQParams p;
  p.jumps = {{0.5, 1.0, 0.2}};
  const auto spec = lq::hamiltonian_spec(p);
  const ArgsFixture f(EmpiricalMeasure::dirac(1.0), 1.0);
  const std::vector<double> r0 = {1.0, 2.0};
  EXPECT_THROW(hamiltonian(spec, f.at(1, 0.0), AdjointValues{0.0, 0.0, r0}), std::invalid_argument);
}

TEST(Hamiltonian, AnalyticAndFiniteDifferenceGradientsAgree) {
  lq::LQParams p;
  p.b0 = 0.3;
  auto spec = lq::hamiltonian_spec(p);
  auto numeric = spec;
  numeric.control_gradient = nullptr;
  RandomStream rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const ArgsFixture f(EmpiricalMeasure::from_samples({rng.normal(), 1.0}), rng.normal());
    const auto args = f.at(2, rng.normal());
    const AdjointValues adj{rng.normal(), 0.0};
    EXPECT_NEAR(hamiltonian_control_gradient(spec, args, adj),
                hamiltonian_control_gradient(numeric, args, adj), 1e-7);
  }
}

TEST(Concavity, LqCurvatureIsMinusOne) {
  lq::LQParams p;
  p.b0 = 0.7;
  p.sigma0 = 0.2;
  const auto spec = lq::hamiltonian_spec(p);
  RandomStream rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const ArgsFixture f(EmpiricalMeasure::from_samples({rng.normal(), rng.normal()}), rng.normal());
    const auto args = f.at(static_cast<std::size_t>(rng.uniform() * 10.0), 3.0 * rng.normal());
    const double c = hamiltonian_control_curvature(spec, args, AdjointValues{rng.normal(), rng.normal()});
    EXPECT_NEAR(c, -1.0, 1e-6);
  }
}

TEST(Concavity, ConsumptionCurvatureIsNegative) {
  // d^2/du^2 [e^{-delta t} ln u] = -e^{-delta t} / u^2: concave, but not -1.
  consumption::ConsumptionParams p;
  const auto spec = consumption::hamiltonian_spec(p);
  RandomStream rng(202);
  for (int trial = 0; trial < 1000; ++trial) {
    const ArgsFixture f(EmpiricalMeasure::dirac(0.0), 1.0 + rng.uniform());
    const std::size_t k = static_cast<std::size_t>(rng.uniform() * 10.0);
    const double u = 0.2 + 3.0 * rng.uniform();
    const auto args = f.at(k, u);
    const double c = hamiltonian_control_curvature(spec, args, AdjointValues{rng.uniform(), 0.0}, 1e-3);
    const double exact = -std::exp(-p.delta * args.t) / (u * u);
    EXPECT_LE(c, 0.0);
    // Central differences of ln u with step h max(1, u) err by at most
    // h^2 max(1, u^2) / (2 u^2) relative to the exact value.
    EXPECT_NEAR(c, exact, 1e-6 * (1.0 + 1.0 / (u * u)) * std::abs(exact) + 1e-9);
  }
}

MfSdeProblem controlled_drift() {
  MfSdeProblem prob;
  prob.coefficients.drift = [](const CoefficientArgs& a) { return a.u; };
  return prob;
}

TEST(DerivativeProcess, ZeroPerturbationGivesZero) {
  lq::LQParams p;
  p.sigma0 = 0.3;
  const auto cfg = config(1.0, 1e-2, 20);
  const auto prob = lq::problem(p);
  const auto base = picard_solve(prob, constant_control(-0.5), cfg);
  const auto d = derivative_process(prob, base, constant_control(-0.5), zero_control(), cfg);
  for (const auto& z : d.z) {
    for (double v : z) EXPECT_EQ(v, 0.0);
  }
}

TEST(DerivativeProcess, ControlledDriftGivesTime) {
  const auto cfg = config(1.0, 0.1, 2);
  const auto prob = controlled_drift();
  const auto base = picard_solve(prob, constant_control(0.3), cfg);
  const auto d = derivative_process(prob, base, constant_control(0.3), constant_control(1.0), cfg);
  for (std::size_t k = 0; k < cfg.grid.nodes(); ++k) {
    EXPECT_NEAR(d.z[1][k], cfg.grid.time(k), 1e-9);
  }
}

TEST(DerivativeProcess, FlagsMismatchedDeclaredPartials) {
  const auto cfg = config(1.0, 0.1, 2);
  const auto prob = controlled_drift();
  const auto base = picard_solve(prob, constant_control(0.3), cfg);
  Linearization right;
  right.drift = [](const CoefficientArgs&, const Direction& d) { return d.du; };
  Linearization wrong;
  wrong.drift = [](const CoefficientArgs&, const Direction& d) { return 2.0 * d.du; };
  const auto ok = derivative_process(prob, base, constant_control(0.3), constant_control(1.0), cfg, &right);
  EXPECT_FALSE(ok.partials_mismatch);
  EXPECT_LT(ok.max_partial_discrepancy, 1e-6);
  const auto bad = derivative_process(prob, base, constant_control(0.3), constant_control(1.0), cfg, &wrong);
  EXPECT_TRUE(bad.partials_mismatch);
}

double relative_sup_error(const DerivativeProcess& d, const SolutionEnsemble& base,
                          const SolutionEnsemble& bumped, double lambda) {
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < base.paths.size(); ++i) {
    for (std::size_t k = 0; k < base.paths[i].size(); ++k) {
      const double fd = (bumped.paths[i][k] - base.paths[i][k]) / lambda;
      err = std::max(err, std::abs(fd - d.z[i][k]));
      scale = std::max(scale, std::abs(fd));
    }
  }
  return err / scale;
}

TEST(DerivativeProcess, MatchesBruteForceOracleOnLq) {
  for (double sigma0 : {0.0, 0.2}) {
    lq::LQParams p;
    p.b0 = 0.5;
    p.sigma0 = sigma0;
    const auto cfg = config(1.0, 1e-2, 16, 5);
    const auto prob = lq::problem(p);
    const auto u = lq::build_optimal_control(p, cfg).policy;
    const auto pi = lq::shape_policy([](double t) { return std::sin(t) + 0.5; });
    const auto base = picard_solve(prob, u, cfg);
    const auto d = derivative_process(prob, base, u, pi, cfg);
    for (double lambda : {1e-3, 1e-4}) {
      const auto bumped = picard_solve(prob, perturbed(u, pi, lambda), cfg);
      EXPECT_LE(relative_sup_error(d, base, bumped, lambda), std::max(1e-2, 10.0 * lambda))
          << "sigma0=" << sigma0 << " lambda=" << lambda;
    }
  }
}

TEST(DerivativeProcess, MatchesBruteForceOracleOnConsumption) {
  consumption::ConsumptionParams p;
  const auto cfg = config(2.0, 1e-2, 8, 6);
  const auto prob = consumption::problem(p);
  const auto u = open_loop(consumption::optimal_consumption_path(p, 0.6, cfg.grid));
  const auto pi = constant_control(1.0);
  const auto base = picard_solve(prob, u, cfg);
  const auto d = derivative_process(prob, base, u, pi, cfg);
  for (double lambda : {1e-3, 1e-4}) {
    const auto bumped = picard_solve(prob, perturbed(u, pi, lambda), cfg);
    EXPECT_LE(relative_sup_error(d, base, bumped, lambda), std::max(1e-2, 10.0 * lambda));
  }
}

PerformanceSpec quadratic_cost() {
  PerformanceSpec perf;
  perf.running_reward = [](const CoefficientArgs& a) { return -0.5 * a.u * a.u; };
  return perf;
}

TEST(Gateaux, StationaryPointOfQuadratic) {
  const auto cfg = config(1.0, 0.1, 2);
  const Simulator sim = [&](const ControlPolicy& u) { return picard_solve(controlled_drift(), u, cfg); };
  const auto g = gateaux_J(quadratic_cost(), sim, zero_control(), lq::shape_policy([](double t) { return 1.0 + t; }));
  EXPECT_NEAR(g.value(), 0.0, 1e-12);
}

TEST(Gateaux, UnitControlUnitDirection) {
  const auto cfg = config(1.0, 0.1, 2);
  const Simulator sim = [&](const ControlPolicy& u) { return picard_solve(controlled_drift(), u, cfg); };
  const auto g = gateaux_J(quadratic_cost(), sim, constant_control(1.0), constant_control(1.0));
  EXPECT_NEAR(g.value(), -1.0, 1e-9);
  ASSERT_EQ(g.estimates.size(), 2u);
  EXPECT_EQ(g.lambdas[0], 1e-2);
  // Central differences of a quadratic are exact at every step size.
  EXPECT_NEAR(g.estimates[0], g.estimates[1], 1e-9);
  EXPECT_THROW(gateaux_J(quadratic_cost(), sim, zero_control(), zero_control(), {}), std::invalid_argument);
  EXPECT_THROW(gateaux_J(quadratic_cost(), sim, zero_control(), zero_control(), {-1.0}),
               std::invalid_argument);
}

TEST(Gateaux, LambdaConsistencyOnNonQuadratic) {
  // J(u) = int e^{-t} ln u dt along u = 1 + lambda pi: the two step sizes agree
  // up to an O(lambda^2) term and Richardson removes it.
  const auto cfg = config(1.0, 1e-2, 2);
  PerformanceSpec perf;
  perf.running_reward = [](const CoefficientArgs& a) { return std::exp(-a.t) * std::log(a.u); };
  const Simulator sim = [&](const ControlPolicy& u) { return picard_solve(controlled_drift(), u, cfg); };
  const auto g = gateaux_J(perf, sim, constant_control(1.0), constant_control(1.0));
  const double exact = 1.0 - std::exp(-1.0);
  EXPECT_NEAR(g.estimates[0], exact, 1e-3);
  EXPECT_NEAR(g.estimates[1], exact, 1e-4);
  EXPECT_LT(std::abs(g.value() - exact), std::abs(g.estimates[1] - exact) + 1e-5);
}

TEST(Residual, ControlFreeHamiltonianGivesZeroPath) {
  const auto cfg = config(1.0, 0.1, 5);
  MfSdeProblem prob;
  prob.coefficients.drift = [](const CoefficientArgs& a) { return -a.x; };
  prob.coefficients.diffusion = [](const CoefficientArgs&) { return 0.2; };
  const auto ens = picard_solve(prob, zero_control(), cfg);
  HamiltonianSpec spec;
  spec.coefficients = prob.coefficients;
  spec.running_reward = [](const CoefficientArgs& a) { return -a.x * a.x; };
  AdjointPath adj = AdjointPath::deterministic(ForwardPath(cfg.grid.nodes(), 1.5));
  for (auto info : {Information::full, Information::trivial}) {
    const auto r = necessary_residual(spec, ens, zero_control(), adj, info);
    EXPECT_EQ(r.values.size(), info == Information::full ? 5u : 1u);
    EXPECT_EQ(r.sup_norm(), 0.0);
  }
}

TEST(Residual, FullInformationKeepsPerParticleValues) {
  const auto cfg = config(1.0, 0.1, 3);
  MfSdeProblem prob;
  prob.coefficients.drift = [](const CoefficientArgs& a) { return a.u; };
  const auto ens = picard_solve(prob, zero_control(), cfg);
  HamiltonianSpec spec;
  spec.coefficients = prob.coefficients;
  AdjointPath adj;
  adj.p0 = {ForwardPath(cfg.grid.nodes(), 1.0), ForwardPath(cfg.grid.nodes(), 2.0),
            ForwardPath(cfg.grid.nodes(), 6.0)};
  const auto full = necessary_residual(spec, ens, zero_control(), adj, Information::full);
  EXPECT_NEAR(full.values[2][4], 6.0, 1e-8);
  const auto trivial = necessary_residual(spec, ens, zero_control(), adj, Information::trivial);
  EXPECT_NEAR(trivial.values[0][4], 3.0, 1e-8);
}

TEST(Transversality, IdenticalEnsemblesAndZeroAdjointGiveZeros) {
  const auto cfg = config(2.0, 0.1, 10);
  MfSdeProblem prob;
  prob.x0 = 1.0;
  prob.coefficients.diffusion = [](const CoefficientArgs& a) { return 0.3 * a.x; };
  const auto a = picard_solve(prob, zero_control(), cfg);
  auto c2 = cfg;
  c2.seed = 2;
  const auto b = picard_solve(prob, zero_control(), c2);
  const std::vector<double> horizons = {0.5, 1.0, 2.0};
  const auto same = transversality_check(AdjointPath::deterministic(ForwardPath(cfg.grid.nodes(), 1.0)),
                                         a, a, horizons);
  for (const auto& pt : same.ladder) EXPECT_EQ(pt.value, 0.0);
  EXPECT_TRUE(same.tail_nonnegative);
  const auto zero = transversality_check(AdjointPath{}, a, b, horizons);
  for (const auto& pt : zero.ladder) EXPECT_EQ(pt.value, 0.0);
  EXPECT_TRUE(zero.p1_term_structurally_zero);
}

TEST(Transversality, LadderSlopeOfExponentialDecay) {
  std::vector<LadderPoint> pts;
  for (double T : {5.0, 10.0, 20.0, 40.0}) pts.push_back({T, 3.0 * std::exp(-0.4 * T), 0.0});
  const auto r = finish_ladder(pts);
  EXPECT_NEAR(r.log_slope, -0.4, 1e-12);
  EXPECT_TRUE(r.tail_nonnegative);
  const auto neg = finish_ladder({{1.0, -1.0, 0.1}});
  EXPECT_FALSE(neg.tail_nonnegative);
  EXPECT_TRUE(std::isnan(neg.log_slope));
}

TEST(Performance, TrapezoidRunningAndTerminal) {
  const auto cfg = config(1.0, 0.25, 2);
  const auto ens = picard_solve(controlled_drift(), open_loop({0.0, 1.0, 2.0, 3.0, 4.0}), cfg);
  PerformanceSpec perf;
  perf.running_reward = [](const CoefficientArgs& a) { return a.u; };
  perf.terminal = [](double x, const EmpiricalMeasure&) { return x; };
  const auto v = evaluate_performance(perf, ens, open_loop({0.0, 1.0, 2.0, 3.0, 4.0}));
  // running: trapezoid of 0..4 with h=0.25 is 2; terminal: X(1) = 0.25*(0+1+2+3) = 1.5.
  EXPECT_NEAR(v.mean, 3.5, 1e-14);
  EXPECT_EQ(v.standard_error, 0.0);
}

}  // namespace
