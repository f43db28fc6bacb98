#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "emf/consumption.hpp"
#include "emf/quadrature.hpp"
#include "support.hpp"

namespace {

using namespace emf;
using consumption::ConsumptionParams;

SolverConfig config(double T, double dt, std::size_t n, std::uint64_t seed = 1) {
  SolverConfig c;
  c.grid = TimeGrid(T, dt);
  c.n_particles = n;
  c.seed = seed;
  return c;
}

double growth_root(double rho) { return (-rho + std::sqrt(rho * rho + 4.0)) / 2.0; }

TEST(Adjoint, ClosedFormValues) {
  ConsumptionParams p;
  EXPECT_NEAR(consumption::adjoint_p0_at(p, 1.0, 1.0), std::exp(-std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(consumption::adjoint_p0_at(p, 1.0, 1.0), 0.692201, 1e-6);
  EXPECT_EQ(consumption::adjoint_p0_at(p, 0.7, 0.0), 0.7);
  // Large t: log p0 ~ -t/rho + 1/rho^2.
  p.rho = 2.0;
  EXPECT_NEAR(std::log(consumption::adjoint_p0_at(p, 1.0, 50.0)), -25.0 + 0.25, 1e-12);
}

TEST(Adjoint, GridPathAgreesWithOde) {
  for (double rho : {0.5, 1.0, 2.0}) {
    ConsumptionParams p;
    p.rho = rho;
    const TimeGrid g(10.0, 1e-2);
    const auto path = consumption::adjoint_p0(p, 1.3, g);
    // Independent explicit RK4 of p0' = -(1 - e^{-rho t}) / rho * p0 at dt/4.
    double v = 1.3, t = 0.0;
    const double h = g.dt() / 4.0;
    auto f = [&](double s, double y) { return -(1.0 - std::exp(-rho * s)) / rho * y; };
    for (std::size_t k = 0; k < g.steps(); ++k) {
      for (int s = 0; s < 4; ++s) {
        const double k1 = f(t, v), k2 = f(t + h / 2, v + h / 2 * k1);
        const double k3 = f(t + h / 2, v + h / 2 * k2), k4 = f(t + h, v + h * k3);
        v += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        t += h;
      }
      EXPECT_NEAR(path[k + 1], v, 1e-9 * v) << "rho=" << rho << " k=" << k + 1;
    }
  }
  EXPECT_THROW(consumption::adjoint_p0(ConsumptionParams{}, 0.0, TimeGrid(1.0, 0.1)),
               std::invalid_argument);
}

TEST(Consumption, ControlSatisfiesFirstOrderIdentity) {
  ConsumptionParams p;
  p.delta = 0.7;
  p.rho = 1.4;
  RandomStream rng(9);
  for (int i = 0; i < 100; ++i) {
    const double t = 30.0 * rng.uniform();
    const double u = consumption::optimal_consumption(p, 0.6, t);
    EXPECT_NEAR(std::exp(-p.delta * t) / u, consumption::adjoint_p0_at(p, 0.6, t),
                1e-12 * consumption::adjoint_p0_at(p, 0.6, t));
  }
  EXPECT_NEAR(consumption::optimal_consumption(p, 0.5, 0.0), 2.0, 1e-15);
  EXPECT_THROW(consumption::optimal_consumption(p, -1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(consumption::optimal_consumption(p, 1.0, -1.0), std::invalid_argument);
}

TEST(Budget, InitialAdjointClosedForm) {
  ConsumptionParams p;
  EXPECT_NEAR(consumption::budget_p0_initial(p), 1.0 - std::exp(-1.0), 1e-10);
  EXPECT_NEAR(consumption::budget_p0_initial(p), 0.632121, 1e-6);
  p.x0 = 2.0;
  EXPECT_NEAR(consumption::budget_p0_initial(p), (1.0 - std::exp(-1.0)) / 2.0, 1e-10);
}

TEST(Budget, IndependentQuadratureOfSpentBudget) {
  for (double rho : {0.8, 1.0, 1.5}) {
    ConsumptionParams p;
    p.rho = rho;
    p.delta = 0.6;
    p.x0 = 1.7;
    const double p0 = consumption::budget_p0_initial(p);
    double spent = 0.0;
    for (double a = 0.0; a < 200.0; a += 1.0) {
      spent += emf::testing::simpson(
          [&](double t) { return std::exp(-rho * t) * consumption::optimal_consumption(p, p0, t); },
          a, a + 1.0, 1e-14);
    }
    EXPECT_NEAR(spent, p.x0, 1e-8) << "rho=" << rho;
    EXPECT_LT(std::abs(consumption::budget_residual(p, p0)), 1e-9);
  }
}

TEST(Budget, DivergentRegimeIsRejected) {
  ConsumptionParams p;
  p.rho = 0.5;
  p.delta = 0.5;  // 1/rho - delta - rho = 1 > 0
  EXPECT_THROW(consumption::budget_p0_initial(p), std::invalid_argument);
  p = {};
  p.beta = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Growth, LyapunovExponentIsTheCharacteristicRoot) {
  for (double rho : {1.0, 2.0}) {
    ConsumptionParams p;
    p.rho = rho;
    EXPECT_NEAR(consumption::lyapunov_exponent(p), growth_root(rho), 1e-3) << "rho=" << rho;
  }
  ConsumptionParams p;
  EXPECT_TRUE(consumption::admissible(p, growth_root(1.0)));
  p.rho = 2.0;
  EXPECT_FALSE(consumption::admissible(p, 0.6));
}

TEST(Growth, OdeAndVolterraFormsAgree) {
  ConsumptionParams p;
  p.rho = 1.3;
  double prev = 0.0;
  for (double dt : {2e-2, 1e-2}) {
    const TimeGrid g(4.0, dt);
    const auto ode = consumption::y0_path(p, g);
    const auto vol = consumption::y0_volterra(p, g);
    double err = 0.0;
    for (std::size_t k = 0; k < g.nodes(); ++k) err = std::max(err, std::abs(ode[k] - vol[k]) / ode[k]);
    EXPECT_LT(err, 5.0 * dt);
    if (prev > 0.0) EXPECT_GT(prev / err, 1.6);
    prev = err;
  }
  // Closed form for rho = 1.3: y = x0 (l2 e^{l1 t} - l1 e^{l2 t}) / (l2 - l1).
  const double l1 = growth_root(1.3), l2 = (-1.3 - std::sqrt(1.69 + 4.0)) / 2.0;
  const TimeGrid g(4.0, 1e-2);
  const auto ode = consumption::y0_path(p, g);
  EXPECT_NEAR(ode.back(), (l2 * std::exp(4.0 * l1) - l1 * std::exp(4.0 * l2)) / (l2 - l1), 1e-9);
}

TEST(Simulation, EnsembleMeanFollowsTheMeanEquation) {
  // m' = v - u, v' = m - rho v (the mean of the wealth equation), RK4.
  ConsumptionParams p;
  const auto cfg = config(5.0, 1e-2, 2000, 12);
  const double p0 = consumption::budget_p0_initial(p);
  const auto u = consumption::optimal_consumption_path(p, p0, cfg.grid);
  const auto ens = consumption::simulate_ensemble(p, open_loop(u), cfg, consumption::Mode::lift);
  double m = p.x0, v = 0.0;
  const double h = 1e-3;
  for (int s = 0; s < 5000; ++s) {
    const double t = s * h;
    auto f = [&](double tt, double mm, double vv) {
      return std::pair{vv - consumption::optimal_consumption(p, p0, tt), mm - p.rho * vv};
    };
    const auto [a1, b1] = f(t, m, v);
    const auto [a2, b2] = f(t + h / 2, m + h / 2 * a1, v + h / 2 * b1);
    const auto [a3, b3] = f(t + h / 2, m + h / 2 * a2, v + h / 2 * b2);
    const auto [a4, b4] = f(t + h, m + h * a3, v + h * b3);
    m += h / 6 * (a1 + 2 * a2 + 2 * a3 + a4);
    v += h / 6 * (b1 + 2 * b2 + 2 * b3 + b4);
  }
  const auto& last = ens.law[cfg.grid.steps()];
  const double se = std::sqrt(last.variance() / 2000.0);
  EXPECT_NEAR(last.mean(), m, 3.0 * se + 5.0 * cfg.grid.dt() * std::abs(m));
}

TEST(Simulation, VolterraAndConvolutionFormsConverge) {
  ConsumptionParams p;
  const TimeGrid fine(5.0, 5e-3);
  const double p0 = consumption::budget_p0_initial(p);
  std::vector<double> gaps;
  for (std::size_t factor : {2u, 1u}) {
    const TimeGrid g(5.0, fine.dt() * static_cast<double>(factor));
    const auto u = open_loop(consumption::optimal_consumption_path(p, p0, g));
    double sup = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto noise = coarsen(sample_noise(fine, {}, derive_seed(3, i)), factor);
      const auto a = consumption::simulate_volterra(p, u, i, noise, g);
      const auto b = consumption::simulate_path(p, u, i, noise, g, consumption::Mode::convolution);
      for (std::size_t k = 0; k < g.nodes(); ++k) sup = std::max(sup, std::abs(a[k] - b[k]));
    }
    gaps.push_back(sup);
  }
  EXPECT_LT(gaps[0], 0.5);
  EXPECT_GT(gaps[0] / gaps[1], 1.6);
}

TEST(Simulation, LiftAndConvolutionGapHalves) {
  ConsumptionParams p;
  const TimeGrid fine(5.0, 5e-3);
  const double p0 = consumption::budget_p0_initial(p);
  std::vector<NoiseRealization> fine_noise;
  for (std::size_t i = 0; i < 20; ++i) fine_noise.push_back(sample_noise(fine, {}, derive_seed(4, i)));
  std::vector<double> gaps;
  for (std::size_t factor : {2u, 1u}) {
    const TimeGrid g(5.0, fine.dt() * static_cast<double>(factor));
    std::vector<NoiseRealization> noise;
    for (const auto& n : fine_noise) noise.push_back(coarsen(n, factor));
    gaps.push_back(consumption::lift_convolution_gap(
        p, open_loop(consumption::optimal_consumption_path(p, p0, g)), noise, g));
  }
  EXPECT_NEAR(gaps[0] / gaps[1], 2.0, 0.4);
}

TEST(Simulation, NecessaryResidualVanishesAlongTheOptimum) {
  ConsumptionParams p;
  const auto cfg = config(10.0, 1e-2, 20);
  const double p0 = consumption::budget_p0_initial(p);
  const auto uhat = open_loop(consumption::optimal_consumption_path(p, p0, cfg.grid));
  const auto ens = consumption::simulate_ensemble(p, uhat, cfg, consumption::Mode::convolution);
  const auto adj = AdjointPath::deterministic(consumption::adjoint_p0(p, p0, cfg.grid));
  const auto r = necessary_residual(consumption::hamiltonian_spec(p), ens, uhat, adj, Information::full);
  EXPECT_LT(r.sup_norm(), 1e-12);
}

TEST(Simulation, BudgetNeutralDirectionsSpendNothing) {
  ConsumptionParams p;
  const TimeGrid g(20.0, 1e-2);
  const auto dirs = consumption::budget_neutral_directions(p, g, 6);
  ASSERT_EQ(dirs.size(), 6u);
  for (const auto& d : dirs) {
    std::vector<double> w(g.nodes());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::exp(-g.time(k)) * d[k];
    EXPECT_NEAR(quad::trapezoid(w, g.dt()), 0.0, 1e-13);
  }
}

TEST(Wealth, TransversalityLadderDecaysAtTheExpectedRate) {
  ConsumptionParams p;
  const auto cfg = config(40.0, 1e-2, 400, 2);
  const auto rep = consumption::simulate_optimal_wealth(p, cfg, {5.0, 10.0, 20.0, 40.0},
                                                        consumption::Mode::lift, nullptr, 2);
  EXPECT_TRUE(rep.admissible);
  EXPECT_NEAR(rep.lambda0, growth_root(1.0), 1e-3);
  EXPECT_NEAR(rep.p0_init, 1.0 - std::exp(-1.0), 1e-10);
  EXPECT_LT(std::abs(rep.budget_residual), 1e-6);
  EXPECT_NEAR(rep.product_ladder.log_slope, growth_root(1.0) - 1.0, 0.05);
  EXPECT_TRUE(rep.difference_ladder.tail_nonnegative);
  EXPECT_NEAR(rep.truncated_budget, p.x0, 1e-3);
}

}  // namespace
