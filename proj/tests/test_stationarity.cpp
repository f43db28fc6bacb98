// First-order conditions at the closed-form candidates. These are checked at
// face value; the ones that fail are documented in README.md.

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "emf/consumption.hpp"
#include "emf/equivalence.hpp"
#include "emf/lq.hpp"

namespace {

using namespace emf;

SolverConfig config(double T, double dt, std::size_t n, std::uint64_t seed = 1) {
  SolverConfig c;
  c.grid = TimeGrid(T, dt);
  c.n_particles = n;
  c.seed = seed;
  return c;
}

TEST(Stationarity, LqBatteryAtSmallStep) {
  // Deterministic, so the tolerance is the Euler allowance dt alone.
  lq::LQParams p;
  const auto rep = lq::verify_lq_optimality(p, config(1.0, 1e-3, 2), {0.05});
  for (const auto& d : rep.directions) EXPECT_TRUE(d.holds) << d.name << " gain " << d.gain;
}

TEST(Stationarity, LqGateauxVanishesInRandomDirections) {
  lq::LQParams p;
  p.sigma0 = 0.2;
  const auto rep = equivalence::lq_report(p, config(1.0, 1e-2, 500, 5), 0.1, 5);
  EXPECT_LT(rep.at_optimum.gateaux_max, rep.thresholds.gateaux);
}

TEST(Stationarity, ConsumptionGateauxNonPositiveInBudgetNeutralDirections) {
  consumption::ConsumptionParams p;
  const auto rep = equivalence::consumption_report(p, config(40.0, 1e-2, 200, 6), 0.1, 5);
  for (std::size_t j = 0; j < rep.at_optimum.gateaux.size(); ++j) {
    EXPECT_LE(rep.at_optimum.gateaux[j], rep.thresholds.gateaux * rep.at_optimum.scales[j])
        << "direction " << j;
  }
}

TEST(Stationarity, EquivalenceOnBothExamples) {
  lq::LQParams lp;
  lp.sigma0 = 0.2;
  const auto a = equivalence::lq_report(lp, config(1.0, 1e-2, 500, 7), 0.1, 5);
  EXPECT_TRUE(a.holds()) << "gateaux " << a.at_optimum.gateaux_max << " residual "
                         << a.at_optimum.residual_sup;
  const auto b = equivalence::consumption_report({}, config(40.0, 1e-2, 200, 8), 0.1, 5);
  EXPECT_TRUE(b.holds()) << "gateaux " << b.at_optimum.gateaux_max << " residual "
                         << b.at_optimum.residual_sup << " perturbed residual "
                         << b.at_perturbed.residual_sup;
}

}  // namespace
