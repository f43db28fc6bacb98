#include <cmath>
#include <complex>
#include <vector>

#include <gtest/gtest.h>

#include "emf/io.hpp"
#include "emf/measures.hpp"
#include "emf/parallel.hpp"
#include "emf/rng.hpp"
#include "support.hpp"

namespace {

using namespace emf;

using emf::testing::simpson;

// int_{-Y}^{Y} g(y) (1+|y|)^-n dy for even g, split into unit panels.
template <class G>
double weighted_oracle(G g, int n, double Y) {
  double s = 0.0;
  for (double a = 0.0; a < Y; a += 1.0) {
    const double b = std::min(a + 1.0, Y);
    s += simpson([&](double y) { return g(y) * std::pow(1.0 + y, -n); }, a, b, 1e-14);
  }
  return 2.0 * s;
}

std::vector<double> gaussian_sample(std::uint64_t seed, std::size_t n, double mu = 0.0,
                                    double sd = 1.0) {
  RandomStream rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) x = mu + sd * rng.normal();
  return out;
}

TEST(EmpiricalMeasure, UniformWeightsAndMoments) {
  const auto m = EmpiricalMeasure::from_samples({1.0, 2.0, 3.0, 6.0});
  EXPECT_EQ(m.size(), 4u);
  EXPECT_DOUBLE_EQ(m.weight(2), 0.25);
  EXPECT_DOUBLE_EQ(m.mean(), 3.0);
  EXPECT_DOUBLE_EQ(m.variance(), (4.0 + 1.0 + 0.0 + 9.0) / 4.0);
  EXPECT_DOUBLE_EQ(m.quantile(0.5), 2.0);
  EXPECT_DOUBLE_EQ(m.quantile(1.0), 6.0);
}

TEST(EmpiricalMeasure, EqualAtomsHaveExactMoments) {
  const auto m = EmpiricalMeasure::from_samples(std::vector<double>(3000, 1.0));
  EXPECT_EQ(m.mean(), 1.0);
  EXPECT_EQ(m.variance(), 0.0);
  EXPECT_EQ(m.second_moment(), 1.0);
}

TEST(EmpiricalMeasure, RejectsBadAtoms) {
  EXPECT_THROW(EmpiricalMeasure::from_samples({}), std::invalid_argument);
  EXPECT_THROW(EmpiricalMeasure::from_samples({1.0, NAN}), std::invalid_argument);
  EXPECT_THROW(EmpiricalMeasure::from_atoms({{0.0, 0.5}, {1.0, 0.4}}), std::invalid_argument);
  EXPECT_THROW(EmpiricalMeasure::from_atoms({{0.0, 1.5}, {1.0, -0.5}}), std::invalid_argument);
  EXPECT_NO_THROW(EmpiricalMeasure::from_atoms({{0.0, 0.3}, {1.0, 0.7}}));
}

TEST(SignedMeasure, CanonicalFormMergesAndDropsZeros) {
  const SignedMeasure m({{2.0, 0.5}, {1.0, 0.25}, {2.0, -0.5}, {1.0, 0.25}});
  ASSERT_EQ(m.atoms().size(), 1u);
  EXPECT_DOUBLE_EQ(m.atoms()[0].x, 1.0);
  EXPECT_DOUBLE_EQ(m.atoms()[0].w, 0.5);
  const auto a = EmpiricalMeasure::from_samples(gaussian_sample(3, 50));
  EXPECT_TRUE(difference(a, a).empty());
  EXPECT_DOUBLE_EQ(norm_sq(difference(a, a)).value, 0.0);
}

TEST(Norm, ZeroMeasureHasZeroNorm) {
  const auto v = norm_sq(SignedMeasure{});
  EXPECT_EQ(v.value, 0.0);
  EXPECT_EQ(v.tail_bound, 0.0);
}

TEST(Norm, DiracNormMatchesClosedForm) {
  // |delta_a^|^2 = 1, so the norm is int (1+|y|)^-n dy = 2/(n-1) up to the tail.
  for (int n : {2, 3, 4, 6}) {
    NormConfig cfg;
    cfg.n = n;
    cfg.y_max = 400.0;
    for (double a : {0.0, 1.7, -3.0}) {
      const auto v = norm_sq(SignedMeasure(EmpiricalMeasure::dirac(a)), cfg);
      const double truncated = 2.0 / (n - 1.0) * (1.0 - std::pow(401.0, 1.0 - n));
      EXPECT_NEAR(v.value, truncated, 1e-7 * truncated) << "n=" << n << " a=" << a;
      EXPECT_NEAR(v.value + v.tail_bound, 2.0 / (n - 1.0), 1e-7);
    }
  }
}

TEST(Norm, TwoPointDifferenceMatchesIndependentQuadrature) {
  // |(delta_a - delta_b)^|^2 = 2 - 2 cos((a - b) y).
  const double a = 0.3, b = -0.45;
  NormConfig cfg;
  const auto v = norm_sq(difference(EmpiricalMeasure::dirac(a), EmpiricalMeasure::dirac(b)), cfg);
  const double oracle =
      weighted_oracle([&](double y) { return 2.0 - 2.0 * std::cos((a - b) * y); }, cfg.n, cfg.y_max);
  // Agreement within the solver's own error estimate.
  EXPECT_NEAR(v.value, oracle, 4.0 * v.quadrature_error + 1e-10);
  EXPECT_LT(v.quadrature_error, 1e-3 * v.value);
}

TEST(Norm, GaussianSampleDifferenceMatchesIndependentQuadrature) {
  const auto s1 = gaussian_sample(11, 15);
  const auto s2 = gaussian_sample(12, 15, 0.5, 1.3);
  const auto mu = difference(EmpiricalMeasure::from_samples(s1), EmpiricalMeasure::from_samples(s2));
  auto spec = [&](double y) { return std::norm(characteristic(mu, y)); };
  const double oracle = weighted_oracle(spec, 4, 50.0);
  const auto v = norm_sq(mu);
  EXPECT_NEAR(v.value, oracle, 4.0 * v.quadrature_error + 1e-10);
}

TEST(Norm, AntisymmetricAndQuadraticInScale) {
  const auto m1 = EmpiricalMeasure::from_samples(gaussian_sample(1, 30));
  const auto m2 = EmpiricalMeasure::from_samples(gaussian_sample(2, 30, 0.2));
  const auto d12 = norm_sq(difference(m1, m2)).value;
  const auto d21 = norm_sq(difference(m2, m1)).value;
  EXPECT_EQ(d12, d21);  // bitwise: the canonical form makes mu - nu = -(nu - mu)
  const auto scaled = norm_sq(difference(m1, m2).scaled(3.0)).value;
  EXPECT_NEAR(scaled, 9.0 * d12, 1e-12 * scaled);
}

TEST(Norm, TriangleInequalityOnRandomTriples) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = EmpiricalMeasure::from_samples(gaussian_sample(100 + s, 10));
    const auto b = EmpiricalMeasure::from_samples(gaussian_sample(200 + s, 10, 0.5));
    const auto c = EmpiricalMeasure::from_samples(gaussian_sample(300 + s, 10, -0.5, 2.0));
    const double ab = std::sqrt(norm_sq(difference(a, b)).value);
    const double bc = std::sqrt(norm_sq(difference(b, c)).value);
    const double ac = std::sqrt(norm_sq(difference(a, c)).value);
    EXPECT_LE(ac, ab + bc + 1e-12);
  }
}

TEST(Norm, ErrorEstimateShrinksWithResolution) {
  const auto mu = difference(EmpiricalMeasure::dirac(0.0), EmpiricalMeasure::dirac(2.5));
  NormConfig coarse;
  coarse.n_quad = 401;
  NormConfig fine;
  fine.n_quad = 4001;
  const auto vc = norm_sq(mu, coarse);
  const auto vf = norm_sq(mu, fine);
  EXPECT_GT(vc.quadrature_error, vf.quadrature_error);
  EXPECT_NEAR(vc.value, vf.value, 10.0 * vc.quadrature_error + 1e-12);
}

TEST(Norm, DegradedFlagWhenTailDominates) {
  NormConfig cfg;
  cfg.n = 2;
  cfg.y_max = 0.5;
  cfg.n_quad = 11;
  EXPECT_TRUE(norm_sq(SignedMeasure(EmpiricalMeasure::dirac(0.0)), cfg).degraded);
  EXPECT_FALSE(norm_sq(SignedMeasure(EmpiricalMeasure::dirac(0.0))).degraded);
}

TEST(Norm, ConfigValidation) {
  NormConfig bad;
  bad.n_quad = 100;
  EXPECT_THROW(norm_sq(SignedMeasure(EmpiricalMeasure::dirac(0.0)), bad), std::invalid_argument);
  bad = {};
  bad.n = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Norm, RandomMeasureAveragesReplicates) {
  std::vector<SignedMeasure> reps;
  double expected = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    reps.push_back(difference(EmpiricalMeasure::from_samples(gaussian_sample(s, 8)),
                              EmpiricalMeasure::dirac(0.0)));
    expected += norm_sq(reps.back()).value;
  }
  EXPECT_NEAR(norm_sq_random(reps).value, expected / 4.0, 1e-15);
  EXPECT_THROW(norm_sq_random(std::span<const SignedMeasure>{}), std::invalid_argument);
}

TEST(C0, ClosedFormMatchesIndependentQuadrature) {
  for (int n : {4, 5, 6, 8}) {
    // 2 int_0^inf y^2 (1+y)^-n dy via s = y/(1+y).
    const double oracle = 2.0 * simpson(
                                    [&](double s) {
                                      if (s >= 1.0) return 0.0;
                                      const double y = s / (1.0 - s);
                                      return y * y * std::pow(1.0 + y, -n) / ((1.0 - s) * (1.0 - s));
                                    },
                                    0.0, 1.0, 1e-14);
    EXPECT_NEAR(c0_constant(n), oracle, 1e-8) << "n=" << n;
  }
  EXPECT_DOUBLE_EQ(c0_constant(4), 2.0 / 3.0);
  EXPECT_THROW(c0_constant(3), std::invalid_argument);
}

TEST(Lipschitz, BoundHoldsOnCoupledSamples) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    RandomStream rng(derive_seed(77, s));
    const double scale = 0.1 + 2.0 * rng.uniform();
    std::vector<double> a(12), b(12);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.normal();
      b[i] = scale * a[i] + rng.normal() * rng.uniform();
    }
    const auto r = lipschitz_bound_check(a, b);
    EXPECT_TRUE(r.holds) << "pair " << s << ": " << r.lhs << " > " << r.rhs;
  }
}

TEST(Lipschitz, ShiftIsNearlyTightForSmallShifts) {
  // For X2 = X1 + h the ratio lhs / rhs tends to 1 as h -> 0 (Dirac case).
  const std::vector<double> a = {0.0};
  const std::vector<double> b = {1e-3};
  NormConfig cfg;
  cfg.y_max = 2000.0;
  cfg.n_quad = 40001;
  const auto r = lipschitz_bound_check(a, b, cfg);
  EXPECT_TRUE(r.holds);
  EXPECT_GT(r.lhs / r.rhs, 0.95);
}

TEST(Lipschitz, RejectsMismatchedInput) {
  const std::vector<double> a = {1.0, 2.0};
  const std::vector<double> b = {1.0};
  EXPECT_THROW(lipschitz_bound_check(a, b), std::invalid_argument);
  EXPECT_THROW(lipschitz_bound_check(std::span<const double>{}, std::span<const double>{}),
               std::invalid_argument);
}

TEST(Pairing, BoundHoldsForGaussianTestFunction) {
  NormConfig cfg;
  cfg.n = 2;
  cfg.y_max = 60.0;
  cfg.n_quad = 6001;
  // f(x) = exp(-x^2/2), f^(y) = sqrt(2 pi) exp(-y^2/2).
  auto f_hat = [](double y) { return std::complex<double>(std::sqrt(2.0 * M_PI) * std::exp(-0.5 * y * y), 0.0); };
  const auto mu = difference(EmpiricalMeasure::from_samples({0.1, 0.5, -0.3}),
                             EmpiricalMeasure::from_samples({1.0, 2.0}));
  const auto r = pairing_bound_check(f_hat, mu, cfg);
  EXPECT_TRUE(r.holds);
  // The inversion reproduces int f dmu.
  double direct = 0.0;
  for (const auto& a : mu.atoms()) direct += a.w * std::exp(-0.5 * a.x * a.x);
  EXPECT_NEAR(std::sqrt(r.lhs), std::abs(direct), 1e-9);
  NormConfig wrong = cfg;
  wrong.n = 4;
  EXPECT_THROW(pairing_bound_check(f_hat, mu, wrong), std::invalid_argument);
}

TEST(LawPath, DerivativeCentralInteriorOneSidedAtEnds) {
  const TimeGrid grid(1.0, 0.25);
  std::vector<EmpiricalMeasure> ms;
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    ms.push_back(EmpiricalMeasure::dirac(static_cast<double>(k)));
  }
  const LawPath lp(grid, ms);
  const auto mid = law_derivative(lp, 0.5);
  EXPECT_FALSE(mid.one_sided);
  EXPECT_NEAR(mid.derivative.total_mass(), 0.0, 1e-15);
  EXPECT_NEAR(mid.derivative.first_moment(), (3.0 - 1.0) / 0.5, 1e-12);
  const auto first = law_derivative(lp, 0.0);
  EXPECT_TRUE(first.one_sided);
  EXPECT_NEAR(first.derivative.first_moment(), 1.0 / 0.25, 1e-12);
  EXPECT_TRUE(law_derivative(lp, 1.0).one_sided);
  EXPECT_THROW(law_derivative(lp, 0.3), std::invalid_argument);
}

TEST(LawPath, PathNormOfConstantPath) {
  const TimeGrid grid(2.0, 0.5);
  const auto mu = difference(EmpiricalMeasure::dirac(0.0), EmpiricalMeasure::dirac(1.0));
  std::vector<SignedMeasure> path(grid.nodes(), mu);
  EXPECT_NEAR(path_norm_sq(path, grid).value, 2.0 * norm_sq(mu).value, 1e-13);
  const auto a = LawPath::constant(grid, EmpiricalMeasure::dirac(0.0));
  const auto b = LawPath::constant(grid, EmpiricalMeasure::dirac(1.0));
  EXPECT_NEAR(path_distance_sq(a, b).value, 2.0 * norm_sq(mu).value, 1e-13);
  EXPECT_THROW(LawPath(grid, {}), std::invalid_argument);
}

TEST(Norm, ThreadCountDoesNotChangeBits) {
  const auto mu = difference(EmpiricalMeasure::from_samples(gaussian_sample(5, 40)),
                             EmpiricalMeasure::from_samples(gaussian_sample(6, 40)));
  set_thread_count(1);
  const double one = norm_sq(mu).value;
  set_thread_count(4);
  const double four = norm_sq(mu).value;
  set_thread_count(1);
  EXPECT_EQ(one, four);
}

TEST(Serialization, MeasureJsonRoundTrip) {
  const auto m = EmpiricalMeasure::from_atoms({{0.5, 0.25}, {-1.0, 0.75}});
  const auto j = io::to_json(m);
  EXPECT_EQ(j.dump(), R"({"atoms":[[0.5,0.25],[-1.0,0.75]]})");
  const auto back = io::empirical_from_json(j);
  EXPECT_EQ(back.location(1), -1.0);
  EXPECT_EQ(back.weight(0), 0.25);
  const SignedMeasure s({{1.0, -0.5}, {0.0, 0.5}});
  const auto sb = io::signed_from_json(io::to_json(s));
  ASSERT_EQ(sb.atoms().size(), 2u);
  EXPECT_EQ(sb.atoms()[0].w, 0.5);
  EXPECT_THROW(io::empirical_from_json(io::json{{"atoms", {{1.0}}}}), std::invalid_argument);
}

}  // namespace
