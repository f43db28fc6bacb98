#pragma once

// Helpers shared by the test binaries: an independent adaptive Simpson rule
// and the two sides of the functional duality identity on smooth random paths.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "emf/drivers.hpp"
#include "emf/rng.hpp"
#include "emf/time_grid.hpp"

namespace emf::testing {

template <class F>
double simpson(F f, double a, double b, double tol, int depth = 0) {
  const double c = 0.5 * (a + b);
  const double fa = f(a), fb = f(b), fc = f(c);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
  const double left = (c - a) / 6.0 * (fa + 4.0 * f(0.5 * (a + c)) + fc);
  const double right = (b - c) / 6.0 * (fc + 4.0 * f(0.5 * (c + b)) + fb);
  if (depth > 40 || std::abs(left + right - whole) < 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson(f, a, c, tol / 2.0, depth + 1) + simpson(f, c, b, tol / 2.0, depth + 1);
}

/// Smooth random path a0 + sum_k a_k sin(w_k t + phi_k), fixed by the seed so
/// that it can be sampled on grids of any resolution.
struct SmoothPath {
  double a0 = 0.0;
  std::vector<double> a, w, phi;

  static SmoothPath random(std::uint64_t seed, int terms = 4) {
    RandomStream rng(seed);
    SmoothPath p;
    p.a0 = rng.normal();
    for (int k = 0; k < terms; ++k) {
      p.a.push_back(rng.normal());
      p.w.push_back(0.5 + 3.0 * rng.uniform());
      p.phi.push_back(6.283185307179586 * rng.uniform());
    }
    return p;
  }

  double operator()(double t) const {
    double s = a0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * std::sin(w[k] * t + phi[k]);
    return s;
  }

  std::vector<double> sample(const TimeGrid& g) const {
    std::vector<double> out(g.nodes());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = (*this)(g.time(k));
    return out;
  }
};

/// Functional of the given kind built for a grid: evaluation at t0 = 0.25,
/// averaging with kernel exp(-r) on [0, 0.5], exponential with rho = 1.5.
inline LinearFunctionalSpec functional_for(const std::string& kind, const TimeGrid& g) {
  if (kind == "evaluation") return LinearFunctionalSpec::evaluation(0.25);
  if (kind == "averaging") {
    const auto m = static_cast<std::size_t>(std::llround(0.5 / g.dt()));
    std::vector<double> kernel(m + 1);
    for (std::size_t j = 0; j <= m; ++j) kernel[j] = std::exp(-static_cast<double>(j) * g.dt());
    return LinearFunctionalSpec::averaging(std::move(kernel), g.dt());
  }
  return LinearFunctionalSpec::exponential(1.5);
}

/// |int <F, p^t> Y(t) dt - int <F, Y_u> p(u) du| on [0, T], both outer
/// integrals by the trapezoid rule on the grid.
inline double duality_discrepancy(const std::string& kind, double T, double dt,
                                  std::uint64_t seed) {
  const TimeGrid g(T, dt);
  const auto Y = SmoothPath::random(seed).sample(g);
  const auto p = SmoothPath::random(seed + 1000003).sample(g);
  const auto F = functional_for(kind, g);
  std::vector<double> lhs(g.nodes()), rhs(g.nodes());
  for (std::size_t k = 0; k < g.nodes(); ++k) {
    const double t = g.time(k);
    lhs[k] = dual_functional(F, p, g, t) * Y[k];
    rhs[k] = apply_functional(F, reverse_segment(Y, g, t)) * p[k];
  }
  auto trap = [&](const std::vector<double>& f) {
    double s = 0.5 * (f.front() + f.back());
    for (std::size_t k = 1; k + 1 < f.size(); ++k) s += f[k];
    return s * dt;
  };
  return std::abs(trap(lhs) - trap(rhs));
}

}  // namespace emf::testing
