#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>

namespace emf::quad {

/// Composite trapezoid rule over uniformly spaced samples.
inline double trapezoid(std::span<const double> f, double h) {
  if (f.size() < 2) return 0.0;
  double s = 0.5 * (f.front() + f.back());
  for (std::size_t i = 1; i + 1 < f.size(); ++i) s += f[i];
  return s * h;
}

struct Estimate {
  double value = 0.0;
  double error = 0.0;
};

namespace detail {

// Gauss-Kronrod 7/15 abscissae and weights on [-1, 1].
inline constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
Estimate gk15(F& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double kronrod = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = h * kXgk[j];
    const double f1 = f(c - dx);
    const double f2 = f(c + dx);
    kronrod += kWgk[j] * (f1 + f2);
    if (j % 2 == 1) gauss += kWg[j / 2] * (f1 + f2);
  }
  return {kronrod * h, std::abs((kronrod - gauss) * h)};
}

template <class F>
Estimate adaptive(F& f, double a, double b, double abs_tol, double rel_tol, int depth) {
  const double m = 0.5 * (a + b);
  const Estimate left = gk15(f, a, m);
  const Estimate right = gk15(f, m, b);
  const double value = left.value + right.value;
  const double error = left.error + right.error;
  if (depth <= 0 || error <= std::max(abs_tol, rel_tol * std::abs(value))) {
    return {value, error};
  }
  const Estimate l = adaptive(f, a, m, 0.5 * abs_tol, rel_tol, depth - 1);
  const Estimate r = adaptive(f, m, b, 0.5 * abs_tol, rel_tol, depth - 1);
  return {l.value + r.value, l.error + r.error};
}

}  // namespace detail

/// Adaptive Gauss-Kronrod (7/15) quadrature on a finite interval.
template <class F>
Estimate integrate(F&& f, double a, double b, double abs_tol = 1e-13, double rel_tol = 1e-12,
                   int max_depth = 40) {
  if (a == b) return {};
  if (b < a) {
    auto e = integrate(f, b, a, abs_tol, rel_tol, max_depth);
    return {-e.value, e.error};
  }
  return detail::adaptive(f, a, b, abs_tol, rel_tol, max_depth);
}

/// Adaptive quadrature on [a, inf) through the map t -> a + t/(1-t).
template <class F>
Estimate integrate_to_infinity(F&& f, double a, double abs_tol = 1e-13, double rel_tol = 1e-12) {
  auto g = [&](double t) {
    if (t >= 1.0) return 0.0;
    const double s = 1.0 - t;
    const double v = f(a + t / s) / (s * s);
    return std::isfinite(v) ? v : 0.0;
  };
  return integrate(g, 0.0, 1.0, abs_tol, rel_tol);
}

/// Five-point Gauss-Legendre rule on [a, b].
template <class F>
double gauss_legendre5(F&& f, double a, double b) {
  static constexpr std::array<double, 5> x = {0.0, 0.538469310105683091036314420700208,
                                              -0.538469310105683091036314420700208,
                                              0.906179845938663992797626878299393,
                                              -0.906179845938663992797626878299393};
  static constexpr std::array<double, 5> w = {0.568888888888888888888888888888889,
                                              0.478628670499366468041291514835638,
                                              0.478628670499366468041291514835638,
                                              0.236926885056189087514264040719917,
                                              0.236926885056189087514264040719917};
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 5; ++i) s += w[i] * f(c + h * x[i]);
  return s * h;
}

/// Least-squares slope of y against x.
inline double regression_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("regression_slope: need two or more paired points");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace emf::quad
