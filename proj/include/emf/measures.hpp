#pragma once

// Finite measures on the real line and the weighted Fourier norm
//
//   ||mu||^2 = int |mu^(y)|^2 (1+|y|)^(-n) dy,   mu^(y) = int e^{-ixy} dmu(x).
//
// The frequency integral is truncated to [-y_max, y_max] and discretised on a
// uniform symmetric grid. Node weights integrate the piecewise-linear
// interpolant of |mu^|^2 against the weight exactly (up to a 5-point
// Gauss-Legendre rule per panel), which keeps the kink of (1+|y|)^(-n) at the
// origin from polluting the result. Every norm value carries an estimate of the
// discretisation error (difference against the 2h rule) and a rigorous bound on
// the truncated tail.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "emf/parallel.hpp"
#include "emf/quadrature.hpp"
#include "emf/time_grid.hpp"

namespace emf {

struct Atom {
  double x = 0.0;
  double w = 0.0;
};

/// Probability measure with finitely many atoms. Immutable; caches its first
/// two moments so that law-dependent coefficients can query them in O(1).
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() : EmpiricalMeasure(dirac(0.0)) {}

  /// Equal-weight measure over the samples (the empirical law of an ensemble).
  static EmpiricalMeasure from_samples(std::vector<double> samples) {
    if (samples.empty()) throw std::invalid_argument("EmpiricalMeasure: no atoms");
    for (double x : samples) {
      if (!std::isfinite(x)) throw std::invalid_argument("EmpiricalMeasure: non-finite atom");
    }
    EmpiricalMeasure m(std::move(samples), {}, Unchecked{});
    return m;
  }

  static EmpiricalMeasure dirac(double a) { return from_samples({a}); }

  static EmpiricalMeasure from_atoms(const std::vector<Atom>& atoms) {
    if (atoms.empty()) throw std::invalid_argument("EmpiricalMeasure: no atoms");
    std::vector<double> xs, ws;
    xs.reserve(atoms.size());
    ws.reserve(atoms.size());
    double total = 0.0;
    for (const auto& a : atoms) {
      if (!std::isfinite(a.x) || !std::isfinite(a.w)) {
        throw std::invalid_argument("EmpiricalMeasure: non-finite atom");
      }
      if (a.w < 0.0) throw std::invalid_argument("EmpiricalMeasure: negative weight");
      xs.push_back(a.x);
      ws.push_back(a.w);
      total += a.w;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("EmpiricalMeasure: weights sum to " + std::to_string(total) +
                                  ", expected 1");
    }
    return EmpiricalMeasure(std::move(xs), std::move(ws), Unchecked{});
  }

  std::size_t size() const { return x_.size(); }
  double location(std::size_t i) const { return x_[i]; }
  double weight(std::size_t i) const {
    return w_.empty() ? 1.0 / static_cast<double>(x_.size()) : w_[i];
  }
  bool uniform_weights() const { return w_.empty(); }
  std::span<const double> locations() const { return x_; }

  double mean() const { return mean_; }
  double second_moment() const { return second_; }
  double variance() const { return variance_; }

  /// Lower quantile of the measure (smallest atom with cumulative weight >= q).
  double quantile(double q) const {
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x_[a] < x_[b]; });
    double cdf = 0.0;
    for (std::size_t i : order) {
      cdf += weight(i);
      if (cdf >= q - 1e-15) return x_[i];
    }
    return x_[order.back()];
  }

  std::vector<Atom> atoms() const {
    std::vector<Atom> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = {x_[i], weight(i)};
    return out;
  }

 private:
  struct Unchecked {};

  EmpiricalMeasure(std::vector<double> x, std::vector<double> w, Unchecked)
      : x_(std::move(x)), w_(std::move(w)) {
    // Uniform weights sum first and divide once, so N equal atoms have
    // exactly that mean; the variance is taken about the mean.
    double m = 0.0;
    if (w_.empty()) {
      for (double x : x_) m += x;
      m /= static_cast<double>(x_.size());
    } else {
      for (std::size_t i = 0; i < x_.size(); ++i) m += w_[i] * x_[i];
    }
    double v = 0.0;
    for (std::size_t i = 0; i < x_.size(); ++i) v += weight(i) * (x_[i] - m) * (x_[i] - m);
    mean_ = m;
    variance_ = v;
    second_ = v + m * m;
  }

  std::vector<double> x_;
  std::vector<double> w_;  // empty means uniform 1/N
  double mean_ = 0.0;
  double second_ = 0.0;
  double variance_ = 0.0;
};

/// Finite signed measure in canonical form: atoms sorted by location, equal
/// locations merged, zero weights dropped. The canonical form makes
/// (a - b) the exact negation of (b - a) and makes (a - a) the zero measure.
class SignedMeasure {
 public:
  SignedMeasure() = default;

  explicit SignedMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) { canonicalize(); }

  SignedMeasure(const EmpiricalMeasure& m) : atoms_(m.atoms()) { canonicalize(); }  // NOLINT

  const std::vector<Atom>& atoms() const { return atoms_; }
  bool empty() const { return atoms_.empty(); }

  double total_mass() const {
    double s = 0.0;
    for (const auto& a : atoms_) s += a.w;
    return s;
  }
  double total_variation() const {
    double s = 0.0;
    for (const auto& a : atoms_) s += std::abs(a.w);
    return s;
  }
  double first_moment() const {
    double s = 0.0;
    for (const auto& a : atoms_) s += a.w * a.x;
    return s;
  }

  SignedMeasure scaled(double c) const {
    std::vector<Atom> out = atoms_;
    for (auto& a : out) a.w *= c;
    return SignedMeasure(std::move(out));
  }

  friend SignedMeasure operator+(const SignedMeasure& a, const SignedMeasure& b) {
    std::vector<Atom> out = a.atoms_;
    out.insert(out.end(), b.atoms_.begin(), b.atoms_.end());
    return SignedMeasure(std::move(out));
  }
  friend SignedMeasure operator-(const SignedMeasure& a, const SignedMeasure& b) {
    return a + b.scaled(-1.0);
  }

 private:
  void canonicalize() {
    for (const auto& a : atoms_) {
      if (!std::isfinite(a.x) || !std::isfinite(a.w)) {
        throw std::invalid_argument("SignedMeasure: non-finite atom");
      }
    }
    std::stable_sort(atoms_.begin(), atoms_.end(),
                     [](const Atom& l, const Atom& r) { return l.x < r.x; });
    std::vector<Atom> merged;
    merged.reserve(atoms_.size());
    for (std::size_t i = 0; i < atoms_.size();) {
      // Merge by summing positive and negative parts separately so that the
      // merged weight is an odd function of the input weights.
      double pos = 0.0, neg = 0.0;
      std::size_t j = i;
      for (; j < atoms_.size() && atoms_[j].x == atoms_[i].x; ++j) {
        (atoms_[j].w >= 0.0 ? pos : neg) += atoms_[j].w;
      }
      const double w = pos + neg;
      if (w != 0.0) merged.push_back({atoms_[i].x, w});
      i = j;
    }
    atoms_ = std::move(merged);
  }

  std::vector<Atom> atoms_;
};

inline SignedMeasure difference(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  return SignedMeasure(a) - SignedMeasure(b);
}

/// mu^(y) = sum_j w_j exp(-i x_j y).
inline std::complex<double> characteristic(const SignedMeasure& mu, double y) {
  double re = 0.0, im = 0.0;
  for (const auto& a : mu.atoms()) {
    re += a.w * std::cos(a.x * y);
    im -= a.w * std::sin(a.x * y);
  }
  return {re, im};
}

inline std::complex<double> characteristic(const EmpiricalMeasure& mu, double y) {
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double w = mu.weight(i);
    re += w * std::cos(mu.location(i) * y);
    im -= w * std::sin(mu.location(i) * y);
  }
  return {re, im};
}

struct NormConfig {
  int n = 4;             // weight exponent
  double y_max = 50.0;   // frequency truncation
  int n_quad = 4001;     // frequency nodes, odd

  void validate() const {
    if (n < 2) throw std::invalid_argument("NormConfig: n must be >= 2");
    if (!(y_max > 0.0) || !std::isfinite(y_max)) {
      throw std::invalid_argument("NormConfig: y_max must be positive");
    }
    if (n_quad < 5 || n_quad % 2 == 0) {
      throw std::invalid_argument("NormConfig: n_quad must be odd and >= 5");
    }
  }
};

struct NormValue {
  double value = 0.0;
  double quadrature_error = 0.0;  // |I_h - I_2h| / 3
  double tail_bound = 0.0;        // bound on the integral over |y| > y_max
  bool degraded = false;          // tail_bound > 1% of value
};

/// Frequency nodes and product-integration weights for one NormConfig.
class FrequencyRule {
 public:
  explicit FrequencyRule(const NormConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int m = cfg.n_quad;
    const int mid = (m - 1) / 2;
    h_ = cfg.y_max / mid;
    nodes_.resize(m);
    for (int k = 0; k < m; ++k) nodes_[k] = (k - mid) * h_;
    fine_ = weights_for(h_, mid, cfg.n);
    coarse_ = weights_for(2.0 * h_, mid / 2, cfg.n);
    coarse_usable_ = mid % 2 == 0;
  }

  const NormConfig& config() const { return cfg_; }
  double spacing() const { return h_; }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return fine_; }

  /// Integral of g(y)(1+|y|)^-n from nodal values of an even function g.
  NormValue integrate_even(const std::vector<double>& g, double tail_scale) const {
    NormValue out;
    double fine = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) fine += fine_[k] * g[k];
    out.value = fine;
    if (coarse_usable_) {
      double coarse = 0.0;
      for (std::size_t k = 0; k < coarse_.size(); ++k) coarse += coarse_[k] * g[2 * k];
      out.quadrature_error = std::abs(fine - coarse) / 3.0;
    }
    out.tail_bound = tail_scale * tail_integral(cfg_.n, cfg_.y_max);
    out.degraded = out.tail_bound > 0.01 * std::abs(out.value);
    return out;
  }

  /// int_{|y|>Y} (1+|y|)^-n dy.
  static double tail_integral(int n, double y_max) {
    return 2.0 * std::pow(1.0 + y_max, 1.0 - n) / (n - 1.0);
  }

 private:
  static std::vector<double> weights_for(double h, int mid, int n) {
    const int m = 2 * mid + 1;
    std::vector<double> w(m, 0.0);
    auto weight = [n](double y) { return std::pow(1.0 + std::abs(y), -n); };
    for (int k = 0; k + 1 < m; ++k) {
      const double a = (k - mid) * h;
      const double b = (k + 1 - mid) * h;
      // Hat functions restricted to [a, b]: (b - y)/h at node k, (y - a)/h at node k+1.
      w[k] += quad::gauss_legendre5([&](double y) { return weight(y) * (b - y) / h; }, a, b);
      w[k + 1] += quad::gauss_legendre5([&](double y) { return weight(y) * (y - a) / h; }, a, b);
    }
    return w;
  }

  NormConfig cfg_;
  double h_ = 0.0;
  std::vector<double> nodes_;
  std::vector<double> fine_;
  std::vector<double> coarse_;
  bool coarse_usable_ = false;
};

/// Shared, lazily built rule for a configuration.
inline std::shared_ptr<const FrequencyRule> frequency_rule(const NormConfig& cfg) {
  static std::mutex mutex;
  static std::map<std::tuple<int, double, int>, std::shared_ptr<const FrequencyRule>> cache;
  const auto key = std::make_tuple(cfg.n, cfg.y_max, cfg.n_quad);
  std::lock_guard lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto rule = std::make_shared<const FrequencyRule>(cfg);
  cache.emplace(key, rule);
  return rule;
}

/// |mu^(y_k)|^2 at every node of the rule. The grid is symmetric and the
/// measure real, so only y >= 0 is evaluated and mirrored.
inline std::vector<double> spectrum_sq(const SignedMeasure& mu, const FrequencyRule& rule) {
  const auto& y = rule.nodes();
  const std::size_t m = y.size();
  const std::size_t mid = (m - 1) / 2;
  std::vector<double> g(m, 0.0);
  if (mu.empty()) return g;
  parallel_for(mid + 1, [&](std::size_t j) {
    const std::size_t k = mid + j;
    const auto c = characteristic(mu, y[k]);
    const double v = std::norm(c);
    g[k] = v;
    g[mid - j] = v;
  });
  return g;
}

/// ||mu||^2 truncated to [-y_max, y_max], with error estimate and tail bound.
inline NormValue norm_sq(const SignedMeasure& mu, const NormConfig& cfg = {}) {
  const auto rule = frequency_rule(cfg);
  const double tv = mu.total_variation();
  return rule->integrate_even(spectrum_sq(mu, *rule), tv * tv);
}

/// Norm of a random measure: the average of the deterministic norm over
/// independent replicates of the measure.
inline NormValue norm_sq_random(std::span<const SignedMeasure> replicates,
                                const NormConfig& cfg = {}) {
  if (replicates.empty()) throw std::invalid_argument("norm_sq_random: no replicates");
  NormValue acc;
  for (const auto& r : replicates) {
    const auto v = norm_sq(r, cfg);
    acc.value += v.value;
    acc.quadrature_error += v.quadrature_error;
    acc.tail_bound += v.tail_bound;
  }
  const double n = static_cast<double>(replicates.size());
  acc.value /= n;
  acc.quadrature_error /= n;
  acc.tail_bound /= n;
  acc.degraded = acc.tail_bound > 0.01 * acc.value;
  return acc;
}

/// C0(n) = int y^2 (1+|y|)^-n dy = 2 B(3, n-3) = 4 / ((n-1)(n-2)(n-3)).
inline double c0_constant(int n) {
  if (n < 4) {
    throw std::invalid_argument("c0_constant: requires n >= 4 (the integral diverges for n=" +
                                std::to_string(n) + ")");
  }
  const double nn = n;
  return 4.0 / ((nn - 1.0) * (nn - 2.0) * (nn - 3.0));
}

/// Law of a process sampled at every node of a grid.
class LawPath {
 public:
  LawPath() = default;
  LawPath(TimeGrid grid, std::vector<EmpiricalMeasure> measures)
      : grid_(grid), measures_(std::move(measures)) {
    if (measures_.size() != grid_.nodes()) {
      throw std::invalid_argument("LawPath: need one measure per grid node");
    }
  }

  static LawPath constant(const TimeGrid& grid, const EmpiricalMeasure& m) {
    return LawPath(grid, std::vector<EmpiricalMeasure>(grid.nodes(), m));
  }

  const TimeGrid& grid() const { return grid_; }
  std::size_t size() const { return measures_.size(); }
  const EmpiricalMeasure& at(std::size_t k) const { return measures_[k]; }
  const EmpiricalMeasure& operator[](std::size_t k) const { return measures_[k]; }
  const std::vector<EmpiricalMeasure>& measures() const { return measures_; }

  /// Replaces node k. Used by step-by-step builders, which fill the path in
  /// time order while coefficients read only nodes up to the current step.
  void set(std::size_t k, EmpiricalMeasure m) { measures_.at(k) = std::move(m); }

 private:
  TimeGrid grid_;
  std::vector<EmpiricalMeasure> measures_;
};

/// int_0^T ||mu(s)||^2 ds by the trapezoid rule over the grid.
inline NormValue path_norm_sq(std::span<const SignedMeasure> path, const TimeGrid& grid,
                              const NormConfig& cfg = {}) {
  if (path.size() != grid.nodes()) {
    throw std::invalid_argument("path_norm_sq: need one measure per grid node");
  }
  std::vector<double> v(path.size()), e(path.size()), t(path.size());
  for (std::size_t k = 0; k < path.size(); ++k) {
    const auto nv = norm_sq(path[k], cfg);
    v[k] = nv.value;
    e[k] = nv.quadrature_error;
    t[k] = nv.tail_bound;
  }
  NormValue out;
  out.value = quad::trapezoid(v, grid.dt());
  out.quadrature_error = quad::trapezoid(e, grid.dt());
  out.tail_bound = quad::trapezoid(t, grid.dt());
  out.degraded = out.tail_bound > 0.01 * out.value;
  return out;
}

inline NormValue path_norm_sq(const LawPath& lp, const NormConfig& cfg = {}) {
  std::vector<SignedMeasure> path(lp.measures().begin(), lp.measures().end());
  return path_norm_sq(path, lp.grid(), cfg);
}

/// Squared path distance between two law paths on the same grid.
inline NormValue path_distance_sq(const LawPath& a, const LawPath& b, const NormConfig& cfg = {}) {
  if (a.size() != b.size()) throw std::invalid_argument("path_distance_sq: grid mismatch");
  std::vector<SignedMeasure> path;
  path.reserve(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) path.push_back(difference(a[k], b[k]));
  return path_norm_sq(path, a.grid(), cfg);
}

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double tolerance = 0.0;
  bool holds = false;
};

/// ||L(X1) - L(X2)||^2 <= C0 E[(X1 - X2)^2] on a coupled sample.
inline BoundCheck lipschitz_bound_check(std::span<const double> samples1,
                                        std::span<const double> samples2,
                                        const NormConfig& cfg = {}) {
  if (samples1.size() != samples2.size()) {
    throw std::invalid_argument("lipschitz_bound_check: sample lists differ in length (" +
                                std::to_string(samples1.size()) + " vs " +
                                std::to_string(samples2.size()) + ")");
  }
  if (samples1.empty()) throw std::invalid_argument("lipschitz_bound_check: empty samples");
  const double c0 = c0_constant(cfg.n);
  const auto law1 = EmpiricalMeasure::from_samples({samples1.begin(), samples1.end()});
  const auto law2 = EmpiricalMeasure::from_samples({samples2.begin(), samples2.end()});
  const auto nv = norm_sq(difference(law1, law2), cfg);
  double msd = 0.0;
  for (std::size_t i = 0; i < samples1.size(); ++i) {
    const double d = samples1[i] - samples2[i];
    msd += d * d;
  }
  msd /= static_cast<double>(samples1.size());
  BoundCheck out;
  out.lhs = nv.value;
  out.rhs = c0 * msd;
  out.tolerance = 4.0 * nv.quadrature_error + 1e-12 * out.rhs + 1e-15;
  out.holds = out.lhs <= out.rhs + out.tolerance;
  return out;
}

struct PairingCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double tolerance = 0.0;
  bool holds = false;
  bool degraded = false;
};

/// |int f dmu|^2 <= (1/2pi) int |mu^|^2 (1+|y|)^-2 dy * int |f^|^2 (1+|y|)^2 dy,
/// with int f dmu obtained by Fourier inversion, (1/2pi) int f^(y) mu^(-y) dy.
/// All three frequency integrals share one trapezoid rule on the cfg grid.
inline PairingCheck pairing_bound_check(const std::function<std::complex<double>(double)>& f_hat,
                                        const SignedMeasure& mu, const NormConfig& cfg) {
  if (cfg.n != 2) throw std::invalid_argument("pairing_bound_check: requires n = 2");
  cfg.validate();
  const auto rule = frequency_rule(cfg);
  const auto& y = rule->nodes();
  const double h = rule->spacing();
  std::complex<double> pairing{0.0, 0.0};
  double mu_part = 0.0, f_part = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double tw = (k == 0 || k + 1 == y.size()) ? 0.5 * h : h;
    const auto fh = f_hat(y[k]);
    const auto mh = characteristic(mu, y[k]);
    const double wt = 1.0 + std::abs(y[k]);
    pairing += tw * fh * std::conj(mh);  // mu^(-y) = conj(mu^(y)) for real mu
    mu_part += tw * std::norm(mh) / (wt * wt);
    f_part += tw * std::norm(fh) * wt * wt;
  }
  constexpr double two_pi = 6.283185307179586476925286766559;
  PairingCheck out;
  out.lhs = std::norm(pairing / two_pi);
  out.rhs = mu_part * f_part / two_pi;
  out.tolerance = 1e-12 * (out.lhs + out.rhs) + 1e-15;
  out.holds = out.lhs <= out.rhs + out.tolerance;
  const double tv = mu.total_variation();
  out.degraded = tv * tv * FrequencyRule::tail_integral(2, cfg.y_max) > 0.01 * mu_part;
  return out;
}

struct LawDerivative {
  SignedMeasure derivative;
  bool one_sided = false;
};

/// M'(t) by finite differences of the law path: central in the interior,
/// one-sided (and flagged) at the ends of the grid.
inline LawDerivative law_derivative(const LawPath& lp, double t) {
  const std::size_t k = lp.grid().node_at(t);
  const std::size_t last = lp.size() - 1;
  std::size_t lo = k, hi = k;
  bool one_sided = false;
  if (k == 0) {
    hi = 1;
    one_sided = true;
  } else if (k == last) {
    lo = last - 1;
    one_sided = true;
  } else {
    lo = k - 1;
    hi = k + 1;
  }
  const double span = lp.grid().time(hi) - lp.grid().time(lo);
  std::vector<Atom> atoms;
  atoms.reserve(lp[hi].size() + lp[lo].size());
  for (std::size_t i = 0; i < lp[hi].size(); ++i) {
    atoms.push_back({lp[hi].location(i), lp[hi].weight(i) / span});
  }
  for (std::size_t i = 0; i < lp[lo].size(); ++i) {
    atoms.push_back({lp[lo].location(i), -lp[lo].weight(i) / span});
  }
  return {SignedMeasure(std::move(atoms)), one_sided};
}

}  // namespace emf
