#pragma once

// Noise drivers, path segments and the linear memory functionals F.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "emf/quadrature.hpp"
#include "emf/rng.hpp"
#include "emf/time_grid.hpp"

namespace emf {

// ---------------------------------------------------------------------------
// Jump measure and noise
// ---------------------------------------------------------------------------

struct JumpAtom {
  double mark = 0.0;
  double rate = 0.0;
};

/// Finite Levy measure nu = sum_k rate_k delta_{mark_k}.
struct JumpMeasureSpec {
  std::vector<JumpAtom> atoms;

  double total_rate() const {
    double s = 0.0;
    for (const auto& a : atoms) s += a.rate;
    return s;
  }

  void validate() const {
    for (const auto& a : atoms) {
      if (!(a.rate >= 0.0) || !std::isfinite(a.rate) || !std::isfinite(a.mark)) {
        throw std::invalid_argument("JumpMeasureSpec: rates must be finite and nonnegative");
      }
    }
  }
};

struct JumpEvent {
  std::size_t step = 0;
  double mark = 0.0;
};

/// One realisation of (B, N) on a grid: Brownian increments per step and the
/// jumps of the Poisson random measure, each attributed to the step in which
/// it occurs.
struct NoiseRealization {
  std::uint64_t seed = 0;
  double dt = 0.0;
  std::vector<double> brownian_increments;
  std::vector<JumpEvent> jump_events;  // sorted by step

  /// Jump marks falling in step k.
  std::span<const JumpEvent> jumps_at(std::size_t k) const {
    auto lo = std::lower_bound(jump_events.begin(), jump_events.end(), k,
                               [](const JumpEvent& e, std::size_t s) { return e.step < s; });
    auto hi = lo;
    while (hi != jump_events.end() && hi->step == k) ++hi;
    return {lo, hi};
  }

  friend bool operator==(const NoiseRealization& a, const NoiseRealization& b) {
    if (a.seed != b.seed || a.dt != b.dt || a.brownian_increments != b.brownian_increments ||
        a.jump_events.size() != b.jump_events.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.jump_events.size(); ++i) {
      if (a.jump_events[i].step != b.jump_events[i].step ||
          a.jump_events[i].mark != b.jump_events[i].mark) {
        return false;
      }
    }
    return true;
  }
};

/// Deterministic function of (grid, jumps, seed). Per step: one standard normal
/// scaled by sqrt(dt); then, when the jump measure is non-trivial, a
/// Poisson(Lambda dt) count followed by one mark per jump drawn with
/// probability rate_k / Lambda.
inline NoiseRealization sample_noise(const TimeGrid& grid, const JumpMeasureSpec& jumps,
                                     std::uint64_t seed) {
  jumps.validate();
  RandomStream rng(seed);
  NoiseRealization out;
  out.seed = seed;
  out.dt = grid.dt();
  out.brownian_increments.resize(grid.steps());
  const double sqrt_dt = std::sqrt(grid.dt());
  const double total = jumps.total_rate();
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    out.brownian_increments[k] = sqrt_dt * rng.normal();
    if (total > 0.0) {
      const unsigned count = rng.poisson(total * grid.dt());
      for (unsigned j = 0; j < count; ++j) {
        double u = rng.uniform() * total;
        std::size_t idx = 0;
        while (idx + 1 < jumps.atoms.size() && u >= jumps.atoms[idx].rate) {
          u -= jumps.atoms[idx].rate;
          ++idx;
        }
        out.jump_events.push_back({k, jumps.atoms[idx].mark});
      }
    }
  }
  return out;
}

/// Aggregates `factor` consecutive steps into one (same Brownian path, same
/// jumps) for common-noise comparisons across step sizes.
inline NoiseRealization coarsen(const NoiseRealization& fine, std::size_t factor) {
  if (factor == 0 || fine.brownian_increments.size() % factor != 0) {
    throw std::invalid_argument("coarsen: factor must divide the number of steps");
  }
  NoiseRealization out;
  out.seed = fine.seed;
  out.dt = fine.dt * static_cast<double>(factor);
  out.brownian_increments.resize(fine.brownian_increments.size() / factor, 0.0);
  for (std::size_t k = 0; k < fine.brownian_increments.size(); ++k) {
    out.brownian_increments[k / factor] += fine.brownian_increments[k];
  }
  for (const auto& e : fine.jump_events) out.jump_events.push_back({e.step / factor, e.mark});
  return out;
}

// ---------------------------------------------------------------------------
// Path segments
// ---------------------------------------------------------------------------

enum class Orientation { reversed, forward };

/// Non-owning view of a forward path read from an anchor node.
///   reversed: value(s) = path(t - s) for s in [0, t], 0 beyond t
///   forward : value(s) = path(t + s) up to the end of the path, 0 beyond
class PathSegment {
 public:
  PathSegment(std::span<const double> path, std::size_t anchor, Orientation orientation, double dt)
      : path_(path), anchor_(anchor), orientation_(orientation), dt_(dt) {
    if (anchor >= path.size()) throw std::invalid_argument("PathSegment: anchor beyond path");
  }

  Orientation orientation() const { return orientation_; }
  double dt() const { return dt_; }

  /// Index of the last node carrying path values.
  std::size_t extent() const {
    return orientation_ == Orientation::reversed ? anchor_ : path_.size() - 1 - anchor_;
  }

  /// Value at the j-th node, s = j * dt.
  double operator[](std::size_t j) const {
    if (j > extent()) return 0.0;
    return orientation_ == Orientation::reversed ? path_[anchor_ - j] : path_[anchor_ + j];
  }

  /// Value at arbitrary s >= 0 by linear interpolation between nodes.
  double at(double s) const {
    if (s < 0.0) throw std::invalid_argument("PathSegment: negative argument");
    const double r = s / dt_;
    const auto j = static_cast<std::size_t>(std::floor(r + 1e-9));
    if (j > extent()) return 0.0;
    const double frac = std::max(0.0, r - static_cast<double>(j));
    if (frac < 1e-9 || j == extent()) return (*this)[j];
    return (1.0 - frac) * (*this)[j] + frac * (*this)[j + 1];
  }

 private:
  std::span<const double> path_;
  std::size_t anchor_;
  Orientation orientation_;
  double dt_;
};

/// x_t(s) = x(t - s): the memory of `path` seen from time t.
inline PathSegment reverse_segment(std::span<const double> path, const TimeGrid& grid, double t) {
  const std::size_t k = grid.node_at(t);
  if (k >= path.size()) throw std::invalid_argument("reverse_segment: t beyond the path");
  return PathSegment(path, k, Orientation::reversed, grid.dt());
}

/// x^t(s) = x(t + s), zero-extended past the end of the path.
inline PathSegment shift_segment(std::span<const double> path, const TimeGrid& grid, double t) {
  const std::size_t k = grid.node_at(t);
  if (k >= path.size()) throw std::invalid_argument("shift_segment: t beyond the path");
  return PathSegment(path, k, Orientation::forward, grid.dt());
}

// ---------------------------------------------------------------------------
// Linear functionals
// ---------------------------------------------------------------------------

/// <F, x> = x(t0).
struct Evaluation {
  double t0 = 0.0;
};

/// <F, x> = int a(r) x(r) dr, with a sampled at r = j * dt, j = 0..size-1,
/// and zero beyond.
struct Averaging {
  std::vector<double> kernel;
  double dt = 0.0;
};

/// <F, x> = int_0^inf exp(-rho r) x(r) dr.
struct Exponential {
  double rho = 1.0;
};

class LinearFunctionalSpec {
 public:
  using Kind = std::variant<Evaluation, Averaging, Exponential>;

  static LinearFunctionalSpec evaluation(double t0) {
    if (!(t0 >= 0.0)) throw std::invalid_argument("evaluation functional: t0 must be >= 0");
    return LinearFunctionalSpec(Evaluation{t0});
  }
  static LinearFunctionalSpec averaging(std::vector<double> kernel, double dt) {
    if (kernel.empty() || !(dt > 0.0)) {
      throw std::invalid_argument("averaging functional: kernel and dt required");
    }
    for (double a : kernel) {
      if (!std::isfinite(a)) throw std::invalid_argument("averaging functional: unbounded kernel");
    }
    return LinearFunctionalSpec(Averaging{std::move(kernel), dt});
  }
  static LinearFunctionalSpec exponential(double rho) {
    if (!(rho > 0.0) || !std::isfinite(rho)) {
      throw std::invalid_argument("exponential functional: rho must be positive");
    }
    return LinearFunctionalSpec(Exponential{rho});
  }

  const Kind& kind() const { return kind_; }
  bool is_exponential() const { return std::holds_alternative<Exponential>(kind_); }
  double rho() const {
    if (!is_exponential()) throw std::invalid_argument("functional is not exponential");
    return std::get<Exponential>(kind_).rho;
  }
  std::string name() const {
    if (std::holds_alternative<Evaluation>(kind_)) return "evaluation";
    if (std::holds_alternative<Averaging>(kind_)) return "averaging";
    return "exponential";
  }

 private:
  explicit LinearFunctionalSpec(Kind k) : kind_(std::move(k)) {}
  Kind kind_;
};

/// <F, seg> by the trapezoid rule on the segment's grid, over the nodes that
/// carry path values.
inline double apply_functional(const LinearFunctionalSpec& F, const PathSegment& seg) {
  return std::visit(
      [&](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        const std::size_t last = seg.extent();
        if constexpr (std::is_same_v<T, Evaluation>) {
          return seg.at(f.t0);
        } else if constexpr (std::is_same_v<T, Averaging>) {
          if (std::abs(f.dt - seg.dt()) > 1e-12 * seg.dt()) {
            throw std::invalid_argument("averaging functional: kernel spacing differs from grid");
          }
          const std::size_t m = std::min(last, f.kernel.size() - 1);
          if (m == 0) return 0.0;
          double s = 0.5 * (f.kernel[0] * seg[0] + f.kernel[m] * seg[m]);
          for (std::size_t j = 1; j < m; ++j) s += f.kernel[j] * seg[j];
          return s * seg.dt();
        } else {
          if (last == 0) return 0.0;
          const double decay = std::exp(-f.rho * seg.dt());
          double w = 1.0;
          double s = 0.5 * seg[0];
          for (std::size_t j = 1; j < last; ++j) {
            w *= decay;
            s += w * seg[j];
          }
          w *= decay;
          s += 0.5 * w * seg[last];
          return s * seg.dt();
        }
      },
      F.kind());
}

namespace detail {
inline void note_zero_extension_once() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    std::clog << "emf: dual functional reads past the end of the adjoint path; "
                 "values there are taken as zero\n";
  });
}
}  // namespace detail

/// G*(t) = <F, p^t> with p^t(s) = p(t + s), p zero-extended beyond its horizon.
inline double dual_functional(const LinearFunctionalSpec& F, std::span<const double> p,
                              const TimeGrid& grid, double t) {
  const auto seg = shift_segment(p, grid, t);
  const bool reaches_past_end = std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Evaluation>) {
          return f.t0 > seg.extent() * grid.dt() + 1e-12;
        } else if constexpr (std::is_same_v<T, Averaging>) {
          return f.kernel.size() - 1 > seg.extent();
        } else {
          return true;
        }
      },
      F.kind());
  if (reaches_past_end) detail::note_zero_extension_once();
  return apply_functional(F, seg);
}

}  // namespace emf
