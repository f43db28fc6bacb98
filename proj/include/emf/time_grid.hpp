#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace emf {

/// Uniform grid 0 = t_0 < t_1 < ... < t_n = t_end.
class TimeGrid {
 public:
  TimeGrid() = default;

  TimeGrid(double t_end, double dt) : t_end_(t_end) {
    if (!(t_end > 0.0) || !std::isfinite(t_end)) {
      throw std::invalid_argument("TimeGrid: t_end must be positive and finite");
    }
    if (!(dt > 0.0) || !std::isfinite(dt)) {
      throw std::invalid_argument("TimeGrid: dt must be positive and finite");
    }
    const double ratio = t_end / dt;
    steps_ = static_cast<std::size_t>(std::llround(ratio));
    if (steps_ == 0 || std::abs(static_cast<double>(steps_) * dt - t_end) >
                           1e-12 * std::max(1.0, t_end)) {
      throw std::invalid_argument("TimeGrid: t_end must be an integer multiple of dt (t_end=" +
                                  std::to_string(t_end) + ", dt=" + std::to_string(dt) + ")");
    }
    dt_ = t_end / static_cast<double>(steps_);
  }

  double t_end() const { return t_end_; }
  double dt() const { return dt_; }
  std::size_t steps() const { return steps_; }
  std::size_t nodes() const { return steps_ + 1; }

  double time(std::size_t k) const {
    return k >= steps_ ? t_end_ : static_cast<double>(k) * dt_;
  }

  bool on_grid(double t) const {
    const double r = t / dt_;
    return t >= -1e-12 && t <= t_end_ * (1.0 + 1e-12) + 1e-12 &&
           std::abs(r - std::round(r)) < 1e-9;
  }

  /// Index of the grid node at time t; throws when t is not a node.
  std::size_t node_at(double t) const {
    if (!on_grid(t)) {
      throw std::invalid_argument("TimeGrid: t=" + std::to_string(t) + " is not a grid node");
    }
    return static_cast<std::size_t>(std::llround(t / dt_));
  }

  std::vector<double> times() const {
    std::vector<double> out(nodes());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = time(k);
    return out;
  }

  /// Grid with the same end time and dt/factor.
  TimeGrid refined(std::size_t factor) const { return TimeGrid(t_end_, dt_ / factor); }

 private:
  double t_end_ = 1.0;
  double dt_ = 1.0;
  std::size_t steps_ = 1;
};

/// Values of a real process at every node of a grid.
using ForwardPath = std::vector<double>;

}  // namespace emf
