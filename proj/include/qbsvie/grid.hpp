#ifndef QBSVIE_GRID_HPP
#define QBSVIE_GRID_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "qbsvie/errors.hpp"

namespace qbsvie {

/// Uniform partition 0 = t_0 < ... < t_N = T. Points are k*T/N, never accumulated.
class TimeGrid {
 public:
  static constexpr std::size_t kDefaultMaxSteps = std::size_t{1} << 20;

  TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw ValidationError("time grid: horizon must be positive and finite, got " + std::to_string(horizon));
    if (steps == 0) throw ValidationError("time grid: steps must be at least 1");
  }

  double horizon() const noexcept { return horizon_; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t size() const noexcept { return steps_ + 1; }
  double dt() const noexcept { return horizon_ / static_cast<double>(steps_); }
  double sqrt_dt() const noexcept { return std::sqrt(dt()); }

  double operator[](std::size_t k) const noexcept {
    // k*T/N, with the endpoint pinned so t_N == T bit-exactly.
    return k == steps_ ? horizon_ : static_cast<double>(k) * horizon_ / static_cast<double>(steps_);
  }

  std::vector<double> points() const {
    std::vector<double> out(size());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = (*this)[k];
    return out;
  }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double horizon_;
  std::size_t steps_;
};

inline TimeGrid make_uniform_grid(double horizon, std::size_t steps) { return TimeGrid(horizon, steps); }

/// Index pair (i, j) with i <= j: outer time t_i, inner time s_j.
struct TrianglePoint {
  std::size_t i;
  std::size_t j;
  friend bool operator==(const TrianglePoint&, const TrianglePoint&) = default;
};

inline std::size_t triangle_count(std::size_t steps) { return (steps + 1) * (steps + 2) / 2; }

/// All (i, j) with 0 <= i <= j <= N in lexicographic order.
inline std::vector<TrianglePoint> triangle_points(const TimeGrid& grid) {
  std::vector<TrianglePoint> out;
  out.reserve(triangle_count(grid.steps()));
  for (std::size_t i = 0; i <= grid.steps(); ++i)
    for (std::size_t j = i; j <= grid.steps(); ++j) out.push_back({i, j});
  return out;
}

/// Same horizon, doubled steps; every old point t_k reappears as t_{2k}.
inline TimeGrid refine(const TimeGrid& grid, std::size_t max_steps = TimeGrid::kDefaultMaxSteps) {
  if (grid.steps() > max_steps / 2)
    throw SizeError("refine: " + std::to_string(2 * grid.steps()) + " steps exceeds maximum " +
                    std::to_string(max_steps));
  return TimeGrid(grid.horizon(), 2 * grid.steps());
}

}  // namespace qbsvie

#endif  // QBSVIE_GRID_HPP
