#pragma once

// Independent reference computations used by the unit tests and the
// acceptance runner. Nothing here calls into the code under test except to
// read plain data structures.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "gava/decoder.hpp"
#include "gava/scene.hpp"

namespace oracle {

/// Visual weight from the sector table written out longhand, viewer facing +y.
inline double sector_weight(double speed_mps, double dx, double dy) {
  const double kmh = speed_mps * 3.6;
  double radius, apex;
  if (kmh < 30.0) {
    radius = 30.0, apex = 90.0;
  } else if (kmh < 60.0) {
    radius = 50.0, apex = 75.0;
  } else if (kmh < 90.0) {
    radius = 70.0, apex = 60.0;
  } else {
    radius = 90.0, apex = 45.0;
  }
  const double r = std::sqrt(dx * dx + dy * dy);
  if (r > radius) return 0.2;
  if (r == 0.0) return 1.0;
  const double off_axis = std::acos(std::clamp(dy / r, -1.0, 1.0)) * 180.0 / M_PI;
  if (off_axis <= apex / 2.0) return 1.0;
  if (off_axis <= 90.0) return 0.5;
  return 0.2;
}

/// Two-frame sample moving straight along +y at `speed` whose 3×3 grid puts
/// cell centers at (±dx | 0, ±dy | 0).
inline gava::SceneSample straight_sample(double speed, double dx, double dy) {
  gava::SceneSample s;
  s.T = 2;
  s.F = 1;
  s.dt = 0.2;
  s.grid.slots = 3;
  s.grid.lanes = 3;
  s.grid.slot_length = dy;
  s.grid.lane_width = dx;
  s.target_history.assign(s.T * gava::kStateDim, 0.0);
  s.target_history[gava::kFeatY] = -speed * s.dt;
  s.target_speed_history = {speed, speed};
  const std::size_t cells = s.grid.cells();
  s.frame_mask.assign(s.T * cells, 0);
  s.frame_cells.assign(s.T * cells * gava::kStateDim, 0.0);
  s.frame_mode.assign(s.T * cells, 0);
  s.target_mode = {2, 2};
  s.neighbor_ids.assign(cells, -1);
  s.neighbor_mask.assign(cells * s.T, 0);
  s.neighbor_histories.assign(cells * s.T * gava::kStateDim, 0.0);
  s.future_truth.assign(2, 0.0);
  return s;
}

/// Horizon second of 0-based future step f by integer arithmetic.
inline std::size_t bucket(std::size_t f, std::size_t steps_per_second) {
  return (f + steps_per_second) / steps_per_second;
}

/// Per-second RMSE of Euclidean point errors, accumulated sample-major.
inline std::vector<double> horizon_rmse(const std::vector<std::vector<double>>& pred,
                                        const std::vector<std::vector<double>>& truth,
                                        std::size_t steps_per_second) {
  std::vector<double> sum;
  std::vector<std::size_t> n;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t f = 0; f < pred[i].size() / 2; ++f) {
      const std::size_t b = bucket(f, steps_per_second);
      if (sum.size() < b) sum.resize(b, 0.0), n.resize(b, 0);
      const double ex = pred[i][2 * f] - truth[i][2 * f];
      const double ey = pred[i][2 * f + 1] - truth[i][2 * f + 1];
      sum[b - 1] += ex * ex + ey * ey;
      n[b - 1] += 1;
    }
  }
  for (std::size_t b = 0; b < sum.size(); ++b) sum[b] = std::sqrt(sum[b] / static_cast<double>(n[b]));
  return sum;
}

/// Bivariate normal density written from the textbook formula.
inline double bivariate_pdf(const gava::GaussianParams& g, double x, double y) {
  const double zx = (x - g.mu_x) / g.sigma_x, zy = (y - g.mu_y) / g.sigma_y;
  const double one_m = 1.0 - g.rho * g.rho;
  const double q = (zx * zx - 2.0 * g.rho * zx * zy + zy * zy) / one_m;
  return std::exp(-0.5 * q) / (2.0 * M_PI * g.sigma_x * g.sigma_y * std::sqrt(one_m));
}

/// Midpoint-rule integral of the F = 1 mixture density over a box covering
/// every mode out to `reach` standard deviations.
inline double mixture_mass(const gava::GaussianTrajectory& traj, std::size_t per_axis, double reach = 9.0) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& mode : traj.modes) {
    const auto& g = mode[0];
    x0 = std::min(x0, g.mu_x - reach * g.sigma_x), x1 = std::max(x1, g.mu_x + reach * g.sigma_x);
    y0 = std::min(y0, g.mu_y - reach * g.sigma_y), y1 = std::max(y1, g.mu_y + reach * g.sigma_y);
  }
  const double hx = (x1 - x0) / static_cast<double>(per_axis), hy = (y1 - y0) / static_cast<double>(per_axis);
  double total = 0.0;
  for (std::size_t i = 0; i < per_axis; ++i) {
    const double x = x0 + (static_cast<double>(i) + 0.5) * hx;
    for (std::size_t j = 0; j < per_axis; ++j) {
      const double y = y0 + (static_cast<double>(j) + 0.5) * hy;
      double p = 0.0;
      for (std::size_t m = 0; m < gava::kModes; ++m) p += traj.maneuvers.joint(m) * bivariate_pdf(traj.modes[m][0], x, y);
      total += p;
    }
  }
  return total * hx * hy;
}

}  // namespace oracle
