#pragma once
// Test-only residual and quadrature oracles. They read generator output as
// plain arrays and share no code with the generators.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

namespace lnpde::testing {

/// Fourth-order central first derivative from samples at -2h..2h.
inline double fd4(double fm2, double fm1, double fp1, double fp2, double h) {
  return (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h);
}

/// max |s_t + zeta s_x| over interior times of a periodic [T, N] trajectory.
inline double advection_residual(std::span<const double> s, std::size_t times, std::size_t n,
                                 double h, double dt, double zeta) {
  auto at = [&](std::size_t t, std::ptrdiff_t j) {
    const auto jj = static_cast<std::size_t>((j % static_cast<std::ptrdiff_t>(n) + n) % n);
    return s[t * n + jj];
  };
  double worst = 0;
  for (std::size_t t = 2; t + 2 < times; ++t) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<std::ptrdiff_t>(j);
      const double st = fd4(at(t - 2, jj), at(t - 1, jj), at(t + 1, jj), at(t + 2, jj), dt);
      const double sx = fd4(at(t, jj - 2), at(t, jj - 1), at(t, jj + 1), at(t, jj + 2), h);
      worst = std::max(worst, std::abs(st + zeta * sx));
    }
  }
  return worst;
}

/// max |q_t - 2 pi y q_x + 2 pi x q_y + lambda3 q| over interior points of a
/// callable solution, with step h in space and dt in time at time t.
inline double rotation_reaction_residual(const std::function<double(double, double, double)>& q,
                                         double lo, double hi, std::size_t points, double t,
                                         double dt, double lambda3) {
  const double two_pi = 2.0 * std::acos(-1.0);
  const double h = (hi - lo) / static_cast<double>(points - 1);
  double worst = 0;
  for (std::size_t i = 2; i + 2 < points; ++i) {
    for (std::size_t j = 2; j + 2 < points; ++j) {
      const double x = lo + h * static_cast<double>(i), y = lo + h * static_cast<double>(j);
      const double qt = fd4(q(x, y, t - 2 * dt), q(x, y, t - dt), q(x, y, t + dt), q(x, y, t + 2 * dt), dt);
      const double qx = fd4(q(x - 2 * h, y, t), q(x - h, y, t), q(x + h, y, t), q(x + 2 * h, y, t), h);
      const double qy = fd4(q(x, y - 2 * h, t), q(x, y - h, t), q(x, y + h, t), q(x, y + 2 * h, t), h);
      worst = std::max(worst,
                       std::abs(qt - two_pi * y * qx + two_pi * x * qy + lambda3 * q(x, y, t)));
    }
  }
  return worst;
}

/// Trapezoid rule on a periodic grid of spacing h (every node weight h).
inline double periodic_trapezoid(std::span<const double> f, double h) {
  return h * std::accumulate(f.begin(), f.end(), 0.0);
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d);
}

inline double l2(std::span<const double> a) {
  double d = 0;
  for (double v : a) d += v * v;
  return std::sqrt(d);
}

}  // namespace lnpde::testing
