#pragma once

#include <cstddef>
#include <vector>

namespace lnpde::data {

/// Uniform tensor-product grid. Periodic axes exclude the right endpoint
/// (h = (b-a)/points); non-periodic axes include both endpoints.
struct GridSpec {
  std::vector<std::size_t> points;
  std::vector<double> lo;
  std::vector<double> hi;
  bool periodic = true;

  static GridSpec line(std::size_t points, double lo = 0.0, double hi = 1.0, bool periodic = true);
  static GridSpec square(std::size_t points, double lo, double hi, bool periodic = false);

  std::size_t dims() const { return points.size(); }
  std::size_t size() const;
  double length(std::size_t axis) const { return hi[axis] - lo[axis]; }
  double spacing(std::size_t axis) const;
  std::vector<double> coords(std::size_t axis) const;
  /// Same domain with every axis refined by `factor`.
  GridSpec refined(std::size_t factor) const;
  void validate() const;
};

bool operator==(const GridSpec& a, const GridSpec& b);

/// Uniform output times t0, t0+dt, ..., t0+F*dt.
struct TimeGrid {
  double t0 = 0.0;
  double dt = 0.05;
  std::size_t F = 40;

  std::vector<double> times() const;
  /// Same span with dt/factor, i.e. factor*F intervals.
  TimeGrid refined(std::size_t factor) const;
  void validate() const;
};

}  // namespace lnpde::data
