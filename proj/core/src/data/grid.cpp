#include "lnpde/data/grid.hpp"

#include <stdexcept>
#include <string>

namespace lnpde::data {

GridSpec GridSpec::line(std::size_t points, double lo, double hi, bool periodic) {
  GridSpec g{{points}, {lo}, {hi}, periodic};
  g.validate();
  return g;
}

GridSpec GridSpec::square(std::size_t points, double lo, double hi, bool periodic) {
  GridSpec g{{points, points}, {lo, lo}, {hi, hi}, periodic};
  g.validate();
  return g;
}

std::size_t GridSpec::size() const {
  std::size_t n = 1;
  for (auto p : points) n *= p;
  return n;
}

double GridSpec::spacing(std::size_t axis) const {
  const double n = static_cast<double>(points[axis]);
  return periodic ? length(axis) / n : length(axis) / (n - 1);
}

std::vector<double> GridSpec::coords(std::size_t axis) const {
  std::vector<double> x(points[axis]);
  const double h = spacing(axis);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = lo[axis] + h * static_cast<double>(i);
  return x;
}

GridSpec GridSpec::refined(std::size_t factor) const {
  GridSpec g = *this;
  for (auto& p : g.points) p = periodic ? p * factor : (p - 1) * factor + 1;
  return g;
}

void GridSpec::validate() const {
  if (points.empty() || points.size() > 2) {
    throw std::invalid_argument("grid must have 1 or 2 spatial dimensions");
  }
  if (lo.size() != points.size() || hi.size() != points.size()) {
    throw std::invalid_argument("grid bounds do not match its dimension");
  }
  for (std::size_t a = 0; a < points.size(); ++a) {
    if (points[a] < 2) throw std::invalid_argument("grid needs at least 2 points per axis");
    if (!(hi[a] > lo[a])) {
      throw std::invalid_argument("grid axis " + std::to_string(a) + " has empty extent");
    }
  }
}

bool operator==(const GridSpec& a, const GridSpec& b) {
  return a.points == b.points && a.lo == b.lo && a.hi == b.hi && a.periodic == b.periodic;
}

std::vector<double> TimeGrid::times() const {
  std::vector<double> t(F + 1);
  for (std::size_t i = 0; i <= F; ++i) t[i] = t0 + dt * static_cast<double>(i);
  return t;
}

TimeGrid TimeGrid::refined(std::size_t factor) const {
  if (factor == 0) throw std::invalid_argument("time refinement factor must be positive");
  return {t0, dt / static_cast<double>(factor), F * factor};
}

void TimeGrid::validate() const {
  if (F < 1) throw std::invalid_argument("time grid needs F >= 1");
  if (!(dt > 0)) throw std::invalid_argument("time step must be positive");
}

}  // namespace lnpde::data
