#include "lnpde/eval/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lnpde::eval {

NrmseBreakdown nrmse(std::span<const double> pred, std::span<const double> truth,
                     TrajectoryLayout layout) {
  const auto [n, frames, fs] = layout;
  if (frames < 2) throw std::invalid_argument("nrmse: need at least one frame after t0");
  if (pred.size() != truth.size() || truth.size() != n * frames * fs) {
    throw std::invalid_argument("nrmse: prediction and truth do not match the layout");
  }
  const std::size_t F = frames - 1;
  NrmseBreakdown out;
  out.cells.assign(n * F, std::numeric_limits<double>::quiet_NaN());
  out.per_time.assign(F, 0.0);
  out.per_time_count.assign(F, 0);
  out.per_trajectory.assign(n, std::numeric_limits<double>::quiet_NaN());
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t b = 0; b < n; ++b) {
    double traj_sum = 0;
    std::size_t traj_count = 0;
    for (std::size_t j = 1; j <= F; ++j) {
      const std::size_t off = (b * frames + j) * fs;
      double num = 0, den = 0;
      for (std::size_t k = 0; k < fs; ++k) {
        const double d = pred[off + k] - truth[off + k];
        num += d * d;
        den += truth[off + k] * truth[off + k];
      }
      const double norm = std::sqrt(den);
      if (norm < kZeroNormThreshold) {
        ++out.excluded;
        continue;
      }
      const double e = std::sqrt(num) / norm;
      out.cells[b * F + j - 1] = e;
      out.per_time[j - 1] += e;
      ++out.per_time_count[j - 1];
      traj_sum += e;
      ++traj_count;
    }
    if (traj_count > 0) out.per_trajectory[b] = traj_sum / static_cast<double>(traj_count);
    total += traj_sum;
    counted += traj_count;
  }
  for (std::size_t j = 0; j < F; ++j) {
    out.per_time[j] = out.per_time_count[j] > 0
                          ? out.per_time[j] / static_cast<double>(out.per_time_count[j])
                          : std::numeric_limits<double>::quiet_NaN();
  }
  out.overall = counted > 0 ? total / static_cast<double>(counted)
                            : std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::vector<double> relative_error_field(std::span<const double> pred,
                                         std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("relative_error_field: frame shapes differ");
  }
  double den = 0;
  for (double v : truth) den += v * v;
  const double norm = std::sqrt(den);
  if (norm < kZeroNormThreshold) throw std::domain_error("relative_error_field: zero-norm true frame");
  std::vector<double> e(truth.size());
  for (std::size_t k = 0; k < e.size(); ++k) e[k] = std::abs(pred[k] - truth[k]) / norm;
  return e;
}

}  // namespace lnpde::eval
