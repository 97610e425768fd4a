#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lnpde::eval {

/// Frames whose true norm is below this are left out of every average.
inline constexpr double kZeroNormThreshold = 1e-12;

/// Layout of a block of trajectories: [n, frames, frame_size], frame 0 is the
/// initial condition and never scored.
struct TrajectoryLayout {
  std::size_t trajectories = 0;
  std::size_t frames = 0;
  std::size_t frame_size = 0;
};

/// Relative L2 errors per (trajectory, frame j >= 1) and their averages.
/// Cells of excluded frames hold NaN and do not enter any mean.
struct NrmseBreakdown {
  double overall = 0;
  /// Index j - 1 for j = 1..F.
  std::vector<double> per_time;
  std::vector<std::size_t> per_time_count;
  /// Mean over the scored frames of each trajectory.
  std::vector<double> per_trajectory;
  /// Row-major [trajectories, F].
  std::vector<double> cells;
  std::size_t excluded = 0;
};

/// Mean over trajectories and frames j = 1..F of ||s - s~||_2 / ||s||_2.
NrmseBreakdown nrmse(std::span<const double> pred, std::span<const double> truth,
                     TrajectoryLayout layout);

/// |s - s~| / ||s||_2 elementwise; throws std::domain_error on a zero-norm
/// true frame.
std::vector<double> relative_error_field(std::span<const double> pred,
                                         std::span<const double> truth);

}  // namespace lnpde::eval
