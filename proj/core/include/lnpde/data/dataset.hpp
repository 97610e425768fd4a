#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lnpde/data/grid.hpp"

namespace lnpde::data {

struct Range {
  double min = 0.0;
  double max = 1.0;
};

/// Min-max statistics of the training split. Fields may be left
/// unnormalised per dataset; parameters always get one pair per component.
struct NormStats {
  bool normalize_fields = true;
  Range field{};
  std::vector<Range> params;
};

/// fields: [n, times.size(), channels, grid...] as 32-bit reals;
/// params: [n, z].
struct TrajectoryDataset {
  GridSpec grid;
  std::vector<double> times;
  std::size_t channels = 1;
  std::size_t z = 0;
  std::vector<std::string> param_names;
  std::vector<float> fields;
  std::vector<float> params;
  NormStats norm;
  /// Whether `fields`/`params` currently hold normalised values.
  bool normalized = false;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const;
  std::size_t frames() const { return times.size(); }
  std::size_t F() const { return times.empty() ? 0 : times.size() - 1; }
  std::size_t frame_size() const { return channels * grid.size(); }
  std::size_t trajectory_size() const { return frames() * frame_size(); }

  std::span<const float> trajectory(std::size_t i) const;
  std::span<const float> frame(std::size_t i, std::size_t t) const;
  std::span<const float> param(std::size_t i) const;

  /// Appends one trajectory given in any real type.
  void append(std::span<const double> trajectory, std::span<const double> mu = {});
  /// Checks array lengths and finiteness.
  void validate() const;
};

/// Computes stats over `train`, which must hold physical values.
NormStats compute_norm_stats(const TrajectoryDataset& train, bool normalize_fields);

TrajectoryDataset normalize(const TrajectoryDataset& ds, const NormStats& stats);
TrajectoryDataset denormalize(const TrajectoryDataset& ds);

/// Field-value maps used by callers that work with single frames.
double normalize_value(double v, const Range& r);
double denormalize_value(double v, const Range& r);

/// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct SplitRanges {
  IndexRange train, val, test;
};

struct Splits {
  TrajectoryDataset train, val, test;
};

TrajectoryDataset subset(const TrajectoryDataset& ds, std::span<const std::size_t> indices);

/// Index-range split. With group_size > 0 the dataset is read as consecutive
/// groups (one per parameter value) and the ranges apply inside every group.
Splits split(const TrajectoryDataset& ds, const SplitRanges& ranges, std::size_t group_size = 0);

/// 80/10/10 ranges for n trajectories.
SplitRanges proportional_ranges(std::size_t n, double train = 0.8, double val = 0.1);

// "LNPDS1" container: magic, uint64 little-endian header length, UTF-8 JSON
// header, fields then params as little-endian float32 in C order.
void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& path);
TrajectoryDataset load_dataset(const std::filesystem::path& path);

nlohmann::json grid_to_json(const GridSpec& grid);
GridSpec grid_from_json(const nlohmann::json& j);

}  // namespace lnpde::data
