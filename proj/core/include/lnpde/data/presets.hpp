#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lnpde/data/dataset.hpp"
#include "lnpde/data/grid.hpp"

namespace lnpde::data {

/// Everything needed to regenerate a preset's train/val/test files.
struct DatasetSpec {
  std::string preset = "advection-fixed";
  std::string scale = "desk";
  std::uint64_t seed = 1;
  GridSpec grid = GridSpec::line(64);
  TimeGrid time{};
  /// Trajectories per parameter value (train + val + test ranges).
  std::size_t per_param = 640;
  SplitRanges ranges{{0, 512}, {512, 576}, {576, 640}};
  /// Parameter values; empty for fixed-parameter presets.
  std::vector<double> train_params;
  /// Parameter values that only appear in the test split.
  std::vector<double> test_params;
  std::size_t test_param_trajectories = 0;
  double zeta = 0.7;
  double nu = 0.1;
  std::size_t n_waves = 2;
  int max_mode = 8;
  std::size_t oversample = 8;
  bool normalize_fields = true;
};

std::vector<std::string> dataset_presets();
/// Named preset at "desk" or "paper" scale.
DatasetSpec dataset_preset(const std::string& name, const std::string& scale = "desk");

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

/// Generates the splits with norm stats from the training split attached
/// (values stay physical).
Splits generate_dataset(const DatasetSpec& spec);

/// Splits and attaches norm stats to an externally produced dataset.
Splits prepare_imported(TrajectoryDataset ds, const SplitRanges& ranges, bool normalize_fields);

/// True when trajectory i can be recomputed at arbitrary times.
bool can_regenerate(const TrajectoryDataset& ds);
/// Recomputes trajectory i (physical values, double) at `times`, starting
/// from its stored initial frame or its parameters.
std::vector<double> regenerate_trajectory(const TrajectoryDataset& ds, std::size_t i,
                                          std::span<const double> times);

}  // namespace lnpde::data
