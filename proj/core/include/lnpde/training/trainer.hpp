#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lnpde/data/dataset.hpp"
#include "lnpde/model/surrogate.hpp"
#include "lnpde/training/plan.hpp"

namespace lnpde::train {

/// Trajectories gathered from a dataset: fields [B*(F+1), m, spatial...]
/// with row b*(F+1)+i, parameters [B, z] (undefined when z = 0) and the
/// F step sizes.
template <class T>
struct Batch {
  std::size_t size = 0;
  ad::Tensor<T> fields;
  ad::Tensor<T> mu;
  std::vector<T> dts;
};

template <class T>
Batch<T> gather_batch(const data::TrajectoryDataset& ds, std::span<const std::size_t> indices);

/// Step sizes between consecutive dataset times.
template <class T>
std::vector<T> step_sizes(const std::vector<double>& times);

/// Loss values of one evaluation, each already weighted by nothing (raw).
struct LossValues {
  double l1 = 0, l2t = 0, l2a = 0, l3 = 0, lrg = 0, ltr = 0;
  double latent_variance = 0;
};

/// Evaluates every active term on a batch; with `backward` the weighted total
/// scaled by `grad_scale` is back-propagated into the model parameters.
/// Terms with zero weight are not computed and reported as NaN.
template <class T>
LossValues batch_losses(const model::SurrogateModel<T>& model, const Batch<T>& batch, const EpochWeights& w,
                        std::span<const T> splits, bool backward, double grad_scale = 1.0);

/// Mean over trajectories of sum_{i=1..F} ||s_i - s~_i|| / ||s_i|| from a
/// full field rollout.
template <class T>
double rollout_error(const model::SurrogateModel<T>& model, const Batch<T>& batch);

struct EpochRecord {
  std::size_t epoch = 0;
  double l1 = 0, l2t = 0, l2a = 0, l3 = 0, lrg = 0, ltr = 0, lvl = 0, lr = 0;
  std::size_t k2 = 0;
  double gamma = 0;
};

inline constexpr const char* kMetricHeader = "epoch,l1,l2t,l2a,l3,lrg,ltr,lvl,lr,k2,gamma";
std::string format_record(const EpochRecord& r);

struct TrainOptions {
  /// Run directory for metrics.csv, best.ckpt and last.ckpt; empty keeps
  /// everything in memory.
  std::filesystem::path out_dir;
  bool resume = false;
  /// Per-epoch progress lines (timing included); null for silence.
  std::ostream* progress = nullptr;
  /// Worker threads for batch shards; 0 uses worker_count().
  std::size_t workers = 0;
  /// Stored in checkpoint meta (e.g. dataset provenance).
  nlohmann::json extra_meta = nlohmann::json::object();
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val = 0;
  bool early_stopped = false;
  std::size_t trivial_minimum_warnings = 0;
};

/// Trains `model` in place and leaves it holding the best-validation
/// parameters. Validation uses `val`, or the training loss when `val` is
/// empty.
template <class T>
TrainResult train(model::SurrogateModel<T>& model, const data::TrajectoryDataset& train_set,
                  const data::TrajectoryDataset& val_set, const TrainPlan& plan,
                  const TrainOptions& options = {});

/// Parameter-wise copy of a model with fresh, independent tensors.
template <class T>
model::SurrogateModel<T> clone_model(const model::SurrogateModel<T>& model);

}  // namespace lnpde::train
