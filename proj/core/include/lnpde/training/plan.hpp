#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace lnpde::train {

/// Loss weights, schedules and optimisation settings for one training run.
///
/// Strategy 1: beta = 1, gamma = 0, k1 = 1 (teacher forcing only).
/// Strategy 2: beta = 1, k1 = 1, gamma = min(1, epoch * gamma0) and
/// k2 = min(F, 1 + floor(epoch / k2_period)). Epochs count from 1.
struct TrainPlan {
  int strategy = 1;
  double alpha = 1.0;
  double delta = 1.0;
  double lambda_rg = 0.0;
  double gamma0 = 1.0;
  std::size_t k2_period = 30;

  double lr = 1e-3;
  double lr_decay = 1.0;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 5000;
  std::size_t patience = 200;
  std::uint64_t seed = 0;
  /// Every batch is split into this many shards, each with its own graph;
  /// gradients are summed in shard order, so results do not depend on the
  /// number of worker threads.
  std::size_t shards = 1;

  // Stability mitigations.
  /// Linear LR warm-up over the first epochs (0 = off).
  std::size_t warmup_epochs = 0;
  /// beta = gamma = delta = 0 for the first epochs (0 = off).
  std::size_t latent_off_epochs = 0;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/// Weights in force during one epoch.
struct EpochWeights {
  double alpha = 1.0, beta = 1.0, gamma = 0.0, delta = 0.0, lambda_rg = 0.0;
  std::size_t k1 = 1, k2 = 0;
  double lr = 0.0;
};

double gamma_at(const TrainPlan& plan, std::size_t epoch);
std::size_t k2_at(const TrainPlan& plan, std::size_t epoch, std::size_t F);
double lr_at(const TrainPlan& plan, std::size_t epoch);
EpochWeights resolve(const TrainPlan& plan, std::size_t epoch, std::size_t F);

nlohmann::json to_json(const TrainPlan& plan);
/// Missing keys keep the values of `base`.
TrainPlan train_plan_from_json(const nlohmann::json& j, TrainPlan base = {});

/// Optimisation preset for a dataset preset at desk or paper scale.
TrainPlan train_preset(const std::string& dataset_preset, const std::string& scale);

}  // namespace lnpde::train
