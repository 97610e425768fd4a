#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lnpde/data/dataset.hpp"
#include "lnpde/eval/metrics.hpp"
#include "lnpde/model/surrogate.hpp"
#include "lnpde/training/trainer.hpp"

namespace lnpde::eval {

/// Fields are scored either as the model sees them (min-max normalised when
/// the dataset normalises fields) or mapped back to physical units.
enum class MetricSpace { model, physical };

struct EvalOptions {
  MetricSpace space = MetricSpace::model;
  /// Time refinement factors a: the rollout uses dt / a.
  std::vector<std::size_t> factors{1};
  /// (trajectory, training-grid frame) pairs whose e_r field is kept.
  std::vector<std::pair<std::size_t, std::size_t>> error_frames;
  /// Trajectories per rollout batch; fixed so results do not depend on workers.
  std::size_t chunk = 16;
  /// 0 uses worker_count().
  std::size_t workers = 0;
};

/// Trajectories sharing one parameter vector (physical units).
struct ParamGroup {
  std::vector<double> mu;
  std::vector<std::size_t> trajectories;
  double overall = 0;
  std::vector<double> per_time;
};

struct ErrorFrame {
  std::size_t trajectory = 0;
  /// Index on the refined time grid.
  std::size_t frame = 0;
  double time = 0;
  std::vector<double> field;
};

struct EvalReport {
  std::size_t factor = 1;
  /// First rollout step size.
  double dt = 0;
  /// Refined times, t0 included.
  std::vector<double> times;
  MetricSpace space = MetricSpace::model;
  /// Every refined frame j >= 1, scored in `space`.
  NrmseBreakdown all;
  /// Only the frames that lie on the training time grid.
  NrmseBreakdown training_times;
  std::vector<ParamGroup> groups;
  std::vector<ErrorFrame> error_fields;
  /// Overall nRMSE in both spaces (equal when fields are not normalised).
  double model_nrmse = 0;
  double physical_nrmse = 0;
  /// Trajectories whose rollout diverged; their errors are +inf.
  std::size_t diverged = 0;
};

/// Refined time grid with `factor` equal substeps per interval.
std::vector<double> refine_times(const std::vector<double>& times, std::size_t factor);

std::string to_string(MetricSpace space);
MetricSpace metric_space_from_string(const std::string& s);

/// Rolls out the test set from its initial frames and scores every frame.
/// Truth at refined times is regenerated from the stored
/// initial condition or parameters; the model parameters are not touched.
template <class T>
std::vector<EvalReport> evaluate(const model::SurrogateModel<T>& model,
                                 const data::TrajectoryDataset& test, const EvalOptions& options);

/// One cell of an ablation matrix.
struct AblationVariant {
  std::string label;
  model::ModelConfig config;
  train::TrainPlan plan;
};

struct AblationResult {
  std::string label;
  train::TrainResult training;
  std::vector<EvalReport> reports;
};

std::vector<AblationVariant> rk_stage_variants(const model::ModelConfig& config,
                                               const train::TrainPlan& plan,
                                               const std::vector<int>& stages);
std::vector<AblationVariant> l3_variants(const model::ModelConfig& config,
                                         const train::TrainPlan& plan,
                                         const std::vector<double>& deltas);

/// Trains and evaluates every variant from the same model seed and data.
/// Splits hold physical values; each variant writes to out_dir/label when
/// options.out_dir is set.
template <class T>
std::vector<AblationResult> run_ablation(const std::vector<AblationVariant>& variants,
                                         const data::Splits& splits, std::uint64_t model_seed,
                                         const EvalOptions& eval_options,
                                         const train::TrainOptions& train_options = {});

/// Trains and evaluates one model per RK stage q.
template <class T>
std::vector<AblationResult> ablate_rk_stage(const model::ModelConfig& config,
                                            const train::TrainPlan& plan,
                                            const data::Splits& splits,
                                            const std::vector<int>& stages,
                                            std::uint64_t model_seed,
                                            const EvalOptions& eval_options,
                                            const train::TrainOptions& train_options = {});

}  // namespace lnpde::eval
