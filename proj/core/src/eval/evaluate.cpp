#include "lnpde/eval/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "lnpde/data/presets.hpp"
#include "lnpde/util/parallel.hpp"

namespace lnpde::eval {

namespace {

template <class T>
using Tensor = ad::Tensor<T>;

/// Keeps every factor-th frame of each trajectory.
std::vector<double> every_nth_frame(const std::vector<double>& v, TrajectoryLayout layout,
                                    std::size_t factor) {
  const std::size_t coarse = (layout.frames - 1) / factor + 1;
  std::vector<double> out;
  out.reserve(layout.trajectories * coarse * layout.frame_size);
  for (std::size_t b = 0; b < layout.trajectories; ++b)
    for (std::size_t j = 0; j < layout.frames; j += factor) {
      const auto first = v.begin() + static_cast<std::ptrdiff_t>((b * layout.frames + j) * layout.frame_size);
      out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(layout.frame_size));
    }
  return out;
}

/// Rolls out trajectories [begin, end) and writes the raw model output.
template <class T>
void predict_chunk(const model::SurrogateModel<T>& model, const data::TrajectoryDataset& norm,
                   std::span<const T> dts, std::size_t begin, std::size_t end, double* out) {
  ad::NoGradGuard guard;
  const std::size_t B = end - begin, fs = norm.frame_size();
  ad::Shape shape{B, norm.channels};
  for (auto p : norm.grid.points) shape.push_back(p);
  std::vector<T> s0(B * fs);
  std::vector<T> mu(B * norm.z);
  for (std::size_t b = 0; b < B; ++b) {
    const auto f = norm.frame(begin + b, 0);
    std::copy(f.begin(), f.end(), s0.begin() + static_cast<std::ptrdiff_t>(b * fs));
    const auto p = norm.param(begin + b);
    std::copy(p.begin(), p.end(), mu.begin() + static_cast<std::ptrdiff_t>(b * norm.z));
  }
  const Tensor<T> mu_t = norm.z > 0 ? Tensor<T>::constant({B, norm.z}, std::move(mu)) : Tensor<T>{};
  const auto pred = model.predict_fields(Tensor<T>::constant(shape, std::move(s0)), mu_t, dts);
  const auto values = pred.data();
  std::copy(values.begin(), values.end(), out);
}

}  // namespace

std::string to_string(MetricSpace space) { return space == MetricSpace::model ? "model" : "physical"; }

MetricSpace metric_space_from_string(const std::string& s) {
  if (s == "model") return MetricSpace::model;
  if (s == "physical") return MetricSpace::physical;
  throw std::invalid_argument("metric space must be model or physical");
}

std::vector<double> refine_times(const std::vector<double>& times, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("refinement factor must be positive");
  if (times.empty()) return {};
  std::vector<double> out{times.front()};
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double t0 = times[i - 1], step = (times[i] - times[i - 1]) / static_cast<double>(factor);
    for (std::size_t k = 1; k < factor; ++k) out.push_back(t0 + static_cast<double>(k) * step);
    out.push_back(times[i]);
  }
  return out;
}

template <class T>
std::vector<EvalReport> evaluate(const model::SurrogateModel<T>& model,
                                 const data::TrajectoryDataset& test, const EvalOptions& options) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  if (test.F() < 1) throw std::invalid_argument("evaluate: test set needs at least two frames");
  if (options.chunk == 0) throw std::invalid_argument("evaluate: chunk must be positive");
  const auto& cfg = model.config();
  if (cfg.extent != test.grid.points || cfg.channels != test.channels) {
    throw std::invalid_argument("evaluate: model grid/channels do not match the test set");
  }
  if (cfg.z != test.z) throw std::invalid_argument("evaluate: model and test set disagree on z");
  const data::TrajectoryDataset phys = test.normalized ? data::denormalize(test) : test;
  const data::TrajectoryDataset norm = data::normalize(phys, phys.norm);
  const std::size_t n = phys.size(), fs = phys.frame_size();

  std::vector<EvalReport> reports;
  for (std::size_t a : options.factors) {
    EvalReport rep;
    rep.factor = a;
    rep.times = refine_times(phys.times, a);
    const std::size_t frames = rep.times.size();
    const TrajectoryLayout layout{n, frames, fs};
    std::vector<T> dts(frames - 1);
    for (std::size_t j = 1; j < frames; ++j) dts[j - 1] = static_cast<T>(rep.times[j] - rep.times[j - 1]);
    rep.dt = static_cast<double>(dts.front());

    std::vector<double> truth(n * frames * fs);
    if (a == 1) {
      std::copy(phys.fields.begin(), phys.fields.end(), truth.begin());
    } else {
      if (!data::can_regenerate(phys)) {
        throw std::invalid_argument("evaluate: truth at refined times is unavailable for imported data");
      }
      parallel_for(
          n,
          [&](std::size_t i) {
            const auto t = data::regenerate_trajectory(phys, i, rep.times);
            std::copy(t.begin(), t.end(), truth.begin() + static_cast<std::ptrdiff_t>(i * frames * fs));
          },
          options.workers);
    }

    std::vector<double> pred(n * frames * fs);
    std::vector<char> failed(n, 0);
    const std::size_t chunks = (n + options.chunk - 1) / options.chunk;
    parallel_for(
        chunks,
        [&](std::size_t c) {
          const std::size_t begin = c * options.chunk, end = std::min(n, begin + options.chunk);
          try {
            predict_chunk<T>(model, norm, dts, begin, end, pred.data() + begin * frames * fs);
          } catch (const model::DivergenceError&) {
            std::fill(failed.begin() + static_cast<std::ptrdiff_t>(begin),
                      failed.begin() + static_cast<std::ptrdiff_t>(end), 1);
          } catch (const ad::NonFiniteError&) {
            std::fill(failed.begin() + static_cast<std::ptrdiff_t>(begin),
                      failed.begin() + static_cast<std::ptrdiff_t>(end), 1);
          }
        },
        options.workers);
    // A failing chunk is retried one trajectory at a time so only the
    // diverging rows are charged.
    for (std::size_t i = 0; i < n; ++i) {
      if (!failed[i]) continue;
      double* dst = pred.data() + i * frames * fs;
      try {
        predict_chunk<T>(model, norm, dts, i, i + 1, dst);
      } catch (const model::DivergenceError&) {
        std::fill(dst, dst + frames * fs, std::numeric_limits<double>::infinity());
        ++rep.diverged;
      } catch (const ad::NonFiniteError&) {
        std::fill(dst, dst + frames * fs, std::numeric_limits<double>::infinity());
        ++rep.diverged;
      }
    }

    // pred holds model output, truth physical values; map whichever side
    // differs so both spaces can be scored.
    const bool scaled = norm.norm.normalize_fields;
    const auto& range = norm.norm.field;
    std::vector<double> pred_phys = pred, truth_model = truth;
    if (scaled) {
      for (auto& v : pred_phys) v = data::denormalize_value(v, range);
      for (auto& v : truth_model) v = data::normalize_value(v, range);
    }
    rep.space = options.space;
    rep.model_nrmse = nrmse(pred, truth_model, layout).overall;
    rep.physical_nrmse = nrmse(pred_phys, truth, layout).overall;
    if (options.space == MetricSpace::physical) {
      pred = std::move(pred_phys);
    } else {
      truth = std::move(truth_model);
    }
    rep.all = nrmse(pred, truth, layout);
    rep.training_times = a == 1 ? rep.all
                                : nrmse(every_nth_frame(pred, layout, a), every_nth_frame(truth, layout, a),
                                        {n, phys.frames(), fs});

    std::map<std::vector<double>, std::size_t> group_of;
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = phys.param(i);
      std::vector<double> mu(p.begin(), p.end());
      auto [it, inserted] = group_of.try_emplace(mu, rep.groups.size());
      if (inserted) rep.groups.push_back({mu, {}, 0, {}});
      rep.groups[it->second].trajectories.push_back(i);
    }
    const std::size_t F = frames - 1;
    for (auto& g : rep.groups) {
      g.per_time.assign(F, 0.0);
      std::vector<std::size_t> count(F, 0);
      double total = 0;
      std::size_t counted = 0;
      for (auto i : g.trajectories)
        for (std::size_t j = 0; j < F; ++j) {
          const double e = rep.all.cells[i * F + j];
          if (std::isnan(e)) continue;
          g.per_time[j] += e;
          ++count[j];
          total += e;
          ++counted;
        }
      for (std::size_t j = 0; j < F; ++j)
        g.per_time[j] = count[j] ? g.per_time[j] / static_cast<double>(count[j])
                                 : std::numeric_limits<double>::quiet_NaN();
      g.overall = counted ? total / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
    }

    for (auto [traj, frame] : options.error_frames) {
      if (traj >= n || frame >= phys.frames()) {
        throw std::invalid_argument("evaluate: error frame out of range");
      }
      const std::size_t j = frame * a;
      const std::size_t off = (traj * frames + j) * fs;
      ErrorFrame ef{traj, j, rep.times[j], {}};
      try {
        ef.field = relative_error_field(std::span<const double>(pred).subspan(off, fs),
                                        std::span<const double>(truth).subspan(off, fs));
      } catch (const std::domain_error&) {
        continue;
      }
      rep.error_fields.push_back(std::move(ef));
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

std::vector<AblationVariant> rk_stage_variants(const model::ModelConfig& config,
                                               const train::TrainPlan& plan,
                                               const std::vector<int>& stages) {
  std::vector<AblationVariant> out;
  for (int q : stages) {
    AblationVariant v{"q" + std::to_string(q), config, plan};
    v.config.rk_stage = q;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<AblationVariant> l3_variants(const model::ModelConfig& config,
                                         const train::TrainPlan& plan,
                                         const std::vector<double>& deltas) {
  std::vector<AblationVariant> out;
  for (double d : deltas) {
    std::string label = "delta" + std::to_string(d);
    label.erase(label.find_last_not_of('0') + 1);
    if (label.back() == '.') label.pop_back();
    AblationVariant v{label, config, plan};
    v.plan.delta = d;
    out.push_back(std::move(v));
  }
  return out;
}

template <class T>
std::vector<AblationResult> run_ablation(const std::vector<AblationVariant>& variants,
                                         const data::Splits& splits, std::uint64_t model_seed,
                                         const EvalOptions& eval_options,
                                         const train::TrainOptions& train_options) {
  const auto& stats = splits.train.norm;
  const auto train_set = data::normalize(splits.train, stats);
  const auto val_set = data::normalize(splits.val, stats);
  std::vector<AblationResult> out;
  for (const auto& v : variants) {
    model::SurrogateModel<T> m(v.config, model_seed);
    auto opts = train_options;
    if (!opts.out_dir.empty()) opts.out_dir /= v.label;
    AblationResult r{v.label, train::train(m, train_set, val_set, v.plan, opts), {}};
    r.reports = evaluate(m, splits.test, eval_options);
    out.push_back(std::move(r));
  }
  return out;
}

template <class T>
std::vector<AblationResult> ablate_rk_stage(const model::ModelConfig& config,
                                            const train::TrainPlan& plan,
                                            const data::Splits& splits,
                                            const std::vector<int>& stages,
                                            std::uint64_t model_seed,
                                            const EvalOptions& eval_options,
                                            const train::TrainOptions& train_options) {
  return run_ablation<T>(rk_stage_variants(config, plan, stages), splits, model_seed, eval_options,
                         train_options);
}

#define LNPDE_EVAL_INSTANTIATE(T)                                                               \
  template std::vector<EvalReport> evaluate<T>(const model::SurrogateModel<T>&,                 \
                                               const data::TrajectoryDataset&, const EvalOptions&); \
  template std::vector<AblationResult> run_ablation<T>(                                         \
      const std::vector<AblationVariant>&, const data::Splits&, std::uint64_t,                  \
      const EvalOptions&, const train::TrainOptions&);                                           \
  template std::vector<AblationResult> ablate_rk_stage<T>(                                      \
      const model::ModelConfig&, const train::TrainPlan&, const data::Splits&,                  \
      const std::vector<int>&, std::uint64_t, const EvalOptions&, const train::TrainOptions&);

LNPDE_EVAL_INSTANTIATE(float)
LNPDE_EVAL_INSTANTIATE(double)

#undef LNPDE_EVAL_INSTANTIATE

}  // namespace lnpde::eval
