#include <benchmark/benchmark.h>

#include "lnpde/data/presets.hpp"
#include "lnpde/model/config.hpp"
#include "lnpde/model/surrogate.hpp"
#include "lnpde/training/plan.hpp"
#include "lnpde/training/trainer.hpp"

using namespace lnpde;

namespace {

const data::TrajectoryDataset& desk_batch_source() {
  static const data::TrajectoryDataset ds = [] {
    auto spec = data::dataset_preset("advection-fixed", "desk");
    spec.per_param = 80;
    spec.ranges = {{0, 64}, {64, 72}, {72, 80}};
    auto s = data::generate_dataset(spec);
    return data::normalize(s.train, s.train.norm);
  }();
  return ds;
}

void BM_PredictFields(benchmark::State& state) {
  const auto& ds = desk_batch_source();
  const auto cfg = model::model_preset("advection-fixed", "desk", ds.grid.points, 1, 0);
  model::SurrogateModel<float> m(cfg, 0);
  const auto B = static_cast<std::size_t>(state.range(0));
  std::vector<float> s0;
  for (std::size_t i = 0; i < B; ++i) {
    const auto f = ds.frame(i, 0);
    s0.insert(s0.end(), f.begin(), f.end());
  }
  const auto init = ad::Tensor<float>::constant({B, 1, ds.grid.points[0]}, s0);
  const auto dts = train::step_sizes<float>(ds.times);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.predict_fields(init, {}, dts));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(B));
}
BENCHMARK(BM_PredictFields)->Arg(1)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainingStep(benchmark::State& state) {
  const auto& ds = desk_batch_source();
  const auto cfg = model::model_preset("advection-fixed", "desk", ds.grid.points, 1, 0);
  model::SurrogateModel<float> m(cfg, 0);
  std::vector<std::size_t> idx(16);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto batch = train::gather_batch<float>(ds, idx);
  const auto plan = train::train_preset("advection-fixed", "desk");
  const auto w = train::resolve(plan, 1, ds.F());
  const std::vector<float> splits(idx.size() * ds.F(), 0.02f);
  for (auto _ : state) {
    for (auto& p : m.parameters()) p.tensor.zero_grad();
    benchmark::DoNotOptimize(train::batch_losses<float>(m, batch, w, splits, true));
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
