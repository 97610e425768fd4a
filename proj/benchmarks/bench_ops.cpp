#include <random>

#include <benchmark/benchmark.h>

#include "lnpde/autodiff/ops.hpp"

using namespace lnpde;
using TensorF = ad::Tensor<float>;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

TensorF param(ad::Shape shape, std::uint64_t seed) {
  const auto n = ad::numel(shape);
  return TensorF::parameter(std::move(shape), random_values(n, seed));
}

void BM_LinearForward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto x = param({rows, 64}, 1);
  const auto w = param({64, 64}, 2);
  const auto b = param({64}, 3);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ad::linear(x, w, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_LinearForward)->Arg(16)->Arg(256);

void BM_LinearBackward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto x = param({rows, 64}, 1);
  const auto w = param({64, 64}, 2);
  const auto b = param({64}, 3);
  for (auto _ : state) {
    auto y = ad::sum(ad::gelu(ad::linear(x, w, b)));
    y.backward();
  }
}
BENCHMARK(BM_LinearBackward)->Arg(16)->Arg(256);

void BM_Conv1dForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto x = param({batch, 16, 64}, 4);
  const auto w = param({32, 16, 5}, 5);
  const auto b = param({32}, 6);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ad::conv1d(x, w, b, {2, 2}));
}
BENCHMARK(BM_Conv1dForward)->Arg(16)->Arg(64);

void BM_ConvTranspose1dBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto x = param({batch, 32, 16}, 7);
  const auto w = param({32, 16, 4}, 8);
  const auto b = param({16}, 9);
  for (auto _ : state) {
    auto y = ad::sum(ad::conv_transpose1d(x, w, b, {2, 1, 0}));
    y.backward();
  }
}
BENCHMARK(BM_ConvTranspose1dBackward)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
