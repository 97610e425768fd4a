#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "lnpde/data/presets.hpp"
#include "lnpde/eval/report.hpp"

using namespace lnpde;
namespace fs = std::filesystem;

namespace {

std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Direct transcription of the averaged formula: separate loops over
/// parameter instances, initial conditions and time steps.
double brute_force_nrmse(const std::vector<double>& pred, const std::vector<double>& truth,
                         std::size_t n_mu, std::size_t n_u, std::size_t F, std::size_t m) {
  double acc = 0;
  for (std::size_t p = 0; p < n_mu; ++p)
    for (std::size_t u = 0; u < n_u; ++u)
      for (std::size_t j = 1; j <= F; ++j) {
        double num = 0, den = 0;
        for (std::size_t x = 0; x < m; ++x) {
          const std::size_t at = (((p * n_u + u) * (F + 1)) + j) * m + x;
          num += std::pow(truth[at] - pred[at], 2);
          den += std::pow(truth[at], 2);
        }
        acc += std::sqrt(num) / std::sqrt(den);
      }
  return acc / static_cast<double>(n_u * n_mu * F);
}

data::Splits small_advection() {
  auto spec = data::dataset_preset("advection-fixed", "desk");
  spec.grid = data::GridSpec::line(32);
  spec.time = data::TimeGrid{0.0, 0.05, 6};
  spec.per_param = 12;
  spec.ranges = {{0, 6}, {6, 8}, {8, 12}};
  return data::generate_dataset(spec);
}

model::ModelConfig small_config(std::size_t z = 0) {
  model::ModelConfig c;
  c.extent = {32};
  c.fe = {4, 8};
  c.ke = {5, 3};
  c.fd = {8, 4};
  c.kd = {4, 3};
  c.latent = 6;
  c.hidden = {16};
  c.z = z;
  c.conditioning = model::default_conditioning(z);
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

template <class T>
std::string checkpoint_bytes(const model::SurrogateModel<T>& m, const std::string& name) {
  const auto path = fs::temp_directory_path() / name;
  ad::save_checkpoint(model::make_checkpoint(m), path);
  auto bytes = slurp(path);
  fs::remove(path);
  return bytes;
}

std::size_t line_count(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("nrmse matches a brute-force triple loop on a random 2x2x3 case") {
  const std::size_t n_mu = 2, n_u = 2, F = 3, m = 5;
  const std::size_t total = n_mu * n_u * (F + 1) * m;
  const auto truth = uniform(total, 1);
  const auto pred = uniform(total, 2);
  const auto b = eval::nrmse(pred, truth, {n_mu * n_u, F + 1, m});
  CHECK(std::abs(b.overall - brute_force_nrmse(pred, truth, n_mu, n_u, F, m)) < 1e-12);
  CHECK(b.excluded == 0);
  // Per-time averages weight every index equally.
  double mean = 0;
  for (double v : b.per_time) mean += v;
  CHECK(std::abs(mean / F - b.overall) < 1e-12);
}

TEST_CASE("nrmse identities") {
  const std::size_t n = 3, frames = 5, m = 7;
  const auto truth = uniform(n * frames * m, 3);
  CHECK(eval::nrmse(truth, truth, {n, frames, m}).overall == 0.0);
  std::vector<double> twice(truth);
  for (auto& v : twice) v *= 2;
  const auto b = eval::nrmse(twice, truth, {n, frames, m});
  CHECK(b.overall == 1.0);
  for (double c : b.cells) CHECK(c == 1.0);

  // Scale invariance for any nonzero c.
  const auto pred = uniform(n * frames * m, 4);
  const double ref = eval::nrmse(pred, truth, {n, frames, m}).overall;
  for (double c : {3.7, -0.25, 1e6}) {
    auto ps = pred, ts = truth;
    for (auto& v : ps) v *= c;
    for (auto& v : ts) v *= c;
    CHECK(std::abs(eval::nrmse(ps, ts, {n, frames, m}).overall - ref) < 1e-12);
  }

  // The initial frame never counts.
  auto garbage = pred;
  for (std::size_t b0 = 0; b0 < n; ++b0)
    for (std::size_t k = 0; k < m; ++k) garbage[b0 * frames * m + k] = 1e9;
  CHECK(eval::nrmse(garbage, truth, {n, frames, m}).overall == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("zero-norm true frames are excluded and counted") {
  const std::size_t n = 2, frames = 4, m = 3;
  auto truth = uniform(n * frames * m, 5);
  const auto pred = uniform(n * frames * m, 6);
  for (std::size_t k = 0; k < m; ++k) truth[(1 * frames + 2) * m + k] = 0.0;
  const auto b = eval::nrmse(pred, truth, {n, frames, m});
  CHECK(b.excluded == 1);
  CHECK(std::isnan(b.cells[1 * 3 + 1]));
  CHECK(b.per_time_count[1] == 1);
  double sum = 0;
  for (double c : b.cells)
    if (!std::isnan(c)) sum += c;
  CHECK(std::abs(b.overall - sum / 5.0) < 1e-14);
  CHECK_THROWS_AS(eval::nrmse(pred, truth, {n, frames + 1, m}), std::invalid_argument);
  CHECK_THROWS_AS(eval::nrmse(pred, truth, {n * frames, 1, m}), std::invalid_argument);
}

TEST_CASE("relative error field") {
  const auto truth = uniform(16, 7);
  const auto pred = uniform(16, 8);
  const auto same = eval::relative_error_field(truth, truth);
  CHECK(same.size() == truth.size());
  for (double v : same) CHECK(v == 0.0);
  const auto e = eval::relative_error_field(pred, truth);
  CHECK(e.size() == truth.size());
  double sq = 0, num = 0, den = 0;
  for (std::size_t k = 0; k < e.size(); ++k) {
    CHECK(e[k] >= 0.0);
    sq += e[k] * e[k];
    num += (pred[k] - truth[k]) * (pred[k] - truth[k]);
    den += truth[k] * truth[k];
  }
  CHECK(std::abs(std::sqrt(sq) - std::sqrt(num / den)) < 1e-12);
  CHECK_THROWS_AS(eval::relative_error_field(pred, std::vector<double>(16, 0.0)), std::domain_error);
  CHECK_THROWS_AS(eval::relative_error_field(pred, std::vector<double>(15, 1.0)), std::invalid_argument);
}

TEST_CASE("refined time grid") {
  const std::vector<double> t{0.0, 0.1, 0.3};
  const auto r = eval::refine_times(t, 2);
  REQUIRE(r.size() == 5);
  CHECK(r[1] == doctest::Approx(0.05));
  CHECK(r[3] == doctest::Approx(0.2));
  CHECK(r[4] == 0.3);
  CHECK(eval::refine_times(t, 1) == t);
  CHECK_THROWS_AS(eval::refine_times(t, 0), std::invalid_argument);
}

TEST_CASE("evaluation of an untrained model matches a direct rollout and leaves parameters alone") {
  const auto s = small_advection();
  model::SurrogateModel<double> m(small_config(), 11);
  const auto before = checkpoint_bytes(m, "lnpde_test_eval.ckpt");
  eval::EvalOptions opt;
  opt.factors = {1, 3};
  opt.error_frames = {{1, 2}};
  opt.chunk = 3;
  opt.space = eval::MetricSpace::physical;
  const auto reports = eval::evaluate(m, s.test, opt);
  CHECK(checkpoint_bytes(m, "lnpde_test_eval.ckpt") == before);
  REQUIRE(reports.size() == 2);
  const auto& r1 = reports[0];
  CHECK(std::isfinite(r1.all.overall));
  CHECK(r1.all.overall > 0.1);
  CHECK(r1.diverged == 0);
  CHECK(r1.times == s.test.times);
  CHECK(r1.dt == doctest::Approx(0.05));

  // Direct computation: normalise, roll out the whole set at once, map back.
  const auto norm = data::normalize(s.test, s.test.norm);
  std::vector<std::size_t> idx(norm.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = train::gather_batch<double>(norm, idx);
  std::vector<double> s0;
  for (std::size_t i : idx) {
    const auto f = norm.frame(i, 0);
    s0.insert(s0.end(), f.begin(), f.end());
  }
  ad::NoGradGuard guard;
  const auto pred = m.predict_fields(ad::Tensor<double>::constant({idx.size(), 1, 32}, s0), {}, batch.dts);
  std::vector<double> phys_pred, truth(s.test.fields.begin(), s.test.fields.end());
  for (double v : pred.data()) phys_pred.push_back(data::denormalize_value(v, s.test.norm.field));
  const auto direct = eval::nrmse(phys_pred, truth, {idx.size(), s.test.frames(), 32});
  CHECK(r1.all.overall == doctest::Approx(direct.overall).epsilon(1e-10));
  CHECK(r1.physical_nrmse == r1.all.overall);

  // Model space: normalised truth against the raw output.
  std::vector<double> raw(pred.data().begin(), pred.data().end()), truth_model;
  for (double v : truth) truth_model.push_back(data::normalize_value(v, s.test.norm.field));
  const auto in_model = eval::nrmse(raw, truth_model, {idx.size(), s.test.frames(), 32});
  CHECK(r1.model_nrmse == doctest::Approx(in_model.overall).epsilon(1e-10));
  CHECK(r1.model_nrmse < r1.physical_nrmse);
  CHECK(r1.training_times.overall == r1.all.overall);

  const auto& r3 = reports[1];
  CHECK(r3.times.size() == 3 * s.test.F() + 1);
  CHECK(r3.dt == doctest::Approx(0.05 / 3));
  CHECK(r3.all.per_time.size() == 3 * s.test.F());
  CHECK(r3.training_times.per_time.size() == s.test.F());
  REQUIRE(r3.error_fields.size() == 1);
  CHECK(r3.error_fields[0].frame == 6);
  CHECK(r3.error_fields[0].time == doctest::Approx(0.1));
  REQUIRE(r3.groups.size() == 1);
  CHECK(r3.groups[0].overall == doctest::Approx(r3.all.overall));
}

TEST_CASE("refined truth agrees with the stored frames at training times") {
  const auto s = small_advection();
  const auto refined = eval::refine_times(s.test.times, 5);
  for (std::size_t i = 0; i < s.test.size(); ++i) {
    const auto t = data::regenerate_trajectory(s.test, i, refined);
    for (std::size_t j = 0; j < s.test.frames(); ++j)
      for (std::size_t k = 0; k < 32; ++k)
        CHECK(t[(5 * j) * 32 + k] == doctest::Approx(s.test.frame(i, j)[k]).epsilon(1e-5));
  }
}

TEST_CASE("evaluation is deterministic and independent of the worker count") {
  const auto s = small_advection();
  model::SurrogateModel<float> m(small_config(), 12);
  eval::EvalOptions opt;
  opt.factors = {1, 2};
  opt.workers = 1;
  const auto a = eval::evaluate(m, s.test, opt);
  opt.workers = 3;
  const auto b = eval::evaluate(m, s.test, opt);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].all.cells == b[k].all.cells);
}

TEST_CASE("imported data cannot be scored at refined times") {
  auto s = small_advection();
  s.test.provenance["generator"] = "import";
  model::SurrogateModel<float> m(small_config(), 13);
  eval::EvalOptions opt;
  opt.factors = {1};
  CHECK_NOTHROW(eval::evaluate(m, s.test, opt));
  opt.factors = {2};
  CHECK_THROWS_AS(eval::evaluate(m, s.test, opt), std::invalid_argument);
  model::SurrogateModel<float> wrong(small_config(1), 13);
  CHECK_THROWS_AS(eval::evaluate(wrong, s.test, opt), std::invalid_argument);
}

TEST_CASE("parametric sets are grouped per parameter value") {
  auto spec = data::dataset_preset("advection-param", "desk");
  spec.grid = data::GridSpec::line(32);
  spec.time = data::TimeGrid{0.0, 0.05, 4};
  spec.per_param = 4;
  spec.ranges = {{0, 2}, {2, 3}, {3, 4}};
  spec.test_param_trajectories = 2;
  const auto s = data::generate_dataset(spec);
  model::SurrogateModel<float> m(small_config(1), 14);
  const auto reports = eval::evaluate(m, s.test, {});
  REQUIRE(reports.size() == 1);
  const auto& groups = reports[0].groups;
  // Held-out trajectories of the training values plus the unseen values.
  REQUIRE(groups.size() == spec.train_params.size() + spec.test_params.size());
  std::size_t members = 0;
  for (const auto& g : groups) {
    members += g.trajectories.size();
    for (auto i : g.trajectories) CHECK(s.test.param(i)[0] == static_cast<float>(g.mu[0]));
  }
  CHECK(members == s.test.size());
  for (double zeta : spec.test_params) {
    const auto it = std::find_if(groups.begin(), groups.end(),
                                 [&](const auto& g) { return std::abs(g.mu[0] - zeta) < 1e-6; });
    REQUIRE(it != groups.end());
    CHECK(it->trajectories.size() == 2);
  }
}

TEST_CASE("report files") {
  const auto s = small_advection();
  model::SurrogateModel<float> m(small_config(), 15);
  eval::EvalOptions opt;
  opt.factors = {1, 2};
  opt.error_frames = {{0, 1}};
  const auto reports = eval::evaluate(m, s.test, opt);
  const auto dir = fs::temp_directory_path() / "lnpde_test_eval_report";
  fs::remove_all(dir);
  eval::write_eval_report(dir, reports);
  const std::size_t F = s.test.F();
  CHECK(line_count(dir / "nrmse_by_time.csv") == 1 + F + 2 * F);
  CHECK(line_count(dir / "per_trajectory.csv") == 1 + 2 * s.test.size());
  CHECK(line_count(dir / "error_fields.csv") == 1 + 2 * 32);
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  REQUIRE(summary.size() == 2);
  CHECK(summary[0]["all_times"]["nrmse"].get<double>() == doctest::Approx(reports[0].all.overall));
  const auto svg = slurp(dir / "nrmse_vs_time.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 10);
  CHECK(svg.find("dt/2") != std::string::npos);
  for (const auto& e : fs::directory_iterator(dir)) CHECK(e.path().extension() != ".tmp");
  fs::remove_all(dir);
}

TEST_CASE("metric space names") {
  CHECK(eval::metric_space_from_string("model") == eval::MetricSpace::model);
  CHECK(eval::metric_space_from_string(eval::to_string(eval::MetricSpace::physical)) ==
        eval::MetricSpace::physical);
  CHECK_THROWS_AS(eval::metric_space_from_string("raw"), std::invalid_argument);
}

TEST_CASE("unnormalised fields score the same in both spaces") {
  auto spec = data::dataset_preset("advection-param", "desk");
  spec.grid = data::GridSpec::line(32);
  spec.time = data::TimeGrid{0.0, 0.05, 4};
  spec.per_param = 4;
  spec.ranges = {{0, 2}, {2, 3}, {3, 4}};
  spec.test_param_trajectories = 1;
  const auto s = data::generate_dataset(spec);
  model::SurrogateModel<double> m(small_config(1), 16);
  const auto r = eval::evaluate(m, s.test, {});
  CHECK(r[0].model_nrmse == r[0].physical_nrmse);
  CHECK(r[0].all.overall == r[0].model_nrmse);
}

TEST_CASE("ablation variants") {
  const auto cfg = small_config();
  const train::TrainPlan plan;
  const auto q = eval::rk_stage_variants(cfg, plan, {1, 2, 3, 4});
  REQUIRE(q.size() == 4);
  CHECK(q[0].label == "q1");
  CHECK(q[3].config.rk_stage == 4);
  const auto d = eval::l3_variants(cfg, plan, {0.0, 1.0, 0.5});
  CHECK(d[0].label == "delta0");
  CHECK(d[1].label == "delta1");
  CHECK(d[2].label == "delta0.5");
  CHECK(d[2].plan.delta == 0.5);
}

TEST_CASE("tiny rk-stage ablation runs every variant from the same seed") {
  const auto s = small_advection();
  train::TrainPlan plan;
  plan.max_epochs = 2;
  plan.batch_size = 3;
  eval::EvalOptions opt;
  opt.factors = {1, 2};
  const auto res = eval::ablate_rk_stage<float>(small_config(), plan, s, {1, 4}, 3, opt);
  REQUIRE(res.size() == 2);
  for (const auto& r : res) {
    CHECK(r.training.history.size() == 2);
    CHECK(r.reports.size() == 2);
  }
  const auto dir = fs::temp_directory_path() / "lnpde_test_eval_ablation";
  fs::remove_all(dir);
  eval::write_ablation_report(dir, res);
  CHECK(line_count(dir / "ablation.csv") == 1 + 2 * (s.test.F() + 2 * s.test.F()));
  CHECK(fs::exists(dir / "ablation_dt2.svg"));
  fs::remove_all(dir);
}
