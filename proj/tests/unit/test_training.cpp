#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "lnpde/autodiff/ops.hpp"
#include "lnpde/data/presets.hpp"
#include "lnpde/training/adam.hpp"
#include "lnpde/training/losses.hpp"
#include "lnpde/training/trainer.hpp"

using namespace lnpde;
using ad::Shape;
using TensorD = ad::Tensor<double>;
using ModelD = model::SurrogateModel<double>;
namespace fs = std::filesystem;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return testing::random_values(n, rng, lo, hi);
}

std::vector<double> values(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

/// eps' = eps (no dynamics).
class IdentityProc final : public train::Processor<double> {
 public:
  TensorD step(const TensorD& eps, std::span<const train::RowTag>, const TensorD&) const override {
    return eps;
  }
};

/// Counts row-steps with a positive step size.
class CountingProc final : public train::Processor<double> {
 public:
  mutable std::size_t active = 0;
  TensorD step(const TensorD& eps, std::span<const train::RowTag>, const TensorD& dt) const override {
    for (double v : dt.data()) active += v > 0;
    return eps;
  }
};

/// eps' = eps + dt * theta_l (.) eps with one parameter row per interval l.
class ProbeProc final : public train::Processor<double> {
 public:
  explicit ProbeProc(TensorD theta) : theta(std::move(theta)) {}
  TensorD theta;
  TensorD step(const TensorD& eps, std::span<const train::RowTag> tags, const TensorD& dt) const override {
    std::vector<std::size_t> rows;
    for (const auto& t : tags) rows.push_back(t.interval);
    const auto th = ad::take_rows<double>(theta, rows);
    return ad::add(eps, ad::mul_rows(ad::mul(th, eps), dt));
  }
};

model::ModelConfig small_config(std::size_t z = 0, int q = 4) {
  model::ModelConfig c;
  c.extent = {32};
  c.fe = {4, 8, 8};
  c.ke = {5, 3, 3};
  c.fd = {8, 8, 4};
  c.kd = {4, 4, 3};
  c.latent = 6;
  c.hidden = {16, 16};
  c.z = z;
  c.conditioning = model::default_conditioning(z);
  c.rk_stage = q;
  return c;
}

/// Small normalised advection splits: 32 points, F = 10.
data::Splits small_advection(std::size_t train, std::size_t val, std::uint64_t seed = 3) {
  auto spec = data::dataset_preset("advection-fixed", "desk");
  spec.grid = data::GridSpec::line(32);
  spec.time = data::TimeGrid{0.0, 0.05, 10};
  spec.per_param = train + val + 1;
  spec.ranges = {{0, train}, {train, train + val}, {train + val, train + val + 1}};
  spec.seed = seed;
  auto s = data::generate_dataset(spec);
  s.train = data::normalize(s.train, s.train.norm);
  s.val = data::normalize(s.val, s.train.norm);
  s.test = data::normalize(s.test, s.train.norm);
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lnpde_test_training_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("reconstruction loss identities and brute force") {
  const auto s = TensorD::constant({2, 1, 3}, {1.0, 2.0, 2.0, 0.0, 3.0, 4.0});
  CHECK(train::loss_recon(s, s).item() == 0.0);
  CHECK(train::loss_recon(TensorD::zeros({2, 1, 3}), s).item() == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> rv{1.5, 2.0, 1.0, 0.5, 3.0, 3.0};
  const auto r = TensorD::constant({2, 1, 3}, rv);
  // Frame 0: ||(0.5, 0, -1)|| / 3; frame 1: ||(0.5, 0, -1)|| / 5.
  const double expect = 0.5 * (std::sqrt(1.25) / 3.0 + std::sqrt(1.25) / 5.0);
  CHECK(train::loss_recon(r, s).item() == doctest::Approx(expect).epsilon(1e-14));
  const auto zero_frame = TensorD::constant({2, 1, 3}, {1.0, 2.0, 2.0, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS(train::loss_recon(r, zero_frame), std::domain_error);
}

TEST_CASE("teacher forcing with a static latent trajectory and identity processor") {
  const std::size_t B = 2, F = 4, L = 3;
  std::vector<double> e;
  for (std::size_t b = 0; b < B; ++b) {
    const auto row = random_vec(L, 10 + b);
    for (std::size_t i = 0; i <= F; ++i) e.insert(e.end(), row.begin(), row.end());
  }
  const auto E = TensorD::constant({B * (F + 1), L}, e);
  const std::vector<double> dts(F, 0.1);
  const IdentityProc id;
  CHECK(train::loss_tf<double>(id, E, dts, 1).item() == 0.0);
  CHECK(train::loss_ar<double>(id, E, dts, 2).item() == 0.0);
  CountingProc count;
  train::loss_tf<double>(count, E, dts, 1);
  CHECK(count.active == B * F);
}

TEST_CASE("constant latent dynamics: every latent term vanishes") {
  const std::size_t B = 2, F = 5, L = 3;
  const std::vector<double> c{0.4, -0.3, 0.9};
  const std::vector<double> dts{0.05, 0.1, 0.05, 0.07, 0.05};
  std::vector<double> e;
  for (std::size_t b = 0; b < B; ++b) {
    auto row = random_vec(L, 20 + b, 1.0, 2.0);
    double t = 0;
    for (std::size_t i = 0; i <= F; ++i) {
      if (i > 0) t += dts[i - 1];
      for (std::size_t k = 0; k < L; ++k) e.push_back(row[k] + c[k] * t);
    }
  }
  const auto E = TensorD::constant({B * (F + 1), L}, e);
  auto cfg = small_config();
  cfg.latent = L;
  cfg.hidden = {};
  ModelD m(cfg, 1);
  for (auto& p : m.parameters()) {
    if (p.name == "f.linear0.weight") std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), 0.0);
    if (p.name == "f.linear0.bias") std::copy(c.begin(), c.end(), p.tensor.mutable_data().begin());
  }
  const std::vector<double> splits = random_vec(B * F, 5, 0.0, 0.05);
  for (int q = 1; q <= 4; ++q) {
    cfg.rk_stage = q;
    ModelD mq(cfg, 1);
    for (std::size_t k = 0; k < mq.parameters().size(); ++k) {
      const auto src = m.parameters()[k].tensor.data();
      std::copy(src.begin(), src.end(), mq.parameters()[k].tensor.mutable_data().begin());
    }
    const train::ModelProcessor<double> proc(mq, TensorD{});
    CHECK(train::loss_tf<double>(proc, E, dts, 1).item() < 1e-10);
    CHECK(train::loss_tf<double>(proc, E, dts, 3).item() < 1e-10);
    CHECK(train::loss_ar<double>(proc, E, dts, 2).item() < 1e-10);
    CHECK(train::loss_timegen<double>(proc, E, dts, splits).item() < 1e-10);
  }
}

TEST_CASE("autoregressive loss with k2 = F equals teacher forcing with k1 = F") {
  ModelD m(small_config(1), 4);
  const std::size_t B = 3, F = 6;
  const auto fields = TensorD::constant({B * (F + 1), 1, 32}, random_vec(B * (F + 1) * 32, 8));
  const auto mu = TensorD::constant({B, 1}, {0.2, 0.5, 0.9});
  const auto E = m.encode(fields);
  const std::vector<double> dts(F, 0.05);
  const train::ModelProcessor<double> proc(m, mu);
  const double ar = train::loss_ar<double>(proc, E, dts, F).item();
  const double tf = train::loss_tf<double>(proc, E, dts, F).item();
  CHECK(std::abs(ar - tf) <= 1e-6 * std::abs(tf));
  // Truncation changes gradients only, never the forward value.
  for (std::size_t k2 = 1; k2 <= F; ++k2) {
    CHECK(train::loss_ar<double>(proc, E, dts, k2).item() == doctest::Approx(ar).epsilon(1e-10));
  }
  // With k1 < F teacher forcing differs from the full rollout.
  CHECK(train::loss_tf<double>(proc, E, dts, 1).item() != doctest::Approx(ar).epsilon(1e-6));
}

TEST_CASE("truncated backpropagation: gradients stop at the k2 window") {
  const std::size_t B = 1, F = 6, L = 3;
  const auto theta0 = random_vec(F * L, 30, -0.8, 0.8);
  const auto e = random_vec(B * (F + 1) * L, 31, 0.5, 1.5);
  const std::vector<double> dts(F, 0.2);

  auto summand_grads = [&](const std::vector<double>& theta_values, std::size_t i, std::size_t k2) {
    ProbeProc proc(TensorD::parameter({F, L}, theta_values));
    auto E = TensorD::parameter({B * (F + 1), L}, e);
    const auto terms = train::loss_ar_terms<double>(proc, E, dts, k2);
    const std::vector<std::size_t> pick{i - 1};
    ad::sum(ad::take_rows<double>(terms, pick)).backward();
    auto g = std::vector<double>(proc.theta.grad().begin(), proc.theta.grad().end());
    g.resize(F * L, 0.0);
    auto ge = std::vector<double>(E.grad().begin(), E.grad().end());
    ge.resize(E.size(), 0.0);
    return std::make_pair(g, ge);
  };

  for (std::size_t k2 = 1; k2 <= 3; ++k2) {
    for (std::size_t i = 1; i <= F; ++i) {
      const auto [g, ge] = summand_grads(theta0, i, k2);
      const std::size_t window = i >= k2 ? i - k2 : 0;
      for (std::size_t l = 0; l < F; ++l) {
        double norm = 0;
        for (std::size_t k = 0; k < L; ++k) norm += std::abs(g[l * L + k]);
        INFO("k2 " << k2 << " i " << i << " l " << l);
        if (l < window || l >= i) {
          CHECK(norm == 0.0);
        } else {
          CHECK(norm > 0.0);
        }
      }
      // eps_0 receives gradient only while the window reaches back to it.
      double g0 = 0;
      for (std::size_t k = 0; k < L; ++k) g0 += std::abs(ge[k]);
      CHECK((g0 > 0) == (window == 0));

      // Perturbing parameters before the window leaves their (zero) gradient unchanged.
      if (window > 0) {
        auto perturbed = theta0;
        for (std::size_t k = 0; k < window * L; ++k) perturbed[k] += 0.3;
        const auto [g2, ge2] = summand_grads(perturbed, i, k2);
        for (std::size_t k = 0; k < window * L; ++k) CHECK(g2[k] == 0.0);
      }
    }
  }

  // In-window gradients equal a chain rebuilt by hand from the detached state.
  const std::size_t i = 5, k2 = 2;
  std::vector<double> state(e.begin(), e.begin() + L);
  for (std::size_t l = 0; l < i - k2; ++l) {
    for (std::size_t k = 0; k < L; ++k) state[k] += dts[l] * theta0[l * L + k] * state[k];
  }
  auto theta = TensorD::parameter({F, L}, theta0);
  auto x = TensorD::constant({1, L}, state);
  for (std::size_t l = i - k2; l < i; ++l) {
    const std::vector<std::size_t> row{l};
    x = ad::add(x, ad::scale(ad::mul(ad::take_rows<double>(theta, row), x), dts[l]));
  }
  const auto target = TensorD::constant({1, L}, std::vector<double>(e.begin() + i * L, e.begin() + (i + 1) * L));
  ad::div(ad::l2_norm(ad::sub(x, target)), ad::l2_norm(target)).backward();
  const auto [g, ge] = summand_grads(theta0, i, k2);
  for (std::size_t k = 0; k < F * L; ++k) CHECK(g[k] == doctest::Approx(theta.grad()[k]).epsilon(1e-12));
}

TEST_CASE("time-generalisation loss: zero split matches the one-step teacher-forcing summand") {
  ModelD m(small_config(), 6);
  const std::size_t B = 2, F = 4;
  const auto E = m.encode(TensorD::constant({B * (F + 1), 1, 32}, random_vec(B * (F + 1) * 32, 9)));
  const std::vector<double> dts(F, 0.05);
  const train::ModelProcessor<double> proc(m, TensorD{});
  const auto tf = values(train::loss_tf_terms<double>(proc, E, dts, 1));
  const auto zero = values(train::loss_timegen_terms<double>(proc, E, dts, std::vector<double>(B * F, 0.0)));
  for (std::size_t r = 0; r < tf.size(); ++r) CHECK(zero[r] == doctest::Approx(tf[r]).epsilon(1e-12));
  const auto splits = random_vec(B * F, 3, 0.0, 0.05);
  CHECK(values(train::loss_timegen_terms<double>(proc, E, dts, splits)) ==
        values(train::loss_timegen_terms<double>(proc, E, dts, splits)));
  CHECK_THROWS_AS(train::loss_timegen<double>(proc, E, dts, std::vector<double>(B * F, 0.06)),
                  std::invalid_argument);
}

TEST_CASE("latent regulariser") {
  const std::size_t B = 2, F = 3, L = 4;
  const auto ones = TensorD::filled({B * (F + 1), L}, 1.0);
  CHECK(train::loss_reg(ones, B, 0.0).item() == 0.0);
  CHECK(train::loss_reg(ones, B, 0.001).item() == doctest::Approx(0.001 * (F + 1)).epsilon(1e-14));
  CHECK(train::train_preset("burgers-fixed", "paper").lambda_rg == 0.001);
}

TEST_CASE("strategy schedules") {
  train::TrainPlan p;
  p.strategy = 2;
  p.gamma0 = 1.0 / 500;
  CHECK(train::gamma_at(p, 250) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(train::gamma_at(p, 500) == 1.0);
  CHECK(train::gamma_at(p, 900) == 1.0);
  CHECK(train::k2_at(p, 95, 40) == 4);
  CHECK(train::k2_at(p, 5000, 40) == 40);
  double g = 0;
  std::size_t k = 0;
  for (std::size_t e = 1; e <= 2000; ++e) {
    CHECK(train::gamma_at(p, e) >= g);
    CHECK(train::k2_at(p, e, 40) >= k);
    g = train::gamma_at(p, e);
    k = train::k2_at(p, e, 40);
  }
  const auto w = train::resolve(p, 10, 40);
  CHECK(w.beta == 1.0);
  CHECK(w.k1 == 1);
  p.strategy = 1;
  CHECK(train::resolve(p, 10, 40).gamma == 0.0);

  p.lr_decay = 0.997;
  CHECK(std::log(2.0) / std::log(1.0 / 0.997) == doctest::Approx(230.7).epsilon(1e-3));
  CHECK(train::lr_at(p, 232) / p.lr == doctest::Approx(0.5).epsilon(2e-3));
  p.gamma0 = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("Adam update rule") {
  auto w = TensorD::parameter({3}, {1.0, -2.0, 0.5});
  train::Adam<double> adam({{"w", w}});
  w.mutable_grad()[0] = 0.3;
  w.mutable_grad()[1] = -5.0;
  w.mutable_grad()[2] = 0.0;
  adam.step(0.01);
  // Bias-corrected first step moves by lr * g / (|g| + eps).
  CHECK(w.at(0) == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-12));
  CHECK(w.at(1) == doctest::Approx(-2.0 + 0.01 * 5.0 / (5.0 + 1e-8)).epsilon(1e-12));
  CHECK(w.at(2) == 0.5);

  // Reference recursion over a few steps with changing gradients.
  auto v = TensorD::parameter({1}, {0.7});
  train::Adam<double> opt({{"v", v}});
  double x = 0.7, m = 0, s = 0;
  for (int t = 1; t <= 5; ++t) {
    const double grad = 0.1 * t - 0.2;
    v.mutable_grad()[0] = grad;
    opt.step(0.05);
    m = 0.9 * m + 0.1 * grad;
    s = 0.999 * s + 0.001 * grad * grad;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(s / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(v.at(0) == doctest::Approx(x).epsilon(1e-13));
  }

  v.mutable_grad()[0] = std::nan("");
  const double before = v.at(0);
  CHECK_THROWS_AS(opt.step(0.05), ad::NonFiniteError);
  CHECK(v.at(0) == before);
}

TEST_CASE("batch losses skip inactive terms and sum the active ones") {
  const auto s = small_advection(4, 2);
  ModelD m(small_config(), 2);
  const std::vector<std::size_t> idx{0, 1, 2};
  const auto batch = train::gather_batch<double>(s.train, idx);
  CHECK(batch.fields.shape() == Shape{3 * 11, 1, 32});
  train::TrainPlan plan;
  plan.lambda_rg = 0.01;
  const auto w = train::resolve(plan, 1, 10);
  const auto splits = random_vec(3 * 10, 1, 0.0, 0.05);
  const auto v = train::batch_losses<double>(m, batch, w, splits, false);
  CHECK(std::isnan(v.l2a));
  CHECK(v.ltr == doctest::Approx(v.l1 + v.l2t + v.l3 + v.lrg).epsilon(1e-12));
  for (double t : {v.l1, v.l2t, v.l3, v.lrg}) CHECK(t >= 0);
  // The rollout term of the validation loss is non-negative.
  CHECK(train::rollout_error<double>(m, batch) >= 0.0);
  auto zero = w;
  zero.alpha = zero.beta = zero.delta = zero.lambda_rg = 0;
  CHECK_THROWS_AS(train::batch_losses<double>(m, batch, zero, splits, false), std::invalid_argument);
}

TEST_CASE("overfit smoke test: eight trajectories, 200 epochs") {
  const auto s = small_advection(8, 0);
  auto cfg = small_config();
  cfg.encoder_bias = false;
  model::SurrogateModel<float> m(cfg, 7);
  train::TrainPlan plan;
  plan.batch_size = 1;
  plan.max_epochs = 200;
  plan.patience = 200;
  plan.lr = 2e-3;
  plan.warmup_epochs = 20;
  plan.seed = 1;
  const auto res = train::train(m, s.train, s.val, plan);
  REQUIRE(res.history.size() == 200);
  const double first = res.history.front().ltr, last = res.history.back().ltr;
  INFO("first " << first << " last " << last);
  CHECK(first / last >= 10.0);
}

TEST_CASE("autoencoder alone reconstructs a three-trajectory toy set") {
  const auto s = small_advection(3, 0);
  auto cfg = small_config();
  model::SurrogateModel<float> m(cfg, 8);
  train::TrainPlan plan;
  plan.batch_size = 1;
  plan.max_epochs = 400;
  plan.patience = 400;
  plan.lr = 3e-3;
  plan.delta = 0;
  plan.latent_off_epochs = plan.max_epochs;
  train::train(m, s.train, s.val, plan);
  std::vector<std::size_t> idx{0, 1, 2};
  const auto batch = train::gather_batch<float>(s.train, idx);
  ad::NoGradGuard guard;
  const double err = train::loss_recon(m.decode(m.encode(batch.fields)), batch.fields).item();
  INFO("relative reconstruction error " << err);
  CHECK(err < 0.05);
}

TEST_CASE("training is deterministic and independent of the worker count") {
  const auto s = small_advection(12, 4);
  train::TrainPlan plan;
  plan.batch_size = 4;
  plan.max_epochs = 4;
  plan.shards = 2;
  plan.seed = 11;
  std::vector<fs::path> dirs;
  for (std::size_t workers : {1u, 1u, 2u}) {
    model::SurrogateModel<float> m(small_config(), 5);
    train::TrainOptions opts;
    opts.out_dir = fresh_dir("det" + std::to_string(dirs.size()));
    opts.workers = workers;
    train::train(m, s.train, s.val, plan, opts);
    dirs.push_back(opts.out_dir);
  }
  for (std::size_t k = 1; k < dirs.size(); ++k) {
    CHECK(slurp(dirs[0] / "metrics.csv") == slurp(dirs[k] / "metrics.csv"));
    CHECK(slurp(dirs[0] / "last.ckpt") == slurp(dirs[k] / "last.ckpt"));
    CHECK(slurp(dirs[0] / "best.ckpt") == slurp(dirs[k] / "best.ckpt"));
  }
  const auto csv = slurp(dirs[0] / "metrics.csv");
  CHECK(csv.rfind(std::string(train::kMetricHeader) + "\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  for (const auto& d : dirs) fs::remove_all(d);
}

TEST_CASE("resume continues to the same state as an uninterrupted run") {
  const auto s = small_advection(8, 4);
  train::TrainPlan plan;
  plan.batch_size = 4;
  plan.seed = 2;
  plan.max_epochs = 6;
  const auto full = fresh_dir("full"), split = fresh_dir("split");
  {
    model::SurrogateModel<float> m(small_config(), 3);
    train::TrainOptions opts;
    opts.out_dir = full;
    train::train(m, s.train, s.val, plan, opts);
  }
  {
    auto short_plan = plan;
    short_plan.max_epochs = 3;
    model::SurrogateModel<float> m(small_config(), 3);
    train::TrainOptions opts;
    opts.out_dir = split;
    train::train(m, s.train, s.val, short_plan, opts);
    // Stray row from an epoch that never reached its checkpoint.
    std::ofstream(split / "metrics.csv", std::ios::app) << "4,1,1,1,1,1,1,1,1,0,0\n";
    model::SurrogateModel<float> resumed(small_config(), 99);
    opts.resume = true;
    const auto res = train::train(resumed, s.train, s.val, plan, opts);
    CHECK(res.history.front().epoch == 4);
  }
  CHECK(slurp(full / "metrics.csv") == slurp(split / "metrics.csv"));
  CHECK(slurp(full / "last.ckpt") == slurp(split / "last.ckpt"));
  fs::remove_all(full);
  fs::remove_all(split);
}

TEST_CASE("early stopping and the best-validation checkpoint") {
  const auto s = small_advection(4, 2);
  model::SurrogateModel<float> m(small_config(), 3);
  train::TrainPlan plan;
  plan.batch_size = 4;
  plan.max_epochs = 50;
  plan.patience = 2;
  plan.lr = 1e-30;  // updates vanish below float resolution
  const auto res = train::train(m, s.train, s.val, plan);
  CHECK(res.early_stopped);
  CHECK(res.history.size() == 3);
  CHECK(res.best_epoch == 1);
  for (const auto& r : res.history) CHECK(r.lvl >= r.ltr);
}

TEST_CASE("trivial-minimum warning on a constant encoder") {
  const auto s = small_advection(4, 0);
  auto cfg = small_config();
  // Zero output weights plus a unit bias: every input maps to the same latent.
  model::SurrogateModel<float> c(cfg, 3);
  for (auto& p : c.parameters()) {
    auto d = p.tensor.mutable_data();
    if (p.name == "encoder.linear.weight") std::fill(d.begin(), d.end(), 0.0f);
    if (p.name == "encoder.linear.bias") std::fill(d.begin(), d.end(), 1.0f);
  }
  train::TrainPlan plan;
  plan.batch_size = 4;
  plan.max_epochs = 2;
  plan.lr = 1e-30;
  const auto res = train::train(c, s.train, s.val, plan);
  CHECK(res.trivial_minimum_warnings == 2);
}
