#include "lnpde/training/plan.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lnpde::train {

void TrainPlan::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train plan: " + msg); };
  if (strategy != 1 && strategy != 2) fail("strategy must be 1 or 2");
  if (alpha < 0 || delta < 0 || lambda_rg < 0) fail("loss weights must be >= 0");
  if (!(gamma0 > 0 && gamma0 <= 1)) fail("gamma0 must be in (0, 1]");
  if (k2_period == 0) fail("k2 period must be positive");
  if (!(lr > 0)) fail("learning rate must be positive");
  if (!(lr_decay > 0 && lr_decay <= 1)) fail("LR decay must be in (0, 1]");
  if (batch_size == 0) fail("batch size must be positive");
  if (max_epochs == 0) fail("max epochs must be positive");
  if (shards == 0) fail("shards must be positive");
}

double gamma_at(const TrainPlan& plan, std::size_t epoch) {
  if (plan.strategy == 1) return 0.0;
  return std::min(1.0, static_cast<double>(epoch) * plan.gamma0);
}

std::size_t k2_at(const TrainPlan& plan, std::size_t epoch, std::size_t F) {
  if (plan.strategy == 1) return 0;
  return std::min(F, 1 + epoch / plan.k2_period);
}

double lr_at(const TrainPlan& plan, std::size_t epoch) {
  double lr = plan.lr * std::pow(plan.lr_decay, static_cast<double>(epoch - 1));
  if (plan.warmup_epochs > 0 && epoch < plan.warmup_epochs) {
    lr *= static_cast<double>(epoch) / static_cast<double>(plan.warmup_epochs);
  }
  return lr;
}

EpochWeights resolve(const TrainPlan& plan, std::size_t epoch, std::size_t F) {
  if (epoch == 0) throw std::invalid_argument("epochs count from 1");
  EpochWeights w;
  w.alpha = plan.alpha;
  w.beta = 1.0;
  w.gamma = gamma_at(plan, epoch);
  w.delta = plan.delta;
  w.lambda_rg = plan.lambda_rg;
  w.k1 = 1;
  w.k2 = k2_at(plan, epoch, F);
  w.lr = lr_at(plan, epoch);
  if (epoch <= plan.latent_off_epochs) w.beta = w.gamma = w.delta = 0.0;
  return w;
}

nlohmann::json to_json(const TrainPlan& p) {
  return {{"strategy", p.strategy},   {"alpha", p.alpha},
          {"delta", p.delta},         {"lambda_rg", p.lambda_rg},
          {"gamma0", p.gamma0},       {"k2_period", p.k2_period},
          {"lr", p.lr},               {"lr_decay", p.lr_decay},
          {"batch_size", p.batch_size}, {"max_epochs", p.max_epochs},
          {"patience", p.patience},   {"seed", p.seed},
          {"shards", p.shards},       {"warmup_epochs", p.warmup_epochs},
          {"latent_off_epochs", p.latent_off_epochs}};
}

TrainPlan train_plan_from_json(const nlohmann::json& j, TrainPlan p) {
  p.strategy = j.value("strategy", p.strategy);
  p.alpha = j.value("alpha", p.alpha);
  p.delta = j.value("delta", p.delta);
  p.lambda_rg = j.value("lambda_rg", p.lambda_rg);
  p.gamma0 = j.value("gamma0", p.gamma0);
  p.k2_period = j.value("k2_period", p.k2_period);
  p.lr = j.value("lr", p.lr);
  p.lr_decay = j.value("lr_decay", p.lr_decay);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.max_epochs = j.value("max_epochs", p.max_epochs);
  p.patience = j.value("patience", p.patience);
  p.seed = j.value("seed", p.seed);
  p.shards = j.value("shards", p.shards);
  p.warmup_epochs = j.value("warmup_epochs", p.warmup_epochs);
  p.latent_off_epochs = j.value("latent_off_epochs", p.latent_off_epochs);
  p.validate();
  return p;
}

TrainPlan train_preset(const std::string& preset, const std::string& scale) {
  if (scale != "desk" && scale != "paper") throw std::invalid_argument("scale must be desk or paper");
  TrainPlan p;
  const bool parametric = preset == "advection-param" || preset == "burgers-param" || preset == "molenkamp";
  if (!parametric && preset != "advection-fixed" && preset != "burgers-fixed" && preset != "import") {
    throw std::invalid_argument("unknown preset '" + preset + "'");
  }
  p.strategy = parametric ? 2 : 1;
  if (scale == "paper") {
    if (preset == "advection-fixed") {
      p.lr = 1e-3, p.lr_decay = 0.997, p.batch_size = 16;
    } else if (preset == "burgers-fixed") {
      p.lr = 1.4e-3, p.lr_decay = 0.999, p.batch_size = 32, p.lambda_rg = 1e-3;
    } else if (preset == "import") {
      p.lr = 1e-3, p.lr_decay = 0.999, p.batch_size = 16, p.lambda_rg = 1e-3;
    } else if (preset == "advection-param") {
      p.lr = 1.8e-3, p.lr_decay = 0.995, p.batch_size = 64, p.gamma0 = 1.0 / 500;
    } else if (preset == "burgers-param") {
      p.lr = 1.8e-3, p.lr_decay = 0.995, p.batch_size = 124, p.gamma0 = 1.0 / 1000;
    } else {
      p.lr = 1.5e-3, p.lr_decay = 0.995, p.batch_size = 16, p.gamma0 = 1.0 / 500;
    }
    p.max_epochs = 5000;
    p.patience = 200;
  } else {
    p.lr = 2e-3;
    p.lr_decay = 0.99;
    p.batch_size = 16;
    p.max_epochs = 250;
    p.patience = 50;
    p.latent_off_epochs = 15;
    p.gamma0 = 1.0 / 50;
    if (preset == "burgers-fixed") p.lambda_rg = 1e-3;
  }
  p.validate();
  return p;
}

}  // namespace lnpde::train
