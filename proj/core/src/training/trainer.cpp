#include "lnpde/training/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lnpde/autodiff/ops.hpp"
#include "lnpde/training/adam.hpp"
#include "lnpde/training/losses.hpp"
#include "lnpde/util/parallel.hpp"

namespace lnpde::train {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kValChunk = 64;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

/// One U[0, dt_l] draw per (trajectory, interval), row-major [n][F].
template <class T>
std::vector<T> draw_splits(std::size_t n, std::span<const T> dts, std::mt19937_64 rng) {
  std::vector<T> out(n * dts.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < dts.size(); ++l) {
      std::uniform_real_distribution<double> u(0.0, static_cast<double>(dts[l]));
      out[i * dts.size() + l] = std::min(static_cast<T>(u(rng)), dts[l]);
    }
  }
  return out;
}

template <class T>
std::vector<T> splits_for(std::span<const std::size_t> idx, const std::vector<T>& table, std::size_t F) {
  std::vector<T> out;
  out.reserve(idx.size() * F);
  for (auto i : idx) out.insert(out.end(), table.begin() + i * F, table.begin() + (i + 1) * F);
  return out;
}

void check_compatible(const model::ModelConfig& c, const data::TrajectoryDataset& ds, const char* what) {
  if (ds.size() == 0) return;
  if (ds.channels != c.channels || ds.z != c.z || ds.grid.points != c.extent) {
    throw std::invalid_argument(std::string(what) + " set does not match the model (channels, grid or z)");
  }
  if (ds.F() == 0) throw std::invalid_argument(std::string(what) + " set needs at least two frames");
}

double nan_or(double v) { return std::isnan(v) ? 0.0 : v; }

nlohmann::json norm_json(const data::NormStats& n) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& r : n.params) params.push_back({r.min, r.max});
  return {{"normalize_fields", n.normalize_fields}, {"field", {n.field.min, n.field.max}}, {"params", params}};
}

template <class T>
std::vector<std::vector<T>> snapshot(const model::SurrogateModel<T>& m) {
  std::vector<std::vector<T>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

template <class T>
void restore(model::SurrogateModel<T>& m, const std::vector<std::vector<T>>& values) {
  auto& params = m.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::copy(values[k].begin(), values[k].end(), params[k].tensor.mutable_data().begin());
  }
}

}  // namespace

template <class T>
std::vector<T> step_sizes(const std::vector<double>& times) {
  std::vector<T> dts;
  for (std::size_t i = 1; i < times.size(); ++i) dts.push_back(static_cast<T>(times[i] - times[i - 1]));
  return dts;
}

template <class T>
Batch<T> gather_batch(const data::TrajectoryDataset& ds, std::span<const std::size_t> indices) {
  Batch<T> b;
  b.size = indices.size();
  if (b.size == 0) throw std::invalid_argument("empty batch");
  std::vector<T> fields;
  fields.reserve(b.size * ds.trajectory_size());
  std::vector<T> mu;
  for (auto i : indices) {
    const auto traj = ds.trajectory(i);
    fields.insert(fields.end(), traj.begin(), traj.end());
    const auto p = ds.param(i);
    mu.insert(mu.end(), p.begin(), p.end());
  }
  ad::Shape shape{b.size * ds.frames(), ds.channels};
  shape.insert(shape.end(), ds.grid.points.begin(), ds.grid.points.end());
  b.fields = ad::Tensor<T>::constant(shape, std::move(fields));
  if (ds.z > 0) b.mu = ad::Tensor<T>::constant({b.size, ds.z}, std::move(mu));
  b.dts = step_sizes<T>(ds.times);
  return b;
}

template <class T>
LossValues batch_losses(const model::SurrogateModel<T>& model, const Batch<T>& batch, const EpochWeights& w,
                        std::span<const T> splits, bool backward, double grad_scale) {
  using Tensor = ad::Tensor<T>;
  if (w.alpha == 0 && w.beta == 0 && w.gamma == 0 && w.delta == 0 && w.lambda_rg == 0) {
    throw std::invalid_argument("all loss weights are zero");
  }
  const std::span<const T> dts(batch.dts);
  const auto E = model.encode(batch.fields);
  const ModelProcessor<T> proc(model, batch.mu);
  LossValues v{kNaN, kNaN, kNaN, kNaN, kNaN, 0.0, 0.0};
  Tensor total;
  auto add = [&](double weight, const Tensor& term, double& slot) {
    slot = static_cast<double>(term.item());
    const Tensor weighted = weight == 1.0 ? term : ad::scale(term, static_cast<T>(weight));
    total = total.defined() ? ad::add(total, weighted) : weighted;
  };
  if (w.alpha > 0) add(w.alpha, loss_recon(model.decode(E), batch.fields), v.l1);
  if (w.beta > 0) add(w.beta, loss_tf(proc, E, dts, w.k1), v.l2t);
  if (w.gamma > 0) add(w.gamma, loss_ar(proc, E, dts, std::max<std::size_t>(w.k2, 1)), v.l2a);
  if (w.delta > 0) add(w.delta, loss_timegen(proc, E, dts, splits), v.l3);
  if (w.lambda_rg > 0) add(1.0, loss_reg(E, batch.size, w.lambda_rg), v.lrg);
  v.ltr = static_cast<double>(total.item());
  if (backward) ad::scale(total, static_cast<T>(grad_scale)).backward();

  // Mean per-dimension variance of the latents across rows.
  const auto e = E.data();
  const std::size_t rows = E.dim(0), width = E.dim(1);
  double var = 0;
  for (std::size_t k = 0; k < width; ++k) {
    double mean = 0, sq = 0;
    for (std::size_t r = 0; r < rows; ++r) mean += e[r * width + k];
    mean /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) sq += (e[r * width + k] - mean) * (e[r * width + k] - mean);
    var += sq / static_cast<double>(rows);
  }
  v.latent_variance = var / static_cast<double>(width);
  return v;
}

template <class T>
double rollout_error(const model::SurrogateModel<T>& model, const Batch<T>& batch) {
  ad::NoGradGuard guard;
  const std::size_t F = batch.dts.size(), B = batch.size;
  std::vector<std::size_t> first;
  for (std::size_t b = 0; b < B; ++b) first.push_back(b * (F + 1));
  const auto s0 = ad::take_rows<T>(batch.fields, first);
  auto pred = model.predict_fields(s0, batch.mu, batch.dts);
  pred = ad::reshape(pred, batch.fields.shape());
  const auto rows = frame_rows(B, F, 1);
  const auto rel = relative_rows(ad::take_rows<T>(pred, rows), ad::take_rows<T>(batch.fields, rows),
                                 "rollout error");
  return static_cast<double>(ad::sum(rel).item()) / static_cast<double>(B);
}

std::string format_record(const EpochRecord& r) {
  auto num = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << r.epoch << ',' << num(r.l1) << ',' << num(r.l2t) << ',' << num(r.l2a) << ',' << num(r.l3) << ','
     << num(r.lrg) << ',' << num(r.ltr) << ',' << num(r.lvl) << ',' << num(r.lr) << ',' << r.k2 << ','
     << num(r.gamma);
  return os.str();
}

template <class T>
model::SurrogateModel<T> clone_model(const model::SurrogateModel<T>& m) {
  model::SurrogateModel<T> copy(m.config(), 0);
  restore(copy, snapshot(m));
  return copy;
}

template <class T>
TrainResult train(model::SurrogateModel<T>& model, const data::TrajectoryDataset& train_set,
                  const data::TrajectoryDataset& val_set, const TrainPlan& plan, const TrainOptions& options) {
  namespace fs = std::filesystem;
  plan.validate();
  if (train_set.size() == 0) throw std::invalid_argument("empty training set");
  check_compatible(model.config(), train_set, "training");
  check_compatible(model.config(), val_set, "validation");
  if (val_set.size() > 0 && val_set.times != train_set.times) {
    throw std::invalid_argument("validation and training sets use different time grids");
  }
  const std::size_t N = train_set.size(), F = train_set.F();
  const auto dts = step_sizes<T>(train_set.times);
  const std::size_t workers = options.workers ? options.workers : worker_count();
  const std::size_t shard_limit = std::min(plan.shards, plan.batch_size);

  std::vector<model::SurrogateModel<T>> replicas;
  if (shard_limit > 1) {
    for (std::size_t s = 0; s < shard_limit; ++s) replicas.push_back(clone_model(model));
  }
  Adam<T> adam(model.parameters());

  const bool persist = !options.out_dir.empty();
  const fs::path metrics = options.out_dir / "metrics.csv";
  const fs::path last_path = options.out_dir / "last.ckpt";
  const fs::path best_path = options.out_dir / "best.ckpt";

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0, start = 1;
  auto best_params = snapshot(model);

  if (persist) fs::create_directories(options.out_dir);
  if (persist && options.resume && fs::exists(last_path)) {
    const auto ckpt = ad::load_checkpoint(last_path);
    model::load_parameters(model, ckpt);
    adam.load_state(ckpt);
    start = ckpt.meta.at("epoch").get<std::size_t>() + 1;
    result.best_val = ckpt.meta.at("best_val").get<double>();
    result.best_epoch = ckpt.meta.at("best_epoch").get<std::size_t>();
    since_best = ckpt.meta.at("since_best").get<std::size_t>();
    best_params = snapshot(model);
    if (fs::exists(best_path)) {
      auto best = clone_model(model);
      model::load_parameters(best, ad::load_checkpoint(best_path));
      best_params = snapshot(best);
    }
    // Keep log rows up to the checkpointed epoch only.
    std::vector<std::string> kept;
    if (std::ifstream in(metrics); in) {
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (kept.empty() || std::stoul(line.substr(0, line.find(','))) < start) kept.push_back(line);
      }
    }
    std::ofstream out(metrics, std::ios::trunc);
    if (kept.empty()) kept.push_back(kMetricHeader);
    for (const auto& l : kept) out << l << '\n';
    if (start > 1 && since_best >= plan.patience) start = plan.max_epochs + 1;
  } else if (persist) {
    std::ofstream out(metrics, std::ios::trunc);
    out << kMetricHeader << '\n';
  }

  std::vector<Batch<T>> val_batches;
  for (std::size_t b0 = 0; b0 < val_set.size(); b0 += kValChunk) {
    std::vector<std::size_t> idx(std::min(kValChunk, val_set.size() - b0));
    std::iota(idx.begin(), idx.end(), b0);
    val_batches.push_back(gather_batch<T>(val_set, idx));
  }
  const auto val_splits = draw_splits<T>(val_set.size(), dts, stream(plan.seed, 0, 3));

  auto make_checkpoint = [&](std::size_t epoch) {
    nlohmann::json meta = options.extra_meta;
    meta["plan"] = to_json(plan);
    meta["epoch"] = epoch;
    meta["best_val"] = result.best_val;
    meta["best_epoch"] = result.best_epoch;
    meta["since_best"] = since_best;
    meta["norm"] = norm_json(train_set.norm);
    meta["fields_normalized"] = train_set.normalized;
    meta["times"] = train_set.times;
    return model::make_checkpoint(model, meta);
  };

  for (std::size_t epoch = start; epoch <= plan.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto w = resolve(plan, epoch, F);
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = stream(plan.seed, epoch, 1);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const auto split_table = w.delta > 0 ? draw_splits<T>(N, dts, stream(plan.seed, epoch, 2)) : std::vector<T>{};

    LossValues sum{0, 0, 0, 0, 0, 0, 0};
    double last_variance = 0;
    for (std::size_t b0 = 0; b0 < N; b0 += plan.batch_size) {
      const std::size_t B = std::min(plan.batch_size, N - b0);
      const std::span<const std::size_t> idx(order.data() + b0, B);
      for (auto& p : model.parameters()) p.tensor.zero_grad();

      const std::size_t shards = std::min(shard_limit, B);
      std::vector<LossValues> parts(shards);
      std::vector<double> weights(shards);
      if (replicas.empty() || shards == 1) {
        const auto splits = w.delta > 0 ? splits_for(idx, split_table, F) : std::vector<T>{};
        parts[0] = batch_losses<T>(model, gather_batch<T>(train_set, idx), w, splits, true, 1.0);
        weights[0] = 1.0;
      } else {
        const auto current = snapshot(model);
        parallel_for(
            shards,
            [&](std::size_t s) {
              const std::size_t lo = B * s / shards, hi = B * (s + 1) / shards;
              auto& rep = replicas[s];
              restore(rep, current);
              for (auto& p : rep.parameters()) p.tensor.zero_grad();
              const auto sub = idx.subspan(lo, hi - lo);
              const auto splits = w.delta > 0 ? splits_for(sub, split_table, F) : std::vector<T>{};
              weights[s] = static_cast<double>(hi - lo) / static_cast<double>(B);
              parts[s] = batch_losses<T>(rep, gather_batch<T>(train_set, sub), w, splits, true, weights[s]);
            },
            workers);
        auto& params = model.parameters();
        for (std::size_t k = 0; k < params.size(); ++k) {
          auto g = params[k].tensor.mutable_grad();
          std::fill(g.begin(), g.end(), T{0});
          for (std::size_t s = 0; s < shards; ++s) {
            const auto rg = replicas[s].parameters()[k].tensor.grad();
            for (std::size_t i = 0; i < rg.size(); ++i) g[i] += rg[i];
          }
        }
      }
      adam.step(w.lr);

      const double share = static_cast<double>(B) / static_cast<double>(N);
      for (std::size_t s = 0; s < shards; ++s) {
        const double f = share * weights[s];
        sum.l1 += f * parts[s].l1;
        sum.l2t += f * parts[s].l2t;
        sum.l2a += f * parts[s].l2a;
        sum.l3 += f * parts[s].l3;
        sum.lrg += f * parts[s].lrg;
        sum.ltr += f * parts[s].ltr;
      }
      last_variance = parts[0].latent_variance;
    }

    if (last_variance < 1e-10) {
      ++result.trivial_minimum_warnings;
      std::clog << "warning: epoch " << epoch << ": latent variance " << last_variance
                << " < 1e-10, the model may be stuck in the trivial constant minimum; consider a "
                   "bias-free encoder, LR warm-up or switching off the latent terms for early epochs\n";
    }

    double lvl = sum.ltr;
    if (!val_batches.empty()) {
      ad::NoGradGuard guard;
      double ltr = 0, roll = 0;
      std::size_t offset = 0;
      try {
        for (const auto& vb : val_batches) {
          std::vector<std::size_t> idx(vb.size);
          std::iota(idx.begin(), idx.end(), offset);
          const auto splits = w.delta > 0 ? splits_for(idx, val_splits, F) : std::vector<T>{};
          const double share = static_cast<double>(vb.size) / static_cast<double>(val_set.size());
          ltr += share * batch_losses<T>(model, vb, w, splits, false).ltr;
          roll += share * rollout_error(model, vb);
          offset += vb.size;
        }
        lvl = ltr + roll;
      } catch (const model::DivergenceError&) {
        lvl = std::numeric_limits<double>::infinity();
      } catch (const ad::NonFiniteError&) {
        lvl = std::numeric_limits<double>::infinity();
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l1 = w.alpha > 0 ? sum.l1 : kNaN;
    rec.l2t = w.beta > 0 ? sum.l2t : kNaN;
    rec.l2a = w.gamma > 0 ? sum.l2a : kNaN;
    rec.l3 = w.delta > 0 ? sum.l3 : kNaN;
    rec.lrg = w.lambda_rg > 0 ? sum.lrg : kNaN;
    rec.ltr = sum.ltr;
    rec.lvl = lvl;
    rec.lr = w.lr;
    rec.k2 = w.k2;
    rec.gamma = w.gamma;
    result.history.push_back(rec);

    if (lvl < result.best_val) {
      result.best_val = lvl;
      result.best_epoch = epoch;
      since_best = 0;
      best_params = snapshot(model);
      if (persist) ad::save_checkpoint(make_checkpoint(epoch), best_path);
    } else {
      ++since_best;
    }
    if (persist) {
      {
        std::ofstream out(metrics, std::ios::app);
        out << format_record(rec) << '\n';
      }
      auto ckpt = make_checkpoint(epoch);
      adam.save_state(ckpt);
      ad::save_checkpoint(ckpt, last_path);
    }
    if (options.progress) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *options.progress << "epoch " << epoch << " ltr " << nan_or(rec.ltr) << " lvl " << rec.lvl << " lr "
                        << rec.lr << " (" << secs << " s)\n";
      options.progress->flush();
    }
    if (since_best >= plan.patience) {
      result.early_stopped = true;
      break;
    }
  }
  restore(model, best_params);
  return result;
}

#define LNPDE_INSTANTIATE(T)                                                                               \
  template std::vector<T> step_sizes<T>(const std::vector<double>&);                                       \
  template Batch<T> gather_batch<T>(const data::TrajectoryDataset&, std::span<const std::size_t>);          \
  template LossValues batch_losses(const model::SurrogateModel<T>&, const Batch<T>&, const EpochWeights&,  \
                                   std::span<const T>, bool, double);                                      \
  template double rollout_error(const model::SurrogateModel<T>&, const Batch<T>&);                         \
  template model::SurrogateModel<T> clone_model(const model::SurrogateModel<T>&);                          \
  template TrainResult train(model::SurrogateModel<T>&, const data::TrajectoryDataset&,                    \
                             const data::TrajectoryDataset&, const TrainPlan&, const TrainOptions&);

LNPDE_INSTANTIATE(float)
LNPDE_INSTANTIATE(double)

#undef LNPDE_INSTANTIATE

}  // namespace lnpde::train
