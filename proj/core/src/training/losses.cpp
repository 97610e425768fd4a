#include "lnpde/training/losses.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "lnpde/autodiff/ops.hpp"

namespace lnpde::train {

namespace {

template <class T>
std::size_t trajectories_of(const ad::Tensor<T>& E, std::size_t F) {
  if (E.rank() != 2 || E.dim(0) % (F + 1) != 0) {
    throw ad::ShapeError("latent batch " + ad::to_string(E.shape()) + " is not [B*(F+1), latent]");
  }
  return E.dim(0) / (F + 1);
}

/// Advances every row r from t_{start[r]} towards t_{stop[r]}; rows that
/// arrive early take zero-length steps for the remaining iterations.
template <class T>
ad::Tensor<T> advance(const Processor<T>& proc, ad::Tensor<T> state, std::span<const std::size_t> traj,
                      std::span<const std::size_t> start, std::span<const std::size_t> stop,
                      std::span<const T> dts, std::size_t steps) {
  const std::size_t R = traj.size();
  std::vector<RowTag> tags(R);
  std::vector<T> dt(R);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t l = start[r] + s;
      const bool active = l < stop[r];
      tags[r] = {traj[r], std::min(l, dts.size() - 1)};
      dt[r] = active ? dts[l] : T{0};
    }
    state = proc.step(state, tags, ad::Tensor<T>::constant({R}, dt));
  }
  return state;
}

struct Targets {
  std::vector<std::size_t> traj, index, rows;
};

Targets targets(std::size_t B, std::size_t F) {
  Targets t;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 1; i <= F; ++i) {
      t.traj.push_back(b);
      t.index.push_back(i);
      t.rows.push_back(b * (F + 1) + i);
    }
  }
  return t;
}

}  // namespace

template <class T>
ad::Tensor<T> ModelProcessor<T>::step(const Tensor& eps, std::span<const RowTag> tags, const Tensor& dt) const {
  Tensor mu;
  if (model_.config().z > 0) {
    std::vector<std::size_t> rows(tags.size());
    for (std::size_t r = 0; r < tags.size(); ++r) rows[r] = tags[r].trajectory;
    mu = ad::take_rows<T>(mu_, rows);
  }
  return model_.rk_step(eps, mu, dt);
}

std::vector<std::size_t> frame_rows(std::size_t B, std::size_t F, std::size_t first) {
  std::vector<std::size_t> rows;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = first; i <= F; ++i) rows.push_back(b * (F + 1) + i);
  }
  return rows;
}

template <class T>
ad::Tensor<T> relative_rows(const ad::Tensor<T>& pred, const ad::Tensor<T>& target, const char* what) {
  if (pred.shape() != target.shape()) {
    throw ad::ShapeError(std::string(what) + ": prediction " + ad::to_string(pred.shape()) +
                         " vs target " + ad::to_string(target.shape()));
  }
  const auto norm = ad::row_l2_norm(target);
  for (std::size_t r = 0; r < norm.size(); ++r) {
    if (!(norm.at(r) > T{0})) {
      throw std::domain_error(std::string(what) + ": zero-norm target row " + std::to_string(r));
    }
  }
  return ad::div(ad::row_l2_norm(ad::sub(pred, target)), norm);
}

template <class T>
ad::Tensor<T> loss_recon(const ad::Tensor<T>& recon, const ad::Tensor<T>& fields) {
  return ad::mean(relative_rows(recon, fields, "reconstruction loss"));
}

template <class T>
ad::Tensor<T> loss_tf_terms(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                            std::size_t k1) {
  const std::size_t F = dts.size();
  if (F == 0 || k1 == 0) throw std::invalid_argument("teacher forcing needs F >= 1 and k1 >= 1");
  const std::size_t B = trajectories_of(E, F);
  const auto t = targets(B, F);
  std::vector<std::size_t> start(t.rows.size()), start_rows(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    start[r] = t.index[r] >= k1 ? t.index[r] - k1 : 0;
    start_rows[r] = t.traj[r] * (F + 1) + start[r];
  }
  const auto pred = advance(proc, ad::take_rows<T>(E, start_rows), t.traj, start, t.index, dts,
                            std::min(k1, F));
  return relative_rows(pred, ad::take_rows<T>(E, t.rows), "teacher-forcing loss");
}

template <class T>
ad::Tensor<T> loss_ar_terms(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                            std::size_t k2) {
  const std::size_t F = dts.size();
  if (F == 0 || k2 == 0) throw std::invalid_argument("autoregressive loss needs F >= 1 and k2 >= 1");
  const std::size_t B = trajectories_of(E, F);
  const std::size_t R = B * (F + 1);

  // Detached full rollout from eps_0 supplies every truncation start.
  std::vector<T> rolled(E.size());
  {
    ad::NoGradGuard guard;
    const auto e0 = E.data();
    const std::size_t width = E.dim(1);
    std::vector<T> init;
    for (std::size_t b = 0; b < B; ++b) {
      init.insert(init.end(), e0.begin() + b * (F + 1) * width, e0.begin() + (b * (F + 1) + 1) * width);
    }
    auto state = ad::Tensor<T>::constant({B, width}, init);
    std::vector<std::size_t> traj(B), at(B), next(B);
    for (std::size_t b = 0; b < B; ++b) traj[b] = b;
    for (std::size_t i = 0; i <= F; ++i) {
      if (i > 0) {
        std::fill(at.begin(), at.end(), i - 1);
        std::fill(next.begin(), next.end(), i);
        state = advance(proc, state, traj, at, next, dts, 1);
      }
      const auto v = state.data();
      for (std::size_t b = 0; b < B; ++b) {
        std::copy(v.begin() + b * width, v.begin() + (b + 1) * width,
                  rolled.begin() + (b * (F + 1) + i) * width);
      }
    }
  }
  const ad::Tensor<T> sources[] = {E, ad::Tensor<T>::constant(E.shape(), rolled)};
  const auto pool = ad::concat<T>(sources, 0);

  const auto t = targets(B, F);
  std::vector<std::size_t> start(t.rows.size()), start_rows(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    start[r] = t.index[r] >= k2 ? t.index[r] - k2 : 0;
    const std::size_t row = t.traj[r] * (F + 1) + start[r];
    start_rows[r] = start[r] == 0 ? row : R + row;
  }
  const auto pred = advance(proc, ad::take_rows<T>(pool, start_rows), t.traj, start, t.index, dts,
                            std::min(k2, F));
  return relative_rows(pred, ad::take_rows<T>(E, t.rows), "autoregressive loss");
}

template <class T>
ad::Tensor<T> loss_timegen_terms(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                                 std::span<const T> splits) {
  const std::size_t F = dts.size();
  if (F == 0) throw std::invalid_argument("time-generalisation loss needs F >= 1");
  const std::size_t B = trajectories_of(E, F);
  const auto t = targets(B, F);
  if (splits.size() != t.rows.size()) throw ad::ShapeError("need one split per (trajectory, interval)");
  std::vector<RowTag> tags(t.rows.size());
  std::vector<std::size_t> prev(t.rows.size());
  std::vector<T> first(t.rows.size()), second(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t l = t.index[r] - 1;
    const T split = splits[r];
    if (!(split >= T{0} && split <= dts[l])) throw std::invalid_argument("split outside [0, dt]");
    tags[r] = {t.traj[r], l};
    prev[r] = t.rows[r] - 1;
    first[r] = split;
    second[r] = dts[l] - split;
  }
  const std::size_t R = t.rows.size();
  auto state = proc.step(ad::take_rows<T>(E, prev), tags, ad::Tensor<T>::constant({R}, first));
  state = proc.step(state, tags, ad::Tensor<T>::constant({R}, second));
  return relative_rows(state, ad::take_rows<T>(E, t.rows), "time-generalisation loss");
}

template <class T>
ad::Tensor<T> loss_tf(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts, std::size_t k1) {
  return ad::mean(loss_tf_terms(proc, E, dts, k1));
}

template <class T>
ad::Tensor<T> loss_ar(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts, std::size_t k2) {
  return ad::mean(loss_ar_terms(proc, E, dts, k2));
}

template <class T>
ad::Tensor<T> loss_timegen(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                           std::span<const T> splits) {
  return ad::mean(loss_timegen_terms(proc, E, dts, splits));
}

template <class T>
ad::Tensor<T> loss_reg(const ad::Tensor<T>& E, std::size_t trajectories, double lambda_rg) {
  if (lambda_rg < 0) throw std::invalid_argument("lambda_rg must be >= 0");
  const T factor = static_cast<T>(lambda_rg / static_cast<double>(E.dim(1) * trajectories));
  return ad::scale(ad::sum(ad::row_l1_norm(E)), factor);
}

#define LNPDE_INSTANTIATE(T)                                                                              \
  template class ModelProcessor<T>;                                                                       \
  template ad::Tensor<T> relative_rows(const ad::Tensor<T>&, const ad::Tensor<T>&, const char*);          \
  template ad::Tensor<T> loss_recon(const ad::Tensor<T>&, const ad::Tensor<T>&);                          \
  template ad::Tensor<T> loss_tf_terms(const Processor<T>&, const ad::Tensor<T>&, std::span<const T>,     \
                                       std::size_t);                                                      \
  template ad::Tensor<T> loss_tf(const Processor<T>&, const ad::Tensor<T>&, std::span<const T>,           \
                                 std::size_t);                                                            \
  template ad::Tensor<T> loss_ar_terms(const Processor<T>&, const ad::Tensor<T>&, std::span<const T>,     \
                                       std::size_t);                                                      \
  template ad::Tensor<T> loss_ar(const Processor<T>&, const ad::Tensor<T>&, std::span<const T>,           \
                                 std::size_t);                                                            \
  template ad::Tensor<T> loss_timegen_terms(const Processor<T>&, const ad::Tensor<T>&, std::span<const T>, \
                                            std::span<const T>);                                          \
  template ad::Tensor<T> loss_timegen(const Processor<T>&, const ad::Tensor<T>&, std::span<const T>,      \
                                      std::span<const T>);                                                \
  template ad::Tensor<T> loss_reg(const ad::Tensor<T>&, std::size_t, double);

LNPDE_INSTANTIATE(float)
LNPDE_INSTANTIATE(double)

#undef LNPDE_INSTANTIATE

}  // namespace lnpde::train
