#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lnpde/autodiff/tensor.hpp"
#include "lnpde/model/surrogate.hpp"

namespace lnpde::train {

/// Identifies a latent row: its trajectory within the batch and the interval
/// index l of the step t_l -> t_{l+1} it is about to take.
struct RowTag {
  std::size_t trajectory = 0;
  std::size_t interval = 0;
};

/// One explicit step of the latent processor for a batch of rows with
/// per-row step sizes dt [R].
template <class T>
class Processor {
 public:
  using Tensor = ad::Tensor<T>;
  virtual ~Processor() = default;
  virtual Tensor step(const Tensor& eps, std::span<const RowTag> tags, const Tensor& dt) const = 0;
};

/// Processor backed by a surrogate model; mu is [B, z] (undefined when z = 0).
template <class T>
class ModelProcessor final : public Processor<T> {
 public:
  using Tensor = ad::Tensor<T>;
  ModelProcessor(const model::SurrogateModel<T>& model, Tensor mu) : model_(model), mu_(std::move(mu)) {}
  Tensor step(const Tensor& eps, std::span<const RowTag> tags, const Tensor& dt) const override;

 private:
  const model::SurrogateModel<T>& model_;
  Tensor mu_;
};

/// ||pred_r - target_r||_2 / ||target_r||_2 per row: [R]. Throws
/// std::domain_error on a zero-norm target row.
template <class T>
ad::Tensor<T> relative_rows(const ad::Tensor<T>& pred, const ad::Tensor<T>& target, const char* what);

/// L1: mean relative reconstruction error over every frame row.
template <class T>
ad::Tensor<T> loss_recon(const ad::Tensor<T>& recon, const ad::Tensor<T>& fields);

// Latent terms. E holds the encoded true latents [B*(F+1), latent] with row
// b*(F+1)+i; dts has F entries. The *_terms variants return the per-summand
// values [B*F] with row b*F+(i-1); the plain variants their mean.

/// L2^{T,k1}: k1 steps from the true latent at t_{max(0, i-k1)}.
template <class T>
ad::Tensor<T> loss_tf_terms(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                            std::size_t k1);
template <class T>
ad::Tensor<T> loss_tf(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                      std::size_t k1);

/// L2^{A,k2}: forward values of the full rollout from eps_0; gradients flow
/// only through the last k2 steps (the state at t_{i-k2} is detached, except
/// eps_0 itself).
template <class T>
ad::Tensor<T> loss_ar_terms(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                            std::size_t k2);
template <class T>
ad::Tensor<T> loss_ar(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                      std::size_t k2);

/// L3: two substeps of split[b*F+(i-1)] and dt_i - split from the true
/// latent at t_{i-1}.
template <class T>
ad::Tensor<T> loss_timegen_terms(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                                 std::span<const T> splits);
template <class T>
ad::Tensor<T> loss_timegen(const Processor<T>& proc, const ad::Tensor<T>& E, std::span<const T> dts,
                           std::span<const T> splits);

/// L_rg = lambda_rg * sum_i ||eps_i||_1 / latent, averaged over trajectories.
template <class T>
ad::Tensor<T> loss_reg(const ad::Tensor<T>& E, std::size_t trajectories, double lambda_rg);

/// Rows b*(F+1)+i for every b < B and i in [first, F].
std::vector<std::size_t> frame_rows(std::size_t B, std::size_t F, std::size_t first);

}  // namespace lnpde::train
