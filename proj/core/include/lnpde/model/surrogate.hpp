#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lnpde/autodiff/checkpoint.hpp"
#include "lnpde/autodiff/tensor.hpp"
#include "lnpde/model/butcher.hpp"
#include "lnpde/model/config.hpp"

namespace lnpde::model {

/// Raised when a rollout state leaves the configured norm bound.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
struct NamedTensor {
  std::string name;
  ad::Tensor<T> tensor;
};

/// Encoder, latent right-hand side f and decoder, with the RK processor on
/// top of f. Batched everywhere: fields are [B, m, spatial...], latents
/// [R, latent], parameters [R, z] (undefined or [R, 0] when z = 0).
template <class T>
class SurrogateModel {
 public:
  using Tensor = ad::Tensor<T>;

  SurrogateModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ButcherTableau& tableau() const { return tableau_; }

  Tensor encode(const Tensor& fields) const;
  Tensor decode(const Tensor& latent) const;

  /// f(eps, mu); t is not an input (autonomous system).
  Tensor rhs(const Tensor& eps, const Tensor& mu) const;

  /// One explicit RK step with a per-row step size dt [R]; rows with dt = 0
  /// are returned unchanged.
  Tensor rk_step(const Tensor& eps, const Tensor& mu, const Tensor& dt) const;
  Tensor rk_step(const Tensor& eps, const Tensor& mu, T dt) const;

  /// States eps_0 .. eps_F, one rk_step per interval.
  std::vector<Tensor> rollout(const Tensor& eps0, const Tensor& mu, std::span<const T> dts) const;

  /// Encodes s0 [B, m, spatial...] once, rolls out and decodes every state:
  /// [B, F+1, m, spatial...].
  Tensor predict_fields(const Tensor& s0, const Tensor& mu, std::span<const T> dts) const;

  std::vector<NamedTensor<T>>& parameters() { return params_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Throws DivergenceError if any row norm exceeds the configured bound.
  void check_divergence(const Tensor& eps) const;

 private:
  struct ConvLayer {
    Tensor weight, bias;
    std::size_t stride = 1, padding = 0, output_padding = 0;
    bool gelu = true;
  };
  struct Dense {
    Tensor weight, bias;
  };
  struct Condition {
    Tensor mu, alpha, tau;
  };

  Tensor add_param(const std::string& name, ad::Shape shape, std::size_t fan_in, bool zero,
                   std::uint64_t seed, T fill = T{0});
  Condition condition(const Tensor& mu) const;
  Tensor rhs(const Tensor& eps, const Condition& cond) const;
  Tensor step(const Tensor& eps, const Condition& cond, const Tensor& dt) const;

  ModelConfig config_;
  ButcherTableau tableau_;
  std::vector<NamedTensor<T>> params_;
  std::vector<ConvLayer> encoder_;
  Dense encoder_out_;
  Dense decoder_in_;
  std::vector<ConvLayer> decoder_;
  std::vector<Dense> mlp_;
  Dense film_alpha_, film_tau_;
};

extern template class SurrogateModel<float>;
extern template class SurrogateModel<double>;

/// Checkpoint holding every parameter; meta["model"] carries the config.
template <class T>
ad::Checkpoint make_checkpoint(const SurrogateModel<T>& model,
                               nlohmann::json meta = nlohmann::json::object());

/// Overwrites the model parameters from a checkpoint (names and shapes must match).
template <class T>
void load_parameters(SurrogateModel<T>& model, const ad::Checkpoint& ckpt);

/// Rebuilds a model from the config stored in the checkpoint.
template <class T>
SurrogateModel<T> model_from_checkpoint(const ad::Checkpoint& ckpt);

}  // namespace lnpde::model
