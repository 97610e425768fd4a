#include "lnpde/model/surrogate.hpp"

#include <cmath>
#include <iostream>
#include <random>

#include "lnpde/autodiff/init.hpp"
#include "lnpde/autodiff/ops.hpp"

namespace lnpde::model {

namespace {

std::size_t kernel_taps(std::size_t k, std::size_t dims) { return dims == 1 ? k : k * k; }

}  // namespace

template <class T>
SurrogateModel<T>::SurrogateModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), tableau_(ButcherTableau::of_stage(config_.rk_stage)) {
  config_.validate();
  const auto& c = config_;
  const std::size_t dims = c.spatial_dims();
  if (c.latent * 4 >= c.field_size()) {
    std::clog << "warning: latent size " << c.latent << " is not much smaller than the field size "
              << c.field_size() << "\n";
  }
  std::mt19937_64 seeds(seed);
  auto kernel_shape = [dims](std::size_t a, std::size_t b, std::size_t k) {
    return dims == 1 ? ad::Shape{a, b, k} : ad::Shape{a, b, k, k};
  };

  std::size_t in = c.channels;
  for (std::size_t l = 0; l < c.fe.size(); ++l) {
    ConvLayer layer;
    const std::string name = "encoder.conv" + std::to_string(l);
    layer.weight = add_param(name + ".weight", kernel_shape(c.fe[l], in, c.ke[l]),
                             in * kernel_taps(c.ke[l], dims), false, seeds());
    if (c.encoder_bias) layer.bias = add_param(name + ".bias", {c.fe[l]}, 1, true, seeds());
    layer.stride = l == 0 ? 1 : 2;
    layer.padding = c.ke[l] / 2;
    encoder_.push_back(layer);
    in = c.fe[l];
  }
  std::size_t coarse = 1;
  for (std::size_t a = 0; a < dims; ++a) coarse *= c.coarse_extent(a);
  const std::size_t flat = c.fe.back() * coarse;
  encoder_out_.weight = add_param("encoder.linear.weight", {c.latent, flat}, flat, false, seeds());
  if (c.encoder_bias) {
    encoder_out_.bias = add_param("encoder.linear.bias", {c.latent}, 1, true, seeds());
  }

  const std::size_t z = c.z;
  std::size_t width = c.latent + (c.conditioning == Conditioning::concat ? z : 0);
  if (c.conditioning == Conditioning::film) {
    film_alpha_.weight = add_param("film.alpha.weight", {c.latent, z}, z, false, seeds());
    // Identity modulation at initialisation: alpha(mu) starts near 1.
    film_alpha_.bias = add_param("film.alpha.bias", {c.latent}, 1, true, seeds(), T{1});
    film_tau_.weight = add_param("film.tau.weight", {c.latent, z}, z, false, seeds());
    film_tau_.bias = add_param("film.tau.bias", {c.latent}, 1, true, seeds());
  }
  std::vector<std::size_t> widths = c.hidden;
  widths.push_back(c.latent);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string name = "f.linear" + std::to_string(l);
    Dense d;
    d.weight = add_param(name + ".weight", {widths[l], width}, width, false, seeds());
    d.bias = add_param(name + ".bias", {widths[l]}, 1, true, seeds());
    mlp_.push_back(d);
    width = widths[l];
  }

  const std::size_t d0 = c.fd[0] * coarse;
  decoder_in_.weight = add_param("decoder.linear.weight", {d0, c.latent}, c.latent, false, seeds());
  decoder_in_.bias = add_param("decoder.linear.bias", {d0}, 1, true, seeds());
  const std::size_t D = c.doublings();
  auto add_tconv = [&](std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
                       bool gelu) {
    ConvLayer layer;
    const std::string name = "decoder.tconv" + std::to_string(decoder_.size());
    std::size_t fan_in = cin * kernel_taps(k, dims);
    for (std::size_t a = 0; a < dims; ++a) fan_in /= stride;
    layer.weight = add_param(name + ".weight", kernel_shape(cin, cout, k), std::max<std::size_t>(fan_in, 1),
                             false, seeds());
    layer.bias = add_param(name + ".bias", {cout}, 1, true, seeds());
    layer.stride = stride;
    if (stride == 2) {
      layer.padding = k % 2 == 0 ? (k - 2) / 2 : (k - 1) / 2;
      layer.output_padding = k % 2;
    } else {
      layer.padding = (k - 1) / 2;
    }
    layer.gelu = gelu;
    decoder_.push_back(layer);
  };
  for (std::size_t j = 1; j <= D; ++j) add_tconv(c.fd[j - 1], c.fd[j], c.kd[j - 1], 2, true);
  for (std::size_t e = D + 1; e < c.fd.size(); ++e) add_tconv(c.fd[e - 1], c.fd[e], c.kd[e - 1], 1, true);
  add_tconv(c.fd.back(), c.channels, c.kd.back(), 1, false);
}

template <class T>
ad::Tensor<T> SurrogateModel<T>::add_param(const std::string& name, ad::Shape shape,
                                           std::size_t fan_in, bool zero, std::uint64_t seed,
                                           T fill) {
  Tensor t = zero ? Tensor::parameter(shape, std::vector<T>(ad::numel(shape), fill))
                  : ad::kaiming_uniform_init<T>(shape, fan_in, seed);
  params_.push_back({name, t});
  return t;
}

template <class T>
ad::Tensor<T> SurrogateModel<T>::encode(const Tensor& fields) const {
  const auto& c = config_;
  if (fields.rank() != c.spatial_dims() + 2 || fields.dim(1) != c.channels) {
    throw ad::ShapeError("encode expects [B, m, spatial...], got " + ad::to_string(fields.shape()));
  }
  for (std::size_t a = 0; a < c.spatial_dims(); ++a) {
    if (fields.dim(2 + a) != c.extent[a]) {
      throw ad::ShapeError("field extent " + ad::to_string(fields.shape()) +
                           " does not match the encoder");
    }
  }
  Tensor x = fields;
  for (const auto& layer : encoder_) {
    const ad::ConvAttrs attrs{layer.stride, layer.padding, 0};
    x = c.spatial_dims() == 1 ? ad::conv1d(x, layer.weight, layer.bias, attrs)
                              : ad::conv2d(x, layer.weight, layer.bias, attrs);
    x = ad::gelu(x);
  }
  x = ad::linear(ad::flatten(x), encoder_out_.weight, encoder_out_.bias);
  if (c.encoder_final_gelu) x = ad::gelu(x);
  return x;
}

template <class T>
ad::Tensor<T> SurrogateModel<T>::decode(const Tensor& latent) const {
  const auto& c = config_;
  if (latent.rank() != 2 || latent.dim(1) != c.latent) {
    throw ad::ShapeError("decode expects [B, " + std::to_string(c.latent) + "], got " +
                         ad::to_string(latent.shape()));
  }
  Tensor x = ad::linear(latent, decoder_in_.weight, decoder_in_.bias);
  if (c.decoder_first_gelu) x = ad::gelu(x);
  ad::Shape shape{latent.dim(0), c.fd[0]};
  for (std::size_t a = 0; a < c.spatial_dims(); ++a) shape.push_back(c.coarse_extent(a));
  x = ad::reshape(x, shape);
  for (const auto& layer : decoder_) {
    const ad::ConvAttrs attrs{layer.stride, layer.padding, layer.output_padding};
    x = c.spatial_dims() == 1 ? ad::conv_transpose1d(x, layer.weight, layer.bias, attrs)
                              : ad::conv_transpose2d(x, layer.weight, layer.bias, attrs);
    if (layer.gelu) x = ad::gelu(x);
  }
  return x;
}

template <class T>
typename SurrogateModel<T>::Condition SurrogateModel<T>::condition(const Tensor& mu) const {
  Condition cond;
  if (config_.z == 0) return cond;
  if (!mu.defined() || mu.rank() != 2 || mu.dim(1) != config_.z) {
    throw ad::ShapeError("parameters must be [R, " + std::to_string(config_.z) + "]");
  }
  cond.mu = mu;
  if (config_.conditioning == Conditioning::film) {
    cond.alpha = ad::linear(mu, film_alpha_.weight, film_alpha_.bias);
    cond.tau = ad::linear(mu, film_tau_.weight, film_tau_.bias);
  }
  return cond;
}

template <class T>
ad::Tensor<T> SurrogateModel<T>::rhs(const Tensor& eps, const Condition& cond) const {
  if (eps.rank() != 2 || eps.dim(1) != config_.latent) {
    throw ad::ShapeError("latent batch must be [R, " + std::to_string(config_.latent) + "]");
  }
  Tensor x = eps;
  if (config_.z > 0) {
    if (cond.mu.dim(0) != eps.dim(0)) throw ad::ShapeError("parameter rows do not match latent rows");
    if (config_.conditioning == Conditioning::film) {
      x = ad::add(ad::mul(cond.alpha, eps), cond.tau);
    } else {
      const Tensor parts[] = {eps, cond.mu};
      x = ad::concat<T>(parts, 1);
    }
  }
  for (std::size_t l = 0; l < mlp_.size(); ++l) {
    x = ad::linear(x, mlp_[l].weight, mlp_[l].bias);
    if (l + 1 < mlp_.size()) x = ad::gelu(x);
  }
  return x;
}

template <class T>
ad::Tensor<T> SurrogateModel<T>::rhs(const Tensor& eps, const Tensor& mu) const {
  return rhs(eps, condition(mu));
}

template <class T>
ad::Tensor<T> SurrogateModel<T>::step(const Tensor& eps, const Condition& cond,
                                      const Tensor& dt) const {
  const auto& tb = tableau_;
  std::vector<Tensor> b;
  b.reserve(tb.a.size());
  for (std::size_t k = 0; k < tb.a.size(); ++k) {
    Tensor arg = eps;
    Tensor inc;
    for (std::size_t l = 0; l < tb.a[k].size(); ++l) {
      if (tb.a[k][l] == 0.0) continue;
      Tensor term = ad::scale(b[l], static_cast<T>(tb.a[k][l]));
      inc = inc.defined() ? ad::add(inc, term) : term;
    }
    if (inc.defined()) arg = ad::add(eps, ad::mul_rows(inc, dt));
    b.push_back(rhs(arg, cond));
  }
  Tensor sum;
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (tb.h[k] == 0.0) continue;
    Tensor term = ad::scale(b[k], static_cast<T>(tb.h[k]));
    sum = sum.defined() ? ad::add(sum, term) : term;
  }
  return ad::add(eps, ad::mul_rows(sum, dt));
}

template <class T>
ad::Tensor<T> SurrogateModel<T>::rk_step(const Tensor& eps, const Tensor& mu, const Tensor& dt) const {
  if (dt.rank() != 1 || dt.dim(0) != eps.dim(0)) throw ad::ShapeError("dt must be [R]");
  for (T v : dt.data()) {
    if (v < 0) throw std::invalid_argument("rk_step needs dt >= 0");
  }
  return step(eps, condition(mu), dt);
}

template <class T>
ad::Tensor<T> SurrogateModel<T>::rk_step(const Tensor& eps, const Tensor& mu, T dt) const {
  return rk_step(eps, mu, Tensor::filled({eps.dim(0)}, dt));
}

template <class T>
std::vector<ad::Tensor<T>> SurrogateModel<T>::rollout(const Tensor& eps0, const Tensor& mu,
                                                      std::span<const T> dts) const {
  const auto cond = condition(mu);
  std::vector<Tensor> states{eps0};
  states.reserve(dts.size() + 1);
  for (T dt : dts) {
    if (dt < 0) throw std::invalid_argument("rollout needs dt >= 0");
    states.push_back(step(states.back(), cond, Tensor::filled({eps0.dim(0)}, dt)));
    check_divergence(states.back());
  }
  return states;
}

template <class T>
ad::Tensor<T> SurrogateModel<T>::predict_fields(const Tensor& s0, const Tensor& mu,
                                                std::span<const T> dts) const {
  const auto states = rollout(encode(s0), mu, dts);
  const std::size_t B = s0.dim(0), frames = states.size();
  const Tensor all = frames == 1 ? states[0] : ad::concat<T>(states, 0);
  Tensor fields = decode(all);  // time-major rows: i * B + b
  std::vector<std::size_t> order(B * frames);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < frames; ++i) order[b * frames + i] = i * B + b;
  }
  fields = ad::take_rows<T>(fields, order);
  ad::Shape shape{B, frames};
  for (std::size_t a = 1; a < fields.rank(); ++a) shape.push_back(fields.dim(a));
  return ad::reshape(fields, shape);
}

template <class T>
std::size_t SurrogateModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <class T>
void SurrogateModel<T>::check_divergence(const Tensor& eps) const {
  const std::size_t cols = eps.rank() >= 2 ? eps.size() / eps.dim(0) : eps.size();
  const auto v = eps.data();
  for (std::size_t r = 0; r * cols < v.size(); ++r) {
    double norm = 0;
    for (std::size_t k = 0; k < cols; ++k) norm += static_cast<double>(v[r * cols + k]) * v[r * cols + k];
    norm = std::sqrt(norm);
    if (!(norm <= config_.divergence_bound)) {
      throw DivergenceError("latent rollout diverged: |eps| = " + std::to_string(norm) +
                            " exceeds " + std::to_string(config_.divergence_bound));
    }
  }
}

template <class T>
ad::Checkpoint make_checkpoint(const SurrogateModel<T>& model, nlohmann::json meta) {
  ad::Checkpoint ckpt;
  ckpt.meta = std::move(meta);
  ckpt.meta["model"] = to_json(model.config());
  for (const auto& p : model.parameters()) ckpt.blobs.push_back(ad::to_blob(p.name, p.tensor));
  return ckpt;
}

template <class T>
void load_parameters(SurrogateModel<T>& model, const ad::Checkpoint& ckpt) {
  for (auto& p : model.parameters()) ad::assign(ckpt.at(p.name), p.tensor);
}

template <class T>
SurrogateModel<T> model_from_checkpoint(const ad::Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model")) throw std::runtime_error("checkpoint has no model config");
  SurrogateModel<T> model(model_config_from_json(ckpt.meta.at("model")), 0);
  load_parameters(model, ckpt);
  return model;
}

template class SurrogateModel<float>;
template class SurrogateModel<double>;
template ad::Checkpoint make_checkpoint(const SurrogateModel<float>&, nlohmann::json);
template ad::Checkpoint make_checkpoint(const SurrogateModel<double>&, nlohmann::json);
template void load_parameters(SurrogateModel<float>&, const ad::Checkpoint&);
template void load_parameters(SurrogateModel<double>&, const ad::Checkpoint&);
template SurrogateModel<float> model_from_checkpoint(const ad::Checkpoint&);
template SurrogateModel<double> model_from_checkpoint(const ad::Checkpoint&);

}  // namespace lnpde::model
