#include "lnpde/training/adam.hpp"

#include <cmath>
#include <string>

namespace lnpde::train {

template <class T>
Adam<T>::Adam(std::vector<model::NamedTensor<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), T{0});
    v_.emplace_back(p.tensor.size(), T{0});
  }
}

template <class T>
void Adam<T>::step(double lr) {
  for (const auto& p : params_) {
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw ad::NonFiniteError("non-finite gradient in parameter " + p.name);
    }
  }
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].tensor;
    const auto g = p.grad();
    if (g.empty()) continue;
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

template <class T>
void Adam<T>::save_state(ad::Checkpoint& ckpt) const {
  ckpt.meta["adam_steps"] = steps_;
  const auto dtype = std::is_same_v<T, float> ? ad::DType::f32 : ad::DType::f64;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& shape = params_[k].tensor.shape();
    ckpt.blobs.push_back({"adam.m." + params_[k].name, shape, dtype, {m_[k].begin(), m_[k].end()}});
    ckpt.blobs.push_back({"adam.v." + params_[k].name, shape, dtype, {v_[k].begin(), v_[k].end()}});
  }
}

template <class T>
void Adam<T>::load_state(const ad::Checkpoint& ckpt) {
  steps_ = ckpt.meta.at("adam_steps").get<std::size_t>();
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& m = ckpt.at("adam.m." + params_[k].name);
    const auto& v = ckpt.at("adam.v." + params_[k].name);
    if (m.values.size() != m_[k].size() || v.values.size() != v_[k].size()) {
      throw ad::ShapeError("optimizer state does not match parameter " + params_[k].name);
    }
    for (std::size_t i = 0; i < m_[k].size(); ++i) {
      m_[k][i] = static_cast<T>(m.values[i]);
      v_[k][i] = static_cast<T>(v.values[i]);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace lnpde::train
