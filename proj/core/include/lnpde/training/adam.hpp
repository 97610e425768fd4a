#pragma once

#include <cstddef>
#include <vector>

#include "lnpde/autodiff/checkpoint.hpp"
#include "lnpde/model/surrogate.hpp"

namespace lnpde::train {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of named parameters.
template <class T>
class Adam {
 public:
  explicit Adam(std::vector<model::NamedTensor<T>> params, AdamOptions options = {});

  /// Applies one update from the current gradients. Throws ad::NonFiniteError
  /// naming the parameter if any gradient is not finite; nothing is changed
  /// in that case.
  void step(double lr);

  std::size_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }

  /// Moments as "adam.m.<name>" / "adam.v.<name>" blobs and the step count
  /// in meta["adam_steps"].
  void save_state(ad::Checkpoint& ckpt) const;
  void load_state(const ad::Checkpoint& ckpt);

 private:
  std::vector<model::NamedTensor<T>> params_;
  AdamOptions options_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace lnpde::train
