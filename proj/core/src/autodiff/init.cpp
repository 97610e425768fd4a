#include "lnpde/autodiff/init.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace lnpde::ad {

double kaiming_uniform_bound(std::size_t fan_in, double gain) {
  if (fan_in == 0) throw std::invalid_argument("kaiming_uniform_init: fan_in must be positive");
  return gain * std::sqrt(6.0 / static_cast<double>(fan_in));
}

template <class T>
Tensor<T> kaiming_uniform_init(Shape shape, std::size_t fan_in, std::uint64_t seed, double gain) {
  const double bound = kaiming_uniform_bound(fan_in, gain);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::parameter(std::move(shape), std::move(values));
}

template Tensor<float> kaiming_uniform_init<float>(Shape, std::size_t, std::uint64_t, double);
template Tensor<double> kaiming_uniform_init<double>(Shape, std::size_t, std::uint64_t, double);

}  // namespace lnpde::ad
