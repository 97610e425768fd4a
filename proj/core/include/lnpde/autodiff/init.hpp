#pragma once

#include <cstdint>

#include "lnpde/autodiff/tensor.hpp"

namespace lnpde::ad {

/// Half-width of the Kaiming-uniform interval: gain * sqrt(6 / fan_in).
double kaiming_uniform_bound(std::size_t fan_in, double gain = 1.0);

/// Parameter leaf with i.i.d. samples from U[-bound, bound]. Deterministic in
/// `seed`; throws std::invalid_argument for fan_in == 0.
template <class T>
Tensor<T> kaiming_uniform_init(Shape shape, std::size_t fan_in, std::uint64_t seed,
                               double gain = 1.0);

}  // namespace lnpde::ad
