#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "lnpde/autodiff/tensor.hpp"

namespace lnpde::ad {

// Elementwise ops require identical shapes; there is no implicit broadcasting.
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& x, T factor);

/// Exact Gaussian-CDF form: x * Phi(x).
template <class T> Tensor<T> gelu(const Tensor<T>& x);

template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// Collapses every axis after the first: [B, ...] -> [B, prod(...)].
template <class T> Tensor<T> flatten(const Tensor<T>& x);
template <class T> Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);

/// [n,k] x [k,m] -> [n,m]
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x [B,in], weight [out,in], bias [out] (may be undefined) -> [B,out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

struct ConvAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
  /// Transposed convolutions only: extra trailing extent on each spatial axis.
  std::size_t output_padding = 0;
};

/// x [B,Cin,L], weight [Cout,Cin,K], bias [Cout] or undefined.
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvAttrs attrs);
/// x [B,Cin,H,W], weight [Cout,Cin,K,K] (square kernels).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvAttrs attrs);
/// x [B,Cin,L], weight [Cin,Cout,K]; out extent (L-1)*s - 2p + K + output_padding.
template <class T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvAttrs attrs);
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvAttrs attrs);

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, ConvAttrs attrs);
std::size_t conv_transpose_output_extent(std::size_t in, std::size_t kernel, ConvAttrs attrs);

// Reductions to a scalar.
template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);
template <class T> Tensor<T> l1_norm(const Tensor<T>& x);
template <class T> Tensor<T> l2_norm(const Tensor<T>& x);

/// Per-row norms over every axis but the first: [R,...] -> [R].
template <class T> Tensor<T> row_l1_norm(const Tensor<T>& x);
template <class T> Tensor<T> row_l2_norm(const Tensor<T>& x);

/// Gathers rows (first-axis slices); the backward pass scatter-adds.
template <class T>
Tensor<T> take_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
/// Scales row r of x [R,...] by s[r], s of shape [R].
template <class T> Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& s);

/// Identity forward; the result is a fresh leaf that never receives gradient.
template <class T> Tensor<T> stop_gradient(const Tensor<T>& x);

// Generic dispatch over the registered op set, used by the gradient-check
// harness and by callers that build graphs from data.
enum class OpKind {
  add,
  sub,
  mul,
  div,
  scale,
  gelu,
  reshape,
  flatten,
  concat,
  matmul,
  linear,
  conv1d,
  conv2d,
  conv_transpose1d,
  conv_transpose2d,
  sum,
  mean,
  l1_norm,
  l2_norm,
  row_l1_norm,
  row_l2_norm,
  take_rows,
  mul_rows,
  stop_gradient,
};

struct OpAttrs {
  ConvAttrs conv{};
  std::size_t axis = 0;
  double factor = 1.0;
  Shape shape{};
  std::vector<std::size_t> rows{};
};

struct OpInfo {
  OpKind kind;
  std::string_view name;
  /// -1 for variadic.
  int arity;
};

std::span<const OpInfo> registered_ops();
std::string_view op_name(OpKind kind);

template <class T>
Tensor<T> forward_op(OpKind kind, std::span<const Tensor<T>> inputs, const OpAttrs& attrs = {});

}  // namespace lnpde::ad
