#include "lnpde/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace lnpde::ad {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

// Eigen picks its vectorised paths from the runtime address, so products on
// mapped std::vector storage would round differently between allocations.
// Operands are copied into aligned matrices to keep results reproducible.
template <class T>
void gemm(const T* a, std::size_t ar, std::size_t ac, bool ta, const T* b, std::size_t br,
          std::size_t bc, bool tb, T* c, bool accumulate) {
  const RowMat<T> am = ConstMapMat<T>(a, ar, ac);
  const RowMat<T> bm = ConstMapMat<T>(b, br, bc);
  RowMat<T> cm;
  if (ta && tb) cm.noalias() = am.transpose() * bm.transpose();
  else if (ta) cm.noalias() = am.transpose() * bm;
  else if (tb) cm.noalias() = am * bm.transpose();
  else cm.noalias() = am * bm;
  const std::size_t n = static_cast<std::size_t>(cm.size());
  const T* src = cm.data();
  if (accumulate) {
    for (std::size_t i = 0; i < n; ++i) c[i] += src[i];
  } else {
    std::copy(src, src + n, c);
  }
}

template <class T>
T* grad_of(Node<T>& n) {
  if (!n.requires_grad) return nullptr;
  n.ensure_grad();
  return n.grad.data();
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

template <class T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined input");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                      " vs " + to_string(b.shape()));
}

template <class T>
std::vector<NodePtr<T>> inputs_of(std::initializer_list<const Tensor<T>*> ts) {
  std::vector<NodePtr<T>> out;
  for (const auto* t : ts) {
    if (t->defined()) out.push_back(t->node());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution geometry shared by the 1D and 2D variants; 1D runs with H = 1.

struct ConvGeom {
  std::size_t batch = 0;
  std::size_t image_channels = 0;  // channels of the "image" side of im2col
  std::size_t ih = 1, iw = 1;      // image extents
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  std::size_t ph = 0, pw = 0;
  std::size_t oh = 1, ow = 1;  // sliding-window positions

  std::size_t col_rows() const { return image_channels * kh * kw; }
  std::size_t col_cols() const { return batch * oh * ow; }
};

// col[(c*kh+y)*kw+x, (b*oh+i)*ow+j] = image[b,c,i*sh-ph+y, j*sw-pw+x]
template <class T>
void im2col(const ConvGeom& g, const T* image, T* col) {
  const std::size_t ncols = g.col_cols();
  for (std::size_t c = 0; c < g.image_channels; ++c) {
    for (std::size_t y = 0; y < g.kh; ++y) {
      for (std::size_t x = 0; x < g.kw; ++x) {
        T* row = col + ((c * g.kh + y) * g.kw + x) * ncols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* plane = image + (b * g.image_channels + c) * g.ih * g.iw;
          for (std::size_t i = 0; i < g.oh; ++i) {
            const long iy = static_cast<long>(i * g.sh + y) - static_cast<long>(g.ph);
            T* dst = row + (b * g.oh + i) * g.ow;
            if (iy < 0 || iy >= static_cast<long>(g.ih)) {
              std::fill(dst, dst + g.ow, T{});
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * g.iw;
            for (std::size_t j = 0; j < g.ow; ++j) {
              const long ix = static_cast<long>(j * g.sw + x) - static_cast<long>(g.pw);
              dst[j] = (ix < 0 || ix >= static_cast<long>(g.iw)) ? T{} : src[ix];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates into image.
template <class T>
void col2im(const ConvGeom& g, const T* col, T* image) {
  const std::size_t ncols = g.col_cols();
  for (std::size_t c = 0; c < g.image_channels; ++c) {
    for (std::size_t y = 0; y < g.kh; ++y) {
      for (std::size_t x = 0; x < g.kw; ++x) {
        const T* row = col + ((c * g.kh + y) * g.kw + x) * ncols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          T* plane = image + (b * g.image_channels + c) * g.ih * g.iw;
          for (std::size_t i = 0; i < g.oh; ++i) {
            const long iy = static_cast<long>(i * g.sh + y) - static_cast<long>(g.ph);
            if (iy < 0 || iy >= static_cast<long>(g.ih)) continue;
            const T* src = row + (b * g.oh + i) * g.ow;
            T* dst = plane + static_cast<std::size_t>(iy) * g.iw;
            for (std::size_t j = 0; j < g.ow; ++j) {
              const long ix = static_cast<long>(j * g.sw + x) - static_cast<long>(g.pw);
              if (ix >= 0 && ix < static_cast<long>(g.iw)) dst[ix] += src[j];
            }
          }
        }
      }
    }
  }
}

// [B,C,S] <-> [C,B*S]
template <class T>
void to_channel_major(const T* x, std::size_t batch, std::size_t channels, std::size_t spatial,
                      T* out) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(x + (b * channels + c) * spatial, spatial, out + (c * batch + b) * spatial);
}

template <class T>
void from_channel_major(const T* x, std::size_t batch, std::size_t channels, std::size_t spatial,
                        T* out) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(x + (c * batch + b) * spatial, spatial, out + (b * channels + c) * spatial);
}

struct ConvShapes {
  std::size_t batch, cin, cout;
  std::array<std::size_t, 2> in, out, kernel;
};

template <class T>
ConvShapes conv_shapes(const char* op, const Tensor<T>& x, const Tensor<T>& w,
                       const Tensor<T>& bias, ConvAttrs attrs, std::size_t spatial_dims,
                       bool transposed) {
  require(x.defined() && w.defined(), std::string(op) + ": undefined input");
  require(x.rank() == 2 + spatial_dims, std::string(op) + ": input must have rank " +
                                            std::to_string(2 + spatial_dims) + ", got " +
                                            to_string(x.shape()));
  require(w.rank() == 2 + spatial_dims, std::string(op) + ": weight must have rank " +
                                            std::to_string(2 + spatial_dims));
  require(attrs.stride >= 1, std::string(op) + ": stride must be >= 1");
  ConvShapes s{};
  s.batch = x.dim(0);
  s.cin = x.dim(1);
  s.kernel = {1, 1};
  s.in = {1, 1};
  if (spatial_dims == 2) {
    require(w.dim(2) == w.dim(3), std::string(op) + ": only square kernels are supported");
    s.kernel = {w.dim(2), w.dim(3)};
    s.in = {x.dim(2), x.dim(3)};
  } else {
    s.kernel = {1, w.dim(2)};
    s.in = {1, x.dim(2)};
  }
  if (transposed) {
    require(w.dim(0) == s.cin, std::string(op) + ": weight input channels " +
                                   std::to_string(w.dim(0)) + " != " + std::to_string(s.cin));
    s.cout = w.dim(1);
    require(attrs.output_padding < attrs.stride,
            std::string(op) + ": output_padding must be smaller than stride");
  } else {
    require(w.dim(1) == s.cin, std::string(op) + ": weight input channels " +
                                   std::to_string(w.dim(1)) + " != " + std::to_string(s.cin));
    s.cout = w.dim(0);
    require(attrs.output_padding == 0, std::string(op) + ": output_padding is only valid for "
                                                         "transposed convolutions");
  }
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == s.cout,
            std::string(op) + ": bias must have shape [" + std::to_string(s.cout) + "]");
  }
  for (std::size_t a = 0; a < 2; ++a) {
    if (spatial_dims == 1 && a == 0) {
      s.out[a] = 1;
      continue;
    }
    s.out[a] = transposed ? conv_transpose_output_extent(s.in[a], s.kernel[a], attrs)
                          : conv_output_extent(s.in[a], s.kernel[a], attrs);
  }
  return s;
}

ConvGeom geometry(const ConvShapes& s, std::size_t spatial_dims, ConvAttrs attrs,
                  bool transposed) {
  ConvGeom g;
  g.batch = s.batch;
  g.kh = s.kernel[0];
  g.kw = s.kernel[1];
  g.sw = attrs.stride;
  g.pw = attrs.padding;
  g.sh = spatial_dims == 2 ? attrs.stride : 1;
  g.ph = spatial_dims == 2 ? attrs.padding : 0;
  if (transposed) {
    // The image side is the (larger) output; window positions are the input.
    g.image_channels = s.cout;
    g.ih = s.out[0];
    g.iw = s.out[1];
    g.oh = s.in[0];
    g.ow = s.in[1];
  } else {
    g.image_channels = s.cin;
    g.ih = s.in[0];
    g.iw = s.in[1];
    g.oh = s.out[0];
    g.ow = s.out[1];
  }
  return g;
}

Shape output_shape(const ConvShapes& s, std::size_t spatial_dims) {
  if (spatial_dims == 2) return {s.batch, s.cout, s.out[0], s.out[1]};
  return {s.batch, s.cout, s.out[1]};
}

template <class T>
Tensor<T> conv_forward(const char* op, const Tensor<T>& x, const Tensor<T>& w,
                       const Tensor<T>& bias, ConvAttrs attrs, std::size_t spatial_dims) {
  const ConvShapes s = conv_shapes(op, x, w, bias, attrs, spatial_dims, false);
  const ConvGeom g = geometry(s, spatial_dims, attrs, false);
  const std::size_t out_spatial = s.out[0] * s.out[1];
  const std::size_t ncols = g.col_cols();

  auto col = std::make_shared<std::vector<T>>(g.col_rows() * ncols);
  im2col(g, x.data().data(), col->data());

  std::vector<T> out_cm(s.cout * ncols);
  gemm<T>(w.data().data(), s.cout, g.col_rows(), false, col->data(), g.col_rows(), ncols, false,
          out_cm.data(), false);
  if (bias.defined()) {
    for (std::size_t c = 0; c < s.cout; ++c) {
      T* row = out_cm.data() + c * ncols;
      const T bc = bias.data()[c];
      for (std::size_t k = 0; k < ncols; ++k) row[k] += bc;
    }
  }
  std::vector<T> out(s.batch * s.cout * out_spatial);
  from_channel_major(out_cm.data(), s.batch, s.cout, out_spatial, out.data());

  const bool has_bias = bias.defined();
  auto backward = [s, g, col, out_spatial, has_bias](Node<T>& self) {
    const std::size_t ncols = g.col_cols();
    std::vector<T> dout_cm(s.cout * ncols);
    to_channel_major(self.grad.data(), s.batch, s.cout, out_spatial, dout_cm.data());
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    if (T* dw = grad_of(wn)) {
      gemm<T>(dout_cm.data(), s.cout, ncols, false, col->data(), g.col_rows(), ncols, true, dw,
              true);
    }
    if (has_bias) {
      if (T* db = grad_of(*self.inputs[2])) {
        for (std::size_t c = 0; c < s.cout; ++c) {
          const T* row = dout_cm.data() + c * ncols;
          T acc{};
          for (std::size_t k = 0; k < ncols; ++k) acc += row[k];
          db[c] += acc;
        }
      }
    }
    if (T* dx = grad_of(xn)) {
      std::vector<T> dcol(g.col_rows() * ncols);
      gemm<T>(wn.value.data(), s.cout, g.col_rows(), true, dout_cm.data(), s.cout, ncols, false,
              dcol.data(), false);
      col2im(g, dcol.data(), dx);
    }
  };
  return detail::make_result<T>(op, output_shape(s, spatial_dims), std::move(out),
                                inputs_of<T>({&x, &w, &bias}), backward);
}

template <class T>
Tensor<T> conv_transpose_forward(const char* op, const Tensor<T>& x, const Tensor<T>& w,
                                 const Tensor<T>& bias, ConvAttrs attrs,
                                 std::size_t spatial_dims) {
  const ConvShapes s = conv_shapes(op, x, w, bias, attrs, spatial_dims, true);
  const ConvGeom g = geometry(s, spatial_dims, attrs, true);
  const std::size_t in_spatial = s.in[0] * s.in[1];
  const std::size_t out_spatial = s.out[0] * s.out[1];
  const std::size_t ncols = g.col_cols();  // batch * in_spatial
  const std::size_t krows = g.col_rows();  // cout * k * k

  auto x_cm = std::make_shared<std::vector<T>>(s.cin * ncols);
  to_channel_major(x.data().data(), s.batch, s.cin, in_spatial, x_cm->data());

  std::vector<T> col(krows * ncols);
  gemm<T>(w.data().data(), s.cin, krows, true, x_cm->data(), s.cin, ncols, false, col.data(),
          false);
  std::vector<T> out(s.batch * s.cout * out_spatial, T{});
  col2im(g, col.data(), out.data());
  if (bias.defined()) {
    for (std::size_t b = 0; b < s.batch; ++b)
      for (std::size_t c = 0; c < s.cout; ++c) {
        T* plane = out.data() + (b * s.cout + c) * out_spatial;
        const T bc = bias.data()[c];
        for (std::size_t k = 0; k < out_spatial; ++k) plane[k] += bc;
      }
  }

  const bool has_bias = bias.defined();
  auto backward = [s, g, x_cm, out_spatial, in_spatial, has_bias](Node<T>& self) {
    const std::size_t ncols = g.col_cols();
    const std::size_t krows = g.col_rows();
    std::vector<T> dcol(krows * ncols);
    im2col(g, self.grad.data(), dcol.data());
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    if (T* dw = grad_of(wn)) {
      gemm<T>(x_cm->data(), s.cin, ncols, false, dcol.data(), krows, ncols, true, dw, true);
    }
    if (has_bias) {
      if (T* db = grad_of(*self.inputs[2])) {
        for (std::size_t b = 0; b < s.batch; ++b)
          for (std::size_t c = 0; c < s.cout; ++c) {
            const T* plane = self.grad.data() + (b * s.cout + c) * out_spatial;
            T acc{};
            for (std::size_t k = 0; k < out_spatial; ++k) acc += plane[k];
            db[c] += acc;
          }
      }
    }
    if (T* dx = grad_of(xn)) {
      std::vector<T> dx_cm(s.cin * ncols);
      gemm<T>(wn.value.data(), s.cin, krows, false, dcol.data(), krows, ncols, false,
              dx_cm.data(), false);
      std::vector<T> dx_b(dx_cm.size());
      from_channel_major(dx_cm.data(), s.batch, s.cin, in_spatial, dx_b.data());
      for (std::size_t k = 0; k < dx_b.size(); ++k) dx[k] += dx_b[k];
    }
  };
  return detail::make_result<T>(op, output_shape(s, spatial_dims), std::move(out),
                                inputs_of<T>({&x, &w, &bias}), backward);
}

template <class T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_slope(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, ConvAttrs attrs) {
  if (in + 2 * attrs.padding < kernel) {
    throw ShapeError("convolution kernel " + std::to_string(kernel) +
                     " larger than padded input " + std::to_string(in + 2 * attrs.padding));
  }
  return (in + 2 * attrs.padding - kernel) / attrs.stride + 1;
}

std::size_t conv_transpose_output_extent(std::size_t in, std::size_t kernel, ConvAttrs attrs) {
  const long out = static_cast<long>((in - 1) * attrs.stride) - 2 * static_cast<long>(attrs.padding) +
                   static_cast<long>(kernel + attrs.output_padding);
  if (in == 0 || out <= 0) throw ShapeError("transposed convolution produces empty output");
  return static_cast<std::size_t>(out);
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), inputs_of<T>({&a, &b}),
                                [](Node<T>& self) {
                                  for (auto& in : self.inputs) {
                                    if (T* g = grad_of(*in))
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                        g[i] += self.grad[i];
                                  }
                                });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), inputs_of<T>({&a, &b}),
                                [](Node<T>& self) {
                                  if (T* g = grad_of(*self.inputs[0]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i];
                                  if (T* g = grad_of(*self.inputs[1]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] -= self.grad[i];
                                });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), inputs_of<T>({&a, &b}),
                                [](Node<T>& self) {
                                  Node<T>& an = *self.inputs[0];
                                  Node<T>& bn = *self.inputs[1];
                                  if (T* g = grad_of(an))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i] * bn.value[i];
                                  if (T* g = grad_of(bn))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i] * an.value[i];
                                });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("div", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return detail::make_result<T>(
      "div", a.shape(), std::move(out), inputs_of<T>({&a, &b}), [](Node<T>& self) {
        Node<T>& an = *self.inputs[0];
        Node<T>& bn = *self.inputs[1];
        if (T* g = grad_of(an))
          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / bn.value[i];
        if (T* g = grad_of(bn))
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i] -= self.grad[i] * an.value[i] / (bn.value[i] * bn.value[i]);
      });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return detail::make_result<T>("scale", x.shape(), std::move(out), inputs_of<T>({&x}),
                                [factor](Node<T>& self) {
                                  if (T* g = grad_of(*self.inputs[0]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i] * factor;
                                });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(x.data()[i]);
  return detail::make_result<T>("gelu", x.shape(), std::move(out), inputs_of<T>({&x}),
                                [](Node<T>& self) {
                                  Node<T>& xn = *self.inputs[0];
                                  if (T* g = grad_of(xn))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i] * gelu_slope(xn.value[i]);
                                });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: cannot view " + to_string(x.shape()) + " as " +
                                        to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), inputs_of<T>({&x}),
                                [](Node<T>& self) {
                                  if (T* g = grad_of(*self.inputs[0]))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      g[i] += self.grad[i];
                                });
}

template <class T>
Tensor<T> flatten(const Tensor<T>& x) {
  require(x.rank() >= 1, "flatten: scalar input");
  return reshape(x, Shape{x.dim(0), x.size() / std::max<std::size_t>(x.dim(0), 1)});
}

template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat: axis out of range");
  std::size_t outer = 1, inner = 1, total_axis = 0;
  for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
  for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    require(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t a = 0; a < first.size(); ++a) {
      require(a == axis || p.dim(a) == first[a],
              "concat: shape mismatch " + to_string(p.shape()) + " vs " + to_string(first));
    }
    extents.push_back(p.dim(axis));
    total_axis += p.dim(axis);
  }
  Shape shape = first;
  shape[axis] = total_axis;
  std::vector<T> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t block = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(parts[k].data().data() + o * block, block,
                  out.data() + o * total_axis * inner + offset);
    }
    offset += block;
  }
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) inputs.push_back(p.node());
  return detail::make_result<T>(
      "concat", std::move(shape), std::move(out), std::move(inputs),
      [outer, inner, total_axis, extents](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          const std::size_t block = extents[k] * inner;
          if (T* g = grad_of(*self.inputs[k])) {
            for (std::size_t o = 0; o < outer; ++o) {
              const T* src = self.grad.data() + o * total_axis * inner + off;
              T* dst = g + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          off += block;
        }
      });
}

// ---------------------------------------------------------------------------
// Dense

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.defined() && b.defined(), "matmul: undefined input");
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<T> out(n * m);
  gemm<T>(a.data().data(), n, k, false, b.data().data(), k, m, false, out.data(), false);
  return detail::make_result<T>(
      "matmul", Shape{n, m}, std::move(out), inputs_of<T>({&a, &b}), [n, k, m](Node<T>& self) {
        Node<T>& an = *self.inputs[0];
        Node<T>& bn = *self.inputs[1];
        const T* g = self.grad.data();
        if (T* ga = grad_of(an)) gemm<T>(g, n, m, false, bn.value.data(), k, m, true, ga, true);
        if (T* gb = grad_of(bn)) gemm<T>(an.value.data(), n, k, true, g, n, m, false, gb, true);
      });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.defined() && weight.defined(), "linear: undefined input");
  require(x.rank() == 2 && weight.rank() == 2 && x.dim(1) == weight.dim(1),
          "linear: incompatible shapes " + to_string(x.shape()) + " and weight " +
              to_string(weight.shape()));
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == out_dim, "linear: bias shape mismatch");
  }
  std::vector<T> out(rows * out_dim);
  gemm<T>(x.data().data(), rows, in, false, weight.data().data(), out_dim, in, true, out.data(),
          false);
  if (bias.defined()) {
    const T* bv = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < out_dim; ++o) out[r * out_dim + o] += bv[o];
  }
  const bool has_bias = bias.defined();
  return detail::make_result<T>(
      "linear", Shape{rows, out_dim}, std::move(out), inputs_of<T>({&x, &weight, &bias}),
      [rows, in, out_dim, has_bias](Node<T>& self) {
        Node<T>& xn = *self.inputs[0];
        Node<T>& wn = *self.inputs[1];
        const T* g = self.grad.data();
        if (T* gx = grad_of(xn))
          gemm<T>(g, rows, out_dim, false, wn.value.data(), out_dim, in, false, gx, true);
        if (T* gw = grad_of(wn))
          gemm<T>(g, rows, out_dim, true, xn.value.data(), rows, in, false, gw, true);
        if (has_bias) {
          if (T* gb = grad_of(*self.inputs[2])) {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
          }
        }
      });
}

template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvAttrs attrs) {
  return conv_forward("conv1d", x, weight, bias, attrs, 1);
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvAttrs attrs) {
  return conv_forward("conv2d", x, weight, bias, attrs, 2);
}

template <class T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvAttrs attrs) {
  return conv_transpose_forward("conv_transpose1d", x, weight, bias, attrs, 1);
}

template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvAttrs attrs) {
  return conv_transpose_forward("conv_transpose2d", x, weight, bias, attrs, 2);
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc{};
  for (T v : x.data()) acc += v;
  return detail::make_result<T>("sum", Shape{}, {acc}, inputs_of<T>({&x}), [](Node<T>& self) {
    if (T* g = grad_of(*self.inputs[0]))
      for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.size() > 0, "mean: empty tensor");
  T acc{};
  for (T v : x.data()) acc += v;
  const T inv = T(1) / static_cast<T>(x.size());
  return detail::make_result<T>("mean", Shape{}, {acc * inv}, inputs_of<T>({&x}),
                                [inv](Node<T>& self) {
                                  if (T* g = grad_of(*self.inputs[0]))
                                    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i)
                                      g[i] += self.grad[0] * inv;
                                });
}

template <class T>
Tensor<T> l1_norm(const Tensor<T>& x) {
  T acc{};
  for (T v : x.data()) acc += std::abs(v);
  return detail::make_result<T>("l1_norm", Shape{}, {acc}, inputs_of<T>({&x}), [](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (T* g = grad_of(xn))
      for (std::size_t i = 0; i < xn.value.size(); ++i) {
        const T v = xn.value[i];
        g[i] += self.grad[0] * static_cast<T>((v > T{}) - (v < T{}));
      }
  });
}

template <class T>
Tensor<T> l2_norm(const Tensor<T>& x) {
  T acc{};
  for (T v : x.data()) acc += v * v;
  const T norm = std::sqrt(acc);
  return detail::make_result<T>("l2_norm", Shape{}, {norm}, inputs_of<T>({&x}),
                                [norm](Node<T>& self) {
                                  Node<T>& xn = *self.inputs[0];
                                  if (norm == T{}) return;
                                  if (T* g = grad_of(xn))
                                    for (std::size_t i = 0; i < xn.value.size(); ++i)
                                      g[i] += self.grad[0] * xn.value[i] / norm;
                                });
}

template <class T>
Tensor<T> row_l1_norm(const Tensor<T>& x) {
  require(x.rank() >= 1 && x.dim(0) > 0, "row_l1_norm: needs at least one row");
  const std::size_t rows = x.dim(0), width = x.size() / rows;
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T acc{};
    for (std::size_t k = 0; k < width; ++k) acc += std::abs(x.data()[r * width + k]);
    out[r] = acc;
  }
  return detail::make_result<T>("row_l1_norm", Shape{rows}, std::move(out), inputs_of<T>({&x}),
                                [rows, width](Node<T>& self) {
                                  Node<T>& xn = *self.inputs[0];
                                  if (T* g = grad_of(xn))
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t k = 0; k < width; ++k) {
                                        const T v = xn.value[r * width + k];
                                        g[r * width + k] +=
                                            self.grad[r] * static_cast<T>((v > T{}) - (v < T{}));
                                      }
                                });
}

template <class T>
Tensor<T> row_l2_norm(const Tensor<T>& x) {
  require(x.rank() >= 1 && x.dim(0) > 0, "row_l2_norm: needs at least one row");
  const std::size_t rows = x.dim(0), width = x.size() / rows;
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T acc{};
    for (std::size_t k = 0; k < width; ++k) {
      const T v = x.data()[r * width + k];
      acc += v * v;
    }
    out[r] = std::sqrt(acc);
  }
  return detail::make_result<T>("row_l2_norm", Shape{rows}, std::move(out), inputs_of<T>({&x}),
                                [rows, width](Node<T>& self) {
                                  Node<T>& xn = *self.inputs[0];
                                  if (T* g = grad_of(xn))
                                    for (std::size_t r = 0; r < rows; ++r) {
                                      const T norm = self.value[r];
                                      if (norm == T{}) continue;
                                      const T f = self.grad[r] / norm;
                                      for (std::size_t k = 0; k < width; ++k)
                                        g[r * width + k] += f * xn.value[r * width + k];
                                    }
                                });
}

// ---------------------------------------------------------------------------
// Row-wise

template <class T>
Tensor<T> take_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  require(x.rank() >= 1, "take_rows: scalar input");
  const std::size_t n = x.dim(0), width = x.size() / std::max<std::size_t>(n, 1);
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<T> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < n, "take_rows: row index " + std::to_string(rows[r]) + " out of range");
    std::copy_n(x.data().data() + rows[r] * width, width, out.data() + r * width);
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return detail::make_result<T>("take_rows", std::move(shape), std::move(out), inputs_of<T>({&x}),
                                [index, width](Node<T>& self) {
                                  if (T* g = grad_of(*self.inputs[0]))
                                    for (std::size_t r = 0; r < index.size(); ++r) {
                                      T* dst = g + index[r] * width;
                                      const T* src = self.grad.data() + r * width;
                                      for (std::size_t k = 0; k < width; ++k) dst[k] += src[k];
                                    }
                                });
}

template <class T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& s) {
  require(x.defined() && s.defined(), "mul_rows: undefined input");
  require(x.rank() >= 1 && s.rank() == 1 && s.dim(0) == x.dim(0),
          "mul_rows: scale shape " + to_string(s.shape()) + " does not match rows of " +
              to_string(x.shape()));
  const std::size_t rows = x.dim(0), width = x.size() / std::max<std::size_t>(rows, 1);
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < width; ++k)
      out[r * width + k] = x.data()[r * width + k] * s.data()[r];
  return detail::make_result<T>("mul_rows", x.shape(), std::move(out), inputs_of<T>({&x, &s}),
                                [rows, width](Node<T>& self) {
                                  Node<T>& xn = *self.inputs[0];
                                  Node<T>& sn = *self.inputs[1];
                                  if (T* g = grad_of(xn))
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t k = 0; k < width; ++k)
                                        g[r * width + k] += self.grad[r * width + k] * sn.value[r];
                                  if (T* g = grad_of(sn))
                                    for (std::size_t r = 0; r < rows; ++r) {
                                      T acc{};
                                      for (std::size_t k = 0; k < width; ++k)
                                        acc += self.grad[r * width + k] * xn.value[r * width + k];
                                      g[r] += acc;
                                    }
                                });
}

template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  auto t = Tensor<T>::constant(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
  t.node()->op = "stop_gradient";
  return t;
}

// ---------------------------------------------------------------------------
// Registry

namespace {
constexpr std::array<OpInfo, 24> kOps{{
    {OpKind::add, "add", 2},
    {OpKind::sub, "sub", 2},
    {OpKind::mul, "mul", 2},
    {OpKind::div, "div", 2},
    {OpKind::scale, "scale", 1},
    {OpKind::gelu, "gelu", 1},
    {OpKind::reshape, "reshape", 1},
    {OpKind::flatten, "flatten", 1},
    {OpKind::concat, "concat", -1},
    {OpKind::matmul, "matmul", 2},
    {OpKind::linear, "linear", -1},
    {OpKind::conv1d, "conv1d", -1},
    {OpKind::conv2d, "conv2d", -1},
    {OpKind::conv_transpose1d, "conv_transpose1d", -1},
    {OpKind::conv_transpose2d, "conv_transpose2d", -1},
    {OpKind::sum, "sum", 1},
    {OpKind::mean, "mean", 1},
    {OpKind::l1_norm, "l1_norm", 1},
    {OpKind::l2_norm, "l2_norm", 1},
    {OpKind::row_l1_norm, "row_l1_norm", 1},
    {OpKind::row_l2_norm, "row_l2_norm", 1},
    {OpKind::take_rows, "take_rows", 1},
    {OpKind::mul_rows, "mul_rows", 2},
    {OpKind::stop_gradient, "stop_gradient", 1},
}};
}  // namespace

std::span<const OpInfo> registered_ops() { return kOps; }

std::string_view op_name(OpKind kind) {
  for (const auto& info : kOps)
    if (info.kind == kind) return info.name;
  return "unknown";
}

template <class T>
Tensor<T> forward_op(OpKind kind, std::span<const Tensor<T>> in, const OpAttrs& attrs) {
  const auto arity = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(lo) +
                       (lo == hi ? "" : "-" + std::to_string(hi)) + " inputs, got " +
                       std::to_string(in.size()));
    }
  };
  const auto opt = [&](std::size_t i) { return i < in.size() ? in[i] : Tensor<T>{}; };
  switch (kind) {
    case OpKind::add: arity(2, 2); return add(in[0], in[1]);
    case OpKind::sub: arity(2, 2); return sub(in[0], in[1]);
    case OpKind::mul: arity(2, 2); return mul(in[0], in[1]);
    case OpKind::div: arity(2, 2); return div(in[0], in[1]);
    case OpKind::scale: arity(1, 1); return scale(in[0], static_cast<T>(attrs.factor));
    case OpKind::gelu: arity(1, 1); return gelu(in[0]);
    case OpKind::reshape: arity(1, 1); return reshape(in[0], attrs.shape);
    case OpKind::flatten: arity(1, 1); return flatten(in[0]);
    case OpKind::concat: arity(1, in.size() ? in.size() : 1); return concat(in, attrs.axis);
    case OpKind::matmul: arity(2, 2); return matmul(in[0], in[1]);
    case OpKind::linear: arity(2, 3); return linear(in[0], in[1], opt(2));
    case OpKind::conv1d: arity(2, 3); return conv1d(in[0], in[1], opt(2), attrs.conv);
    case OpKind::conv2d: arity(2, 3); return conv2d(in[0], in[1], opt(2), attrs.conv);
    case OpKind::conv_transpose1d:
      arity(2, 3);
      return conv_transpose1d(in[0], in[1], opt(2), attrs.conv);
    case OpKind::conv_transpose2d:
      arity(2, 3);
      return conv_transpose2d(in[0], in[1], opt(2), attrs.conv);
    case OpKind::sum: arity(1, 1); return sum(in[0]);
    case OpKind::mean: arity(1, 1); return mean(in[0]);
    case OpKind::l1_norm: arity(1, 1); return l1_norm(in[0]);
    case OpKind::l2_norm: arity(1, 1); return l2_norm(in[0]);
    case OpKind::row_l1_norm: arity(1, 1); return row_l1_norm(in[0]);
    case OpKind::row_l2_norm: arity(1, 1); return row_l2_norm(in[0]);
    case OpKind::take_rows: arity(1, 1); return take_rows(in[0], std::span<const std::size_t>(attrs.rows));
    case OpKind::mul_rows: arity(2, 2); return mul_rows(in[0], in[1]);
    case OpKind::stop_gradient: arity(1, 1); return stop_gradient(in[0]);
  }
  throw ShapeError("unsupported op");
}

#define LNPDE_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> flatten(const Tensor<T>&);                                               \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvAttrs); \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvAttrs); \
  template Tensor<T> conv_transpose1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                      ConvAttrs);                                             \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                      ConvAttrs);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                  \
  template Tensor<T> l1_norm(const Tensor<T>&);                                               \
  template Tensor<T> l2_norm(const Tensor<T>&);                                               \
  template Tensor<T> row_l1_norm(const Tensor<T>&);                                           \
  template Tensor<T> row_l2_norm(const Tensor<T>&);                                           \
  template Tensor<T> take_rows(const Tensor<T>&, std::span<const std::size_t>);               \
  template Tensor<T> mul_rows(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> stop_gradient(const Tensor<T>&);                                         \
  template Tensor<T> forward_op(OpKind, std::span<const Tensor<T>>, const OpAttrs&);

LNPDE_INSTANTIATE_OPS(float)
LNPDE_INSTANTIATE_OPS(double)

}  // namespace lnpde::ad
