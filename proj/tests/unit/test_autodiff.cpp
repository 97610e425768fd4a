#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "lnpde/autodiff/init.hpp"
#include "lnpde/autodiff/ops.hpp"

using namespace lnpde;
using ad::Shape;
using TensorD = ad::Tensor<double>;

TEST_CASE("elementwise add") {
  auto a = TensorD::constant({2}, {1, 2});
  auto b = TensorD::constant({2}, {3, 4});
  auto c = ad::add(a, b);
  CHECK(c.data()[0] == 4);
  CHECK(c.data()[1] == 6);
  CHECK_THROWS_AS(ad::add(a, TensorD::constant({3}, {1, 2, 3})), ad::ShapeError);
}

TEST_CASE("conv output extents") {
  CHECK(ad::conv_output_extent(8, 3, {2, 1, 0}) == 4);
  // Stride-2 even-kernel transposed convolution doubles with padding (K-2)/2.
  CHECK(ad::conv_transpose_output_extent(16, 4, {2, 1, 0}) == 32);
  CHECK(ad::conv_transpose_output_extent(16, 6, {2, 2, 0}) == 32);
  CHECK(ad::conv_transpose_output_extent(16, 5, {2, 2, 1}) == 32);
  CHECK(ad::conv_transpose_output_extent(16, 5, {1, 2, 0}) == 16);

  auto x = TensorD::zeros({1, 1, 8});
  auto w = TensorD::zeros({2, 1, 3});
  auto y = ad::conv1d(x, w, TensorD{}, {2, 1, 0});
  CHECK(y.shape() == Shape{1, 2, 4});
}

TEST_CASE("conv then transposed conv restores the spatial extent") {
  for (std::size_t k : {3u, 4u, 5u, 6u}) {
    for (std::size_t n : {8u, 16u, 64u}) {
      const std::size_t pad = k / 2 - (k % 2 == 0 ? 1 : 0);
      const ad::ConvAttrs down{2, (k | 1u) / 2, 0};
      const std::size_t half = ad::conv_output_extent(n, k | 1u, down);
      CHECK(half == n / 2);
      const ad::ConvAttrs up{2, pad, k % 2};
      CHECK(ad::conv_transpose_output_extent(half, k, up) == n);
    }
  }
}

TEST_CASE("gelu fixes the origin and matches the Gaussian CDF form") {
  auto y = ad::gelu(TensorD::constant({3}, {0.0, 1.0, -2.0}));
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(y.data()[2] == doctest::Approx(-0.04550026389635842).epsilon(1e-12));
}

TEST_CASE("backward of sum of squares") {
  auto w = TensorD::parameter({2}, {1, 2});
  auto loss = ad::sum(ad::mul(w, w));
  loss.backward();
  CHECK(w.grad()[0] == 2.0);
  CHECK(w.grad()[1] == 4.0);
}

TEST_CASE("backward errors") {
  auto w = TensorD::parameter({2}, {1, 2});
  CHECK_THROWS_AS(ad::mul(w, w).backward(), ad::GraphError);
  auto loss = ad::sum(ad::mul(w, w));
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), ad::GraphError);
}

TEST_CASE("gradients accumulate until zeroed") {
  auto w = TensorD::parameter({1}, {3});
  ad::sum(ad::scale(w, 2.0)).backward();
  ad::sum(ad::scale(w, 2.0)).backward();
  CHECK(w.grad()[0] == 4.0);
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("mean of gelu matches finite differences") {
  std::mt19937_64 rng(7);
  const auto x = lnpde::testing::random_values(16, rng, -3, 3);
  const auto r = lnpde::testing::gradient_check(
      {{Shape{16}, x}}, [](const std::vector<TensorD>& in) { return ad::mean(ad::gelu(in[0])); });
  CHECK(r.max_relative_error < 1e-5);
}

TEST_CASE("stop_gradient blocks flow and keeps values") {
  auto x = TensorD::parameter({3}, {1, -2, 3});
  auto stopped = ad::stop_gradient(x);
  CHECK(std::vector<double>(stopped.data().begin(), stopped.data().end()) ==
        std::vector<double>{1, -2, 3});
  CHECK_FALSE(stopped.requires_grad());

  auto y = ad::scale(x, 3.0);
  auto loss = ad::add(ad::sum(ad::mul(ad::stop_gradient(y), x)), ad::sum(ad::stop_gradient(y)));
  loss.backward();
  // d/dx of sum(c * x) with c = 3x frozen is c; nothing flows through y.
  CHECK(x.grad()[0] == 3.0);
  CHECK(x.grad()[1] == -6.0);
  CHECK(x.grad()[2] == 9.0);
}

TEST_CASE("stopped subtree behaves like a constant") {
  auto a = TensorD::parameter({2}, {0.3, -0.7});
  auto b = TensorD::parameter({2}, {0.3, -0.7});
  auto upstream = ad::gelu(ad::scale(a, 2.0));
  auto with_stop = ad::sum(ad::mul(ad::gelu(ad::stop_gradient(upstream)), a));
  with_stop.backward();
  auto frozen = TensorD::constant({2}, std::vector<double>(upstream.data().begin(),
                                                           upstream.data().end()));
  auto with_const = ad::sum(ad::mul(ad::gelu(frozen), b));
  with_const.backward();
  CHECK(a.grad()[0] == b.grad()[0]);
  CHECK(a.grad()[1] == b.grad()[1]);
}

TEST_CASE("non-finite results are surfaced") {
  auto a = TensorD::constant({1}, {1.0});
  auto z = TensorD::constant({1}, {0.0});
  CHECK_THROWS_AS(ad::div(a, z), ad::NonFiniteError);
}

TEST_CASE("no-grad guard suppresses recording") {
  auto w = TensorD::parameter({2}, {1, 2});
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::mul(w, w).requires_grad());
  }
  CHECK(ad::mul(w, w).requires_grad());
}

TEST_CASE("every registered op passes the finite-difference check") {
  std::mt19937_64 rng(2024);
  for (const auto& info : ad::registered_ops()) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto c = lnpde::testing::make_op_case(info.kind, rng);
      const auto r = lnpde::testing::check_case(c);
      INFO(info.name, " trial ", trial, " input ", r.worst_input);
      CHECK(r.max_relative_error < 1e-5);
    }
  }
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(3);
  const Shape xs{1, 2, 5, 5}, ws{3, 2, 3, 3};
  auto xv = lnpde::testing::random_values(ad::numel(xs), rng);
  auto wv = lnpde::testing::random_values(ad::numel(ws), rng);
  auto y = ad::conv2d(TensorD::constant(xs, xv), TensorD::constant(ws, wv), TensorD{}, {2, 1, 0});
  REQUIRE(y.shape() == Shape{1, 3, 3, 3});
  for (int co = 0; co < 3; ++co)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0;
        for (int ci = 0; ci < 2; ++ci)
          for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v) {
              const int yy = 2 * i - 1 + u, xx = 2 * j - 1 + v;
              if (yy < 0 || yy >= 5 || xx < 0 || xx >= 5) continue;
              acc += wv[((co * 2 + ci) * 3 + u) * 3 + v] * xv[(ci * 5 + yy) * 5 + xx];
            }
        CHECK(y.data()[(co * 3 + i) * 3 + j] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("kaiming uniform init") {
  auto w = ad::kaiming_uniform_init<double>({6, 1}, 6, 11);
  for (double v : w.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  auto again = ad::kaiming_uniform_init<double>({6, 1}, 6, 11);
  CHECK(std::equal(w.data().begin(), w.data().end(), again.data().begin()));
  CHECK_THROWS_AS(ad::kaiming_uniform_init<double>({2}, 0, 1), std::invalid_argument);

  const std::size_t n = 100000;
  auto big = ad::kaiming_uniform_init<double>({n}, 24, 5);
  const double bound = ad::kaiming_uniform_bound(24);
  double m = 0, m2 = 0;
  for (double v : big.data()) {
    m += v;
    m2 += v * v;
  }
  m /= n;
  const double var = m2 / n - m * m;
  CHECK(std::abs(var - bound * bound / 3) / (bound * bound / 3) < 0.05);
}
