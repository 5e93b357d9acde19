#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "msdcnn/errors.hpp"
#include "msdcnn/gradcheck.hpp"
#include "msdcnn/layers.hpp"
#include "msdcnn/rng.hpp"
#include "support/reference_ops.hpp"

using namespace msdcnn;
using testsupport::max_abs_diff;
using testsupport::random_tensor;
using testsupport::reference_conv2d;
using testsupport::reference_conv_transpose2d;

namespace {

ConvSpec make_spec(int out_c, int in_c, int k, int stride = 1, int dilation = 1,
                   int padding = 0, bool bias = false) {
  ConvSpec s;
  s.out_channels = out_c;
  s.in_channels = in_c;
  s.kernel_h = s.kernel_w = k;
  s.stride = stride;
  s.dilation = dilation;
  s.padding = padding;
  s.has_bias = bias;
  return s;
}

std::span<const double> bias_span(const Tensor& t) {
  return {t.data.data(), t.data.size()};
}

Tensor bias_tensor(const std::vector<double>& values) {
  return Tensor(Dims4{static_cast<std::int64_t>(values.size()), 1, 1, 1},
                values);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.dims == b.dims &&
         std::memcmp(a.data.data(), b.data.data(),
                     a.data.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("identity kernel reproduces the input") {
  Rng rng(1);
  const Tensor input = random_tensor(Dims4{1, 1, 3, 3}, rng);
  const Tensor weight(Dims4{1, 1, 1, 1}, {1.0});
  const Tensor out = conv2d_infer(input, weight, {}, make_spec(1, 1, 1));
  CHECK(bitwise_equal(out, input));
}

TEST_CASE("2x2 quarter-weight kernel at stride 2 is mean pooling") {
  const Tensor input(Dims4{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor weight(Dims4{1, 1, 2, 2}, {0.25, 0.25, 0.25, 0.25});
  const Tensor out =
      conv2d_infer(input, weight, {}, make_spec(1, 1, 2, /*stride=*/2));
  CHECK(out.dims == Dims4{1, 1, 1, 1});
  CHECK(out.data[0] == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("conv matches the direct-summation oracle across geometries") {
  std::uint64_t seed = 100;
  for (int k : {1, 3, 5}) {
    for (int stride : {1, 2}) {
      for (int dilation : {1, 2}) {
        for (int padding : {0, 1, 2}) {
          const int eff = dilation * (k - 1) + 1;
          const int h = eff + 5, w = eff + 3;
          if (eff > h + 2 * padding || eff > w + 2 * padding) continue;
          Rng rng(++seed);
          const ConvSpec spec =
              make_spec(3, 2, k, stride, dilation, padding, /*bias=*/true);
          const Tensor input = random_tensor(Dims4{2, 2, h, w}, rng);
          const Tensor weight = random_tensor(Dims4{3, 2, k, k}, rng);
          const Tensor bias = random_tensor(Dims4{3, 1, 1, 1}, rng);
          const Tensor got = conv2d_infer(input, weight, bias_span(bias), spec);
          const Tensor want = reference_conv2d(input, weight, bias.data, spec);
          REQUIRE(got.dims == want.dims);
          REQUIRE(max_abs_diff(got, want) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("output shape formula holds over the contract's size table") {
  for (int k : {1, 3, 5, 7, 32}) {
    for (int stride : {1, 2, 32}) {
      const int h = 64, w = 96;
      if (k > h) continue;
      Rng rng(static_cast<std::uint64_t>(k * 100 + stride));
      const ConvSpec spec = make_spec(1, 1, k, stride);
      const Tensor input = random_tensor(Dims4{1, 1, h, w}, rng);
      const Tensor weight = random_tensor(Dims4{1, 1, k, k}, rng);
      const Tensor out = conv2d_infer(input, weight, {}, spec);
      CHECK(out.dims.h == (h - k) / stride + 1);
      CHECK(out.dims.w == (w - k) / stride + 1);
    }
  }
}

TEST_CASE("conv and dilated-kernel conv agree bitwise") {
  // A 3x3 kernel with d=2 on a 5x5 ramp, plus random checks for d up to 3.
  Tensor ramp(Dims4{1, 1, 5, 5});
  std::iota(ramp.data.begin(), ramp.data.end(), 1.0);
  Rng rng(7);
  const Tensor w3 = random_tensor(Dims4{1, 1, 3, 3}, rng);
  const Tensor got = conv2d_infer(ramp, w3, {}, make_spec(1, 1, 3, 1, 2));
  const Tensor inflated = dilate_kernel(w3, 2);
  ConvSpec dense = make_spec(1, 1, 5, 1, 1);
  const Tensor want = conv2d_infer(ramp, inflated, {}, dense);
  CHECK(bitwise_equal(got, want));

  for (int d : {1, 2, 3}) {
    Rng r2(static_cast<std::uint64_t>(20 + d));
    const Tensor input = random_tensor(Dims4{2, 2, 13, 11}, r2);
    const Tensor weight = random_tensor(Dims4{3, 2, 3, 3}, r2);
    const ConvSpec spec = make_spec(3, 2, 3, 1, d, d);
    const Tensor a = conv2d_infer(input, weight, {}, spec);
    const Tensor infl = dilate_kernel(weight, d);
    ConvSpec ds = spec;
    ds.dilation = 1;
    ds.kernel_h = ds.kernel_w = static_cast<int>(infl.dims.h);
    const Tensor b = conv2d_infer(input, infl, {}, ds);
    CHECK(bitwise_equal(a, b));
  }
}

TEST_CASE("conv without bias is linear in its input") {
  Rng rng(31);
  const ConvSpec spec = make_spec(2, 2, 3, 1, 1, 1);
  const Tensor x1 = random_tensor(Dims4{1, 2, 6, 6}, rng);
  const Tensor x2 = random_tensor(Dims4{1, 2, 6, 6}, rng);
  const Tensor w = random_tensor(Dims4{2, 2, 3, 3}, rng);
  const double alpha = 1.7, beta = -0.4;

  Tensor mixed(x1.dims);
  for (std::size_t i = 0; i < mixed.data.size(); ++i) {
    mixed.data[i] = alpha * x1.data[i] + beta * x2.data[i];
  }
  const Tensor lhs = conv2d_infer(mixed, w, {}, spec);
  const Tensor y1 = conv2d_infer(x1, w, {}, spec);
  const Tensor y2 = conv2d_infer(x2, w, {}, spec);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < lhs.data.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(lhs.data[i] - alpha * y1.data[i] -
                                           beta * y2.data[i]));
  }
  CHECK(max_diff < 1e-10);
}

TEST_CASE("conv validates shapes with axis names and geometry") {
  Rng rng(5);
  const Tensor input = random_tensor(Dims4{1, 2, 4, 4}, rng);
  const Tensor weight = random_tensor(Dims4{1, 3, 3, 3}, rng);
  CHECK_THROWS_WITH_AS(conv2d_infer(input, weight, {}, make_spec(1, 3, 3)),
                       doctest::Contains("channel"), DimensionError);

  const Tensor w_ok = random_tensor(Dims4{1, 2, 3, 3}, rng);
  ConvSpec wrong_out = make_spec(4, 2, 3);
  CHECK_THROWS_AS(conv2d_infer(input, w_ok, {}, wrong_out), DimensionError);

  // Effective kernel 5x5 over a padded 4x4 input does not fit.
  CHECK_THROWS_AS(conv2d_infer(input, w_ok, {}, make_spec(1, 2, 3, 1, 2, 0)),
                  GeometryError);

  // Bias presence must match the spec.
  const Tensor bias = random_tensor(Dims4{1, 1, 1, 1}, rng);
  CHECK_THROWS_AS(
      conv2d_infer(input, w_ok, bias_span(bias), make_spec(1, 2, 3)),
      UsageError);
  CHECK_THROWS_AS(
      conv2d_infer(input, w_ok, {}, make_spec(1, 2, 3, 1, 1, 0, true)),
      UsageError);
}

TEST_CASE("conv backward: zero upstream gradient gives zero gradients") {
  Rng rng(8);
  const ConvSpec spec = make_spec(2, 2, 3, 1, 1, 1, /*bias=*/true);
  const Tensor input = random_tensor(Dims4{1, 2, 5, 5}, rng);
  const Tensor weight = random_tensor(Dims4{2, 2, 3, 3}, rng);
  const Tensor bias = random_tensor(Dims4{2, 1, 1, 1}, rng);
  Conv2dResult fwd = conv2d(input, weight, bias_span(bias), spec);
  const Tensor zero(fwd.output.dims);
  const ConvGrads g = conv2d_backward(zero, fwd.cache);
  for (double v : g.grad_input.data) CHECK(v == 0.0);
  for (double v : g.grad_weights.data) CHECK(v == 0.0);
  for (double v : g.grad_bias) CHECK(v == 0.0);
}

TEST_CASE("conv backward through the identity kernel passes gradients through") {
  Rng rng(9);
  const Tensor input = random_tensor(Dims4{1, 1, 4, 4}, rng);
  const Tensor weight(Dims4{1, 1, 1, 1}, {1.0});
  Conv2dResult fwd = conv2d(input, weight, {}, make_spec(1, 1, 1));
  const Tensor upstream = random_tensor(fwd.output.dims, rng);
  const ConvGrads g = conv2d_backward(upstream, fwd.cache);
  CHECK(bitwise_equal(g.grad_input, upstream));
}

TEST_CASE("a layer cache is single-consumer") {
  Rng rng(10);
  const Tensor input = random_tensor(Dims4{1, 1, 4, 4}, rng);
  const Tensor weight = random_tensor(Dims4{1, 1, 3, 3}, rng);
  Conv2dResult fwd = conv2d(input, weight, {}, make_spec(1, 1, 3));
  const Tensor upstream = random_tensor(fwd.output.dims, rng);
  (void)conv2d_backward(upstream, fwd.cache);
  CHECK_THROWS_AS(conv2d_backward(upstream, fwd.cache), UsageError);
}

TEST_CASE("conv gradients agree with central finite differences") {
  // The contract shape: 1x2x6x6 input, 3x3 kernel, dilation 2, eps 1e-5.
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Rng rng(seed);
    const ConvSpec spec = make_spec(2, 2, 3, 1, 2, 0, /*bias=*/true);
    const Tensor input = random_tensor(Dims4{1, 2, 6, 6}, rng);
    const Tensor weight = random_tensor(Dims4{2, 2, 3, 3}, rng);
    const Tensor bias = random_tensor(Dims4{2, 1, 1, 1}, rng);
    const Tensor target =
        random_tensor(conv2d_infer(input, weight, bias_span(bias), spec).dims,
                      rng);

    const auto value = [&](const std::vector<Tensor>& p) {
      return mse_loss(conv2d_infer(p[0], p[1], bias_span(p[2]), spec), target)
          .loss;
    };
    const auto gradient = [&](const std::vector<Tensor>& p) {
      Conv2dResult fwd = conv2d(p[0], p[1], bias_span(p[2]), spec);
      const MseResult loss = mse_loss(fwd.output, target);
      ConvGrads g = conv2d_backward(loss.grad_pred, fwd.cache);
      return std::vector<Tensor>{std::move(g.grad_input),
                                 std::move(g.grad_weights),
                                 bias_tensor(g.grad_bias)};
    };
    CHECK(gradcheck(value, gradient, {input, weight, bias}, 1e-5) < 1e-4);
  }
}

TEST_CASE("transposed conv stamps the kernel at stride offsets") {
  const Tensor input(Dims4{1, 1, 1, 1}, {2.0});
  const Tensor weight(Dims4{1, 1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
  const Tensor out = conv_transpose2d_infer(input, weight, {}, 2);
  CHECK(out.dims == Dims4{1, 1, 2, 2});
  CHECK(out.data == std::vector<double>{2.0, 0.0, 0.0, 2.0});
}

TEST_CASE("transposed conv shape arithmetic matches the block upsampling use") {
  Rng rng(11);
  const Tensor input = random_tensor(Dims4{1, 5, 3, 3}, rng);
  const Tensor weight = random_tensor(Dims4{5, 1, 32, 32}, rng);
  const Tensor out = conv_transpose2d_infer(input, weight, {}, 32);
  CHECK(out.dims == Dims4{1, 1, 96, 96});
}

TEST_CASE("transposed conv matches the scatter oracle") {
  for (int stride : {1, 2, 3}) {
    Rng rng(static_cast<std::uint64_t>(40 + stride));
    const Tensor input = random_tensor(Dims4{2, 3, 4, 5}, rng);
    const Tensor weight = random_tensor(Dims4{3, 2, stride + 1, stride + 1}, rng);
    const Tensor bias = random_tensor(Dims4{2, 1, 1, 1}, rng);
    const Tensor got =
        conv_transpose2d_infer(input, weight, bias_span(bias), stride);
    const Tensor want =
        reference_conv_transpose2d(input, weight, bias.data, stride);
    REQUIRE(got.dims == want.dims);
    CHECK(max_abs_diff(got, want) < 1e-12);
  }
}

TEST_CASE("conv and transposed conv are adjoint") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(derive_seed(seed, "adjoint-test"));
    const int stride = 1 + static_cast<int>(rng.next_below(3));
    const int k = stride + static_cast<int>(rng.next_below(2));
    const int oh = 1 + static_cast<int>(rng.next_below(3));
    const int ow = 1 + static_cast<int>(rng.next_below(3));
    const int h = (oh - 1) * stride + k;
    const int w = (ow - 1) * stride + k;
    const ConvSpec spec = make_spec(2, 3, k, stride);
    const Tensor x = random_tensor(Dims4{1, 3, h, w}, rng);
    const Tensor weight = random_tensor(Dims4{2, 3, k, k}, rng);
    const Tensor y = random_tensor(Dims4{1, 2, oh, ow}, rng);

    const Tensor cx = conv2d_infer(x, weight, {}, spec);
    const Tensor ty = conv_transpose2d_infer(y, weight, {}, stride);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cx.data.size(); ++i) lhs += cx.data[i] * y.data[i];
    for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * ty.data[i];
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("transposed-conv backward: zero gradient and adjoint pairing") {
  Rng rng(12);
  const Tensor input = random_tensor(Dims4{1, 3, 3, 3}, rng);
  const Tensor weight = random_tensor(Dims4{3, 2, 4, 4}, rng);
  const Tensor bias = random_tensor(Dims4{2, 1, 1, 1}, rng);
  DeconvResult fwd = conv_transpose2d(input, weight, bias_span(bias), 4);

  const Tensor zero(fwd.output.dims);
  DeconvResult fwd2 = conv_transpose2d(input, weight, bias_span(bias), 4);
  const ConvGrads gz = conv_transpose2d_backward(zero, fwd2.cache);
  for (double v : gz.grad_input.data) CHECK(v == 0.0);
  for (double v : gz.grad_weights.data) CHECK(v == 0.0);

  // grad_input must be exactly the forward convolution of the upstream
  // gradient with the same weights.
  const Tensor upstream = random_tensor(fwd.output.dims, rng);
  const ConvGrads g = conv_transpose2d_backward(upstream, fwd.cache);
  ConvSpec back = make_spec(3, 2, 4, 4);
  const Tensor want = conv2d_infer(upstream, weight, {}, back);
  CHECK(bitwise_equal(g.grad_input, want));
}

TEST_CASE("transposed-conv gradients agree with central finite differences") {
  for (std::uint64_t seed : {6u, 7u, 8u}) {
    Rng rng(seed);
    const int stride = 2;
    const Tensor input = random_tensor(Dims4{1, 2, 3, 4}, rng);
    const Tensor weight = random_tensor(Dims4{2, 3, 2, 2}, rng);
    const Tensor bias = random_tensor(Dims4{3, 1, 1, 1}, rng);
    const Tensor target = random_tensor(
        conv_transpose2d_infer(input, weight, bias_span(bias), stride).dims,
        rng);

    const auto value = [&](const std::vector<Tensor>& p) {
      return mse_loss(
                 conv_transpose2d_infer(p[0], p[1], bias_span(p[2]), stride),
                 target)
          .loss;
    };
    const auto gradient = [&](const std::vector<Tensor>& p) {
      DeconvResult fwd = conv_transpose2d(p[0], p[1], bias_span(p[2]), stride);
      const MseResult loss = mse_loss(fwd.output, target);
      ConvGrads g = conv_transpose2d_backward(loss.grad_pred, fwd.cache);
      return std::vector<Tensor>{std::move(g.grad_input),
                                 std::move(g.grad_weights),
                                 bias_tensor(g.grad_bias)};
    };
    CHECK(gradcheck(value, gradient, {input, weight, bias}, 1e-5) < 1e-4);
  }
}

TEST_CASE("relu clamps negatives and zeroes the subgradient at 0") {
  const Tensor input(Dims4{1, 1, 1, 3}, {-1.0, 0.0, 2.0});
  ReluResult fwd = relu(input);
  CHECK(fwd.output.data == std::vector<double>{0.0, 0.0, 2.0});

  const Tensor upstream(Dims4{1, 1, 1, 3}, {5.0, 5.0, 5.0});
  const Tensor g = relu_backward(upstream, fwd.cache);
  CHECK(g.data == std::vector<double>{0.0, 0.0, 5.0});
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
  Rng rng(13);
  Tensor input = random_tensor(Dims4{1, 2, 4, 4}, rng);
  for (double& v : input.data) {
    if (std::abs(v) < 1e-3) v = 0.1;  // keep probes away from the kink
  }
  const Tensor target = random_tensor(input.dims, rng);
  const auto value = [&](const std::vector<Tensor>& p) {
    return mse_loss(relu_infer(p[0]), target).loss;
  };
  const auto gradient = [&](const std::vector<Tensor>& p) {
    ReluResult fwd = relu(p[0]);
    const MseResult loss = mse_loss(fwd.output, target);
    return std::vector<Tensor>{relu_backward(loss.grad_pred, fwd.cache)};
  };
  CHECK(gradcheck(value, gradient, {input}, 1e-5) < 1e-6);
}

TEST_CASE("concat stacks channel counts and split inverts it") {
  Rng rng(14);
  const Tensor a = random_tensor(Dims4{1, 32, 6, 7}, rng);
  const Tensor b = random_tensor(Dims4{1, 32, 6, 7}, rng);
  const Tensor c = random_tensor(Dims4{1, 32, 6, 7}, rng);

  const std::vector<Tensor> two = {a, b};
  ConcatResult r2 = concat_channels(two);
  CHECK(r2.output.dims == Dims4{1, 64, 6, 7});

  const std::vector<Tensor> three = {a, b, c};
  ConcatResult r3 = concat_channels(three);
  CHECK(r3.output.dims == Dims4{1, 96, 6, 7});

  const std::vector<Tensor> parts =
      split_channels_backward(r3.output, r3.cache);
  REQUIRE(parts.size() == 3);
  CHECK(bitwise_equal(parts[0], a));
  CHECK(bitwise_equal(parts[1], b));
  CHECK(bitwise_equal(parts[2], c));

  const Tensor bad = random_tensor(Dims4{1, 32, 5, 7}, rng);
  const std::vector<Tensor> mismatched = {a, bad};
  CHECK_THROWS_AS(concat_channels(mismatched), DimensionError);
}

TEST_CASE("mse loss fixtures") {
  const Tensor p(Dims4{1, 1, 1, 1}, {3.0});
  const Tensor t(Dims4{1, 1, 1, 1}, {1.0});
  const MseResult r = mse_loss(p, t);
  CHECK(r.loss == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(r.grad_pred.data[0] == doctest::Approx(2.0).epsilon(1e-15));

  const MseResult zero = mse_loss(t, t);
  CHECK(zero.loss == 0.0);
  for (double v : zero.grad_pred.data) CHECK(v == 0.0);
}

TEST_CASE("mse loss is invariant under batch permutation") {
  Rng rng(15);
  const Tensor a = random_tensor(Dims4{1, 1, 3, 3}, rng);
  const Tensor b = random_tensor(Dims4{1, 1, 3, 3}, rng);
  const Tensor ta = random_tensor(Dims4{1, 1, 3, 3}, rng);
  const Tensor tb = random_tensor(Dims4{1, 1, 3, 3}, rng);

  Tensor ab(Dims4{2, 1, 3, 3});
  Tensor ba(Dims4{2, 1, 3, 3});
  Tensor t_ab(Dims4{2, 1, 3, 3});
  Tensor t_ba(Dims4{2, 1, 3, 3});
  for (int i = 0; i < 9; ++i) {
    ab.data[i] = a.data[i];
    ab.data[9 + i] = b.data[i];
    ba.data[i] = b.data[i];
    ba.data[9 + i] = a.data[i];
    t_ab.data[i] = ta.data[i];
    t_ab.data[9 + i] = tb.data[i];
    t_ba.data[i] = tb.data[i];
    t_ba.data[9 + i] = ta.data[i];
  }
  CHECK(mse_loss(ab, t_ab).loss ==
        doctest::Approx(mse_loss(ba, t_ba).loss).epsilon(1e-14));
}

TEST_CASE("dilate_kernel geometry and nonzero placement") {
  Rng rng(16);
  const Tensor w = random_tensor(Dims4{2, 3, 3, 3}, rng);

  const Tensor d1 = dilate_kernel(w, 1);
  CHECK(bitwise_equal(d1, w));

  const Tensor d2 = dilate_kernel(w, 2);
  CHECK(d2.dims == Dims4{2, 3, 5, 5});
  const Tensor d3 = dilate_kernel(w, 3);
  CHECK(d3.dims == Dims4{2, 3, 7, 7});

  int nonzeros = 0;
  for (std::int64_t o = 0; o < 2; ++o) {
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t y = 0; y < 5; ++y) {
        for (std::int64_t x = 0; x < 5; ++x) {
          const double v = d2.at(o, c, y, x);
          if (y % 2 == 0 && x % 2 == 0) {
            CHECK(v == w.at(o, c, y / 2, x / 2));
            if (v != 0.0) ++nonzeros;
          } else {
            CHECK(v == 0.0);
          }
        }
      }
    }
  }
  CHECK(nonzeros == 2 * 3 * 9);  // nine taps per filter slice, none lost
}
