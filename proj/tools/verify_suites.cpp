#include "verify_suites.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "msdcnn/cs_reference.hpp"
#include "msdcnn/gradcheck.hpp"
#include "msdcnn/layers.hpp"
#include "msdcnn/metrics.hpp"
#include "msdcnn/network.hpp"
#include "msdcnn/rng.hpp"
#include "msdcnn/tensor.hpp"

namespace msdcnn::verify {
namespace {

Tensor random_tensor(const Dims4& dims, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(dims);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

std::span<const double> bias_span(const Tensor& t) {
  return {t.data.data(), t.data.size()};
}

Tensor bias_tensor(const std::vector<double>& values) {
  return Tensor(Dims4{static_cast<std::int64_t>(values.size()), 1, 1, 1},
                values);
}

std::string format(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// --- gradcheck over the individual layer ops ------------------------------

std::string check_conv_gradients(const ConvSpec& spec, const Dims4& in_dims,
                                 std::uint64_t seed, bool inject_fault) {
  Rng rng(seed);
  const Tensor input = random_tensor(in_dims, rng);
  const Tensor weights = random_tensor(
      Dims4{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w},
      rng);
  const Tensor bias =
      random_tensor(Dims4{spec.out_channels, 1, 1, 1}, rng, -0.2, 0.2);
  const Tensor target =
      random_tensor(conv2d_infer(input, weights, bias_span(bias), spec).dims,
                    rng);

  const auto value = [&](const std::vector<Tensor>& p) {
    return mse_loss(conv2d_infer(p[0], p[1], bias_span(p[2]), spec), target)
        .loss;
  };
  const auto gradient = [&](const std::vector<Tensor>& p) {
    Conv2dResult fwd = conv2d(p[0], p[1], bias_span(p[2]), spec);
    const MseResult loss = mse_loss(fwd.output, target);
    ConvGrads g = conv2d_backward(loss.grad_pred, fwd.cache);
    if (inject_fault) g.grad_weights.data[0] += 0.05;
    return std::vector<Tensor>{std::move(g.grad_input),
                               std::move(g.grad_weights),
                               bias_tensor(g.grad_bias)};
  };
  const double err = gradcheck(value, gradient, {input, weights, bias}, 1e-5);
  if (err >= 1e-4) return "conv2d gradient error " + format(err);
  return {};
}

std::string check_deconv_gradients(int stride, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor input = random_tensor(Dims4{2, 3, 4, 5}, rng);
  const Tensor weights = random_tensor(Dims4{3, 2, stride, stride}, rng);
  const Tensor bias = random_tensor(Dims4{2, 1, 1, 1}, rng, -0.2, 0.2);
  const Tensor target = random_tensor(
      conv_transpose2d_infer(input, weights, bias_span(bias), stride).dims,
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
  const double err = gradcheck(value, gradient, {input, weights, bias}, 1e-5);
  if (err >= 1e-4) return "conv_transpose2d gradient error " + format(err);
  return {};
}

std::string check_relu_mse_gradients(std::uint64_t seed) {
  Rng rng(seed);
  const Tensor input = random_tensor(Dims4{2, 3, 5, 4}, rng);
  const Tensor target = random_tensor(input.dims, rng);

  const auto value = [&](const std::vector<Tensor>& p) {
    return mse_loss(relu_infer(p[0]), target).loss;
  };
  const auto gradient = [&](const std::vector<Tensor>& p) {
    ReluResult fwd = relu(p[0]);
    const MseResult loss = mse_loss(fwd.output, target);
    return std::vector<Tensor>{relu_backward(loss.grad_pred, fwd.cache)};
  };
  const double err = gradcheck(value, gradient, {input}, 1e-5);
  if (err >= 1e-4) return "relu/mse gradient error " + format(err);
  return {};
}

std::string suite_gradcheck_ops(const VerifyOptions& options) {
  for (std::uint64_t seed : {11u, 12u}) {
    ConvSpec plain;
    plain.out_channels = 3;
    plain.in_channels = 2;
    plain.kernel_h = plain.kernel_w = 3;
    plain.padding = 1;
    plain.has_bias = true;
    if (auto r = check_conv_gradients(plain, Dims4{2, 2, 6, 5}, seed,
                                      options.inject_fault);
        !r.empty()) {
      return r;
    }

    ConvSpec strided = plain;
    strided.stride = 2;
    strided.dilation = 2;
    strided.padding = 2;
    if (auto r = check_conv_gradients(strided, Dims4{1, 2, 9, 8}, seed + 100,
                                      options.inject_fault);
        !r.empty()) {
      return r;
    }

    if (auto r = check_deconv_gradients(/*stride=*/2, seed + 200); !r.empty()) {
      return r;
    }
    if (auto r = check_relu_mse_gradients(seed + 300); !r.empty()) return r;
  }
  return {};
}

// --- gradcheck over the end-to-end micro network --------------------------

NetworkConfig micro_config() {
  NetworkConfig c;
  c.measurement_rate = 0.25;
  c.block_size = 4;
  c.mfe_channels = 2;
  c.layers_per_channel = 2;
  c.filters_per_layer = 4;
  c.fusion_filters = 4;
  return c;
}

std::string check_network_gradients(const NetworkConfig& config,
                                    const Dims4& image_dims,
                                    std::uint64_t seed) {
  Network net = build_network(config, seed);
  Rng rng(derive_seed(seed, "gradcheck-data"));
  const Tensor image = random_tensor(image_dims, rng, 0.0, 1.0);
  const Tensor target = random_tensor(image_dims, rng, 0.0, 1.0);

  std::vector<Tensor> point;
  for (const NamedParam& p : parameters(net)) point.push_back(*p.tensor);

  const auto load = [&](const std::vector<Tensor>& p) {
    std::vector<NamedParam> params = parameters(net);
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i].tensor->data = p[i].data;
    }
  };
  const auto value = [&](const std::vector<Tensor>& p) {
    load(p);
    return mse_loss(forward(net, image), target).loss;
  };
  const auto gradient = [&](const std::vector<Tensor>& p) {
    load(p);
    NetForwardCache cache = forward_train(net, image);
    const MseResult loss = mse_loss(cache.output, target);
    return backward(net, cache, loss.grad_pred);
  };
  const double err = gradcheck(value, gradient, point, 1e-6);
  if (err >= 1e-4) {
    return "network gradient error " + format(err) + " at seed " +
           std::to_string(seed);
  }
  return {};
}

std::string suite_gradcheck_network(const VerifyOptions&) {
  for (std::uint64_t seed : {21u, 22u}) {
    if (auto r = check_network_gradients(micro_config(), Dims4{1, 1, 8, 8},
                                         seed);
        !r.empty()) {
      return r;
    }
  }
  return {};
}

// --- learned measurement vs. classical block measurement ------------------

std::string suite_measurement_equivalence(const VerifyOptions&) {
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    Rng rng(derive_seed(seed, "measure-vs-blocks"));
    NetworkConfig config;
    config.block_size = (seed % 2 == 0) ? 2 : 4;
    config.measurement_rate = rng.uniform(0.05, 1.0);
    const Network net = build_network(config, seed);
    const int B = config.block_size;

    const Tensor image =
        random_tensor(Dims4{1, 1, 3 * B, 2 * B}, rng, 0.0, 1.0);
    const Tensor learned = measure(net, image);
    const CSMatrix phi = kernels_to_matrix(net.measurement_weight);
    const auto classical = block_measure(image, phi, B);

    double max_diff = 0.0;
    std::size_t block = 0;
    for (std::int64_t by = 0; by < learned.dims.h; ++by) {
      for (std::int64_t bx = 0; bx < learned.dims.w; ++bx, ++block) {
        for (std::int64_t k = 0; k < learned.dims.c; ++k) {
          max_diff = std::max(
              max_diff,
              std::abs(learned.at(0, k, by, bx) -
                       classical[block][static_cast<std::size_t>(k)]));
        }
      }
    }
    if (max_diff >= 1e-12) {
      return "measurement mismatch " + format(max_diff) + " at seed " +
             std::to_string(seed);
    }
  }
  return {};
}

// --- conv / transposed-conv adjoint pairing -------------------------------

std::string suite_adjoint(const VerifyOptions&) {
  for (std::uint64_t seed = 41; seed < 51; ++seed) {
    Rng rng(derive_seed(seed, "adjoint"));
    const int stride = 1 + static_cast<int>(rng.next_below(3));
    const int k = stride + static_cast<int>(rng.next_below(3));
    const int O = 1 + static_cast<int>(rng.next_below(3));
    const int I = 1 + static_cast<int>(rng.next_below(3));
    const int oh = 1 + static_cast<int>(rng.next_below(4));
    const int ow = 1 + static_cast<int>(rng.next_below(4));
    const int h = (oh - 1) * stride + k;
    const int w = (ow - 1) * stride + k;

    ConvSpec spec;
    spec.out_channels = O;
    spec.in_channels = I;
    spec.kernel_h = spec.kernel_w = k;
    spec.stride = stride;

    const Tensor x = random_tensor(Dims4{2, I, h, w}, rng);
    const Tensor weights = random_tensor(Dims4{O, I, k, k}, rng);
    const Tensor y = random_tensor(Dims4{2, O, oh, ow}, rng);

    const double lhs = inner(conv2d_infer(x, weights, {}, spec), y);
    const double rhs = inner(x, conv_transpose2d_infer(y, weights, {}, stride));
    if (std::abs(lhs - rhs) >= 1e-10) {
      return "inner products differ by " + format(std::abs(lhs - rhs)) +
             " at seed " + std::to_string(seed);
    }
  }
  return {};
}

// --- dilation: inflate-and-run-dense must match bitwise --------------------

std::string suite_dilation_bitwise(const VerifyOptions&) {
  for (int d = 1; d <= 3; ++d) {
    Rng rng(derive_seed(61, "dilation" + std::to_string(d)));
    const Tensor input = random_tensor(Dims4{2, 3, 11, 9}, rng);
    const Tensor weights = random_tensor(Dims4{2, 3, 3, 3}, rng);

    ConvSpec dilated;
    dilated.out_channels = 2;
    dilated.in_channels = 3;
    dilated.kernel_h = dilated.kernel_w = 3;
    dilated.dilation = d;
    dilated.padding = d;

    const Tensor inflated = dilate_kernel(weights, d);
    ConvSpec dense = dilated;
    dense.dilation = 1;
    dense.kernel_h = static_cast<int>(inflated.dims.h);
    dense.kernel_w = static_cast<int>(inflated.dims.w);

    const Tensor a = conv2d_infer(input, weights, {}, dilated);
    const Tensor b = conv2d_infer(input, inflated, {}, dense);
    if (!(a.dims == b.dims) ||
        std::memcmp(a.data.data(), b.data.data(),
                    a.data.size() * sizeof(double)) != 0) {
      return "dilated vs dense outputs not bitwise equal at d=" +
             std::to_string(d);
    }
    if (receptive_field(d) != 2 * d + 1) {
      return "receptive_field(" + std::to_string(d) + ") != " +
             std::to_string(2 * d + 1);
    }
  }
  return {};
}

// --- restricted-isometry fixtures ------------------------------------------

std::string suite_rip_fixtures(const VerifyOptions&) {
  CSMatrix identity(4, 4);
  for (int i = 0; i < 4; ++i) identity.at(i, i) = 1.0;
  const double d_ortho = rip_constant(identity, 2);
  if (std::abs(d_ortho) >= 1e-12) {
    return "orthonormal matrix gave delta " + format(d_ortho);
  }

  CSMatrix degenerate(2, 2, {1.0, 0.0, 0.0, 0.0});
  const double d_degen = rip_constant(degenerate, 1);
  if (std::abs(d_degen - 1.0) >= 1e-12) {
    return "rank-deficient fixture gave delta " + format(d_degen);
  }

  Rng rng(derive_seed(71, "rip"));
  CSMatrix random_phi(3, 6);
  for (double& v : random_phi.data) v = rng.next_normal() / std::sqrt(3.0);
  const double d1 = rip_constant(random_phi, 1);
  const double d2 = rip_constant(random_phi, 2);
  if (!(d1 >= 0.0) || !(d2 >= 0.0) || d2 < d1 - 1e-12) {
    return "delta_K not monotone: delta_1=" + format(d1) +
           " delta_2=" + format(d2);
  }
  return {};
}

// --- metric fixtures --------------------------------------------------------

std::string suite_metric_fixtures(const VerifyOptions&) {
  Rng rng(derive_seed(81, "metrics"));
  Tensor a = random_tensor(Dims4{1, 1, 16, 16}, rng, 0.0, 255.0);

  Tensor b = a;
  for (double& v : b.data) v += 1.0;  // MSE exactly 1
  const double p1 = psnr(a, b);
  if (std::abs(p1 - 48.1308) >= 1e-3) {
    return "psnr at unit MSE = " + format(p1);
  }

  Tensor c = a;
  for (double& v : c.data) v += 16.0;  // MSE exactly 256
  const double p2 = psnr(a, c);
  if (std::abs(p2 - 20.0 * std::log10(255.0 / 16.0)) >= 1e-9) {
    return "psnr at uniform diff 16 = " + format(p2);
  }

  if (ssim(a, a) != 1.0) return "ssim(a, a) != 1";
  return {};
}

struct Suite {
  const char* name;
  std::function<std::string(const VerifyOptions&)> run;
};

}  // namespace

bool run_all(const VerifyOptions& options, std::ostream& out) {
  const std::vector<Suite> suites = {
      {"gradcheck-layer-ops", suite_gradcheck_ops},
      {"gradcheck-micro-network", suite_gradcheck_network},
      {"measurement-equivalence", suite_measurement_equivalence},
      {"conv-adjoint", suite_adjoint},
      {"dilation-bitwise", suite_dilation_bitwise},
      {"rip-fixtures", suite_rip_fixtures},
      {"metric-fixtures", suite_metric_fixtures},
  };

  bool all_pass = true;
  for (const Suite& suite : suites) {
    std::string detail;
    try {
      detail = suite.run(options);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    if (detail.empty()) {
      out << "PASS  " << suite.name << "\n";
    } else {
      out << "FAIL  " << suite.name << "  (" << detail << ")\n";
      all_pass = false;
    }
  }
  return all_pass;
}

}  // namespace msdcnn::verify
