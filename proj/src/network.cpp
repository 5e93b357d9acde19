#include "msdcnn/network.hpp"

#include <cmath>
#include <string>

#include "msdcnn/rng.hpp"
#include "msdcnn/training.hpp"

namespace msdcnn {

namespace {

std::string param_prefix(int channel, int layer) {
  return "mfe.c" + std::to_string(channel) + ".l" + std::to_string(layer);
}

// Fully resolved spec for MFE channel `channel` (1-indexed), layer `layer`
// (1-indexed).  Every layer of channel i covers a (2i+1)-pixel extent: the
// dilated kind via a 3x3 kernel at dilation i, the normal kind via a dense
// (2i+1)x(2i+1) kernel; "same" padding is i for both.
ConvSpec mfe_spec(const NetworkConfig& config, int channel, int layer,
                  LayerKind kind) {
  ConvSpec s;
  s.in_channels = layer == 1 ? 1 : config.filters_per_layer;
  s.out_channels = config.filters_per_layer;
  if (kind == LayerKind::dilated) {
    s.kernel_h = s.kernel_w = 3;
    s.dilation = channel;
  } else {
    s.kernel_h = s.kernel_w = 2 * channel + 1;
    s.dilation = 1;
  }
  s.stride = 1;
  s.padding = channel;
  s.has_bias = true;
  s.has_relu = true;
  return s;
}

std::span<const double> bias_span(const Tensor& bias) {
  return {bias.data.data(), bias.data.size()};
}

}  // namespace

void NetworkConfig::validate() const {
  if (!(measurement_rate > 0.0 && measurement_rate <= 1.0)) {
    throw UsageError("network config: measurement_rate must lie in (0, 1], got " +
                     std::to_string(measurement_rate));
  }
  if (block_size < 1) {
    throw UsageError("network config: block_size must be >= 1");
  }
  if (mfe_channels < 1 || mfe_channels > 3) {
    throw UsageError("network config: mfe_channels must be 1, 2, or 3, got " +
                     std::to_string(mfe_channels));
  }
  if (layers_per_channel < 1) {
    throw UsageError("network config: layers_per_channel must be >= 1");
  }
  if (filters_per_layer < 1 || fusion_filters < 1) {
    throw UsageError("network config: filter counts must be >= 1");
  }
  if (head_kernel < 1 || head_kernel % 2 == 0) {
    throw UsageError("network config: head_kernel must be odd and >= 1, got " +
                     std::to_string(head_kernel));
  }
  if (!channel_patterns.empty()) {
    if (static_cast<int>(channel_patterns.size()) != mfe_channels) {
      throw UsageError("network config: channel_patterns has " +
                       std::to_string(channel_patterns.size()) +
                       " channels, expected " + std::to_string(mfe_channels));
    }
    for (const auto& pattern : channel_patterns) {
      if (static_cast<int>(pattern.size()) != layers_per_channel) {
        throw UsageError("network config: pattern length " +
                         std::to_string(pattern.size()) + " != L = " +
                         std::to_string(layers_per_channel));
      }
    }
  }
}

std::vector<std::vector<LayerKind>> NetworkConfig::effective_patterns() const {
  if (!channel_patterns.empty()) return channel_patterns;
  return make_patterns(PatternPreset::alternating, mfe_channels,
                       layers_per_channel);
}

std::vector<std::vector<LayerKind>> make_patterns(PatternPreset preset,
                                                  int channels, int layers) {
  std::vector<std::vector<LayerKind>> out(
      static_cast<std::size_t>(channels),
      std::vector<LayerKind>(static_cast<std::size_t>(layers)));
  for (auto& pattern : out) {
    for (std::size_t j = 0; j < pattern.size(); ++j) {
      switch (preset) {
        case PatternPreset::alternating:
          // Alternation starts on a dilated layer.
          pattern[j] = j % 2 == 0 ? LayerKind::dilated : LayerKind::normal;
          break;
        case PatternPreset::dilated:
          pattern[j] = LayerKind::dilated;
          break;
        case PatternPreset::conv:
          pattern[j] = LayerKind::normal;
          break;
      }
    }
  }
  return out;
}

int measurement_kernel_count(double measurement_rate, int block_size) {
  if (!(measurement_rate > 0.0 && measurement_rate <= 1.0)) {
    throw UsageError("measurement_kernel_count: rate must lie in (0, 1], got " +
                     std::to_string(measurement_rate));
  }
  if (block_size < 1) {
    throw UsageError("measurement_kernel_count: block size must be >= 1");
  }
  const double exact =
      measurement_rate * static_cast<double>(block_size) * block_size;
  // The epsilon shields exact products (e.g. 0.25 * 64) from one-ulp
  // undershoot in the decimal rate.
  const auto n = static_cast<int>(std::floor(exact + 1e-9));
  return n < 1 ? 1 : n;
}

int receptive_field(int dilation) {
  if (dilation < 1) {
    throw UsageError("receptive_field: dilation must be >= 1, got " +
                     std::to_string(dilation));
  }
  return 2 * dilation + 1;
}

Network build_network_zeros(const NetworkConfig& config) {
  config.validate();
  const int B = config.block_size;
  const int n = measurement_kernel_count(config.measurement_rate, B);
  const int F = config.filters_per_layer;
  const int C = config.mfe_channels;
  const auto patterns = config.effective_patterns();

  Network net;
  net.config = config;
  net.measurement_weight = Tensor(Dims4{n, 1, B, B});
  net.deconv_weight = Tensor(Dims4{n, 1, B, B});
  net.deconv_bias = Tensor(Dims4{1, 1, 1, 1});

  net.mfe.resize(static_cast<std::size_t>(C));
  for (int i = 1; i <= C; ++i) {
    auto& channel = net.mfe[static_cast<std::size_t>(i - 1)];
    channel.resize(static_cast<std::size_t>(config.layers_per_channel));
    for (int j = 1; j <= config.layers_per_channel; ++j) {
      MfeLayer& layer = channel[static_cast<std::size_t>(j - 1)];
      layer.kind = patterns[static_cast<std::size_t>(i - 1)]
                           [static_cast<std::size_t>(j - 1)];
      layer.spec = mfe_spec(config, i, j, layer.kind);
      layer.weight = Tensor(Dims4{layer.spec.out_channels,
                                  layer.spec.in_channels, layer.spec.kernel_h,
                                  layer.spec.kernel_w});
      layer.bias = Tensor(Dims4{layer.spec.out_channels, 1, 1, 1});
    }
  }

  const int k = config.head_kernel;
  net.fusion_weight = Tensor(Dims4{config.fusion_filters, C * F, k, k});
  net.fusion_bias = Tensor(Dims4{config.fusion_filters, 1, 1, 1});
  net.head_weight = Tensor(Dims4{1, config.fusion_filters, k, k});
  net.head_bias = Tensor(Dims4{1, 1, 1, 1});
  return net;
}

Network build_network(const NetworkConfig& config, std::uint64_t seed) {
  Network net = build_network_zeros(config);
  const int B = config.block_size;
  const int n = net.measurement_kernels();

  net.measurement_weight =
      he_init(net.measurement_weight.dims, static_cast<std::int64_t>(B) * B,
              derive_seed(seed, "measurement.weight"));

  // With kernel == stride, each deconv output pixel receives exactly one tap
  // per input channel, so the fan-in is the channel count n.
  net.deconv_weight = he_init(net.deconv_weight.dims, n,
                              derive_seed(seed, "deconv.weight"));

  for (std::size_t i = 0; i < net.mfe.size(); ++i) {
    for (std::size_t j = 0; j < net.mfe[i].size(); ++j) {
      MfeLayer& layer = net.mfe[i][j];
      const std::int64_t fan_in =
          static_cast<std::int64_t>(layer.spec.in_channels) *
          layer.spec.kernel_h * layer.spec.kernel_w;
      const std::string name =
          param_prefix(static_cast<int>(i) + 1, static_cast<int>(j) + 1) +
          ".weight";
      layer.weight = he_init(layer.weight.dims, fan_in, derive_seed(seed, name));
    }
  }

  net.fusion_weight = he_init(
      net.fusion_weight.dims,
      static_cast<std::int64_t>(net.fusion_weight.dims.c) *
          net.fusion_weight.dims.h * net.fusion_weight.dims.w,
      derive_seed(seed, "fusion.weight"));
  net.head_weight = he_init(net.head_weight.dims,
                            static_cast<std::int64_t>(net.head_weight.dims.c) *
                                net.head_weight.dims.h * net.head_weight.dims.w,
                            derive_seed(seed, "head.weight"));
  return net;
}

std::vector<std::pair<std::string, Dims4>> parameter_shapes(
    const NetworkConfig& config) {
  Network net = build_network_zeros(config);
  std::vector<std::pair<std::string, Dims4>> out;
  for (const NamedParam& p : parameters(net)) {
    out.emplace_back(p.name, p.tensor->dims);
  }
  return out;
}

std::vector<NamedParam> parameters(Network& net) {
  std::vector<NamedParam> out;
  out.push_back({"measurement.weight", &net.measurement_weight});
  out.push_back({"deconv.weight", &net.deconv_weight});
  out.push_back({"deconv.bias", &net.deconv_bias});
  for (std::size_t i = 0; i < net.mfe.size(); ++i) {
    for (std::size_t j = 0; j < net.mfe[i].size(); ++j) {
      const std::string prefix =
          param_prefix(static_cast<int>(i) + 1, static_cast<int>(j) + 1);
      out.push_back({prefix + ".weight", &net.mfe[i][j].weight});
      out.push_back({prefix + ".bias", &net.mfe[i][j].bias});
    }
  }
  out.push_back({"fusion.weight", &net.fusion_weight});
  out.push_back({"fusion.bias", &net.fusion_bias});
  out.push_back({"head.weight", &net.head_weight});
  out.push_back({"head.bias", &net.head_bias});
  return out;
}

std::int64_t count_parameters(const NetworkConfig& config, CountScope scope) {
  config.validate();
  const auto patterns = config.effective_patterns();
  const std::int64_t F = config.filters_per_layer;

  // Dilated kernels contribute their 3x3 = 9 stored weights, never the
  // inflated extent.
  std::int64_t mfe_weights = 0;
  std::int64_t mfe_biases = 0;
  for (int i = 1; i <= config.mfe_channels; ++i) {
    for (int j = 1; j <= config.layers_per_channel; ++j) {
      const LayerKind kind = patterns[static_cast<std::size_t>(i - 1)]
                                     [static_cast<std::size_t>(j - 1)];
      const std::int64_t k = kind == LayerKind::dilated ? 3 : 2 * i + 1;
      const std::int64_t in = j == 1 ? 1 : F;
      mfe_weights += F * in * k * k;
      mfe_biases += F;
    }
  }
  if (scope == CountScope::mfe_only) return mfe_weights;

  const std::int64_t B = config.block_size;
  const std::int64_t n = measurement_kernel_count(config.measurement_rate,
                                                  config.block_size);
  const std::int64_t k = config.head_kernel;
  std::int64_t total = mfe_weights + mfe_biases;
  total += n * B * B;          // measurement kernels (no bias)
  total += n * B * B + 1;      // deconv + its bias
  total += config.fusion_filters * (config.mfe_channels * F) * k * k +
           config.fusion_filters;
  total += config.fusion_filters * k * k + 1;  // head + its bias
  return total;
}

Tensor measure(const Network& net, const Tensor& image) {
  const int B = net.config.block_size;
  if (image.dims.c != 1) {
    throw DimensionError("measure: channel axis must be 1, got " +
                         std::to_string(image.dims.c));
  }
  if (image.dims.h % B != 0 || image.dims.w % B != 0) {
    throw GeometryError("measure: spatial dims " + std::to_string(image.dims.h) +
                        "x" + std::to_string(image.dims.w) +
                        " are not multiples of block " + std::to_string(B) +
                        "; pad with pad_to_multiple first");
  }
  ConvSpec spec;
  spec.out_channels = net.measurement_kernels();
  spec.in_channels = 1;
  spec.kernel_h = spec.kernel_w = B;
  spec.stride = B;
  return conv2d_infer(image, net.measurement_weight, {}, spec);
}

Tensor initial_reconstruct(const Network& net, const Tensor& measurements) {
  if (measurements.dims.c != net.measurement_kernels()) {
    throw DimensionError("initial_reconstruct: channel axis is " +
                         std::to_string(measurements.dims.c) +
                         ", network measures " +
                         std::to_string(net.measurement_kernels()) +
                         " values per block");
  }
  return conv_transpose2d_infer(measurements, net.deconv_weight,
                                bias_span(net.deconv_bias),
                                net.config.block_size);
}

std::vector<Tensor> mfe_forward(const Network& net, const Tensor& x1) {
  if (x1.dims.c != 1) {
    throw DimensionError("mfe_forward: input channel axis must be 1, got " +
                         std::to_string(x1.dims.c));
  }
  std::vector<Tensor> features;
  features.reserve(net.mfe.size());
  for (const auto& channel : net.mfe) {
    Tensor x = x1;
    for (const MfeLayer& layer : channel) {
      x = conv2d_infer(x, layer.weight, bias_span(layer.bias), layer.spec);
      x = relu_infer(x);
    }
    features.push_back(std::move(x));
  }
  return features;
}

namespace {

ConvSpec fusion_spec(const NetworkConfig& config) {
  ConvSpec s;
  s.out_channels = config.fusion_filters;
  s.in_channels = config.mfe_channels * config.filters_per_layer;
  s.kernel_h = s.kernel_w = config.head_kernel;
  s.padding = (config.head_kernel - 1) / 2;
  s.has_bias = true;
  s.has_relu = true;
  return s;
}

ConvSpec head_spec(const NetworkConfig& config) {
  ConvSpec s;
  s.out_channels = 1;
  s.in_channels = config.fusion_filters;
  s.kernel_h = s.kernel_w = config.head_kernel;
  s.padding = (config.head_kernel - 1) / 2;
  s.has_bias = true;
  s.has_relu = false;  // linear output layer
  return s;
}

}  // namespace

Tensor forward(const Network& net, const Tensor& image) {
  const Tensor y = measure(net, image);
  const Tensor x1 = initial_reconstruct(net, y);
  const std::vector<Tensor> features = mfe_forward(net, x1);
  Tensor fused = concat_channels_infer(features);
  fused = conv2d_infer(fused, net.fusion_weight, bias_span(net.fusion_bias),
                       fusion_spec(net.config));
  fused = relu_infer(fused);
  return conv2d_infer(fused, net.head_weight, bias_span(net.head_bias),
                      head_spec(net.config));
}

NetForwardCache forward_train(const Network& net, const Tensor& image) {
  const int B = net.config.block_size;
  if (image.dims.c != 1) {
    throw DimensionError("forward_train: channel axis must be 1, got " +
                         std::to_string(image.dims.c));
  }
  if (image.dims.h % B != 0 || image.dims.w % B != 0) {
    throw GeometryError("forward_train: spatial dims must be multiples of " +
                        std::to_string(B));
  }

  NetForwardCache cache;

  ConvSpec m_spec;
  m_spec.out_channels = net.measurement_kernels();
  m_spec.in_channels = 1;
  m_spec.kernel_h = m_spec.kernel_w = B;
  m_spec.stride = B;
  auto measured = conv2d(image, net.measurement_weight, {}, m_spec);
  cache.measure = std::move(measured.cache);

  auto upsampled = conv_transpose2d(measured.output, net.deconv_weight,
                                    bias_span(net.deconv_bias), B);
  cache.deconv = std::move(upsampled.cache);

  std::vector<Tensor> features;
  features.reserve(net.mfe.size());
  cache.mfe.resize(net.mfe.size());
  for (std::size_t i = 0; i < net.mfe.size(); ++i) {
    Tensor x = upsampled.output;
    auto& layer_caches = cache.mfe[i];
    layer_caches.resize(net.mfe[i].size());
    for (std::size_t j = 0; j < net.mfe[i].size(); ++j) {
      const MfeLayer& layer = net.mfe[i][j];
      auto conv = conv2d(x, layer.weight, bias_span(layer.bias), layer.spec);
      layer_caches[j].conv = std::move(conv.cache);
      auto act = relu(conv.output);
      layer_caches[j].relu = std::move(act.cache);
      x = std::move(act.output);
    }
    features.push_back(std::move(x));
  }

  auto fused = concat_channels(features);
  cache.concat = std::move(fused.cache);
  auto fusion = conv2d(fused.output, net.fusion_weight,
                       bias_span(net.fusion_bias), fusion_spec(net.config));
  cache.fusion = std::move(fusion.cache);
  auto fusion_act = relu(fusion.output);
  cache.fusion_relu = std::move(fusion_act.cache);
  auto head = conv2d(fusion_act.output, net.head_weight,
                     bias_span(net.head_bias), head_spec(net.config));
  cache.head = std::move(head.cache);
  cache.output = std::move(head.output);
  return cache;
}

namespace {

Tensor bias_grad_tensor(const std::vector<double>& grad_bias) {
  return Tensor(Dims4{static_cast<std::int64_t>(grad_bias.size()), 1, 1, 1},
                grad_bias);
}

}  // namespace

std::vector<Tensor> backward(const Network& net, NetForwardCache& cache,
                             const Tensor& grad_output) {
  auto head_grads = conv2d_backward(grad_output, cache.head);
  Tensor g = relu_backward(head_grads.grad_input, cache.fusion_relu);
  auto fusion_grads = conv2d_backward(g, cache.fusion);
  std::vector<Tensor> per_channel =
      split_channels_backward(fusion_grads.grad_input, cache.concat);

  // X1 feeds every channel, so its gradient is the sum over channels.
  Tensor grad_x1;
  std::vector<std::vector<ConvGrads>> mfe_grads(net.mfe.size());
  for (std::size_t i = 0; i < net.mfe.size(); ++i) {
    Tensor gx = std::move(per_channel[i]);
    auto& layer_caches = cache.mfe[i];
    mfe_grads[i].resize(layer_caches.size());
    for (std::size_t jr = layer_caches.size(); jr-- > 0;) {
      gx = relu_backward(gx, layer_caches[jr].relu);
      mfe_grads[i][jr] = conv2d_backward(gx, layer_caches[jr].conv);
      gx = std::move(mfe_grads[i][jr].grad_input);
    }
    if (i == 0) {
      grad_x1 = std::move(gx);
    } else {
      for (std::size_t k = 0; k < grad_x1.data.size(); ++k) {
        grad_x1.data[k] += gx.data[k];
      }
    }
  }

  auto deconv_grads = conv_transpose2d_backward(grad_x1, cache.deconv);
  auto measure_grads = conv2d_backward(deconv_grads.grad_input, cache.measure);

  std::vector<Tensor> grads;
  grads.push_back(std::move(measure_grads.grad_weights));
  grads.push_back(std::move(deconv_grads.grad_weights));
  grads.push_back(bias_grad_tensor(deconv_grads.grad_bias));
  for (std::size_t i = 0; i < net.mfe.size(); ++i) {
    for (std::size_t j = 0; j < net.mfe[i].size(); ++j) {
      grads.push_back(std::move(mfe_grads[i][j].grad_weights));
      grads.push_back(bias_grad_tensor(mfe_grads[i][j].grad_bias));
    }
  }
  grads.push_back(std::move(fusion_grads.grad_weights));
  grads.push_back(bias_grad_tensor(fusion_grads.grad_bias));
  grads.push_back(std::move(head_grads.grad_weights));
  grads.push_back(bias_grad_tensor(head_grads.grad_bias));
  return grads;
}

}  // namespace msdcnn
