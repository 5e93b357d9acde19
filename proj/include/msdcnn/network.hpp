#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msdcnn/layers.hpp"
#include "msdcnn/tensor.hpp"

namespace msdcnn {

enum class LayerKind { dilated, normal };

// Canned channel_patterns choices for experiments and the CLI.
enum class PatternPreset { alternating, dilated, conv };

// Structural hyperparameters.  Channel i (1-indexed) uses dilation factor i;
// its "normal" layers use kernel extent 2i+1 so that every layer in a channel
// covers the same receptive field.
struct NetworkConfig {
  double measurement_rate = 0.10;
  int block_size = 32;
  int mfe_channels = 3;
  int layers_per_channel = 4;
  int filters_per_layer = 32;
  // One pattern of length layers_per_channel per channel; empty means the
  // default alternation [dilated, normal, dilated, normal, ...].
  std::vector<std::vector<LayerKind>> channel_patterns;
  int fusion_filters = 32;
  int head_kernel = 3;

  void validate() const;
  std::vector<std::vector<LayerKind>> effective_patterns() const;
};

std::vector<std::vector<LayerKind>> make_patterns(PatternPreset preset,
                                                  int channels, int layers);

// Number of measurement kernels n = floor(MR * B^2), at least 1.
int measurement_kernel_count(double measurement_rate, int block_size);

// Receptive-field extent of a dilated 3x3 kernel: 2d+1.
int receptive_field(int dilation);

struct MfeLayer {
  LayerKind kind = LayerKind::dilated;
  ConvSpec spec;  // fully resolved: kernel, dilation, padding, bias, relu
  Tensor weight;
  Tensor bias;  // dims (O, 1, 1, 1)
};

struct Network {
  NetworkConfig config;
  Tensor measurement_weight;  // (n, 1, B, B); stride B, no bias, no activation
  Tensor deconv_weight;       // (n, 1, B, B) transposed-conv layout
  Tensor deconv_bias;         // (1, 1, 1, 1)
  std::vector<std::vector<MfeLayer>> mfe;  // [channel][layer]
  Tensor fusion_weight;  // (F, C*F, k, k)
  Tensor fusion_bias;    // (F, 1, 1, 1)
  Tensor head_weight;    // (1, F, k, k); linear output layer
  Tensor head_bias;      // (1, 1, 1, 1)

  int measurement_kernels() const {
    return static_cast<int>(measurement_weight.dims.n);
  }
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

// Every trainable tensor in a stable order: measurement, deconv, MFE in
// channel-major layer-minor order, fusion, head; weight before bias.
std::vector<NamedParam> parameters(Network& net);

// All weights He-initialized from `seed` (biases zero); independent named
// streams, so two builds with one seed are bitwise identical and shared
// channels agree across different channel counts.
Network build_network(const NetworkConfig& config, std::uint64_t seed);

// Same structure with all parameters zero (checkpoint loading fills them in).
Network build_network_zeros(const NetworkConfig& config);

// Name and shape of every parameter, in parameters() order.
std::vector<std::pair<std::string, Dims4>> parameter_shapes(
    const NetworkConfig& config);

enum class CountScope { mfe_only, full };

// mfe_only counts MFE weight entries with dilated kernels at their 3x3
// nonzero count (not the inflated extent), biases excluded; full adds
// measurement, deconv, fusion and head weights plus every bias.
std::int64_t count_parameters(const NetworkConfig& config, CountScope scope);

// Stage 1: fully convolutional measurement (kernel B, stride B, no bias).
Tensor measure(const Network& net, const Tensor& image);

// Stage 2: transposed-conv upsampling back to image resolution (with bias).
Tensor initial_reconstruct(const Network& net, const Tensor& measurements);

// Stage 3: the parallel multi-scale channels; one 32-channel map each.
std::vector<Tensor> mfe_forward(const Network& net, const Tensor& x1);

// Full pipeline: measure -> initial_reconstruct -> MFE -> concat -> fusion
// conv + ReLU -> linear head.  Output dims equal input dims.
Tensor forward(const Network& net, const Tensor& image);

// Forward pass that records every layer cache for backward().
struct NetForwardCache {
  struct MfeLayerCache {
    ConvCache conv;
    ReluCache relu;
  };
  ConvCache measure;
  DeconvCache deconv;
  std::vector<std::vector<MfeLayerCache>> mfe;
  ConcatCache concat;
  ConvCache fusion;
  ReluCache fusion_relu;
  ConvCache head;
  Tensor output;
};

NetForwardCache forward_train(const Network& net, const Tensor& image);

// Parameter gradients aligned index-for-index with parameters(net).
std::vector<Tensor> backward(const Network& net, NetForwardCache& cache,
                             const Tensor& grad_output);

}  // namespace msdcnn
