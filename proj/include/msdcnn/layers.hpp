#pragma once

#include <span>
#include <vector>

#include "msdcnn/tensor.hpp"

namespace msdcnn {

// Static description of one convolutional layer.  `has_relu`/`has_bias` are
// assembly metadata consumed by the network builder and parameter counting;
// conv2d itself is purely linear (+bias) and activations are separate ops.
struct ConvSpec {
  int out_channels = 0;
  int in_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  bool has_bias = false;
  bool has_relu = false;

  void validate() const;
};

// Saved forward state for one conv2d call.  Single-consumer: the matching
// backward marks it consumed and a second use is a UsageError.
struct ConvCache {
  Tensor input;
  Tensor weights;
  ConvSpec spec;
  Dims4 out_dims;
  bool had_bias = false;
  bool consumed = false;
};

struct Conv2dResult {
  Tensor output;
  ConvCache cache;
};

struct ConvGrads {
  Tensor grad_input;
  Tensor grad_weights;
  std::vector<double> grad_bias;  // empty when the layer has no bias
};

// 2-D cross-correlation with zero padding.  weights are (O, I, Kh, Kw);
// bias, when non-empty, has length O and spec.has_bias must agree.
Conv2dResult conv2d(const Tensor& input, const Tensor& weights,
                    std::span<const double> bias, const ConvSpec& spec);

// Forward pass only, no cache; bitwise-identical outputs to conv2d.
Tensor conv2d_infer(const Tensor& input, const Tensor& weights,
                    std::span<const double> bias, const ConvSpec& spec);

ConvGrads conv2d_backward(const Tensor& grad_output, ConvCache& cache);

// Saved forward state for one conv_transpose2d call.
struct DeconvCache {
  Tensor input;
  Tensor weights;
  int stride = 1;
  Dims4 out_dims;
  bool had_bias = false;
  bool consumed = false;
};

struct DeconvResult {
  Tensor output;
  DeconvCache cache;
};

// Transposed convolution (the exact adjoint of conv2d with the same stride
// and no padding): input (N, I, H, W) + weights (I, O, Kh, Kw) produce
// (N, O, (H-1)*stride+Kh, (W-1)*stride+Kw).
DeconvResult conv_transpose2d(const Tensor& input, const Tensor& weights,
                              std::span<const double> bias, int stride);

Tensor conv_transpose2d_infer(const Tensor& input, const Tensor& weights,
                              std::span<const double> bias, int stride);

ConvGrads conv_transpose2d_backward(const Tensor& grad_output,
                                    DeconvCache& cache);

struct ReluCache {
  Tensor input;
  bool consumed = false;
};

struct ReluResult {
  Tensor output;
  ReluCache cache;
};

// Elementwise max(0, x).  The backward pass uses subgradient 0 at x == 0.
ReluResult relu(const Tensor& input);
Tensor relu_infer(const Tensor& input);
Tensor relu_backward(const Tensor& grad_output, ReluCache& cache);

struct ConcatCache {
  std::vector<std::int64_t> channel_counts;
  Dims4 out_dims;
  bool consumed = false;
};

struct ConcatResult {
  Tensor output;
  ConcatCache cache;
};

// Concatenate along the channel axis; batch and spatial dims must agree.
ConcatResult concat_channels(std::span<const Tensor> inputs);
Tensor concat_channels_infer(std::span<const Tensor> inputs);
std::vector<Tensor> split_channels_backward(const Tensor& grad_output,
                                            ConcatCache& cache);

struct MseResult {
  double loss = 0.0;
  Tensor grad_pred;
};

// loss = sum over the batch of ||pred_i - target_i||_F^2 / (2 * batch);
// grad_pred = (pred - target) / batch.  The target receives no gradient.
MseResult mse_loss(const Tensor& pred, const Tensor& target);

// Zero-inflate a (O, I, Kh, Kw) kernel so that running it densely (dilation
// 1) computes the same function as the original with dilation d.
Tensor dilate_kernel(const Tensor& weights, int dilation);

}  // namespace msdcnn
