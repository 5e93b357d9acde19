#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msdcnn/errors.hpp"

namespace msdcnn {

// Shape of a rank-4 tensor in (batch, channels, height, width) order.
struct Dims4 {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t count() const { return n * c * h * w; }
  bool operator==(const Dims4&) const = default;
};

std::string to_string(const Dims4& d);

// Dense rank-4 array of doubles, row-major in (n, c, h, w), with an optional
// same-shape gradient buffer.  `grad` is empty until ensure_grad() is called.
struct Tensor {
  Dims4 dims;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Dims4 d);
  Tensor(Dims4 d, std::vector<double> values);

  std::int64_t size() const { return dims.count(); }

  std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h,
                     std::int64_t w) const {
    return ((n * dims.c + c) * dims.h + h) * dims.w + w;
  }
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>(index(n, c, h, w))];
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t h,
            std::int64_t w) const {
    return data[static_cast<std::size_t>(index(n, c, h, w))];
  }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad();
  void zero_grad();
  bool all_finite() const;
};

// Throws DimensionError unless a and b have identical dims; `what` names the
// operands in the message.
void require_same_dims(const Tensor& a, const Tensor& b, const char* what);

}  // namespace msdcnn
