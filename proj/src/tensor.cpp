#include "msdcnn/tensor.hpp"

#include <cmath>

#include "msdcnn/rng.hpp"

namespace msdcnn {

std::string to_string(const Dims4& d) {
  return "(" + std::to_string(d.n) + ", " + std::to_string(d.c) + ", " +
         std::to_string(d.h) + ", " + std::to_string(d.w) + ")";
}

namespace {

void check_dims(const Dims4& d) {
  if (d.n <= 0 || d.c <= 0 || d.h <= 0 || d.w <= 0) {
    throw DimensionError("tensor dims must be positive, got " + to_string(d));
  }
}

}  // namespace

Tensor::Tensor(Dims4 d) : dims(d) {
  check_dims(d);
  data.assign(static_cast<std::size_t>(d.count()), 0.0);
}

Tensor::Tensor(Dims4 d, std::vector<double> values) : dims(d), data(std::move(values)) {
  check_dims(d);
  if (static_cast<std::int64_t>(data.size()) != d.count()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match dims " + to_string(d));
  }
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
  grad.assign(data.size(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dims == b.dims) return;
  const char* axis = a.dims.n != b.dims.n   ? "batch"
                     : a.dims.c != b.dims.c ? "channel"
                     : a.dims.h != b.dims.h ? "height"
                                            : "width";
  throw DimensionError(std::string(what) + ": " + axis + " axis differs, " +
                       to_string(a.dims) + " vs " + to_string(b.dims));
}

double Rng::next_normal() {
  // Box-Muller; resample u1 away from zero so the log is finite.
  double u1 = next_double();
  while (u1 <= 0.0) u1 = next_double();
  const double u2 = next_double();
  const double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  if (n == 0) throw UsageError("Rng::next_below: n must be positive");
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

}  // namespace msdcnn
