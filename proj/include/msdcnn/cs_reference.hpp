#pragma once

#include <cstdint>
#include <vector>

#include "msdcnn/tensor.hpp"

namespace msdcnn {

// Dense measurement matrix Phi (M x N), row-major.  For the block variant
// Phi_B, N = B^2.
struct CSMatrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;

  CSMatrix() = default;
  CSMatrix(std::int64_t rows, std::int64_t cols);
  CSMatrix(std::int64_t rows, std::int64_t cols, std::vector<double> values);

  double& at(std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>(r * cols + c)];
  }
  double at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols + c)];
  }

  // A compressive system has M <= N and finite entries.
  void validate() const;
};

// Classical block-based measurement: split the image into non-overlapping
// B x B blocks (row-major traversal), flatten each block row-major, and
// left-multiply by Phi_B.  One output vector per block, in block order.
std::vector<std::vector<double>> block_measure(const Tensor& image,
                                               const CSMatrix& phi_b, int B);

// Row k of the result is the row-major flattening of measurement kernel k;
// the learned measurement is exactly this matrix acting on flattened blocks.
CSMatrix kernels_to_matrix(const Tensor& w1);

// Smallest delta such that (1-delta)|x|^2 <= |Phi x|^2 <= (1+delta)|x|^2 for
// all K-sparse x, by exhaustive enumeration of K-column submatrices.  The
// enumeration budget C(N,K) <= 1e6 keeps this a desk-scale oracle.
double rip_constant(const CSMatrix& phi, int sparsity);

// x = Psi s with Psi an N x N orthonormal basis (row-major) and s the sparse
// coefficient vector.
struct SparseModel {
  std::vector<double> basis;   // Psi, N x N row-major
  std::vector<double> coeffs;  // s, length N
  std::int64_t n = 0;
  int sparsity = 0;       // K = number of nonzeros in s
  double rip_delta = 0.0;  // caller-recorded delta_K estimate

  // Checks K == |s|_0, K <= N, and Psi^T Psi = I within 1e-10.
  void validate() const;
};

std::vector<double> sparse_synthesis(const SparseModel& model);

}  // namespace msdcnn
