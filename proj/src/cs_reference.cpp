#include "msdcnn/cs_reference.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace msdcnn {

CSMatrix::CSMatrix(std::int64_t r, std::int64_t c)
    : rows(r), cols(c) {
  if (r <= 0 || c <= 0) {
    throw DimensionError("CSMatrix: dimensions must be positive, got " +
                         std::to_string(r) + "x" + std::to_string(c));
  }
  data.assign(static_cast<std::size_t>(r * c), 0.0);
}

CSMatrix::CSMatrix(std::int64_t r, std::int64_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (r <= 0 || c <= 0) {
    throw DimensionError("CSMatrix: dimensions must be positive");
  }
  if (static_cast<std::int64_t>(data.size()) != r * c) {
    throw DimensionError("CSMatrix: data length " + std::to_string(data.size()) +
                         " does not match " + std::to_string(r) + "x" +
                         std::to_string(c));
  }
}

void CSMatrix::validate() const {
  if (rows > cols) {
    throw UsageError("CSMatrix: compressive system needs rows <= cols, got " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError("CSMatrix: non-finite entry");
    }
  }
}

std::vector<std::vector<double>> block_measure(const Tensor& image,
                                               const CSMatrix& phi_b, int B) {
  if (B < 1) throw UsageError("block_measure: block size must be >= 1");
  if (image.dims.c != 1) {
    throw DimensionError("block_measure: channel axis must be 1, got " +
                         std::to_string(image.dims.c));
  }
  if (image.dims.h % B != 0 || image.dims.w % B != 0) {
    throw GeometryError("block_measure: spatial dims " +
                        std::to_string(image.dims.h) + "x" +
                        std::to_string(image.dims.w) +
                        " are not multiples of block " + std::to_string(B));
  }
  if (phi_b.cols != static_cast<std::int64_t>(B) * B) {
    throw DimensionError("block_measure: matrix has " +
                         std::to_string(phi_b.cols) + " cols, block needs " +
                         std::to_string(static_cast<std::int64_t>(B) * B));
  }

  // Row-major over (batch, block-row, block-col); blocks flattened row-major.
  std::vector<std::vector<double>> out;
  std::vector<double> block(static_cast<std::size_t>(B) * B);
  for (std::int64_t b = 0; b < image.dims.n; ++b) {
    for (std::int64_t by = 0; by < image.dims.h; by += B) {
      for (std::int64_t bx = 0; bx < image.dims.w; bx += B) {
        for (int y = 0; y < B; ++y) {
          for (int x = 0; x < B; ++x) {
            block[static_cast<std::size_t>(y) * B + x] =
                image.at(b, 0, by + y, bx + x);
          }
        }
        std::vector<double> y_vec(static_cast<std::size_t>(phi_b.rows));
        for (std::int64_t r = 0; r < phi_b.rows; ++r) {
          double acc = 0.0;
          const double* row = phi_b.data.data() + r * phi_b.cols;
          for (std::int64_t c = 0; c < phi_b.cols; ++c) {
            acc = std::fma(row[c], block[static_cast<std::size_t>(c)], acc);
          }
          y_vec[static_cast<std::size_t>(r)] = acc;
        }
        out.push_back(std::move(y_vec));
      }
    }
  }
  return out;
}

CSMatrix kernels_to_matrix(const Tensor& w1) {
  if (w1.dims.c != 1) {
    throw DimensionError("kernels_to_matrix: kernels must be single-channel, got " +
                         std::to_string(w1.dims.c));
  }
  if (w1.dims.h != w1.dims.w) {
    throw DimensionError("kernels_to_matrix: kernels must be square, got " +
                         std::to_string(w1.dims.h) + "x" +
                         std::to_string(w1.dims.w));
  }
  // Row k = kernel k flattened row-major; exactly the tensor's own layout.
  return CSMatrix(w1.dims.n, w1.dims.h * w1.dims.w, w1.data);
}

namespace {

// C(n, k) with saturation just above the enumeration budget.
double binomial_capped(std::int64_t n, std::int64_t k, double cap) {
  double v = 1.0;
  for (std::int64_t i = 1; i <= k; ++i) {
    v *= static_cast<double>(n - k + i) / static_cast<double>(i);
    if (v > cap * 2) return v;
  }
  return v;
}

// Extreme eigenvalues of a symmetric k x k matrix via cyclic Jacobi.
std::pair<double, double> symmetric_eigen_range(std::vector<double> a, int k) {
  auto at = [&](int r, int c) -> double& {
    return a[static_cast<std::size_t>(r) * k + c];
  };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < k; ++p) {
      for (int q = p + 1; q < k; ++q) off += at(p, q) * at(p, q);
    }
    if (off < 1e-30) break;
    for (int p = 0; p < k; ++p) {
      for (int q = p + 1; q < k; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < k; ++i) {
          const double aip = at(i, p), aiq = at(i, q);
          at(i, p) = c * aip - s * aiq;
          at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < k; ++i) {
          const double api = at(p, i), aqi = at(q, i);
          at(p, i) = c * api - s * aqi;
          at(q, i) = s * api + c * aqi;
        }
      }
    }
  }
  double lo = at(0, 0), hi = at(0, 0);
  for (int i = 1; i < k; ++i) {
    lo = std::min(lo, at(i, i));
    hi = std::max(hi, at(i, i));
  }
  return {lo, hi};
}

}  // namespace

double rip_constant(const CSMatrix& phi, int sparsity) {
  phi.validate();
  if (sparsity < 1 || sparsity > phi.cols) {
    throw UsageError("rip_constant: sparsity must lie in [1, cols], got " +
                     std::to_string(sparsity));
  }
  constexpr double kBudget = 1e6;
  const double supports = binomial_capped(phi.cols, sparsity, kBudget);
  if (supports > kBudget) {
    throw BudgetError("rip_constant: C(" + std::to_string(phi.cols) + ", " +
                      std::to_string(sparsity) +
                      ") exceeds the 1e6 enumeration budget; use a smaller "
                      "matrix or sparsity");
  }

  const int k = sparsity;
  std::vector<std::int64_t> support(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) support[static_cast<std::size_t>(i)] = i;

  std::vector<double> gram(static_cast<std::size_t>(k) * k);
  double delta = 0.0;
  while (true) {
    // Gram of the selected columns; eigenvalues are squared singular values.
    for (int i = 0; i < k; ++i) {
      for (int j = i; j < k; ++j) {
        double acc = 0.0;
        for (std::int64_t r = 0; r < phi.rows; ++r) {
          acc += phi.at(r, support[static_cast<std::size_t>(i)]) *
                 phi.at(r, support[static_cast<std::size_t>(j)]);
        }
        gram[static_cast<std::size_t>(i) * k + j] = acc;
        gram[static_cast<std::size_t>(j) * k + i] = acc;
      }
    }
    const auto [lo, hi] = symmetric_eigen_range(gram, k);
    delta = std::max({delta, 1.0 - lo, hi - 1.0});

    // Next combination in lexicographic order.
    int pos = k - 1;
    while (pos >= 0 &&
           support[static_cast<std::size_t>(pos)] == phi.cols - k + pos) {
      --pos;
    }
    if (pos < 0) break;
    ++support[static_cast<std::size_t>(pos)];
    for (int i = pos + 1; i < k; ++i) {
      support[static_cast<std::size_t>(i)] =
          support[static_cast<std::size_t>(i - 1)] + 1;
    }
  }
  return delta;
}

void SparseModel::validate() const {
  if (n <= 0) throw UsageError("sparse model: n must be positive");
  if (static_cast<std::int64_t>(basis.size()) != n * n) {
    throw DimensionError("sparse model: basis has " +
                         std::to_string(basis.size()) + " entries, expected " +
                         std::to_string(n * n));
  }
  if (static_cast<std::int64_t>(coeffs.size()) != n) {
    throw DimensionError("sparse model: coeffs length " +
                         std::to_string(coeffs.size()) + ", expected " +
                         std::to_string(n));
  }
  int nonzeros = 0;
  for (double v : coeffs) nonzeros += v != 0.0 ? 1 : 0;
  if (nonzeros != sparsity) {
    throw UsageError("sparse model: sparsity field " + std::to_string(sparsity) +
                     " does not match " + std::to_string(nonzeros) +
                     " nonzero coefficients");
  }
  // Psi^T Psi = I within 1e-10.
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t r = 0; r < n; ++r) {
        acc += basis[static_cast<std::size_t>(r * n + i)] *
               basis[static_cast<std::size_t>(r * n + j)];
      }
      const double expect = i == j ? 1.0 : 0.0;
      if (std::abs(acc - expect) > 1e-10) {
        throw UsageError("sparse model: basis is not orthonormal (column pair " +
                         std::to_string(i) + "," + std::to_string(j) +
                         " deviates by " + std::to_string(acc - expect) + ")");
      }
    }
  }
}

std::vector<double> sparse_synthesis(const SparseModel& model) {
  model.validate();
  std::vector<double> x(static_cast<std::size_t>(model.n), 0.0);
  for (std::int64_t i = 0; i < model.n; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < model.n; ++j) {
      acc = std::fma(model.basis[static_cast<std::size_t>(i * model.n + j)],
                     model.coeffs[static_cast<std::size_t>(j)], acc);
    }
    x[static_cast<std::size_t>(i)] = acc;
  }
  return x;
}

}  // namespace msdcnn
