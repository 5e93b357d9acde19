#pragma once

#include <cstdint>

namespace msdcnn::detail {

// C[M x N] += A[M x K] * B[K x N], row-major with explicit leading dims.
//
// Contract beyond the arithmetic: every output element is produced by a
// single fused-multiply-add chain over k in ascending order, followed by one
// add into C.  The convolution code relies on this order being independent
// of M/N tiling so that structurally-equal computations (e.g. a dilated
// kernel vs. its zero-inflated dense form) give bitwise-identical results.
void gemm_accumulate(std::int64_t m, std::int64_t n, std::int64_t k,
                     const double* a, std::int64_t lda,
                     const double* b, std::int64_t ldb,
                     double* c, std::int64_t ldc);

// C[M x N] = A[M x K] * B[K x N]: identical chain semantics to
// gemm_accumulate, but the chain's value is stored over C instead of added
// into it.  Bitwise equal to zero-filling C and accumulating (a chain that
// starts at +0.0 never yields -0.0), without the fill and read-back traffic.
void gemm_overwrite(std::int64_t m, std::int64_t n, std::int64_t k,
                    const double* a, std::int64_t lda,
                    const double* b, std::int64_t ldb,
                    double* c, std::int64_t ldc);

// C[M x N] += A[M x K] * B[N x K]^T, row-major with explicit leading dims;
// both operands are read contiguously along k, so no transpose staging is
// needed.
//
// Unlike gemm_accumulate, each output element is a dot product accumulated
// in eight independent ascending-k lanes and reduced once at the end.  The
// order is fixed for a given build (results stay run-to-run deterministic)
// but is NOT the single-chain order, so this entry point is only for
// consumers with a numeric tolerance — gradient accumulation, not the
// forward paths covered by bitwise equivalence checks.
void gemm_accumulate_bt(std::int64_t m, std::int64_t n, std::int64_t k,
                        const double* a, std::int64_t lda,
                        const double* b, std::int64_t ldb,
                        double* c, std::int64_t ldc);

// dst[cols x rows] = transpose of src[rows x cols]; buffers must not alias.
void transpose(std::int64_t rows, std::int64_t cols, const double* src,
               double* dst);

}  // namespace msdcnn::detail
