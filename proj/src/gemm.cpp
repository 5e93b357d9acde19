#include "msdcnn/gemm.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace msdcnn::detail {

#if defined(__AVX512F__)

namespace {

// B rows sit ldb doubles apart, a stride the hardware prefetcher tracks
// poorly for the multi-KB leading dims convolution produces.  Each 16-column
// strip of B is therefore repacked once into contiguous k-major rows (with
// software prefetch for the strided reads), and the register kernel streams
// the packed copy with full-width loads.  Packing relocates reads but leaves
// every value intact, so the arithmetic is untouched.
constexpr std::int64_t kPrefetchRows = 32;

thread_local std::vector<double> tl_bpack;

// Copies a K x nj strip (nj <= 16) into K contiguous rows of 16, zero-filling
// the lanes past nj so the kernel can load unmasked.  The zero lanes feed
// fma(a, 0, acc), which is exact, and their C lanes are masked off on store.
inline void pack_strip(std::int64_t K, const double* b, std::int64_t ldb,
                       double* bp, __mmask8 m0, __mmask8 m1) {
  const std::int64_t k_fetch = K - kPrefetchRows;
  for (std::int64_t k = 0; k < K; ++k) {
    const double* src = b + static_cast<std::size_t>(k) * ldb;
    if (k < k_fetch) {
      const char* ahead = reinterpret_cast<const char*>(
          src + static_cast<std::size_t>(kPrefetchRows) * ldb);
      _mm_prefetch(ahead, _MM_HINT_T0);
      _mm_prefetch(ahead + 64, _MM_HINT_T0);
    }
    _mm512_storeu_pd(bp + k * 16, _mm512_maskz_loadu_pd(m0, src));
    _mm512_storeu_pd(bp + k * 16 + 8, _mm512_maskz_loadu_pd(m1, src + 8));
  }
}

// 8x16 register tile: accumulators live in zmm for the whole k loop, so each
// C element sees exactly one fma chain in ascending k.  The k loop is
// unrolled by two; both halves feed the same accumulator registers, so the
// chain order per element is unchanged.
template <int MR, bool Accumulate>
inline void kernel(std::int64_t K, const double* __restrict A, std::int64_t lda,
                   const double* __restrict Bp, double* __restrict C,
                   std::int64_t ldc, __mmask8 m0, __mmask8 m1) {
  __m512d acc[MR][2];
  for (int i = 0; i < MR; ++i) {
    acc[i][0] = _mm512_setzero_pd();
    acc[i][1] = _mm512_setzero_pd();
  }
  std::int64_t k = 0;
  for (; k + 2 <= K; k += 2) {
    const double* brow = Bp + static_cast<std::size_t>(k) * 16;
    __m512d b0 = _mm512_loadu_pd(brow);
    __m512d b1 = _mm512_loadu_pd(brow + 8);
    __m512d b2 = _mm512_loadu_pd(brow + 16);
    __m512d b3 = _mm512_loadu_pd(brow + 24);
    for (int i = 0; i < MR; ++i) {
      const double* arow = A + static_cast<std::size_t>(i) * lda + k;
      __m512d a0 = _mm512_set1_pd(arow[0]);
      acc[i][0] = _mm512_fmadd_pd(a0, b0, acc[i][0]);
      acc[i][1] = _mm512_fmadd_pd(a0, b1, acc[i][1]);
      __m512d a1 = _mm512_set1_pd(arow[1]);
      acc[i][0] = _mm512_fmadd_pd(a1, b2, acc[i][0]);
      acc[i][1] = _mm512_fmadd_pd(a1, b3, acc[i][1]);
    }
  }
  for (; k < K; ++k) {
    const double* brow = Bp + static_cast<std::size_t>(k) * 16;
    __m512d b0 = _mm512_loadu_pd(brow);
    __m512d b1 = _mm512_loadu_pd(brow + 8);
    for (int i = 0; i < MR; ++i) {
      __m512d a = _mm512_set1_pd(A[static_cast<std::size_t>(i) * lda + k]);
      acc[i][0] = _mm512_fmadd_pd(a, b0, acc[i][0]);
      acc[i][1] = _mm512_fmadd_pd(a, b1, acc[i][1]);
    }
  }
  for (int i = 0; i < MR; ++i) {
    double* crow = C + static_cast<std::size_t>(i) * ldc;
    if constexpr (Accumulate) {
      __m512d c0 = _mm512_maskz_loadu_pd(m0, crow);
      __m512d c1 = _mm512_maskz_loadu_pd(m1, crow + 8);
      _mm512_mask_storeu_pd(crow, m0, _mm512_add_pd(c0, acc[i][0]));
      _mm512_mask_storeu_pd(crow + 8, m1, _mm512_add_pd(c1, acc[i][1]));
    } else {
      _mm512_mask_storeu_pd(crow, m0, acc[i][0]);
      _mm512_mask_storeu_pd(crow + 8, m1, acc[i][1]);
    }
  }
}

template <bool Accumulate>
void tile_dispatch(int mr, std::int64_t K, const double* A, std::int64_t lda,
                   const double* Bp, double* C, std::int64_t ldc, __mmask8 m0,
                   __mmask8 m1) {
  switch (mr) {
    case 8: kernel<8, Accumulate>(K, A, lda, Bp, C, ldc, m0, m1); break;
    case 7: kernel<7, Accumulate>(K, A, lda, Bp, C, ldc, m0, m1); break;
    case 6: kernel<6, Accumulate>(K, A, lda, Bp, C, ldc, m0, m1); break;
    case 5: kernel<5, Accumulate>(K, A, lda, Bp, C, ldc, m0, m1); break;
    case 4: kernel<4, Accumulate>(K, A, lda, Bp, C, ldc, m0, m1); break;
    case 3: kernel<3, Accumulate>(K, A, lda, Bp, C, ldc, m0, m1); break;
    case 2: kernel<2, Accumulate>(K, A, lda, Bp, C, ldc, m0, m1); break;
    case 1: kernel<1, Accumulate>(K, A, lda, Bp, C, ldc, m0, m1); break;
  }
}

template <bool Accumulate>
void gemm_drive(std::int64_t m, std::int64_t n, std::int64_t k,
                const double* a, std::int64_t lda,
                const double* b, std::int64_t ldb,
                double* c, std::int64_t ldc) {
  tl_bpack.resize(static_cast<std::size_t>(k) * 16);
  double* bp = tl_bpack.data();
  for (std::int64_t j0 = 0; j0 < n; j0 += 16) {
    const std::int64_t nj = n - j0 < 16 ? n - j0 : 16;
    const __mmask8 m0 =
        nj >= 8 ? static_cast<__mmask8>(0xFF)
                : static_cast<__mmask8>((1u << nj) - 1);
    const __mmask8 m1 =
        nj <= 8 ? static_cast<__mmask8>(0)
                : (nj >= 16 ? static_cast<__mmask8>(0xFF)
                            : static_cast<__mmask8>((1u << (nj - 8)) - 1));
    pack_strip(k, b + j0, ldb, bp, m0, m1);
    for (std::int64_t i0 = 0; i0 < m; i0 += 8) {
      const int mi = static_cast<int>(m - i0 < 8 ? m - i0 : 8);
      tile_dispatch<Accumulate>(mi, k, a + static_cast<std::size_t>(i0) * lda,
                                lda, bp,
                                c + static_cast<std::size_t>(i0) * ldc + j0,
                                ldc, m0, m1);
    }
  }
}

}  // namespace

void gemm_accumulate(std::int64_t m, std::int64_t n, std::int64_t k,
                     const double* a, std::int64_t lda,
                     const double* b, std::int64_t ldb,
                     double* c, std::int64_t ldc) {
  gemm_drive<true>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_overwrite(std::int64_t m, std::int64_t n, std::int64_t k,
                    const double* a, std::int64_t lda,
                    const double* b, std::int64_t ldb,
                    double* c, std::int64_t ldc) {
  gemm_drive<false>(m, n, k, a, lda, b, ldb, c, ldc);
}

namespace {

// Dot-product tile for the B-transposed form: acc[i][j] carries eight
// partial k-lane sums for C[i][j]; one reduction at the very end.  The k
// loop is unrolled by two with both halves feeding the same accumulators,
// so each lane's chain order is unchanged.  The K remainder uses masked
// loads, whose zeroed lanes contribute exact zeros.
template <int MR, int NR>
inline void kernel_bt(std::int64_t K, const double* __restrict A,
                      std::int64_t lda, const double* __restrict B,
                      std::int64_t ldb, double* __restrict C,
                      std::int64_t ldc) {
  __m512d acc[MR][NR];
  for (int i = 0; i < MR; ++i) {
    for (int j = 0; j < NR; ++j) acc[i][j] = _mm512_setzero_pd();
  }
  std::int64_t k = 0;
  for (; k + 16 <= K; k += 16) {
    __m512d av0[MR];
    __m512d av1[MR];
    for (int i = 0; i < MR; ++i) {
      const double* arow = A + static_cast<std::size_t>(i) * lda + k;
      av0[i] = _mm512_loadu_pd(arow);
      av1[i] = _mm512_loadu_pd(arow + 8);
    }
    for (int j = 0; j < NR; ++j) {
      const double* brow = B + static_cast<std::size_t>(j) * ldb + k;
      const __m512d bv0 = _mm512_loadu_pd(brow);
      const __m512d bv1 = _mm512_loadu_pd(brow + 8);
      for (int i = 0; i < MR; ++i) {
        acc[i][j] = _mm512_fmadd_pd(av0[i], bv0, acc[i][j]);
        acc[i][j] = _mm512_fmadd_pd(av1[i], bv1, acc[i][j]);
      }
    }
  }
  for (; k + 8 <= K; k += 8) {
    __m512d av[MR];
    for (int i = 0; i < MR; ++i) {
      av[i] = _mm512_loadu_pd(A + static_cast<std::size_t>(i) * lda + k);
    }
    for (int j = 0; j < NR; ++j) {
      const __m512d bv =
          _mm512_loadu_pd(B + static_cast<std::size_t>(j) * ldb + k);
      for (int i = 0; i < MR; ++i) {
        acc[i][j] = _mm512_fmadd_pd(av[i], bv, acc[i][j]);
      }
    }
  }
  if (k < K) {
    const __mmask8 tail = static_cast<__mmask8>((1u << (K - k)) - 1);
    __m512d av[MR];
    for (int i = 0; i < MR; ++i) {
      av[i] = _mm512_maskz_loadu_pd(
          tail, A + static_cast<std::size_t>(i) * lda + k);
    }
    for (int j = 0; j < NR; ++j) {
      const __m512d bv = _mm512_maskz_loadu_pd(
          tail, B + static_cast<std::size_t>(j) * ldb + k);
      for (int i = 0; i < MR; ++i) {
        acc[i][j] = _mm512_fmadd_pd(av[i], bv, acc[i][j]);
      }
    }
  }
  for (int i = 0; i < MR; ++i) {
    double* crow = C + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < NR; ++j) {
      crow[j] += _mm512_reduce_add_pd(acc[i][j]);
    }
  }
}

template <int MR>
void bt_dispatch_n(int nr, std::int64_t K, const double* A, std::int64_t lda,
                   const double* B, std::int64_t ldb, double* C,
                   std::int64_t ldc) {
  switch (nr) {
    case 6: kernel_bt<MR, 6>(K, A, lda, B, ldb, C, ldc); break;
    case 5: kernel_bt<MR, 5>(K, A, lda, B, ldb, C, ldc); break;
    case 4: kernel_bt<MR, 4>(K, A, lda, B, ldb, C, ldc); break;
    case 3: kernel_bt<MR, 3>(K, A, lda, B, ldb, C, ldc); break;
    case 2: kernel_bt<MR, 2>(K, A, lda, B, ldb, C, ldc); break;
    case 1: kernel_bt<MR, 1>(K, A, lda, B, ldb, C, ldc); break;
  }
}

void bt_dispatch(int mr, int nr, std::int64_t K, const double* A,
                 std::int64_t lda, const double* B, std::int64_t ldb,
                 double* C, std::int64_t ldc) {
  switch (mr) {
    case 4: bt_dispatch_n<4>(nr, K, A, lda, B, ldb, C, ldc); break;
    case 3: bt_dispatch_n<3>(nr, K, A, lda, B, ldb, C, ldc); break;
    case 2: bt_dispatch_n<2>(nr, K, A, lda, B, ldb, C, ldc); break;
    case 1: bt_dispatch_n<1>(nr, K, A, lda, B, ldb, C, ldc); break;
  }
}

}  // namespace

void gemm_accumulate_bt(std::int64_t m, std::int64_t n, std::int64_t k,
                        const double* a, std::int64_t lda,
                        const double* b, std::int64_t ldb,
                        double* c, std::int64_t ldc) {
  // Block B's rows so a chunk stays L2-resident across all the A row-blocks;
  // B then streams from memory exactly once regardless of m.
  std::int64_t nc = 1500000 / (k > 0 ? k * 8 : 8);
  nc -= nc % 6;
  if (nc < 6) nc = 6;
  for (std::int64_t j0 = 0; j0 < n; j0 += nc) {
    const std::int64_t j1 = j0 + nc < n ? j0 + nc : n;
    for (std::int64_t i0 = 0; i0 < m; i0 += 4) {
      const int mi = static_cast<int>(m - i0 < 4 ? m - i0 : 4);
      for (std::int64_t j = j0; j < j1; j += 6) {
        const int nj = static_cast<int>(j1 - j < 6 ? j1 - j : 6);
        bt_dispatch(mi, nj, k, a + static_cast<std::size_t>(i0) * lda, lda,
                    b + static_cast<std::size_t>(j) * ldb, ldb,
                    c + static_cast<std::size_t>(i0) * ldc + j, ldc);
      }
    }
  }
}

#else  // portable fallback with identical per-element semantics

void gemm_accumulate(std::int64_t m, std::int64_t n, std::int64_t k,
                     const double* a, std::int64_t lda,
                     const double* b, std::int64_t ldb,
                     double* c, std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * lda;
    double* crow = c + static_cast<std::size_t>(i) * ldc;
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        acc = std::fma(arow[kk], b[static_cast<std::size_t>(kk) * ldb + j], acc);
      }
      crow[j] += acc;
    }
  }
}

void gemm_overwrite(std::int64_t m, std::int64_t n, std::int64_t k,
                    const double* a, std::int64_t lda,
                    const double* b, std::int64_t ldb,
                    double* c, std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * lda;
    double* crow = c + static_cast<std::size_t>(i) * ldc;
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        acc = std::fma(arow[kk], b[static_cast<std::size_t>(kk) * ldb + j], acc);
      }
      crow[j] = acc;
    }
  }
}

void gemm_accumulate_bt(std::int64_t m, std::int64_t n, std::int64_t k,
                        const double* a, std::int64_t lda,
                        const double* b, std::int64_t ldb,
                        double* c, std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * lda;
    double* crow = c + static_cast<std::size_t>(i) * ldc;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * ldb;
      double acc = 0.0;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        acc = std::fma(arow[kk], brow[kk], acc);
      }
      crow[j] += acc;
    }
  }
}

#endif

void transpose(std::int64_t rows, std::int64_t cols, const double* src,
               double* dst) {
  // Blocked for cache friendliness; plain copy otherwise.
  constexpr std::int64_t T = 32;
  for (std::int64_t i0 = 0; i0 < rows; i0 += T) {
    const std::int64_t i1 = i0 + T < rows ? i0 + T : rows;
    for (std::int64_t j0 = 0; j0 < cols; j0 += T) {
      const std::int64_t j1 = j0 + T < cols ? j0 + T : cols;
      for (std::int64_t i = i0; i < i1; ++i) {
        for (std::int64_t j = j0; j < j1; ++j) {
          dst[static_cast<std::size_t>(j) * rows + i] =
              src[static_cast<std::size_t>(i) * cols + j];
        }
      }
    }
  }
}

}  // namespace msdcnn::detail
