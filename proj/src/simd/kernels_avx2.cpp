// AVX2 + FMA variants. Functions carry a target attribute instead of the whole
// file being built with -mavx2, so no inline library code compiled for AVX2
// can leak into baseline code paths through the linker.

#include "tapid/simd/kernels.hpp"

#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
#define TAPID_HAVE_AVX2_KERNELS 1
#include <immintrin.h>
#endif

namespace tapid::simd {

#ifdef TAPID_HAVE_AVX2_KERNELS

#define TAPID_AVX2 __attribute__((target("avx2,fma")))

namespace {

TAPID_AVX2 inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 0x55));
  return _mm_cvtss_f32(lo);
}

TAPID_AVX2 inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  lo = _mm_add_sd(lo, _mm_unpackhi_pd(lo, lo));
  return _mm_cvtsd_f64(lo);
}

// 4 rows x 16 columns of C.
TAPID_AVX2 void block_4x16(std::size_t k, const float* a, std::size_t lda, const float* b,
                           std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  const float* a0 = a;
  const float* a1 = a + lda;
  const float* a2 = a + 2 * lda;
  const float* a3 = a + 3 * lda;
  for (std::size_t p = 0; p < k; ++p) {
    const float* bp = b + p * ldb;
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 av = _mm256_broadcast_ss(a0 + p);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(a1 + p);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(a2 + p);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(a3 + p);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
  }
  const __m256 acc[4][2] = {{c00, c01}, {c10, c11}, {c20, c21}, {c30, c31}};
  for (int r = 0; r < 4; ++r) {
    float* cr = c + static_cast<std::size_t>(r) * ldc;
    __m256 v0 = acc[r][0], v1 = acc[r][1];
    if (accumulate) {
      v0 = _mm256_add_ps(v0, _mm256_loadu_ps(cr));
      v1 = _mm256_add_ps(v1, _mm256_loadu_ps(cr + 8));
    }
    _mm256_storeu_ps(cr, v0);
    _mm256_storeu_ps(cr + 8, v1);
  }
}

// `rows` (<= 4) rows x 8 columns.
TAPID_AVX2 void block_rx8(std::size_t rows, std::size_t k, const float* a, std::size_t lda,
                          const float* b, std::size_t ldb, float* c, std::size_t ldc,
                          bool accumulate) {
  __m256 acc[4] = {_mm256_setzero_ps(), _mm256_setzero_ps(), _mm256_setzero_ps(),
                   _mm256_setzero_ps()};
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 bv = _mm256_loadu_ps(b + p * ldb);
    for (std::size_t r = 0; r < rows; ++r) {
      acc[r] = _mm256_fmadd_ps(_mm256_broadcast_ss(a + r * lda + p), bv, acc[r]);
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    float* cr = c + r * ldc;
    __m256 v = acc[r];
    if (accumulate) v = _mm256_add_ps(v, _mm256_loadu_ps(cr));
    _mm256_storeu_ps(cr, v);
  }
}

// Leftover columns (< 8) for `rows` rows. Same fused multiply-add sequence as
// the vector blocks, so a value never depends on its column position.
TAPID_AVX2 void block_tail(std::size_t rows, std::size_t cols, std::size_t k, const float* a,
                           std::size_t lda, const float* b, std::size_t ldb, float* c,
                           std::size_t ldc, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc = __builtin_fmaf(a[r * lda + p], b[p * ldb + j], acc);
      c[r * ldc + j] = accumulate ? c[r * ldc + j] + acc : acc;
    }
  }
}

TAPID_AVX2 void sgemm_avx2(std::size_t m, std::size_t n, std::size_t k, const float* a,
                           std::size_t lda, const float* b, std::size_t ldb, float* c,
                           std::size_t ldc, bool accumulate) {
  // Column panels keep the streamed slice of B resident in L2.
  constexpr std::size_t kPanel = 256;
  for (std::size_t j0 = 0; j0 < n; j0 += kPanel) {
    const std::size_t j1 = j0 + kPanel < n ? j0 + kPanel : n;
    for (std::size_t i = 0; i < m; i += 4) {
      const std::size_t rows = m - i < 4 ? m - i : 4;
      const float* ai = a + i * lda;
      float* ci = c + i * ldc;
      std::size_t j = j0;
      if (rows == 4) {
        for (; j + 16 <= j1; j += 16) block_4x16(k, ai, lda, b + j, ldb, ci + j, ldc, accumulate);
      }
      for (; j + 8 <= j1; j += 8) block_rx8(rows, k, ai, lda, b + j, ldb, ci + j, ldc, accumulate);
      if (j < j1) block_tail(rows, j1 - j, k, ai, lda, b + j, ldb, ci + j, ldc, accumulate);
    }
  }
}

TAPID_AVX2 double ddot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  double res = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) res += a[i] * b[i];
  return res;
}

TAPID_AVX2 double dsqdist_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  double res = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    res += d * d;
  }
  return res;
}

TAPID_AVX2 void sadam_avx2(float* w, const float* g, float* m, float* v, std::size_t n, float lr,
                           float beta1, float beta2, float eps, float bc1, float bc2) {
  const __m256 vb1 = _mm256_set1_ps(beta1), vb1c = _mm256_set1_ps(1.0f - beta1);
  const __m256 vb2 = _mm256_set1_ps(beta2), vb2c = _mm256_set1_ps(1.0f - beta2);
  const __m256 vbc1 = _mm256_set1_ps(bc1), vbc2 = _mm256_set1_ps(bc2);
  const __m256 vlr = _mm256_set1_ps(lr), veps = _mm256_set1_ps(eps);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gv = _mm256_loadu_ps(g + i);
    const __m256 mv = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)),
                                    _mm256_mul_ps(vb1c, gv));
    const __m256 vv = _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)),
                                    _mm256_mul_ps(_mm256_mul_ps(vb2c, gv), gv));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_div_ps(mv, vbc1);
    const __m256 vhat = _mm256_div_ps(vv, vbc2);
    const __m256 step =
        _mm256_div_ps(_mm256_mul_ps(vlr, mhat), _mm256_add_ps(_mm256_sqrt_ps(vhat), veps));
    _mm256_storeu_ps(w + i, _mm256_sub_ps(_mm256_loadu_ps(w + i), step));
  }
  if (i < n) scalar_kernels().sadam(w + i, g + i, m + i, v + i, n - i, lr, beta1, beta2, eps, bc1, bc2);
}

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{"avx2", sgemm_avx2, ddot_avx2, dsqdist_avx2, sadam_avx2};
  static const bool supported = cpu_has_avx2();
  return supported ? &table : nullptr;
}

#else

const KernelTable* avx2_kernels() { return nullptr; }

#endif

}  // namespace tapid::simd
