#pragma once

// Data-parallel inner loops behind a runtime-selected function table.
//
// Every kernel has a portable scalar reference; on x86-64 an AVX2+FMA variant
// is chosen at first use when the CPU supports it. TAPID_KERNELS=scalar|avx2
// in the environment overrides the choice. Results of the two variants agree
// to floating-point reassociation error, not bitwise (FMA and lane-wise
// summation order differ).

#include <cstddef>
#include <string_view>

namespace tapid::simd {

struct KernelTable {
  const char* name;

  /// C[m,n] = (accumulate ? C : 0) + A[m,k] * B[k,n], all row-major.
  void (*sgemm)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);

  double (*ddot)(const double* a, const double* b, std::size_t n);

  /// Squared Euclidean distance.
  double (*dsqdist)(const double* a, const double* b, std::size_t n);

  /// One Adam update. bc1 = 1 - beta1^t, bc2 = 1 - beta2^t.
  void (*sadam)(float* w, const float* g, float* m, float* v, std::size_t n, float lr,
                float beta1, float beta2, float eps, float bc1, float bc2);
};

const KernelTable& scalar_kernels();

/// nullptr when not compiled in or not supported by this CPU.
const KernelTable* avx2_kernels();

const KernelTable& active_kernels();

/// "scalar", "avx2" or "auto". Throws InvalidInput for unknown or
/// unavailable variants.
void select_kernels(std::string_view name);

/// Reference GEMM for any arithmetic type (used directly for double).
template <class T>
void gemm_reference(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void gemm(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                 const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  active_kernels().sgemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  gemm_reference(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace tapid::simd
