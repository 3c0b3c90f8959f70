// SPDX-License-Identifier: Apache-2.0
//
// AVX2 kernel variants. Built with -mavx2 -mfma -ffp-contract=off; only
// dispatched when the CPU reports AVX2+FMA. gemm/axpy/rot use separate
// mul/add (same rounding as the scalar path); dot uses 4 lane accumulators.
#include "tslim/kernels.hpp"

#if defined(TSLIM_HAVE_AVX2_KERNELS)

#include <immintrin.h>

#include <cstring>

namespace tslim::kernels {

namespace {

void gemm_avx2(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      const __m256d avv = _mm256_set1_pd(av);
      std::size_t j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256d c0 = _mm256_loadu_pd(crow + j);
        __m256d c1 = _mm256_loadu_pd(crow + j + 4);
        c0 = _mm256_add_pd(c0, _mm256_mul_pd(avv, _mm256_loadu_pd(brow + j)));
        c1 = _mm256_add_pd(c1, _mm256_mul_pd(avv, _mm256_loadu_pd(brow + j + 4)));
        _mm256_storeu_pd(crow + j, c0);
        _mm256_storeu_pd(crow + j + 4, c1);
      }
      for (; j + 4 <= n; j += 4) {
        __m256d c0 = _mm256_loadu_pd(crow + j);
        c0 = _mm256_add_pd(c0, _mm256_mul_pd(avv, _mm256_loadu_pd(brow + j)));
        _mm256_storeu_pd(crow + j, c0);
      }
      for (; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yi = _mm256_loadu_pd(y + i);
    yi = _mm256_add_pd(yi, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, yi);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void rot_avx2(double* x, double* y, std::size_t n, double c, double s) {
  const __m256d cv = _mm256_set1_pd(c);
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xi = _mm256_loadu_pd(x + i);
    const __m256d yi = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(x + i, _mm256_sub_pd(_mm256_mul_pd(cv, xi), _mm256_mul_pd(sv, yi)));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_mul_pd(sv, xi), _mm256_mul_pd(cv, yi)));
  }
  for (; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) total += x[i] * y[i];
  return total;
}

const Ops kAvx2{"avx2", gemm_avx2, axpy_avx2, rot_avx2, dot_avx2};

}  // namespace

const Ops* avx2() {
  static const Ops* ops = []() -> const Ops* {
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
      return &kAvx2;
    return nullptr;
  }();
  return ops;
}

}  // namespace tslim::kernels

#endif  // TSLIM_HAVE_AVX2_KERNELS
