// SPDX-License-Identifier: Apache-2.0
#include "tslim/kernels.hpp"

#include <cstring>

namespace tslim::kernels {

namespace {

void gemm_scalar(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void rot_scalar(double* x, double* y, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

const Ops kScalar{"scalar", gemm_scalar, axpy_scalar, rot_scalar, dot_scalar};

const Ops& select() {
  if (const Ops* v = avx2()) return *v;
  return kScalar;
}

}  // namespace

const Ops& scalar() { return kScalar; }

const Ops& active() {
  static const Ops& ops = select();
  return ops;
}

#if !defined(TSLIM_HAVE_AVX2_KERNELS)
const Ops* avx2() { return nullptr; }
#endif

}  // namespace tslim::kernels
