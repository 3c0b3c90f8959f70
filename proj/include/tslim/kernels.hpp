// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace tslim::kernels {

// Double-precision inner-loop kernels behind the matrix layer. Each entry has
// a scalar reference implementation and may have SIMD variants; the active
// set is picked once at startup from CPU features.
//
// gemm/axpy/rot perform the same per-element operation sequence in every
// variant (no FMA contraction), so their outputs are bit-identical across
// scalar and SIMD paths. dot uses lane-parallel partial sums in SIMD variants
// and is equivalence-tested to a tolerance instead.
struct Ops {
  const char* name;
  // c (m x n) = a (m x k) * b (k x n), all row-major, c fully overwritten
  void (*gemm)(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // plane rotation: (x, y) <- (c*x - s*y, s*x + c*y)
  void (*rot)(double* x, double* y, std::size_t n, double c, double s);
  double (*dot)(const double* x, const double* y, std::size_t n);
};

/// Kernel set selected at startup for this CPU.
const Ops& active();

/// Scalar reference set (always available).
const Ops& scalar();

/// AVX2+FMA set, or nullptr when unsupported by the build or the CPU.
const Ops* avx2();

}  // namespace tslim::kernels
