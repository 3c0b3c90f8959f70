// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "tslim/matrix.hpp"

namespace tslim {

/// Truncated SVD: a ~ u * diag(s) * v with u (rows x k, orthonormal columns),
/// s non-increasing and non-negative, v (k x cols, orthonormal rows).
struct SvdResult {
  Matrix u;
  std::vector<double> s;
  Matrix v;
};

/// Rank-k truncated SVD by one-sided Jacobi. Deterministic; the sign of each
/// left singular vector is fixed so its first nonzero entry is positive.
/// Throws NumericError on non-finite input or if Jacobi sweeps fail to
/// converge, DimError for k outside [1, min(rows, cols)].
SvdResult svd(const Matrix& a, std::size_t k);

/// Mode-k unfolding. Mode 1 -> m x (p*q), mode 2 -> p x (m*q),
/// mode 3 -> q x (m*p); the remaining modes index columns in ascending order
/// with the first remaining mode fastest.
Matrix unfold(const Tensor3& t, int mode);

/// Exact inverse of unfold for the given target dims (m, p, q).
Tensor3 fold(const Matrix& u, int mode, std::size_t m, std::size_t p,
             std::size_t q);

/// Multiplies `factor` into the given mode: the mode's size t.dim(mode) must
/// equal factor.cols() and is replaced by factor.rows(). Equivalent to
/// fold(factor * unfold(t, mode), mode).
Tensor3 mode_product(const Tensor3& t, const Matrix& factor, int mode);

/// Cumulative captured-variance ratios of column-mean-centered PCA:
/// r_k = (sum of top-k squared singular values) / (sum of all of them).
/// A matrix that is zero after centering yields the all-ones curve.
std::vector<double> pca_variance(const Matrix& a);

/// ||a - b||_F / ||a||_F, with 0/0 defined as 0.
double rel_error(const Matrix& a, const Matrix& b);
double rel_error(const Tensor3& a, const Tensor3& b);

}  // namespace tslim
