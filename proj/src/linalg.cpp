// SPDX-License-Identifier: Apache-2.0
#include "tslim/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <string>

#include "tslim/error.hpp"
#include "tslim/kernels.hpp"

namespace tslim {

namespace {

constexpr int kMaxJacobiSweeps = 60;

// Full SVD of a tall matrix (rows >= cols) by one-sided Jacobi on columns.
// Columns are kept in contiguous buffers so the rotation kernel streams.
// On return: u is rows x cols with orthonormal columns (deterministically
// completed where singular values vanish), s is descending, vt is cols x cols
// with orthonormal rows, and a = u * diag(s) * vt.
void jacobi_svd_tall(const Matrix& a, Matrix& u, std::vector<double>& s,
                     Matrix& vt) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  const auto& ops = kernels::active();

  // Column-major work buffers.
  std::vector<double> w(m * n);
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) w[j * m + i] = a(i, j);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  const double tol = 1e-14;
  bool converged = (n <= 1);
  int sweep = 0;
  for (; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* wp = w.data() + p * m;
        double* wq = w.data() + q * m;
        const double app = ops.dot(wp, wp, m);
        const double aqq = ops.dot(wq, wq, m);
        const double apq = ops.dot(wp, wq, m);
        if (app == 0.0 || aqq == 0.0) continue;
        if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
        converged = false;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t =
            (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = c * t;
        ops.rot(wp, wq, m, c, sn);
        ops.rot(v.data() + p * n, v.data() + q * n, n, c, sn);
      }
    }
  }
  if (!converged)
    throw NumericError("svd: one-sided Jacobi did not converge in " +
                       std::to_string(kMaxJacobiSweeps) + " sweeps");

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j)
    norms[j] = std::sqrt(ops.dot(w.data() + j * m, w.data() + j * m, m));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return norms[i] > norms[j]; });

  u = Matrix(m, n);
  vt = Matrix(n, n);
  s.assign(n, 0.0);

  const double scale = *std::max_element(norms.begin(), norms.end());
  const double rank_tol = (scale > 0.0 ? scale : 1.0) * 1e-300;
  std::size_t next_seed = 0;  // canonical basis index for null-space columns
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    s[jj] = norms[j];
    const double* wj = w.data() + j * m;
    if (norms[j] > rank_tol) {
      const double inv = 1.0 / norms[j];
      for (std::size_t i = 0; i < m; ++i) u(i, jj) = wj[i] * inv;
    } else {
      s[jj] = 0.0;
      // Deterministic completion: orthonormalize canonical basis vectors
      // against the columns already placed.
      std::vector<double> cand(m, 0.0);
      while (true) {
        std::fill(cand.begin(), cand.end(), 0.0);
        cand[next_seed % m] = 1.0;
        ++next_seed;
        for (std::size_t prev = 0; prev < jj; ++prev) {
          double proj = 0.0;
          for (std::size_t i = 0; i < m; ++i) proj += cand[i] * u(i, prev);
          for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * u(i, prev);
        }
        double nrm = 0.0;
        for (double x : cand) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm > 1e-6) {
          for (std::size_t i = 0; i < m; ++i) u(i, jj) = cand[i] / nrm;
          break;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) vt(jj, i) = v[j * n + i];
  }

  // Sign convention: first entry of each left singular vector that is
  // nonzero (beyond rounding noise) is made positive.
  for (std::size_t j = 0; j < n; ++j) {
    double lead = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (std::abs(u(i, j)) > 1e-12) {
        lead = u(i, j);
        break;
      }
    }
    if (lead < 0.0) {
      for (std::size_t i = 0; i < m; ++i) u(i, j) = -u(i, j);
      for (std::size_t i = 0; i < n; ++i) vt(j, i) = -vt(j, i);
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& a, std::size_t k) {
  const std::size_t kmax = std::min(a.rows(), a.cols());
  if (a.rows() == 0 || a.cols() == 0) throw DimError("svd: empty matrix");
  if (k < 1 || k > kmax)
    throw DimError("svd: rank " + std::to_string(k) + " outside [1, " +
                   std::to_string(kmax) + "]");
  if (!a.all_finite()) throw NumericError("svd: input has non-finite entries");

  Matrix u, vt;
  std::vector<double> s;
  if (a.rows() >= a.cols()) {
    jacobi_svd_tall(a, u, s, vt);
  } else {
    // a = (u' s vt')^T of the transpose: u = vt'^T, v = u'^T.
    Matrix ut, vtt;
    jacobi_svd_tall(a.transposed(), ut, s, vtt);
    u = vtt.transposed();
    vt = ut.transposed();
    // Re-apply the sign convention in terms of the new left vectors.
    for (std::size_t j = 0; j < u.cols(); ++j) {
      double lead = 0.0;
      for (std::size_t i = 0; i < u.rows(); ++i) {
        if (std::abs(u(i, j)) > 1e-12) {
          lead = u(i, j);
          break;
        }
      }
      if (lead < 0.0) {
        for (std::size_t i = 0; i < u.rows(); ++i) u(i, j) = -u(i, j);
        for (std::size_t i = 0; i < vt.cols(); ++i) vt(j, i) = -vt(j, i);
      }
    }
  }

  SvdResult r;
  r.u = u.col_block(0, k);
  r.s.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k));
  r.v = vt.row_block(0, k);
  return r;
}

Matrix unfold(const Tensor3& t, int mode) {
  const std::size_t m = t.dim0(), p = t.dim1(), q = t.dim2();
  switch (mode) {
    case 1: {
      // Column index j + p*k: mode 2 fastest. Note this differs from the
      // slice-major memory layout (k fastest), so copy element-wise.
      Matrix r(m, p * q);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < q; ++k)
          for (std::size_t j = 0; j < p; ++j) r(i, j + p * k) = t(i, j, k);
      return r;
    }
    case 2: {
      Matrix r(p, m * q);
      for (std::size_t j = 0; j < p; ++j)
        for (std::size_t k = 0; k < q; ++k)
          for (std::size_t i = 0; i < m; ++i) r(j, i + m * k) = t(i, j, k);
      return r;
    }
    case 3: {
      Matrix r(q, m * p);
      for (std::size_t k = 0; k < q; ++k)
        for (std::size_t j = 0; j < p; ++j)
          for (std::size_t i = 0; i < m; ++i) r(k, i + m * j) = t(i, j, k);
      return r;
    }
    default:
      throw DimError("unfold: mode must be 1, 2 or 3");
  }
}

Tensor3 fold(const Matrix& u, int mode, std::size_t m, std::size_t p,
             std::size_t q) {
  Tensor3 t(m, p, q);
  switch (mode) {
    case 1:
      if (u.rows() != m || u.cols() != p * q)
        throw DimError("fold: shape mismatch for mode 1");
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < q; ++k)
          for (std::size_t j = 0; j < p; ++j) t(i, j, k) = u(i, j + p * k);
      return t;
    case 2:
      if (u.rows() != p || u.cols() != m * q)
        throw DimError("fold: shape mismatch for mode 2");
      for (std::size_t j = 0; j < p; ++j)
        for (std::size_t k = 0; k < q; ++k)
          for (std::size_t i = 0; i < m; ++i) t(i, j, k) = u(j, i + m * k);
      return t;
    case 3:
      if (u.rows() != q || u.cols() != m * p)
        throw DimError("fold: shape mismatch for mode 3");
      for (std::size_t k = 0; k < q; ++k)
        for (std::size_t j = 0; j < p; ++j)
          for (std::size_t i = 0; i < m; ++i) t(i, j, k) = u(k, i + m * j);
      return t;
    default:
      throw DimError("fold: mode must be 1, 2 or 3");
  }
}

Tensor3 mode_product(const Tensor3& t, const Matrix& factor, int mode) {
  if (factor.cols() != t.dim(mode))
    throw DimError("mode_product: factor cols " + std::to_string(factor.cols()) +
                   " do not match mode size " + std::to_string(t.dim(mode)));
  const Matrix prod = matmul(factor, unfold(t, mode));
  std::size_t m = t.dim0(), p = t.dim1(), q = t.dim2();
  switch (mode) {
    case 1: m = factor.rows(); break;
    case 2: p = factor.rows(); break;
    case 3: q = factor.rows(); break;
  }
  return fold(prod, mode, m, p, q);
}

std::vector<double> pca_variance(const Matrix& a) {
  if (a.rows() < 2) throw DimError("pca_variance: needs at least 2 rows");
  Matrix centered = a;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) mean += a(i, j);
    mean /= static_cast<double>(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) centered(i, j) -= mean;
  }

  const std::size_t k = std::min(a.rows(), a.cols());
  std::vector<double> curve(k, 1.0);
  if (centered.frob_norm() == 0.0) return curve;  // degenerate: all-ones

  const SvdResult r = svd(centered, k);
  double total = 0.0;
  for (double sv : r.s) total += sv * sv;
  if (total == 0.0) return curve;
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    acc += r.s[i] * r.s[i];
    curve[i] = acc / total;
  }
  curve.back() = 1.0;
  return curve;
}

double rel_error(const Matrix& a, const Matrix& b) {
  const double denom = a.frob_norm();
  const double num = (a - b).frob_norm();
  if (denom == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / denom;
}

double rel_error(const Tensor3& a, const Tensor3& b) {
  if (a.dim0() != b.dim0() || a.dim1() != b.dim1() || a.dim2() != b.dim2())
    throw DimError("rel_error: tensor shape mismatch");
  double num = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.storage()[i] - b.storage()[i];
    num += d * d;
    denom += a.storage()[i] * a.storage()[i];
  }
  if (denom == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / denom);
}

}  // namespace tslim
