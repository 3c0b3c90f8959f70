// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "tslim/error.hpp"
#include "tslim/linalg.hpp"
#include "tslim/rng.hpp"

using namespace tslim;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Matrix m(r, c);
  for (double& v : m.storage()) v = rng.normal(0.0, sd);
  return m;
}

Tensor3 random_tensor(Rng& rng, std::size_t m, std::size_t p, std::size_t q) {
  Tensor3 t(m, p, q);
  for (double& v : t.storage()) v = rng.normal(0.0, 1.0);
  return t;
}

// Independent oracle: naive triple loop.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double mx = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
  return mx;
}

Matrix reconstruct(const SvdResult& r) {
  Matrix us = r.u;
  for (std::size_t j = 0; j < r.s.size(); ++j)
    for (std::size_t i = 0; i < us.rows(); ++i) us(i, j) *= r.s[j];
  return matmul(us, r.v);
}

// Jacobi eigenvalue iteration for a symmetric matrix; oracle-only code.
std::vector<double> symmetric_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

}  // namespace

TEST_SUITE("linalg") {

TEST_CASE("matmul identity and permutation") {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 2, 3);
  CHECK(max_abs_diff(matmul(Matrix::identity(2), a), a) == 0.0);

  Matrix m(2, 2, {1, 2, 3, 4});
  Matrix perm(2, 2, {0, 1, 1, 0});
  const Matrix prod = matmul(m, perm);
  CHECK(prod(0, 0) == 2.0);
  CHECK(prod(0, 1) == 1.0);
  CHECK(prod(1, 0) == 4.0);
  CHECK(prod(1, 1) == 3.0);
}

TEST_CASE("matmul equals triple-loop oracle") {
  Rng rng(2);
  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix b = random_matrix(rng, 4, 2);
  CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-12);
}

TEST_CASE("matmul dimension mismatch throws") {
  Matrix a(2, 3), b(4, 2);
  CHECK_THROWS_AS((void)matmul(a, b), DimError);
}

TEST_CASE("instrumented matmul counts chained products exactly") {
  Rng rng(3);
  const Matrix a = random_matrix(rng, 5, 7);
  const Matrix b = random_matrix(rng, 7, 3);
  const Matrix c = random_matrix(rng, 3, 11);
  MulCounter counter;
  const Matrix ab = matmul(a, b, counter);
  (void)matmul(ab, c, counter);
  CHECK(counter.mults == 5u * 7u * 3u + 5u * 3u * 11u);

  MulCounter nt;
  (void)matmul_nt(a, random_matrix(rng, 9, 7), nt);
  CHECK(nt.mults == 5u * 7u * 9u);
}

TEST_CASE("svd of identity and diagonal") {
  const SvdResult r3 = svd(Matrix::identity(3), 3);
  for (double s : r3.s) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

  Matrix d(2, 2);
  d(0, 0) = 5.0;
  d(1, 1) = 2.0;
  const SvdResult rd = svd(d, 2);
  CHECK(rd.s[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(rd.s[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("svd reconstructs random matrices") {
  Rng rng(4);
  const Matrix a = random_matrix(rng, 6, 4);
  const SvdResult r = svd(a, 4);
  CHECK(rel_error(a, reconstruct(r)) < 1e-10);

  // Wide input goes through the transposed path.
  const Matrix w = random_matrix(rng, 3, 9);
  const SvdResult rw = svd(w, 3);
  CHECK(rel_error(w, reconstruct(rw)) < 1e-10);
}

TEST_CASE("svd factors are orthonormal and ordered") {
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix a = random_matrix(rng, 8, 5);
    const SvdResult r = svd(a, 5);
    const Matrix utu = matmul(r.u.transposed(), r.u);
    const Matrix vvt = matmul_nt(r.v, r.v);
    CHECK(max_abs_diff(utu, Matrix::identity(5)) < 1e-10);
    CHECK(max_abs_diff(vvt, Matrix::identity(5)) < 1e-10);
    for (std::size_t i = 1; i < r.s.size(); ++i) CHECK(r.s[i] <= r.s[i - 1]);
    for (double s : r.s) CHECK(s >= 0.0);
  }
}

TEST_CASE("svd satisfies the Eckart-Young truncation identity") {
  Rng rng(6);
  for (int rep = 0; rep < 5; ++rep) {
    const Matrix a = random_matrix(rng, 7, 6);
    const SvdResult full = svd(a, 6);
    for (std::size_t k : {1u, 3u, 5u}) {
      const SvdResult trunc = svd(a, k);
      double tail = 0.0;
      for (std::size_t i = k; i < full.s.size(); ++i) tail += full.s[i] * full.s[i];
      const double err = (a - reconstruct(trunc)).frob_norm();
      CHECK(std::abs(err - std::sqrt(tail)) < 1e-9);
    }
  }
}

TEST_CASE("svd sign convention: leading entries positive, reproducible") {
  Rng rng(7);
  const Matrix a = random_matrix(rng, 6, 6);
  const SvdResult r1 = svd(a, 6);
  const SvdResult r2 = svd(a, 6);
  CHECK(r1.u == r2.u);
  CHECK(r1.v == r2.v);
  for (std::size_t j = 0; j < r1.u.cols(); ++j) {
    for (std::size_t i = 0; i < r1.u.rows(); ++i) {
      if (std::abs(r1.u(i, j)) > 1e-12) {
        CHECK(r1.u(i, j) > 0.0);
        break;
      }
    }
  }
}

TEST_CASE("svd rejects bad input") {
  Matrix bad(2, 2);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS((void)svd(bad, 1), NumericError);
  CHECK_THROWS_AS((void)svd(Matrix::identity(3), 0), DimError);
  CHECK_THROWS_AS((void)svd(Matrix::identity(3), 4), DimError);
}

TEST_CASE("svd handles rank-deficient input") {
  Rng rng(8);
  Matrix a = random_matrix(rng, 6, 1);
  const Matrix b = random_matrix(rng, 1, 4);
  const Matrix rank1 = matmul(a, b);
  const SvdResult r = svd(rank1, 4);  // three zero singular values
  CHECK(rel_error(rank1, reconstruct(r)) < 1e-10);
  const Matrix utu = matmul(r.u.transposed(), r.u);
  CHECK(max_abs_diff(utu, Matrix::identity(4)) < 1e-10);

  // All-zero input must not crash and must reconstruct zero.
  const SvdResult z = svd(Matrix(5, 3), 3);
  for (double s : z.s) CHECK(s == 0.0);
  CHECK(reconstruct(z).frob_norm() == 0.0);
}

TEST_CASE("unfold of a singleton-mode tensor is the slice") {
  Rng rng(9);
  const Tensor3 t = random_tensor(rng, 1, 3, 4);
  const Matrix u = unfold(t, 2);
  REQUIRE(u.rows() == 3);
  REQUIRE(u.cols() == 4);
  CHECK(max_abs_diff(u, t.slice(0)) == 0.0);
}

TEST_CASE("fold inverts unfold on all modes, bit-exact") {
  Rng rng(10);
  for (auto [m, p, q] : {std::array<std::size_t, 3>{2, 3, 4}, {5, 1, 6}, {3, 3, 3}}) {
    const Tensor3 t = random_tensor(rng, m, p, q);
    for (int mode : {1, 2, 3}) {
      const Tensor3 back = fold(unfold(t, mode), mode, m, p, q);
      CHECK(back == t);
    }
  }
  const Tensor3 z = fold(Matrix(3, 8), 1, 3, 2, 4);
  CHECK(z.frob_norm() == 0.0);
}

TEST_CASE("mode-2 unfolding matches index arithmetic") {
  Rng rng(11);
  const Tensor3 t = random_tensor(rng, 2, 3, 4);
  const Matrix u = unfold(t, 2);
  REQUIRE(u.rows() == 3);
  REQUIRE(u.cols() == 8);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) CHECK(u(j, i + 2 * k) == t(i, j, k));
}

TEST_CASE("mode_product identity and summation vector") {
  Rng rng(12);
  const Tensor3 t = random_tensor(rng, 2, 3, 4);
  CHECK(mode_product(t, Matrix::identity(3), 2) == t);

  Tensor3 small(1, 2, 2);
  small(0, 0, 0) = 1;
  small(0, 0, 1) = 2;
  small(0, 1, 0) = 3;
  small(0, 1, 1) = 4;
  Matrix ones(1, 2, {1, 1});
  const Tensor3 summed = mode_product(small, ones, 2);
  CHECK(summed(0, 0, 0) == 4.0);
  CHECK(summed(0, 0, 1) == 6.0);
}

TEST_CASE("chained mode products match the entry-level triple sum") {
  Rng rng(13);
  const Tensor3 g = random_tensor(rng, 2, 3, 2);
  const Matrix a = random_matrix(rng, 4, 2);
  const Matrix b = random_matrix(rng, 5, 3);
  const Matrix c = random_matrix(rng, 3, 2);
  const Tensor3 x = mode_product(mode_product(mode_product(g, a, 1), b, 2), c, 3);
  REQUIRE(x.dim0() == 4);
  REQUIRE(x.dim1() == 5);
  REQUIRE(x.dim2() == 3);
  for (std::size_t i1 = 0; i1 < 4; ++i1)
    for (std::size_t i2 = 0; i2 < 5; ++i2)
      for (std::size_t i3 = 0; i3 < 3; ++i3) {
        double acc = 0.0;
        for (std::size_t aa = 0; aa < 2; ++aa)
          for (std::size_t bb = 0; bb < 3; ++bb)
            for (std::size_t cc = 0; cc < 2; ++cc)
              acc += g(aa, bb, cc) * a(i1, aa) * b(i2, bb) * c(i3, cc);
        CHECK(x(i1, i2, i3) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("mode products on distinct modes commute") {
  Rng rng(14);
  const Tensor3 t = random_tensor(rng, 3, 4, 5);
  const Matrix a = random_matrix(rng, 2, 4);
  const Matrix b = random_matrix(rng, 6, 5);
  const Tensor3 left = mode_product(mode_product(t, a, 2), b, 3);
  const Tensor3 right = mode_product(mode_product(t, b, 3), a, 2);
  double mx = 0.0;
  for (std::size_t i = 0; i < left.size(); ++i)
    mx = std::max(mx, std::abs(left.storage()[i] - right.storage()[i]));
  CHECK(mx < 1e-12);
}

TEST_CASE("mode_product rejects mismatched factor") {
  const Tensor3 t(2, 3, 4);
  CHECK_THROWS_AS((void)mode_product(t, Matrix::identity(4), 2), DimError);
}

TEST_CASE("pca_variance on rank-1 and symmetric designs") {
  Rng rng(15);
  const Matrix rank1 = matmul(random_matrix(rng, 6, 1), random_matrix(rng, 1, 4));
  const auto curve = pca_variance(rank1);
  CHECK(curve[0] == doctest::Approx(1.0).epsilon(1e-12));

  // Centered orthogonal design with two equal singular values.
  Matrix sym(4, 2, {1, 0, -1, 0, 0, 1, 0, -1});
  const auto sym_curve = pca_variance(sym);
  CHECK(sym_curve[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sym_curve[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pca_variance matches the covariance-eigenvalue oracle") {
  Rng rng(16);
  const Matrix a = random_matrix(rng, 20, 10);
  const auto curve = pca_variance(a);

  Matrix centered = a;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) mean += a(i, j);
    mean /= static_cast<double>(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) centered(i, j) -= mean;
  }
  const auto ev = symmetric_eigenvalues(matmul(centered.transposed(), centered));
  double total = 0.0;
  for (double e : ev) total += e;
  double acc = 0.0;
  for (std::size_t k = 0; k < ev.size(); ++k) {
    acc += ev[k];
    CHECK(std::abs(curve[k] - acc / total) < 1e-10);
  }
}

TEST_CASE("pca_variance curve is a valid cumulative curve") {
  Rng rng(17);
  const Matrix a = random_matrix(rng, 12, 6);
  const auto curve = pca_variance(a);
  double prev = 0.0;
  for (double v : curve) {
    CHECK(v >= prev - 1e-15);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-15);
    prev = v;
  }
  CHECK(curve.back() == 1.0);
}

TEST_CASE("pca_variance degenerate case: zero after centering") {
  Matrix constant_rows(3, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) constant_rows(i, j) = 2.5 + j;
  const auto curve = pca_variance(constant_rows);
  for (double v : curve) CHECK(v == 1.0);
  CHECK_THROWS_AS((void)pca_variance(Matrix(1, 4)), DimError);
}

}  // TEST_SUITE
