// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace tslim {

/// Caller-owned multiplication counter for instrumented products. Each
/// instrumented m x k by k x n product adds m*k*n.
struct MulCounter {
  std::uint64_t mults = 0;
};

/// Dense row-major matrix of doubles.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool all_finite() const;
  double frob_norm() const;

  Matrix transposed() const;
  /// Columns [c0, c0+ncols) as a new matrix.
  Matrix col_block(std::size_t c0, std::size_t ncols) const;
  /// Rows [r0, r0+nrows) as a new matrix.
  Matrix row_block(std::size_t r0, std::size_t nrows) const;
  void set_col_block(std::size_t c0, const Matrix& block);
  void set_row_block(std::size_t r0, const Matrix& block);

  bool operator==(const Matrix& other) const = default;

private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

/// a * b; throws DimError on inner-dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
/// Instrumented variant: adds a.rows*a.cols*b.cols to the counter.
Matrix matmul(const Matrix& a, const Matrix& b, MulCounter& counter);
/// a * b^T (no materialized transpose).
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b, MulCounter& counter);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

/// Order-3 tensor, slice-major then row-major: (i, j, k) -> ((i*p)+j)*q + k.
class Tensor3 {
public:
  Tensor3() = default;
  Tensor3(std::size_t m, std::size_t p, std::size_t q)
      : m_(m), p_(p), q_(q), data_(m * p * q, 0.0) {}

  std::size_t dim0() const { return m_; }
  std::size_t dim1() const { return p_; }
  std::size_t dim2() const { return q_; }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(int mode) const;  // mode in {1,2,3}

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * p_ + j) * q_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * p_ + j) * q_ + k];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  Matrix slice(std::size_t i) const;
  void set_slice(std::size_t i, const Matrix& s);
  /// The m x (p*q) matrix sharing row-major layout with the slices.
  Matrix as_matrix() const;

  bool all_finite() const;
  double frob_norm() const;

  bool operator==(const Tensor3& other) const = default;

private:
  std::size_t m_ = 0, p_ = 0, q_ = 0;
  std::vector<double> data_;
};

}  // namespace tslim
