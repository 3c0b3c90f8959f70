// SPDX-License-Identifier: Apache-2.0
#include "tslim/matrix.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "tslim/error.hpp"
#include "tslim/kernels.hpp"

namespace tslim {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw DimError("Matrix: data length " + std::to_string(data_.size()) +
                   " does not match " + std::to_string(rows_) + "x" +
                   std::to_string(cols_));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Matrix::frob_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return std::sqrt(acc);
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix Matrix::col_block(std::size_t c0, std::size_t ncols) const {
  if (c0 + ncols > cols_) throw DimError("col_block out of range");
  Matrix b(rows_, ncols);
  for (std::size_t i = 0; i < rows_; ++i)
    std::memcpy(b.row(i), row(i) + c0, ncols * sizeof(double));
  return b;
}

Matrix Matrix::row_block(std::size_t r0, std::size_t nrows) const {
  if (r0 + nrows > rows_) throw DimError("row_block out of range");
  Matrix b(nrows, cols_);
  std::memcpy(b.data(), data() + r0 * cols_, nrows * cols_ * sizeof(double));
  return b;
}

void Matrix::set_col_block(std::size_t c0, const Matrix& block) {
  if (block.rows() != rows_ || c0 + block.cols() > cols_)
    throw DimError("set_col_block shape mismatch");
  for (std::size_t i = 0; i < rows_; ++i)
    std::memcpy(row(i) + c0, block.row(i), block.cols() * sizeof(double));
}

void Matrix::set_row_block(std::size_t r0, const Matrix& block) {
  if (block.cols() != cols_ || r0 + block.rows() > rows_)
    throw DimError("set_row_block shape mismatch");
  std::memcpy(data() + r0 * cols_, block.data(),
              block.rows() * cols_ * sizeof(double));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimError("matmul: " + std::to_string(a.rows()) + "x" +
                   std::to_string(a.cols()) + " times " +
                   std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Matrix c(a.rows(), b.cols());
  kernels::active().gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(),
                         b.cols());
  return c;
}

Matrix matmul(const Matrix& a, const Matrix& b, MulCounter& counter) {
  Matrix c = matmul(a, b);
  counter.mults += static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols();
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimError("matmul_nt: inner dimensions differ");
  const auto& ops = kernels::active();
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      c(i, j) = ops.dot(a.row(i), b.row(j), a.cols());
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b, MulCounter& counter) {
  Matrix c = matmul_nt(a, b);
  counter.mults += static_cast<std::uint64_t>(a.rows()) * a.cols() * b.rows();
  return c;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimError("matrix add: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimError("matrix sub: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix c = a;
  for (double& v : c.storage()) v *= s;
  return c;
}

std::size_t Tensor3::dim(int mode) const {
  switch (mode) {
    case 1: return m_;
    case 2: return p_;
    case 3: return q_;
    default: throw DimError("Tensor3: mode must be 1, 2 or 3");
  }
}

Matrix Tensor3::slice(std::size_t i) const {
  if (i >= m_) throw DimError("Tensor3::slice index out of range");
  Matrix s(p_, q_);
  std::memcpy(s.data(), data_.data() + i * p_ * q_, p_ * q_ * sizeof(double));
  return s;
}

void Tensor3::set_slice(std::size_t i, const Matrix& s) {
  if (i >= m_ || s.rows() != p_ || s.cols() != q_)
    throw DimError("Tensor3::set_slice shape mismatch");
  std::memcpy(data_.data() + i * p_ * q_, s.data(), p_ * q_ * sizeof(double));
}

Matrix Tensor3::as_matrix() const {
  return Matrix(m_, p_ * q_, data_);
}

bool Tensor3::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor3::frob_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return std::sqrt(acc);
}

}  // namespace tslim
