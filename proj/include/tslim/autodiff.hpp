// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tslim/matrix.hpp"

namespace tslim::ad {

using VarId = std::size_t;

// Minimal reverse-mode tape over Matrix-valued nodes. A tape is built fresh
// for every forward pass; backward() seeds the (1 x 1) loss node with 1 and
// accumulates gradients into every node it reaches. Ops reproduce the exact
// arithmetic of the plain forward-pass code so tape and plain evaluations
// agree bitwise.
class Tape {
public:
  VarId leaf(Matrix value);

  const Matrix& val(VarId id) const { return nodes_[id].value; }
  /// Zero-shaped if no gradient reached the node.
  const Matrix& grad(VarId id) const { return nodes_[id].grad; }

  VarId matmul(VarId a, VarId b);
  VarId matmul_nt(VarId a, VarId b);  // a * b^T
  VarId add(VarId a, VarId b);
  VarId add_scaled(VarId a, double ca, VarId b, double cb);
  VarId scale(VarId a, double c);
  /// a + broadcast of a 1 x cols bias over rows.
  VarId add_row_vector(VarId a, VarId bias);
  VarId row_block(VarId a, std::size_t r0, std::size_t nrows);
  VarId col_block(VarId a, std::size_t c0, std::size_t ncols);
  /// base with `piece` added into the block at (r0, c0).
  VarId add_block(VarId base, VarId piece, std::size_t r0, std::size_t c0);
  VarId reshape(VarId a, std::size_t rows, std::size_t cols);
  /// Rows {0, seq, 2*seq, ...}: the first token of each sequence.
  VarId first_rows(VarId a, std::size_t batch, std::size_t seq);

  VarId softmax_rows(VarId a);
  VarId gelu(VarId a);
  VarId layernorm_rows(VarId x, VarId gamma, VarId beta, double eps);

  /// sum((a - target)^2), a 1 x 1 node.
  VarId sqdiff_sum(VarId a, const Matrix& target);
  /// sum(a^2), a 1 x 1 node.
  VarId sumsq(VarId a);
  /// Temperature-softened KL(teacher || student) * T^2, averaged over rows.
  VarId kd_kl(VarId student_logits, const Matrix& teacher_logits, double temperature);
  /// Mean cross-entropy of softmax(logits) against integer labels.
  VarId softmax_xent(VarId logits, const std::vector<std::uint32_t>& labels);

  /// Reverse pass from a 1 x 1 loss node.
  void backward(VarId loss);

private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&)> back;
  };

  VarId push(Matrix value);
  void accum(VarId id, const Matrix& delta);

  std::vector<Node> nodes_;
};

}  // namespace tslim::ad
