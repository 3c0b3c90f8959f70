// SPDX-License-Identifier: Apache-2.0
#include "tslim/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tslim/error.hpp"

namespace tslim::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Matrix softmax_rows_of(const Matrix& a) {
  Matrix out = a;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double* r = out.row(i);
    double mx = r[0];
    for (std::size_t j = 1; j < out.cols(); ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < out.cols(); ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < out.cols(); ++j) r[j] *= inv;
  }
  return out;
}

}  // namespace

VarId Tape::push(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), {}});
  return nodes_.size() - 1;
}

void Tape::accum(VarId id, const Matrix& delta) {
  Matrix& g = nodes_[id].grad;
  if (g.rows() == 0) {
    g = delta;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += delta.data()[i];
}

VarId Tape::leaf(Matrix value) { return push(std::move(value)); }

VarId Tape::matmul(VarId a, VarId b) {
  VarId id = push(tslim::matmul(nodes_[a].value, nodes_[b].value));
  nodes_[id].back = [id, a, b](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    t.accum(a, tslim::matmul_nt(up, t.nodes_[b].value));
    t.accum(b, tslim::matmul(t.nodes_[a].value.transposed(), up));
  };
  return id;
}

VarId Tape::matmul_nt(VarId a, VarId b) {
  VarId id = push(tslim::matmul_nt(nodes_[a].value, nodes_[b].value));
  nodes_[id].back = [id, a, b](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    t.accum(a, tslim::matmul(up, t.nodes_[b].value));
    t.accum(b, tslim::matmul(up.transposed(), t.nodes_[a].value));
  };
  return id;
}

VarId Tape::add(VarId a, VarId b) { return add_scaled(a, 1.0, b, 1.0); }

VarId Tape::add_scaled(VarId a, double ca, VarId b, double cb) {
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[b].value;
  if (va.rows() != vb.rows() || va.cols() != vb.cols())
    throw DimError("tape add: shape mismatch");
  Matrix out = va;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = ca * va.data()[i] + cb * vb.data()[i];
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, b, ca, cb](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    t.accum(a, ca * up);
    t.accum(b, cb * up);
  };
  return id;
}

VarId Tape::scale(VarId a, double c) {
  VarId id = push(c * nodes_[a].value);
  nodes_[id].back = [id, a, c](Tape& t) { t.accum(a, c * t.nodes_[id].grad); };
  return id;
}

VarId Tape::add_row_vector(VarId a, VarId bias) {
  const Matrix& va = nodes_[a].value;
  const Matrix& vb = nodes_[bias].value;
  if (vb.rows() != 1 || vb.cols() != va.cols())
    throw DimError("tape add_row_vector: bias must be 1 x cols");
  Matrix out = va;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double* r = out.row(i);
    for (std::size_t j = 0; j < out.cols(); ++j) r[j] += vb(0, j);
  }
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, bias](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    t.accum(a, up);
    Matrix db(1, up.cols());
    for (std::size_t i = 0; i < up.rows(); ++i)
      for (std::size_t j = 0; j < up.cols(); ++j) db(0, j) += up(i, j);
    t.accum(bias, db);
  };
  return id;
}

VarId Tape::row_block(VarId a, std::size_t r0, std::size_t nrows) {
  VarId id = push(nodes_[a].value.row_block(r0, nrows));
  const std::size_t rows = nodes_[a].value.rows();
  const std::size_t cols = nodes_[a].value.cols();
  nodes_[id].back = [id, a, r0, rows, cols](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    Matrix da(rows, cols);
    da.set_row_block(r0, up);
    t.accum(a, da);
  };
  return id;
}

VarId Tape::col_block(VarId a, std::size_t c0, std::size_t ncols) {
  VarId id = push(nodes_[a].value.col_block(c0, ncols));
  const std::size_t rows = nodes_[a].value.rows();
  const std::size_t cols = nodes_[a].value.cols();
  nodes_[id].back = [id, a, c0, rows, cols](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    Matrix da(rows, cols);
    da.set_col_block(c0, up);
    t.accum(a, da);
  };
  return id;
}

VarId Tape::add_block(VarId base, VarId piece, std::size_t r0, std::size_t c0) {
  const Matrix& vb = nodes_[base].value;
  const Matrix& vp = nodes_[piece].value;
  if (r0 + vp.rows() > vb.rows() || c0 + vp.cols() > vb.cols())
    throw DimError("tape add_block: block out of range");
  Matrix out = vb;
  for (std::size_t i = 0; i < vp.rows(); ++i)
    for (std::size_t j = 0; j < vp.cols(); ++j) out(r0 + i, c0 + j) += vp(i, j);
  const std::size_t pr = vp.rows(), pc = vp.cols();
  VarId id = push(std::move(out));
  nodes_[id].back = [id, base, piece, r0, c0, pr, pc](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    t.accum(base, up);
    Matrix dp(pr, pc);
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) dp(i, j) = up(r0 + i, c0 + j);
    t.accum(piece, dp);
  };
  return id;
}

VarId Tape::reshape(VarId a, std::size_t rows, std::size_t cols) {
  const Matrix& va = nodes_[a].value;
  if (rows * cols != va.size()) throw DimError("tape reshape: size mismatch");
  const std::size_t ar = va.rows(), ac = va.cols();
  VarId id = push(Matrix(rows, cols, va.storage()));
  nodes_[id].back = [id, a, ar, ac](Tape& t) {
    t.accum(a, Matrix(ar, ac, t.nodes_[id].grad.storage()));
  };
  return id;
}

VarId Tape::first_rows(VarId a, std::size_t batch, std::size_t seq) {
  const Matrix& va = nodes_[a].value;
  if (va.rows() != batch * seq) throw DimError("tape first_rows: shape mismatch");
  Matrix out(batch, va.cols());
  for (std::size_t bi = 0; bi < batch; ++bi)
    std::memcpy(out.row(bi), va.row(bi * seq), va.cols() * sizeof(double));
  const std::size_t rows = va.rows(), cols = va.cols();
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, batch, seq, rows, cols](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    Matrix da(rows, cols);
    for (std::size_t bi = 0; bi < batch; ++bi)
      std::memcpy(da.row(bi * seq), up.row(bi), cols * sizeof(double));
    t.accum(a, da);
  };
  return id;
}

VarId Tape::softmax_rows(VarId a) {
  VarId id = push(softmax_rows_of(nodes_[a].value));
  nodes_[id].back = [id, a](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    const Matrix& sm = t.nodes_[id].value;
    Matrix da(sm.rows(), sm.cols());
    for (std::size_t i = 0; i < sm.rows(); ++i) {
      double rowdot = 0.0;
      for (std::size_t j = 0; j < sm.cols(); ++j) rowdot += up(i, j) * sm(i, j);
      for (std::size_t j = 0; j < sm.cols(); ++j)
        da(i, j) = sm(i, j) * (up(i, j) - rowdot);
    }
    t.accum(a, da);
  };
  return id;
}

VarId Tape::gelu(VarId a) {
  Matrix out = nodes_[a].value;
  for (double& v : out.storage())
    v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    const Matrix& x = t.nodes_[a].value;
    Matrix da(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xi = x.data()[i];
      const double phi = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
      da.data()[i] = up.data()[i] * (phi + xi * pdf);
    }
    t.accum(a, da);
  };
  return id;
}

VarId Tape::layernorm_rows(VarId x, VarId gamma, VarId beta, double eps) {
  const Matrix& vx = nodes_[x].value;
  const Matrix& vg = nodes_[gamma].value;
  const Matrix& vb = nodes_[beta].value;
  const std::size_t cols = vx.cols();
  if (vg.rows() != 1 || vg.cols() != cols || vb.rows() != 1 || vb.cols() != cols)
    throw DimError("tape layernorm: gamma/beta must be 1 x cols");

  Matrix xhat(vx.rows(), cols);
  std::vector<double> inv_sigma(vx.rows());
  Matrix out(vx.rows(), cols);
  for (std::size_t i = 0; i < vx.rows(); ++i) {
    const double* r = vx.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += r[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double c = r[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = inv;
    for (std::size_t j = 0; j < cols; ++j) {
      xhat(i, j) = (r[j] - mean) * inv;
      out(i, j) = vg(0, j) * xhat(i, j) + vb(0, j);
    }
  }
  VarId id = push(std::move(out));
  nodes_[id].back = [id, x, gamma, beta, xh = std::move(xhat),
                     inv = std::move(inv_sigma)](Tape& t) {
    const Matrix& up = t.nodes_[id].grad;
    const Matrix& vg = t.nodes_[gamma].value;
    const std::size_t rows = up.rows(), cols = up.cols();
    Matrix dg(1, cols), db(1, cols), dx(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        const double dxhat = up(i, j) * vg(0, j);
        dg(0, j) += up(i, j) * xh(i, j);
        db(0, j) += up(i, j);
        m1 += dxhat;
        m2 += dxhat * xh(i, j);
      }
      m1 /= static_cast<double>(cols);
      m2 /= static_cast<double>(cols);
      for (std::size_t j = 0; j < cols; ++j) {
        const double dxhat = up(i, j) * vg(0, j);
        dx(i, j) = inv[i] * (dxhat - m1 - xh(i, j) * m2);
      }
    }
    t.accum(x, dx);
    t.accum(gamma, dg);
    t.accum(beta, db);
  };
  return id;
}

VarId Tape::sqdiff_sum(VarId a, const Matrix& target) {
  const Matrix& va = nodes_[a].value;
  if (va.rows() != target.rows() || va.cols() != target.cols())
    throw DimError("tape sqdiff_sum: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = va.data()[i] - target.data()[i];
    acc += d * d;
  }
  Matrix out(1, 1);
  out(0, 0) = acc;
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a, target](Tape& t) {
    const double up = t.nodes_[id].grad(0, 0);
    const Matrix& va = t.nodes_[a].value;
    Matrix da(va.rows(), va.cols());
    for (std::size_t i = 0; i < va.size(); ++i)
      da.data()[i] = 2.0 * (va.data()[i] - target.data()[i]) * up;
    t.accum(a, da);
  };
  return id;
}

VarId Tape::sumsq(VarId a) {
  const Matrix& va = nodes_[a].value;
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += va.data()[i] * va.data()[i];
  Matrix out(1, 1);
  out(0, 0) = acc;
  VarId id = push(std::move(out));
  nodes_[id].back = [id, a](Tape& t) {
    const double up = t.nodes_[id].grad(0, 0);
    t.accum(a, (2.0 * up) * t.nodes_[a].value);
  };
  return id;
}

VarId Tape::kd_kl(VarId student_logits, const Matrix& teacher_logits,
                  double temperature) {
  const Matrix& vs = nodes_[student_logits].value;
  if (vs.rows() != teacher_logits.rows() || vs.cols() != teacher_logits.cols())
    throw DimError("tape kd_kl: logits shape mismatch");
  const double T = temperature;
  const Matrix pt = softmax_rows_of((1.0 / T) * teacher_logits);
  const Matrix ps = softmax_rows_of((1.0 / T) * vs);

  double loss = 0.0;
  for (std::size_t i = 0; i < vs.rows(); ++i) {
    for (std::size_t j = 0; j < vs.cols(); ++j) {
      if (pt(i, j) > 0.0)
        loss += pt(i, j) * (std::log(pt(i, j)) - std::log(ps(i, j)));
    }
  }
  loss *= T * T / static_cast<double>(vs.rows());

  const std::size_t rows = vs.rows();
  Matrix out(1, 1);
  out(0, 0) = loss;
  VarId id = push(std::move(out));
  nodes_[id].back = [id, student_logits, pt, ps, T, rows](Tape& t) {
    const double up = t.nodes_[id].grad(0, 0);
    Matrix da(pt.rows(), pt.cols());
    const double c = up * T / static_cast<double>(rows);
    for (std::size_t i = 0; i < da.size(); ++i)
      da.data()[i] = c * (ps.data()[i] - pt.data()[i]);
    t.accum(student_logits, da);
  };
  return id;
}

VarId Tape::softmax_xent(VarId logits, const std::vector<std::uint32_t>& labels) {
  const Matrix& vl = nodes_[logits].value;
  if (labels.size() != vl.rows())
    throw DimError("tape softmax_xent: one label per row required");
  const Matrix p = softmax_rows_of(vl);
  double loss = 0.0;
  for (std::size_t i = 0; i < vl.rows(); ++i)
    loss -= std::log(p(i, labels[i]));
  loss /= static_cast<double>(vl.rows());

  Matrix out(1, 1);
  out(0, 0) = loss;
  VarId id = push(std::move(out));
  nodes_[id].back = [id, logits, p, labels](Tape& t) {
    const double up = t.nodes_[id].grad(0, 0);
    Matrix da = p;
    for (std::size_t i = 0; i < da.rows(); ++i) da(i, labels[i]) -= 1.0;
    const double c = up / static_cast<double>(da.rows());
    for (double& v : da.storage()) v *= c;
    t.accum(logits, da);
  };
  return id;
}

void Tape::backward(VarId loss) {
  if (nodes_[loss].value.rows() != 1 || nodes_[loss].value.cols() != 1)
    throw DimError("tape backward: loss must be 1 x 1");
  for (Node& n : nodes_) n.grad = Matrix();
  Matrix seed(1, 1);
  seed(0, 0) = 1.0;
  nodes_[loss].grad = std::move(seed);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back && n.grad.rows() != 0) n.back(*this);
  }
}

}  // namespace tslim::ad
