// SPDX-License-Identifier: Apache-2.0
#include "tslim/decomp.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <thread>

#include "tslim/error.hpp"
#include "tslim/linalg.hpp"

namespace tslim {

namespace {

void check_rank_d(std::size_t d, std::size_t D) {
  if (d < 1 || d > D)
    throw DimError("rank d = " + std::to_string(d) + " outside [1, " +
                   std::to_string(D) + "]");
}

// Leading k left singular vectors of m, extended to an orthonormal basis
// when k exceeds the column count (zero padding makes the completion in the
// SVD supply deterministic extra directions).
Matrix leading_left_basis(const Matrix& m, std::size_t k) {
  if (k <= m.cols()) return svd(m, k).u;
  Matrix padded(m.rows(), k);
  padded.set_col_block(0, m);
  return svd(padded, k).u;
}

// Core projection given the current factors: G = W x1 p^T x2 u^T x3 v.
Tensor3 project_core(const Tensor3& w, const Matrix& p, const Matrix& u,
                     const Matrix& v) {
  Tensor3 g = mode_product(w, p.transposed(), 1);
  g = mode_product(g, u.transposed(), 2);
  g = mode_product(g, v, 3);
  return g;
}

Tensor3 tucker_reconstruct(const Tensor3& bank, const Matrix& p, const Matrix& u,
                           const Matrix& v) {
  Tensor3 r = mode_product(bank, p, 1);
  r = mode_product(r, u, 2);
  r = mode_product(r, v.transposed(), 3);
  return r;
}

}  // namespace

SvdFactors decompose_svd(const WeightStack& ws, std::size_t d,
                         SvdFactors::Variant variant, std::size_t threads) {
  const std::size_t D = ws.config.hidden;
  check_rank_d(d, D);
  const std::size_t n = ws.n_slices();

  SvdFactors f;
  f.variant = variant;
  f.hidden = D;
  f.rank = d;
  f.u.resize(n);
  f.v.resize(n);
  if (variant == SvdFactors::Variant::Alpha) f.s.resize(n);

  std::string first_failure;
  auto run_slice = [&](std::size_t i) {
    SvdResult r;
    try {
      r = svd(ws.tensor.slice(i), d);
    } catch (const NumericError& e) {
      throw NumericError("slice " + std::to_string(i) + ": " + e.what());
    }
    if (variant == SvdFactors::Variant::Alpha) {
      f.u[i] = std::move(r.u);
      f.s[i] = std::move(r.s);
      f.v[i] = std::move(r.v);
    } else {
      Matrix a = r.u;
      Matrix b = r.v;
      for (std::size_t j = 0; j < d; ++j) {
        const double root = std::sqrt(r.s[j]);
        for (std::size_t row = 0; row < D; ++row) a(row, j) *= root;
        for (std::size_t col = 0; col < D; ++col) b(j, col) *= root;
      }
      f.u[i] = std::move(a);
      f.v[i] = std::move(b);
    }
  };

  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) run_slice(i);
  } else {
    const std::size_t nt = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    std::vector<std::string> errors(nt);
    for (std::size_t t = 0; t < nt; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += nt) run_slice(i);
        } catch (const std::exception& e) {
          errors[t] = e.what();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (!e.empty()) throw NumericError(e);
  }
  return f;
}

TTFactors decompose_tt(const WeightStack& ws, std::size_t d) {
  const std::size_t D = ws.config.hidden;
  check_rank_d(d, D);

  TTFactors f;
  f.u = svd(unfold(ws.tensor, 2), d).u;                // D x d
  f.v = svd(unfold(ws.tensor, 3), d).u.transposed();   // d x D
  const Matrix ut = f.u.transposed();
  const Matrix vt = f.v.transposed();
  f.cores.resize(ws.n_slices());
  for (std::size_t i = 0; i < ws.n_slices(); ++i)
    f.cores[i] = matmul(matmul(ut, ws.tensor.slice(i)), vt);
  return f;
}

TuckerFit decompose_tucker(const WeightStack& ws, std::size_t l, std::size_t d,
                           double tol, std::size_t max_iters) {
  const std::size_t D = ws.config.hidden;
  const std::size_t n1 = ws.n_slices();
  check_rank_d(d, D);
  if (l < 1 || l > n1)
    throw DimError("rank l = " + std::to_string(l) + " outside [1, " +
                   std::to_string(n1) + "]");
  if (!(tol > 0.0)) throw DimError("tol must be positive");

  const Tensor3& w = ws.tensor;

  // HOSVD init: truncated SVDs of all three mode unfoldings.
  Matrix p = leading_left_basis(unfold(w, 1), l);  // 12L x l
  Matrix u = svd(unfold(w, 2), d).u;               // D x d
  Matrix v = svd(unfold(w, 3), d).u.transposed();  // d x D

  TuckerFit fit;
  Tensor3 core = project_core(w, p, u, v);
  double err = rel_error(w, tucker_reconstruct(core, p, u, v));
  fit.error_trace.push_back(err);

  // Full-bank case: p is square orthogonal, the mode-1 truncation is exact,
  // and the HOSVD fit already coincides with the shared-factor method.
  const bool full_bank = (l == n1);
  fit.converged = true;
  if (!full_bank && err > 1e-14 && max_iters > 0) {
    fit.converged = false;
    for (std::size_t iter = 1; iter <= max_iters; ++iter) {
      // Alternating updates: re-solve each factor against the others.
      Tensor3 y = mode_product(mode_product(w, u.transposed(), 2), v, 3);
      p = leading_left_basis(unfold(y, 1), l);
      y = mode_product(mode_product(w, p.transposed(), 1), v, 3);
      u = svd(unfold(y, 2), d).u;
      y = mode_product(mode_product(w, p.transposed(), 1), u.transposed(), 2);
      v = svd(unfold(y, 3), d).u.transposed();

      core = project_core(w, p, u, v);
      const double next = rel_error(w, tucker_reconstruct(core, p, u, v));
      fit.error_trace.push_back(next);
      fit.iterations = iter;
      const double improvement = err - next;
      err = next;
      if (improvement < tol) {
        fit.converged = true;
        break;
      }
    }
  }

  fit.rel_err = err;
  fit.factors.u = std::move(u);
  fit.factors.v = std::move(v);
  fit.factors.p = std::move(p);
  fit.factors.bank = std::move(core);
  return fit;
}

Matrix reconstruct_slice(const SvdFactors& f, std::size_t i) {
  if (i >= f.n_slices()) throw DimError("reconstruct_slice: index out of range");
  if (f.variant == SvdFactors::Variant::Beta) return matmul(f.u[i], f.v[i]);
  Matrix scaled = f.v[i];  // diag(s_i) * v_i
  for (std::size_t j = 0; j < f.rank; ++j)
    for (std::size_t c = 0; c < scaled.cols(); ++c) scaled(j, c) *= f.s[i][j];
  return matmul(f.u[i], scaled);
}

Matrix reconstruct_slice(const TTFactors& f, std::size_t i) {
  if (i >= f.n_slices()) throw DimError("reconstruct_slice: index out of range");
  return matmul(matmul(f.u, f.cores[i]), f.v);
}

Matrix reconstruct_slice(const TuckerFactors& f, std::size_t i) {
  if (i >= f.n_slices()) throw DimError("reconstruct_slice: index out of range");
  const std::size_t d = f.rank_d();
  Matrix core(d, d);
  for (std::size_t k = 0; k < f.rank_l(); ++k) {
    const double pk = f.p(i, k);
    if (pk == 0.0) continue;
    const double* bk = f.bank.data() + k * d * d;
    for (std::size_t e = 0; e < d * d; ++e) core.data()[e] += pk * bk[e];
  }
  return matmul(matmul(f.u, core), f.v);
}

Matrix reconstruct_slice(const Factors& f, std::size_t i) {
  return std::visit([&](const auto& g) { return reconstruct_slice(g, i); }, f);
}

namespace {

std::size_t factors_n_slices(const Factors& f) {
  return std::visit([](const auto& g) { return g.n_slices(); }, f);
}

std::size_t factors_hidden(const Factors& f) {
  if (const auto* s = std::get_if<SvdFactors>(&f)) return s->hidden;
  if (const auto* t = std::get_if<TTFactors>(&f)) return t->hidden();
  return std::get<TuckerFactors>(f).hidden();
}

}  // namespace

Tensor3 reconstruct_stack(const Factors& f) {
  const std::size_t n = factors_n_slices(f);
  const std::size_t D = factors_hidden(f);
  Tensor3 t(n, D, D);
  for (std::size_t i = 0; i < n; ++i) t.set_slice(i, reconstruct_slice(f, i));
  return t;
}

ReconstructionError reconstruction_error(const WeightStack& ws, const Factors& f) {
  if (factors_n_slices(f) != ws.n_slices() ||
      factors_hidden(f) != ws.config.hidden)
    throw DimError("reconstruction_error: factors do not match the stack");

  ReconstructionError res;
  res.per_slice.resize(ws.n_slices());
  double num = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < ws.n_slices(); ++i) {
    const Matrix w = ws.tensor.slice(i);
    const Matrix diff = w - reconstruct_slice(f, i);
    double ni = 0.0, di = 0.0;
    for (double x : diff.storage()) ni += x * x;
    for (double x : w.storage()) di += x * x;
    num += ni;
    denom += di;
    res.per_slice[i] = (di == 0.0) ? (ni == 0.0 ? 0.0 : INFINITY)
                                   : std::sqrt(ni / di);
  }
  res.overall = (denom == 0.0) ? (num == 0.0 ? 0.0 : INFINITY)
                               : std::sqrt(num / denom);
  return res;
}

TuckerFactors tucker_from_tt(const TTFactors& tt) {
  const std::size_t n = tt.n_slices();
  const std::size_t d = tt.rank();
  TuckerFactors tk;
  tk.u = tt.u;
  tk.v = tt.v;
  tk.p = Matrix::identity(n);
  tk.bank = Tensor3(n, d, d);
  for (std::size_t i = 0; i < n; ++i) tk.bank.set_slice(i, tt.cores[i]);
  return tk;
}

TTFactors merge_bank(const TuckerFactors& tk) {
  const std::size_t d = tk.rank_d();
  TTFactors tt;
  tt.u = tk.u;
  tt.v = tk.v;
  // cores = p * bank viewed as an (l x d^2) matrix, row by row.
  const Matrix merged = matmul(tk.p, tk.bank.as_matrix());
  tt.cores.resize(tk.n_slices());
  for (std::size_t i = 0; i < tk.n_slices(); ++i)
    tt.cores[i] = Matrix(d, d, std::vector<double>(
                                   merged.row(i), merged.row(i) + d * d));
  return tt;
}

TuckerFactors albert_factors(const std::vector<Matrix>& shared_slices,
                             std::size_t layers) {
  if (shared_slices.size() != 12)
    throw DimError("albert_factors: expected exactly 12 shared slices");
  if (layers < 1) throw DimError("albert_factors: layers must be >= 1");
  const std::size_t D = shared_slices[0].rows();
  for (const Matrix& s : shared_slices)
    if (s.rows() != D || s.cols() != D)
      throw DimError("albert_factors: shared slices must all be D x D");

  TuckerFactors tk;
  tk.u = Matrix::identity(D);
  tk.v = Matrix::identity(D);
  tk.bank = Tensor3(12, D, D);
  for (std::size_t k = 0; k < 12; ++k) tk.bank.set_slice(k, shared_slices[k]);
  tk.p = Matrix(12 * layers, 12);
  for (std::size_t j = 0; j < layers; ++j)
    for (std::size_t k = 0; k < 12; ++k) tk.p(12 * j + k, k) = 1.0;
  return tk;
}

std::uint64_t stored_elements(const Factors& f) {
  if (const auto* s = std::get_if<SvdFactors>(&f)) {
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < s->n_slices(); ++i) {
      total += s->u[i].size() + s->v[i].size();
      if (s->variant == SvdFactors::Variant::Alpha)
        total += static_cast<std::uint64_t>(s->rank) * s->rank;  // dense sigma block
    }
    return total;
  }
  if (const auto* t = std::get_if<TTFactors>(&f)) {
    std::uint64_t total = t->u.size() + t->v.size();
    for (const Matrix& c : t->cores) total += c.size();
    return total;
  }
  const auto& tk = std::get<TuckerFactors>(f);
  return tk.u.size() + tk.v.size() + tk.bank.size() + tk.p.size();
}

// ---------------------------------------------------------------------------
// TKF serialization

namespace {

void put_u32le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("TKF: truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_block(std::ostream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
}

void get_block(std::istream& in, double* data, std::size_t n, const char* what) {
  if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 8)))
    throw FormatError(std::string("TKF: truncated while reading ") + what);
}

}  // namespace

void write_tkf(std::ostream& out, const Factors& f, std::size_t layers) {
  const std::size_t D = factors_hidden(f);
  if (factors_n_slices(f) != 12 * layers)
    throw DimError("write_tkf: slice count does not match layer count");

  std::uint8_t kind = 3;
  std::size_t d = 0, l = 0;
  if (const auto* s = std::get_if<SvdFactors>(&f)) {
    kind = (s->variant == SvdFactors::Variant::Alpha) ? 0 : 1;
    d = s->rank;
    l = 0;
  } else if (const auto* t = std::get_if<TTFactors>(&f)) {
    kind = 2;
    d = t->rank();
    l = t->n_slices();
  } else {
    const auto& tk = std::get<TuckerFactors>(f);
    kind = 3;
    d = tk.rank_d();
    l = tk.rank_l();
  }

  out.write("TKF1", 4);
  put_u32le(out, static_cast<std::uint32_t>(layers));
  put_u32le(out, static_cast<std::uint32_t>(D));
  put_u32le(out, static_cast<std::uint32_t>(d));
  put_u32le(out, static_cast<std::uint32_t>(l));
  const unsigned char tail[4] = {kind, 1, 0, 0};  // kind, dtype, 2 pad bytes
  out.write(reinterpret_cast<const char*>(tail), 4);

  if (const auto* s = std::get_if<SvdFactors>(&f)) {
    for (std::size_t i = 0; i < s->n_slices(); ++i) {
      put_block(out, s->u[i].data(), s->u[i].size());
      if (s->variant == SvdFactors::Variant::Alpha) {
        Matrix sigma(d, d);
        for (std::size_t j = 0; j < d; ++j) sigma(j, j) = s->s[i][j];
        put_block(out, sigma.data(), sigma.size());
      }
      put_block(out, s->v[i].data(), s->v[i].size());
    }
  } else {
    const TuckerFactors tk = std::holds_alternative<TTFactors>(f)
                                 ? tucker_from_tt(std::get<TTFactors>(f))
                                 : std::get<TuckerFactors>(f);
    put_block(out, tk.u.data(), tk.u.size());
    put_block(out, tk.v.data(), tk.v.size());
    put_block(out, tk.bank.data(), tk.bank.size());
    put_block(out, tk.p.data(), tk.p.size());
  }
  if (!out) throw FormatError("TKF: write failed");
}

Factors read_tkf(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("TKF: truncated header at offset 0");
  if (std::memcmp(magic, "TKF1", 4) != 0)
    throw FormatError("TKF: bad magic at offset 0 (expected \"TKF1\")");
  const std::uint32_t L = get_u32le(in, "layer count");
  const std::uint32_t D = get_u32le(in, "hidden size");
  const std::uint32_t d = get_u32le(in, "rank d");
  const std::uint32_t l = get_u32le(in, "rank l");
  unsigned char tail[4];
  if (!in.read(reinterpret_cast<char*>(tail), 4))
    throw FormatError("TKF: truncated header at offset 20");
  const std::uint8_t kind = tail[0];
  if (tail[1] != 1)
    throw FormatError("TKF: unsupported dtype " + std::to_string(tail[1]) +
                      " at offset 21 (expected 1 = f64 LE)");
  if (kind > 3)
    throw FormatError("TKF: unknown kind " + std::to_string(kind) + " at offset 20");
  if (L == 0 || D == 0 || d == 0 || d > D)
    throw FormatError("TKF: inconsistent header dimensions");
  const std::size_t n = 12 * static_cast<std::size_t>(L);

  if (kind <= 1) {
    SvdFactors s;
    s.variant = (kind == 0) ? SvdFactors::Variant::Alpha : SvdFactors::Variant::Beta;
    s.hidden = D;
    s.rank = d;
    s.u.resize(n);
    s.v.resize(n);
    if (kind == 0) s.s.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      s.u[i] = Matrix(D, d);
      get_block(in, s.u[i].data(), s.u[i].size(), "slice u");
      if (kind == 0) {
        Matrix sigma(d, d);
        get_block(in, sigma.data(), sigma.size(), "slice sigma");
        s.s[i].resize(d);
        for (std::size_t j = 0; j < d; ++j) s.s[i][j] = sigma(j, j);
      }
      s.v[i] = Matrix(d, D);
      get_block(in, s.v[i].data(), s.v[i].size(), "slice v");
    }
    return s;
  }

  if (l == 0 || l > n) throw FormatError("TKF: inconsistent rank l");
  TuckerFactors tk;
  tk.u = Matrix(D, d);
  tk.v = Matrix(d, D);
  tk.bank = Tensor3(l, d, d);
  tk.p = Matrix(n, l);
  get_block(in, tk.u.data(), tk.u.size(), "u");
  get_block(in, tk.v.data(), tk.v.size(), "v");
  get_block(in, tk.bank.data(), tk.bank.size(), "bank");
  get_block(in, tk.p.data(), tk.p.size(), "p");
  if (kind == 2) return merge_bank(tk);
  return tk;
}

void write_tkf_file(const std::string& path, const Factors& f, std::size_t layers) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path);
  write_tkf(out, f, layers);
}

Factors read_tkf_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path);
  return read_tkf(in);
}

std::size_t factor_layers(const Factors& f) {
  return factors_n_slices(f) / 12;
}

}  // namespace tslim
