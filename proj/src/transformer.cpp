// SPDX-License-Identifier: Apache-2.0
#include "tslim/transformer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <string>

#include "tslim/error.hpp"

namespace tslim {

namespace {

void add_row_bias(Matrix& m, const std::vector<double>& bias,
                  std::size_t offset = 0) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double* r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += bias[offset + j];
  }
}

void softmax_rows_inplace(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double* r = m.row(i);
    double mx = r[0];
    for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] *= inv;
  }
}

void gelu_inplace(Matrix& m) {
  for (double& v : m.storage()) v = gelu_exact(v);
}

void layernorm_rows_inplace(Matrix& m, const std::vector<double>& gamma,
                            const std::vector<double>& beta) {
  const std::size_t cols = m.cols();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double* r = m.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += r[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double c = r[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < cols; ++j)
      r[j] = gamma[j] * ((r[j] - mean) * inv) + beta[j];
  }
}

Matrix block(const Matrix& m, std::size_t r0, std::size_t nr, std::size_t c0,
             std::size_t nc) {
  Matrix b(nr, nc);
  for (std::size_t i = 0; i < nr; ++i)
    std::memcpy(b.row(i), m.row(r0 + i) + c0, nc * sizeof(double));
  return b;
}

void check_activations(const Activations& x, std::size_t D) {
  if (x.batch < 1 || x.seq < 1) throw DimError("activations: b and n must be >= 1");
  if (x.flat.rows() != x.batch * x.seq || x.flat.cols() != D)
    throw DimError("activations: flat shape does not match (b*n) x D");
}

}  // namespace

double gelu_exact(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

FactoredCache build_cache(const TuckerFactors& tk) {
  const std::size_t d = tk.rank_d();
  FactoredCache cache;
  cache.m.resize(tk.n_slices());
  const Matrix merged = matmul(tk.p, tk.bank.as_matrix());  // 12L x d^2
  for (std::size_t i = 0; i < tk.n_slices(); ++i) {
    const Matrix core(d, d, std::vector<double>(merged.row(i), merged.row(i) + d * d));
    cache.m[i] = matmul(core, tk.v);  // d x D
  }
  return cache;
}

Matrix factored_linear(const Matrix& x_flat, std::size_t slice,
                       const TuckerFactors& tk, MulOrder order,
                       MulCounter* counter, bool transposed,
                       const FactoredCache* cache) {
  if (slice >= tk.n_slices())
    throw DimError("factored_linear: slice index out of range");
  MulCounter local;
  MulCounter& c = counter ? *counter : local;

  if (cache) {
    const Matrix& m = cache->m[slice];
    if (!transposed) return matmul(matmul(x_flat, tk.u, c), m, c);
    return matmul_nt(matmul_nt(x_flat, m, c), tk.u, c);
  }

  const std::size_t d = tk.rank_d();
  const Matrix p_row(1, tk.rank_l(),
                     std::vector<double>(tk.p.row(slice), tk.p.row(slice) + tk.rank_l()));
  const Matrix pic_flat = matmul(p_row, tk.bank.as_matrix(), c);  // 1 x d^2, l*d^2 mults
  const Matrix pic(d, d, pic_flat.storage());

  switch (order) {
    case MulOrder::IV1: {
      const Matrix w = matmul(matmul(tk.u, pic, c), tk.v, c);
      return transposed ? matmul_nt(x_flat, w, c) : matmul(x_flat, w, c);
    }
    case MulOrder::IV2: {
      if (!transposed) {
        const Matrix xu = matmul(x_flat, tk.u, c);
        return matmul(matmul(xu, pic, c), tk.v, c);
      }
      const Matrix xv = matmul_nt(x_flat, tk.v, c);
      return matmul_nt(matmul_nt(xv, pic, c), tk.u, c);
    }
    case MulOrder::IV3: {
      if (!transposed) {
        const Matrix xu = matmul(x_flat, tk.u, c);
        return matmul(xu, matmul(pic, tk.v, c), c);
      }
      const Matrix xv = matmul_nt(x_flat, tk.v, c);
      return matmul_nt(xv, matmul(tk.u, pic, c), c);
    }
  }
  throw DimError("factored_linear: bad order");
}

std::pair<Activations, Tensor3> san_forward(const Activations& x,
                                            const LayerWeights& lw,
                                            const TransformerConfig& cfg,
                                            SanMode mode) {
  cfg.validate();
  const std::size_t D = cfg.hidden;
  const std::size_t dh = cfg.d_head();
  const std::size_t n = x.seq;
  check_activations(x, D);

  Tensor3 maps(x.batch * cfg.heads, n, n);
  Activations out;
  out.batch = x.batch;
  out.seq = x.seq;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  if (mode == SanMode::Monolithic) {
    Matrix q = matmul(x.flat, lw.wq);
    Matrix k = matmul(x.flat, lw.wk);
    Matrix v = matmul(x.flat, lw.wv);
    add_row_bias(q, lw.bq);
    add_row_bias(k, lw.bk);
    add_row_bias(v, lw.bv);
    Matrix ctx(x.flat.rows(), D);
    for (std::size_t bi = 0; bi < x.batch; ++bi) {
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        const Matrix qb = block(q, bi * n, n, h * dh, dh);
        const Matrix kb = block(k, bi * n, n, h * dh, dh);
        const Matrix vb = block(v, bi * n, n, h * dh, dh);
        Matrix s = scale * matmul_nt(qb, kb);
        softmax_rows_inplace(s);
        maps.set_slice(bi * cfg.heads + h, s);
        const Matrix cb = matmul(s, vb);
        for (std::size_t i = 0; i < n; ++i)
          std::memcpy(ctx.row(bi * n + i) + h * dh, cb.row(i), dh * sizeof(double));
      }
    }
    out.flat = matmul(ctx, lw.wo);
    add_row_bias(out.flat, lw.bo);
    return {std::move(out), std::move(maps)};
  }

  // HeadSum: each head runs against its own column/row blocks and the head
  // outputs are summed; the output bias is added once.
  out.flat = Matrix(x.flat.rows(), D);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Matrix qh = matmul(x.flat, lw.wq.col_block(h * dh, dh));
    Matrix kh = matmul(x.flat, lw.wk.col_block(h * dh, dh));
    Matrix vh = matmul(x.flat, lw.wv.col_block(h * dh, dh));
    add_row_bias(qh, lw.bq, h * dh);
    add_row_bias(kh, lw.bk, h * dh);
    add_row_bias(vh, lw.bv, h * dh);
    const Matrix oh = lw.wo.row_block(h * dh, dh);  // dh x D
    for (std::size_t bi = 0; bi < x.batch; ++bi) {
      Matrix s = scale * matmul_nt(qh.row_block(bi * n, n), kh.row_block(bi * n, n));
      softmax_rows_inplace(s);
      maps.set_slice(bi * cfg.heads + h, s);
      const Matrix head_out = matmul(matmul(s, vh.row_block(bi * n, n)), oh);
      for (std::size_t i = 0; i < n; ++i) {
        double* dst = out.flat.row(bi * n + i);
        const double* src = head_out.row(i);
        for (std::size_t j = 0; j < D; ++j) dst[j] += src[j];
      }
    }
  }
  add_row_bias(out.flat, lw.bo);
  return {std::move(out), std::move(maps)};
}

Activations ffn_forward(const Activations& x, const LayerWeights& lw,
                        const TransformerConfig& cfg, FfnMode mode,
                        std::size_t splits) {
  cfg.validate();
  const std::size_t D = cfg.hidden;
  const std::size_t dff = cfg.d_ff();
  check_activations(x, D);

  Activations out;
  out.batch = x.batch;
  out.seq = x.seq;

  if (mode == FfnMode::Monolithic) {
    Matrix hid = matmul(x.flat, lw.w_in);
    add_row_bias(hid, lw.b_in);
    gelu_inplace(hid);
    out.flat = matmul(hid, lw.w_out);
    add_row_bias(out.flat, lw.b_out);
    return out;
  }

  if (splits < 1 || dff % splits != 0)
    throw DimError("ffn_forward: splits must divide d_ff");
  const std::size_t dh = dff / splits;
  out.flat = Matrix(x.flat.rows(), D);
  for (std::size_t h = 0; h < splits; ++h) {
    Matrix hid = matmul(x.flat, lw.w_in.col_block(h * dh, dh));
    add_row_bias(hid, lw.b_in, h * dh);
    gelu_inplace(hid);
    const Matrix part = matmul(hid, lw.w_out.row_block(h * dh, dh));
    for (std::size_t i = 0; i < out.flat.size(); ++i)
      out.flat.data()[i] += part.data()[i];
  }
  // b_out distributed as b_out/splits per sub-FFN sums back to b_out.
  add_row_bias(out.flat, lw.b_out);
  return out;
}

ToyTransformer random_model(const TransformerConfig& cfg, Rng& rng, double stddev) {
  cfg.validate();
  const std::size_t D = cfg.hidden;
  ToyTransformer m;
  m.cfg = cfg;
  const std::vector<LayerWeights> layers = random_layers(cfg, rng, stddev);
  m.blocks = stack_weights(layers, cfg).tensor;
  m.side.resize(cfg.layers);
  for (std::size_t j = 0; j < cfg.layers; ++j) {
    LayerSideParams& sp = m.side[j];
    sp.bq = layers[j].bq;
    sp.bk = layers[j].bk;
    sp.bv = layers[j].bv;
    sp.bo = layers[j].bo;
    sp.b_in = layers[j].b_in;
    sp.b_out = layers[j].b_out;
    auto ln_vec = [&](double base) {
      std::vector<double> v(D);
      for (double& x : v) x = base + rng.normal(0.0, 0.05);
      return v;
    };
    sp.ln1_gamma = ln_vec(1.0);
    sp.ln1_beta = ln_vec(0.0);
    sp.ln2_gamma = ln_vec(1.0);
    sp.ln2_beta = ln_vec(0.0);
  }
  m.head_w = Matrix(D, cfg.n_classes);
  for (double& v : m.head_w.storage()) v = rng.normal(0.0, stddev);
  m.head_b.resize(cfg.n_classes);
  for (double& v : m.head_b) v = rng.normal(0.0, stddev);
  return m;
}

std::pair<ToyTransformer, TuckerFit> factorize_model(const ToyTransformer& dense,
                                                     std::size_t l, std::size_t d,
                                                     double tol,
                                                     std::size_t max_iters) {
  if (dense.factored()) throw DimError("factorize_model: model is already factored");
  WeightStack ws;
  ws.config = dense.cfg;
  ws.tensor = dense.dense_blocks();
  TuckerFit fit = decompose_tucker(ws, l, d, tol, max_iters);

  ToyTransformer student;
  student.cfg = dense.cfg;
  student.blocks = fit.factors;
  student.side = dense.side;
  student.head_w = dense.head_w;
  student.head_b = dense.head_b;
  return {std::move(student), std::move(fit)};
}

ForwardTrace transformer_forward(const Activations& x, const ToyTransformer& model,
                                 MulCounter* counter) {
  const TransformerConfig& cfg = model.cfg;
  cfg.validate();
  const std::size_t D = cfg.hidden;
  const std::size_t dh = cfg.d_head();
  const std::size_t n = x.seq;
  check_activations(x, D);
  if (!x.flat.all_finite()) throw NumericError("forward: non-finite activations");

  MulCounter local;
  FactoredCache cache;
  const FactoredCache* cache_ptr = nullptr;
  if (model.factored() && model.cache_factors) {
    cache = build_cache(model.factors());
    cache_ptr = &cache;
  }

  auto apply = [&](std::size_t slice, const Matrix& input, bool transposed) {
    if (model.factored())
      return factored_linear(input, slice, model.factors(), model.order, &local,
                             transposed, cache_ptr);
    const Matrix w = model.dense_blocks().slice(slice);
    return transposed ? matmul_nt(input, w, local) : matmul(input, w, local);
  };

  ForwardTrace trace;
  trace.attention.reserve(cfg.layers);
  Matrix h = x.flat;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (std::size_t j = 0; j < cfg.layers; ++j) {
    const LayerSideParams& sp = model.side[j];
    const std::size_t base = 12 * j;

    Matrix q = apply(base + 0, h, false);
    Matrix k = apply(base + 1, h, false);
    Matrix v = apply(base + 2, h, false);
    add_row_bias(q, sp.bq);
    add_row_bias(k, sp.bk);
    add_row_bias(v, sp.bv);

    Tensor3 maps(x.batch * cfg.heads, n, n);
    Matrix ctx(h.rows(), D);
    for (std::size_t bi = 0; bi < x.batch; ++bi) {
      for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
        const Matrix qb = block(q, bi * n, n, hh * dh, dh);
        const Matrix kb = block(k, bi * n, n, hh * dh, dh);
        const Matrix vb = block(v, bi * n, n, hh * dh, dh);
        Matrix s = scale * matmul_nt(qb, kb, local);
        softmax_rows_inplace(s);
        maps.set_slice(bi * cfg.heads + hh, s);
        const Matrix cb = matmul(s, vb, local);
        for (std::size_t i = 0; i < n; ++i)
          std::memcpy(ctx.row(bi * n + i) + hh * dh, cb.row(i), dh * sizeof(double));
      }
    }
    trace.attention.push_back(std::move(maps));

    Matrix attn_out = apply(base + 3, ctx, false);
    add_row_bias(attn_out, sp.bo);
    h = h + attn_out;
    layernorm_rows_inplace(h, sp.ln1_gamma, sp.ln1_beta);

    Matrix ffn_out(h.rows(), D);
    for (std::size_t sub = 0; sub < 4; ++sub) {
      Matrix hid = apply(base + 4 + sub, h, false);
      add_row_bias(hid, sp.b_in, sub * D);
      gelu_inplace(hid);
      // Out slices are stored transposed in the stack.
      const Matrix part = apply(base + 8 + sub, hid, true);
      for (std::size_t i = 0; i < ffn_out.size(); ++i)
        ffn_out.data()[i] += part.data()[i];
    }
    add_row_bias(ffn_out, sp.b_out);
    h = h + ffn_out;
    layernorm_rows_inplace(h, sp.ln2_gamma, sp.ln2_beta);
  }

  trace.last_hidden = h;

  // Classification head reads the first token of each sequence (not counted).
  Matrix firsts(x.batch, D);
  for (std::size_t bi = 0; bi < x.batch; ++bi)
    std::memcpy(firsts.row(bi), h.row(bi * n), D * sizeof(double));
  trace.logits = matmul(firsts, model.head_w);
  add_row_bias(trace.logits, model.head_b);

  trace.mults = local.mults;
  if (counter) counter->mults += local.mults;
  if (!trace.last_hidden.all_finite() || !trace.logits.all_finite())
    throw NumericError("forward: produced non-finite values");
  return trace;
}

Activations embed_tokens(const std::vector<std::uint32_t>& tokens,
                         std::size_t batch, std::size_t seq,
                         const Matrix& embedding) {
  if (tokens.size() != batch * seq)
    throw DimError("embed_tokens: token count does not match b*n");
  Activations x;
  x.batch = batch;
  x.seq = seq;
  x.flat = Matrix(batch * seq, embedding.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= embedding.rows())
      throw DimError("embed_tokens: token id out of vocabulary");
    std::memcpy(x.flat.row(i), embedding.row(tokens[i]),
                embedding.cols() * sizeof(double));
  }
  return x;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double iqr_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return v[(3 * n) / 4] - v[n / 4];
}

}  // namespace

BenchResult bench_forward(std::size_t D, std::size_t d, std::size_t n,
                          std::size_t reps, std::uint64_t seed) {
  if (reps < 1) throw DimError("bench: reps must be >= 1");
  Rng rng(seed);
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = D;
  cfg.heads = std::max<std::size_t>(1, D / 64);
  while (D % cfg.heads != 0) --cfg.heads;
  cfg.n_classes = 2;

  ToyTransformer dense = random_model(cfg, rng, 0.05);

  // Random factors of the target ranks; the bench compares wall clock, not
  // approximation quality.
  const std::size_t l = std::min<std::size_t>(24, 12 * cfg.layers);
  ToyTransformer fact = dense;
  TuckerFactors tk;
  tk.u = Matrix(D, d);
  tk.v = Matrix(d, D);
  tk.bank = Tensor3(l, d, d);
  tk.p = Matrix(12 * cfg.layers, l);
  for (double& v : tk.u.storage()) v = rng.normal(0.0, 0.05);
  for (double& v : tk.v.storage()) v = rng.normal(0.0, 0.05);
  for (double& v : tk.bank.storage()) v = rng.normal(0.0, 0.05);
  for (double& v : tk.p.storage()) v = rng.normal(0.0, 0.05);
  fact.blocks = std::move(tk);
  fact.order = MulOrder::IV3;
  fact.cache_factors = true;

  Activations x;
  x.batch = 1;
  x.seq = n;
  x.flat = Matrix(n, D);
  for (double& v : x.flat.storage()) v = rng.normal(0.0, 1.0);

  auto time_ms = [&](const ToyTransformer& m) {
    const auto t0 = std::chrono::steady_clock::now();
    const ForwardTrace t = transformer_forward(x, m);
    const auto t1 = std::chrono::steady_clock::now();
    (void)t;
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };

  // One warmup each, then interleaved timed reps.
  (void)time_ms(dense);
  (void)time_ms(fact);
  std::vector<double> td, tf;
  for (std::size_t r = 0; r < reps; ++r) {
    td.push_back(time_ms(dense));
    tf.push_back(time_ms(fact));
  }

  BenchResult res;
  res.dense_median_ms = median_of(td);
  res.dense_iqr_ms = iqr_of(td);
  res.factored_median_ms = median_of(tf);
  res.factored_iqr_ms = iqr_of(tf);
  return res;
}

}  // namespace tslim
