// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>

#include "tslim/decomp.hpp"
#include "tslim/error.hpp"
#include "tslim/linalg.hpp"
#include "tslim/rng.hpp"
#include "tslim/transformer.hpp"

using namespace tslim;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Matrix m(r, c);
  for (double& v : m.storage()) v = rng.normal(0.0, sd);
  return m;
}

Activations random_activations(Rng& rng, std::size_t b, std::size_t n,
                               std::size_t D) {
  Activations x;
  x.batch = b;
  x.seq = n;
  x.flat = random_matrix(rng, b * n, D);
  return x;
}

TuckerFactors random_factors(Rng& rng, std::size_t slices, std::size_t D,
                             std::size_t d, std::size_t l) {
  TuckerFactors tk;
  tk.u = random_matrix(rng, D, d, 0.3);
  tk.v = random_matrix(rng, d, D, 0.3);
  tk.bank = Tensor3(l, d, d);
  for (double& v : tk.bank.storage()) v = rng.normal(0.0, 0.3);
  tk.p = random_matrix(rng, slices, l, 0.3);
  return tk;
}

LayerWeights random_layer(Rng& rng, const TransformerConfig& cfg) {
  return random_layers(cfg, rng)[0];
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double mx = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
  return mx;
}

// Table-of-orderings closed forms for one factored application.
std::uint64_t count_iv1(std::uint64_t bn, std::uint64_t D, std::uint64_t d,
                        std::uint64_t l) {
  return bn * D * D + D * d * d + D * D * d + l * d * d;
}
std::uint64_t count_iv2(std::uint64_t bn, std::uint64_t D, std::uint64_t d,
                        std::uint64_t l) {
  return 2 * bn * D * d + bn * d * d + l * d * d;
}
std::uint64_t count_iv3(std::uint64_t bn, std::uint64_t D, std::uint64_t d,
                        std::uint64_t l) {
  return 2 * bn * D * d + D * d * d + l * d * d;
}

}  // namespace

TEST_SUITE("transformer") {

TEST_CASE("san: zero weights give zero output and uniform maps") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  LayerWeights lw;
  lw.wq = lw.wk = lw.wv = lw.wo = Matrix(8, 8);
  lw.w_in = Matrix(8, 32);
  lw.w_out = Matrix(32, 8);
  lw.bq = lw.bk = lw.bv = lw.bo = std::vector<double>(8, 0.0);
  lw.b_in.assign(32, 0.0);
  lw.b_out.assign(8, 0.0);

  Rng rng(61);
  const Activations x = random_activations(rng, 2, 3, 8);
  const auto [y, maps] = san_forward(x, lw, cfg, SanMode::Monolithic);
  CHECK(y.flat.frob_norm() == 0.0);
  for (std::size_t s = 0; s < maps.dim0(); ++s)
    for (std::size_t i = 0; i < maps.dim1(); ++i)
      for (std::size_t j = 0; j < maps.dim2(); ++j)
        CHECK(maps(s, i, j) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("san: single head makes the two modes identical") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 6;
  cfg.heads = 1;
  Rng rng(62);
  const LayerWeights lw = random_layer(rng, cfg);
  const Activations x = random_activations(rng, 2, 4, 6);
  const auto [ym, mm] = san_forward(x, lw, cfg, SanMode::Monolithic);
  const auto [yh, mh] = san_forward(x, lw, cfg, SanMode::HeadSum);
  CHECK(rel_error(ym.flat, yh.flat) < 1e-12);
  CHECK(mm == mh);
}

TEST_CASE("san: head-sum equals monolithic for multi-head layers") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 16;
  cfg.heads = 4;
  Rng rng(63);
  const LayerWeights lw = random_layer(rng, cfg);
  const Activations x = random_activations(rng, 2, 5, 16);
  const auto [ym, mm] = san_forward(x, lw, cfg, SanMode::Monolithic);
  const auto [yh, mh] = san_forward(x, lw, cfg, SanMode::HeadSum);
  CHECK(rel_error(ym.flat, yh.flat) < 1e-10);
  double mdiff = 0.0;
  for (std::size_t i = 0; i < mm.size(); ++i)
    mdiff = std::max(mdiff, std::abs(mm.storage()[i] - mh.storage()[i]));
  CHECK(mdiff < 1e-12);
}

TEST_CASE("ffn: zero input and biases give zero output") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 4;
  cfg.heads = 1;
  Rng rng(64);
  LayerWeights lw = random_layer(rng, cfg);
  lw.b_in.assign(16, 0.0);
  lw.b_out.assign(4, 0.0);
  Activations x;
  x.batch = 1;
  x.seq = 2;
  x.flat = Matrix(2, 4);
  const Activations y = ffn_forward(x, lw, cfg, FfnMode::Monolithic);
  CHECK(y.flat.frob_norm() == 0.0);
}

TEST_CASE("ffn: single split is the monolithic path") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 4;
  cfg.heads = 1;
  Rng rng(65);
  const LayerWeights lw = random_layer(rng, cfg);
  const Activations x = random_activations(rng, 1, 3, 4);
  const Activations ym = ffn_forward(x, lw, cfg, FfnMode::Monolithic);
  const Activations y1 = ffn_forward(x, lw, cfg, FfnMode::SubSum, 1);
  CHECK(rel_error(ym.flat, y1.flat) < 1e-12);
}

TEST_CASE("ffn: four thin sub-FFNs equal the monolithic FFN") {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  Rng rng(66);
  const LayerWeights lw = random_layer(rng, cfg);
  const Activations x = random_activations(rng, 2, 4, 8);
  const Activations ym = ffn_forward(x, lw, cfg, FfnMode::Monolithic);
  const Activations ys = ffn_forward(x, lw, cfg, FfnMode::SubSum);
  CHECK(rel_error(ym.flat, ys.flat) < 1e-10);
}

TEST_CASE("factored_linear counts match the per-order closed forms") {
  Rng rng(67);
  const std::size_t b = 1, n = 8, D = 16, d = 4, l = 6;
  const TuckerFactors tk = random_factors(rng, 12, D, d, l);
  const Matrix x = random_matrix(rng, b * n, D);

  MulCounter c1, c2, c3;
  (void)factored_linear(x, 0, tk, MulOrder::IV1, &c1);
  (void)factored_linear(x, 0, tk, MulOrder::IV2, &c2);
  (void)factored_linear(x, 0, tk, MulOrder::IV3, &c3);
  CHECK(c1.mults == 3424);
  CHECK(c2.mults == 1248);
  CHECK(c3.mults == 1376);
  CHECK(c1.mults == count_iv1(b * n, D, d, l));
  CHECK(c2.mults == count_iv2(b * n, D, d, l));
  CHECK(c3.mults == count_iv3(b * n, D, d, l));
}

TEST_CASE("factored_linear counts over 50 random shapes, plus dominance") {
  Rng rng(68);
  for (int rep = 0; rep < 50; ++rep) {
    const std::uint64_t b = 1 + rng.below(3);
    const std::uint64_t n = 1 + rng.below(12);
    const std::uint64_t D = 4 * (1 + rng.below(6));
    const std::uint64_t d = 1 + rng.below(D);
    const std::uint64_t l = 1 + rng.below(12);
    const TuckerFactors tk = random_factors(rng, 12, D, d, l);
    const Matrix x = random_matrix(rng, b * n, D);
    const std::size_t slice = rng.below(12);

    MulCounter c1, c2, c3;
    const Matrix y1 = factored_linear(x, slice, tk, MulOrder::IV1, &c1);
    const Matrix y2 = factored_linear(x, slice, tk, MulOrder::IV2, &c2);
    const Matrix y3 = factored_linear(x, slice, tk, MulOrder::IV3, &c3);
    CHECK(c1.mults == count_iv1(b * n, D, d, l));
    CHECK(c2.mults == count_iv2(b * n, D, d, l));
    CHECK(c3.mults == count_iv3(b * n, D, d, l));

    // The three parenthesizations agree in value.
    CHECK(rel_error(y1, y2) < 1e-9);
    CHECK(rel_error(y1, y3) < 1e-9);

    if (D > 2 * d) CHECK(c3.mults < c1.mults);
    if (b * n > D) CHECK(c3.mults < c2.mults);

    // Transposed application has the same cost structure.
    MulCounter t3;
    (void)factored_linear(x, slice, tk, MulOrder::IV3, &t3, true);
    CHECK(t3.mults == count_iv3(b * n, D, d, l));
  }
}

TEST_CASE("factored_linear with identity factors equals the dense product") {
  Rng rng(69);
  const std::size_t D = 6;
  const Matrix w = random_matrix(rng, D, D);
  TuckerFactors tk;
  tk.u = Matrix::identity(D);
  tk.v = Matrix::identity(D);
  tk.bank = Tensor3(1, D, D);
  tk.bank.set_slice(0, w);
  tk.p = Matrix(12, 1);
  for (std::size_t i = 0; i < 12; ++i) tk.p(i, 0) = 1.0;

  const Matrix x = random_matrix(rng, 5, D);
  for (MulOrder order : {MulOrder::IV1, MulOrder::IV2, MulOrder::IV3}) {
    CHECK(rel_error(matmul(x, w), factored_linear(x, 3, tk, order)) < 1e-12);
    CHECK(rel_error(matmul_nt(x, w), factored_linear(x, 3, tk, order, nullptr, true)) <
          1e-12);
  }
}

TEST_CASE("cached application equals uncached and costs 2bnDd") {
  Rng rng(70);
  const std::size_t b = 2, n = 5, D = 12, d = 3, l = 4;
  const TuckerFactors tk = random_factors(rng, 12, D, d, l);
  const FactoredCache cache = build_cache(tk);
  const Matrix x = random_matrix(rng, b * n, D);

  for (bool transposed : {false, true}) {
    MulCounter cc;
    const Matrix cached =
        factored_linear(x, 7, tk, MulOrder::IV3, &cc, transposed, &cache);
    const Matrix plain = factored_linear(x, 7, tk, MulOrder::IV3, nullptr, transposed);
    CHECK(rel_error(plain, cached) < 1e-12);
    CHECK(cc.mults == 2 * b * n * D * d);
  }
}

TEST_CASE("slice index out of range is rejected") {
  Rng rng(71);
  const TuckerFactors tk = random_factors(rng, 12, 4, 2, 3);
  const Matrix x = random_matrix(rng, 2, 4);
  CHECK_THROWS_AS((void)factored_linear(x, 12, tk, MulOrder::IV3), DimError);
}

TEST_CASE("full-rank factored forward matches the dense forward") {
  Rng rng(72);
  TransformerConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.n_classes = 3;
  const ToyTransformer dense = random_model(cfg, rng);
  auto [student, fit] = factorize_model(dense, 24, 8);
  REQUIRE(fit.rel_err < 1e-10);

  const Activations x = random_activations(rng, 2, 4, 8);
  const ForwardTrace td = transformer_forward(x, dense);
  const ForwardTrace tf = transformer_forward(x, student);
  CHECK(max_abs_diff(td.last_hidden, tf.last_hidden) < 1e-8);
  CHECK(max_abs_diff(td.logits, tf.logits) < 1e-8);
  for (std::size_t j = 0; j < cfg.layers; ++j) {
    double mdiff = 0.0;
    for (std::size_t i = 0; i < td.attention[j].size(); ++i)
      mdiff = std::max(mdiff, std::abs(td.attention[j].storage()[i] -
                                       tf.attention[j].storage()[i]));
    CHECK(mdiff < 1e-8);
  }
}

TEST_CASE("all three orderings produce identical traces") {
  Rng rng(73);
  TransformerConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.n_classes = 2;
  const ToyTransformer dense = random_model(cfg, rng);
  auto [student, fit] = factorize_model(dense, 6, 3);
  const Activations x = random_activations(rng, 2, 4, 8);

  student.order = MulOrder::IV1;
  const ForwardTrace t1 = transformer_forward(x, student);
  student.order = MulOrder::IV2;
  const ForwardTrace t2 = transformer_forward(x, student);
  student.order = MulOrder::IV3;
  const ForwardTrace t3 = transformer_forward(x, student);

  CHECK(rel_error(t1.last_hidden, t2.last_hidden) < 1e-9);
  CHECK(rel_error(t1.last_hidden, t3.last_hidden) < 1e-9);
  CHECK(rel_error(t1.logits, t3.logits) < 1e-9);
}

TEST_CASE("attention map rows sum to one") {
  Rng rng(74);
  TransformerConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.heads = 2;
  const ToyTransformer dense = random_model(cfg, rng);
  const Activations x = random_activations(rng, 2, 5, 8);
  const ForwardTrace t = transformer_forward(x, dense);
  for (const Tensor3& maps : t.attention) {
    for (std::size_t s = 0; s < maps.dim0(); ++s) {
      for (std::size_t i = 0; i < maps.dim1(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < maps.dim2(); ++j) sum += maps(s, i, j);
        CHECK(std::abs(sum - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("forward trace counts: dense and cached-factored cost models") {
  Rng rng(75);
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 16;
  cfg.heads = 2;
  const std::size_t b = 1, n = 8, d = 4, l = 6;
  const ToyTransformer dense = random_model(cfg, rng);
  auto [student, fit] = factorize_model(dense, l, d);
  student.cache_factors = true;
  const Activations x = random_activations(rng, b, n, 16);

  const std::uint64_t D = 16, L = 1;
  const ForwardTrace td = transformer_forward(x, dense);
  CHECK(td.mults == 12 * L * b * n * D * D + 2 * b * n * n * D * L);

  const ForwardTrace tf = transformer_forward(x, student);
  CHECK(tf.mults == 12 * L * 2 * b * n * D * d + 2 * b * n * n * D * L);
}

TEST_CASE("bench runs and reports positive medians") {
  const BenchResult r = bench_forward(64, 8, 16, 3, 5);
  CHECK(r.dense_median_ms > 0.0);
  CHECK(r.factored_median_ms > 0.0);
}

}  // TEST_SUITE
