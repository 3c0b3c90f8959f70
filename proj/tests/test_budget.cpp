// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "tslim/budget.hpp"
#include "tslim/decomp.hpp"
#include "tslim/error.hpp"
#include "tslim/rng.hpp"
#include "tslim/stack.hpp"
#include "tslim/transformer.hpp"

using namespace tslim;

namespace {

WeightStack random_stack(Rng& rng, std::size_t L, std::size_t D) {
  TransformerConfig cfg;
  cfg.layers = L;
  cfg.hidden = D;
  cfg.heads = 1;
  return stack_weights(random_layers(cfg, rng), cfg);
}

BudgetQuery query(Method m, std::size_t L, std::size_t D, std::size_t d = 0,
                  std::size_t l = 0) {
  BudgetQuery q;
  q.method = m;
  q.L = L;
  q.D = D;
  q.d = d;
  q.l = l;
  return q;
}

}  // namespace

TEST_SUITE("budget") {

TEST_CASE("closed forms match an element-enumeration oracle") {
  Rng rng(81);
  for (int rep = 0; rep < 8; ++rep) {
    const std::size_t L = 1 + rng.below(3);
    const std::size_t D = 4 + 2 * rng.below(4);
    const std::size_t d = 1 + rng.below(D);
    const std::size_t l = 1 + rng.below(12 * L);
    const WeightStack ws = random_stack(rng, L, D);

    CHECK(core_param_count(query(Method::I, L, D)) ==
          static_cast<std::uint64_t>(ws.tensor.size()));
    CHECK(core_param_count(query(Method::IIAlpha, L, D, d)) ==
          stored_elements(Factors(decompose_svd(ws, d, SvdFactors::Variant::Alpha))));
    CHECK(core_param_count(query(Method::IIBeta, L, D, d)) ==
          stored_elements(Factors(decompose_svd(ws, d, SvdFactors::Variant::Beta))));
    CHECK(core_param_count(query(Method::III, L, D, d)) ==
          stored_elements(Factors(decompose_tt(ws, d))));
    CHECK(core_param_count(query(Method::IV, L, D, d, l)) ==
          stored_elements(Factors(decompose_tucker(ws, l, d).factors)));
  }
}

TEST_CASE("published-configuration parameter counts") {
  CHECK(core_param_count(query(Method::I, 12, 768)) == 84934656ull);
  CHECK(core_param_count(query(Method::III, 12, 768, 384)) == 21823488ull);
  CHECK(core_param_count(query(Method::IV, 12, 768, 384, 72)) == 11217024ull);
}

TEST_CASE("published params minus closed form is a constant offset") {
  double min_off = 1e18, max_off = -1e18;
  for (const Table4Ref& ref : table4_rows()) {
    const std::uint64_t core =
        core_param_count(query(ref.method, 12, 768, ref.d, ref.l));
    const double off = ref.published_params - static_cast<double>(core);
    min_off = std::min(min_off, off);
    max_off = std::max(max_off, off);
  }
  const double mid = 0.5 * (min_off + max_off);
  CHECK(max_off - mid <= 0.15e6);
  CHECK(mid - min_off <= 0.15e6);
}

TEST_CASE("forward FLOPs reproduce the published numbers") {
  auto flops_at = [](Method m, std::size_t d) {
    BudgetQuery q = query(m, 12, 768, d, 36);
    q.b = 1;
    q.n = 128;
    return static_cast<double>(flops_forward(q));
  };
  CHECK(std::abs(flops_at(Method::I, 0) - 22.5e9) / 22.5e9 < 0.01);
  CHECK(std::abs(flops_at(Method::III, 64) - 4.3e9) / 4.3e9 < 0.02);
  CHECK(std::abs(flops_at(Method::IV, 256) - 15.2e9) / 15.2e9 < 0.05);
  CHECK(std::abs(flops_at(Method::IV, 128) - 8.0e9) / 8.0e9 < 0.05);
  // At d = D/2 the factored cost equals the dense cost.
  CHECK(flops_at(Method::III, 384) == flops_at(Method::I, 0));
}

TEST_CASE("FLOPs equal 2x the instrumented forward counter on tiny configs") {
  Rng rng(82);
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 16;
  cfg.heads = 2;
  const std::size_t b = 1, n = 8, d = 4, l = 6;
  const ToyTransformer dense = random_model(cfg, rng);
  auto [student, fit] = factorize_model(dense, l, d);
  student.cache_factors = true;

  Activations x;
  x.batch = b;
  x.seq = n;
  x.flat = Matrix(b * n, 16);
  for (double& v : x.flat.storage()) v = rng.normal(0.0, 1.0);

  BudgetQuery qd = query(Method::I, 1, 16);
  qd.b = b;
  qd.n = n;
  CHECK(flops_forward(qd) == 2 * transformer_forward(x, dense).mults);

  BudgetQuery qf = query(Method::IV, 1, 16, d, l);
  qf.b = b;
  qf.n = n;
  CHECK(flops_forward(qf) == 2 * transformer_forward(x, student).mults);
}

TEST_CASE("whole-model table reproduces the published totals") {
  const auto refs = table7_rows();
  std::vector<CompressionRow> rows;
  for (const auto& r : refs) rows.push_back(r.row);
  const auto entries = compression_table(rows);
  REQUIRE(entries.size() == refs.size());

  for (std::size_t i = 0; i < refs.size(); ++i) {
    const double rel = std::abs(static_cast<double>(entries[i].compressed_total) -
                                refs[i].published_total) /
                       refs[i].published_total;
    CHECK(rel < 0.10);
    if (refs[i].row.name == "BERT-base" || refs[i].row.name == "GPT-3 175B")
      CHECK(rel < 0.03);
  }

  // Ratios grow with model size within each family and stay below the
  // rank-halving bound of 8.
  for (std::size_t i = 0; i < entries.size(); ++i) {
    CHECK(entries[i].ratio < 8.0);
    const bool same_family =
        i + 1 < entries.size() &&
        entries[i].name.substr(0, 3) == entries[i + 1].name.substr(0, 3);
    if (same_family) CHECK(entries[i].ratio < entries[i + 1].ratio);
  }
  CHECK(entries.back().ratio > 7.5);  // approaches the bound for the largest row
}

TEST_CASE("cost ordering III < II-beta < I for d < D/2") {
  Rng rng(83);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t L = 1 + rng.below(24);
    const std::size_t D = 8 + 2 * rng.below(512);
    const std::size_t d = 1 + rng.below(D / 2 - 1);  // d < D/2
    const std::uint64_t pi = core_param_count(query(Method::I, L, D));
    const std::uint64_t pb = core_param_count(query(Method::IIBeta, L, D, d));
    const std::uint64_t pt = core_param_count(query(Method::III, L, D, d));
    CHECK(pt < pb);
    CHECK(pb < pi);
  }
}

TEST_CASE("overhead and embedding terms") {
  BudgetQuery q = query(Method::I, 12, 768);
  q.include_overhead = true;
  CHECK(param_count(q) == 84934656ull + 12ull * 13 * 768);
  q.vocab = 30522;
  q.n_ctx = 514;
  CHECK(param_count(q) ==
        84934656ull + 12ull * 13 * 768 + (30522ull + 514) * 768);
}

TEST_CASE("invalid queries are rejected") {
  CHECK_THROWS_AS((void)core_param_count(query(Method::III, 12, 768, 0)), DimError);
  CHECK_THROWS_AS((void)core_param_count(query(Method::IV, 12, 768, 4, 0)), DimError);
  BudgetQuery q = query(Method::I, 12, 768);
  CHECK_THROWS_AS((void)flops_forward(q), DimError);  // b, n missing
}

}  // TEST_SUITE
