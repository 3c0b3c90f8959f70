// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "tslim/analyze.hpp"
#include "tslim/error.hpp"
#include "tslim/linalg.hpp"
#include "tslim/rng.hpp"

using namespace tslim;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.storage()) v = rng.normal(0.0, 1.0);
  return m;
}

WeightStack stack_from_tensor(Tensor3 t) {
  WeightStack ws;
  ws.config.layers = t.dim0() / 12;
  ws.config.hidden = t.dim1();
  ws.config.heads = 1;
  ws.tensor = std::move(t);
  return ws;
}

WeightStack random_stack(Rng& rng, std::size_t L, std::size_t D) {
  Tensor3 t(12 * L, D, D);
  for (double& v : t.storage()) v = rng.normal(0.0, 1.0);
  return stack_from_tensor(std::move(t));
}

WeightStack low_rank_stack(Rng& rng, std::size_t L, std::size_t D, std::size_t r) {
  Tensor3 t(12 * L, D, D);
  for (std::size_t i = 0; i < t.dim0(); ++i)
    t.set_slice(i, matmul(random_matrix(rng, D, r), random_matrix(rng, r, D)));
  return stack_from_tensor(std::move(t));
}

}  // namespace

TEST_SUITE("analyze") {

TEST_CASE("single-slice curves hit 1 immediately on rank-1 stacks") {
  Rng rng(91);
  const WeightStack ws = low_rank_stack(rng, 1, 6, 1);
  const PcaReport report = pca_single(ws);
  REQUIRE(report.curves.size() == 12);
  for (const PcaCurve& c : report.curves)
    CHECK(c.curve[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(report.frac_90_at_half == 1.0);
}

TEST_CASE("structured stacks separate from unstructured ones at half rank") {
  Rng rng(92);
  const std::size_t D = 64;
  // Directly computed reference: square Gaussian slices capture ~0.897 of
  // the variance at half rank (the quarter-circle law hovers just under the
  // 0.9 threshold), while low-rank slices saturate at exactly 1.
  const PcaReport random_report = pca_single(random_stack(rng, 1, D));
  CHECK(random_report.mean_at_half > 0.85);
  CHECK(random_report.mean_at_half < 0.92);

  const PcaReport structured_report = pca_single(low_rank_stack(rng, 1, D, D / 4));
  CHECK(structured_report.frac_90_at_half == 1.0);
  CHECK(structured_report.mean_at_half == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(structured_report.mean_at_half > random_report.mean_at_half + 0.05);
}

TEST_CASE("pairing two identical slices reproduces the single curve") {
  Rng rng(93);
  const std::size_t D = 6;
  Tensor3 t(12, D, D);
  const Matrix a = random_matrix(rng, D, D);
  t.set_slice(0, a);
  t.set_slice(1, a);  // duplicated column space adds no rank
  for (std::size_t i = 2; i < 12; ++i) t.set_slice(i, random_matrix(rng, D, D));
  const WeightStack ws = stack_from_tensor(std::move(t));

  const PcaReport pair = pca_pair(ws, PairAxis::Cols);
  const auto single = pca_variance(a);
  REQUIRE(pair.curves.front().label == "L0.Q|L0.K");
  const auto& dup_curve = pair.curves.front().curve;
  REQUIRE(dup_curve.size() == single.size());
  for (std::size_t k = 0; k < single.size(); ++k)
    CHECK(dup_curve[k] == doctest::Approx(single[k]).epsilon(1e-10));
}

TEST_CASE("independent slices push the pair curve below the single curves") {
  Rng rng(94);
  const std::size_t D = 16;
  const WeightStack ws = random_stack(rng, 1, D);
  const PcaReport pair = pca_pair(ws, PairAxis::Cols);
  const auto single0 = pca_variance(ws.tensor.slice(0));
  const auto single1 = pca_variance(ws.tensor.slice(1));
  const auto& pair01 = pair.curves.front().curve;
  for (std::size_t k = 2; k + 2 < D; ++k) {
    CHECK(pair01[k] < single0[k]);
    CHECK(pair01[k] < single1[k]);
  }
}

TEST_CASE("row pairing equals column pairing of the transposed slices") {
  Rng rng(95);
  const WeightStack ws = random_stack(rng, 1, 5);
  Tensor3 tt(12, 5, 5);
  for (std::size_t i = 0; i < 12; ++i)
    tt.set_slice(i, ws.tensor.slice(i).transposed());
  const WeightStack ws_t = stack_from_tensor(std::move(tt));

  const PcaReport rows = pca_pair(ws, PairAxis::Rows);
  const PcaReport cols = pca_pair(ws_t, PairAxis::Cols);
  REQUIRE(rows.curves.size() == cols.curves.size());
  for (std::size_t c = 0; c < rows.curves.size(); ++c)
    CHECK(rows.curves[c].curve == cols.curves[c].curve);
}

TEST_CASE("pair sampling kicks in for large stacks") {
  Rng rng(96);
  // 12L = 180 slices -> C(180,2) = 16110 > 10000, so 500 seeded pairs.
  const WeightStack ws = random_stack(rng, 15, 4);
  const PcaReport report = pca_pair(ws, PairAxis::Cols, 7);
  CHECK(report.curves.size() == 500);
  const PcaReport again = pca_pair(ws, PairAxis::Cols, 7);
  CHECK(report.curves[0].label == again.curves[0].label);
}

TEST_CASE("distance map of identical rows is zero") {
  TuckerFactors tk;
  tk.u = Matrix::identity(4);
  tk.v = Matrix::identity(4);
  tk.bank = Tensor3(3, 4, 4);
  tk.p = Matrix(12, 3);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t k = 0; k < 3; ++k) tk.p(i, k) = 0.5 + static_cast<double>(k);
  const DistanceMap map = factor_distances(tk);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j)
      CHECK(std::abs(map.distances(i, j)) < 1e-12);
}

TEST_CASE("identity mixing matrix gives distance 1 off the diagonal") {
  TuckerFactors tk;
  tk.u = Matrix::identity(4);
  tk.v = Matrix::identity(4);
  tk.bank = Tensor3(12, 4, 4);
  tk.p = Matrix::identity(12);
  const DistanceMap map = factor_distances(tk);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j)
      CHECK(map.distances(i, j) == (i == j ? 0.0 : 1.0));
}

TEST_CASE("distance map matches the definition and its invariants") {
  Rng rng(97);
  TuckerFactors tk;
  tk.u = Matrix::identity(4);
  tk.v = Matrix::identity(4);
  tk.bank = Tensor3(5, 4, 4);
  tk.p = random_matrix(rng, 24, 5);
  const DistanceMap map = factor_distances(tk);

  for (std::size_t i = 0; i < 24; ++i) {
    CHECK(map.distances(i, i) == 0.0);
    for (std::size_t j = 0; j < 24; ++j) {
      CHECK(map.distances(i, j) == map.distances(j, i));
      CHECK(map.distances(i, j) >= 0.0);
      CHECK(map.distances(i, j) <= 2.0);
      if (i != j) {
        double dot = 0.0, ni = 0.0, nj = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
          dot += tk.p(i, k) * tk.p(j, k);
          ni += tk.p(i, k) * tk.p(i, k);
          nj += tk.p(j, k) * tk.p(j, k);
        }
        const double expected = 1.0 - dot / std::sqrt(ni * nj);
        CHECK(std::abs(map.distances(i, j) - expected) < 1e-12);
      }
    }
  }

  const Matrix sub = layer_submap(map, 1);
  CHECK(sub(3, 4) == map.distances(15, 16));
}

TEST_CASE("zero-norm mixing rows are flagged and mapped to distance 1") {
  Rng rng(98);
  TuckerFactors tk;
  tk.u = Matrix::identity(4);
  tk.v = Matrix::identity(4);
  tk.bank = Tensor3(3, 4, 4);
  tk.p = random_matrix(rng, 12, 3);
  for (std::size_t k = 0; k < 3; ++k) tk.p(5, k) = 0.0;
  const DistanceMap map = factor_distances(tk);
  REQUIRE(map.flagged_rows.size() == 1);
  CHECK(map.flagged_rows[0] == 5);
  for (std::size_t j = 0; j < 12; ++j)
    if (j != 5) CHECK(map.distances(5, j) == 1.0);
  CHECK(map.distances(5, 5) == 0.0);
}

TEST_CASE("norm report: zero stack, exact factors, projection contraction") {
  Rng rng(99);
  const WeightStack zero = stack_from_tensor(Tensor3(12, 4, 4));
  const Factors zf(decompose_svd(zero, 2, SvdFactors::Variant::Alpha));
  for (const NormRow& r : norm_report(zero, zf)) {
    CHECK(r.raw == 0.0);
    CHECK(r.reconstructed == 0.0);
  }

  const WeightStack ws = random_stack(rng, 1, 6);
  const Factors full(decompose_svd(ws, 6, SvdFactors::Variant::Alpha));
  for (const NormRow& r : norm_report(ws, full))
    CHECK(std::abs(r.raw - r.reconstructed) < 1e-9);

  // Orthogonal-projection fits can only shrink slice norms.
  const Factors low(decompose_tt(ws, 2));
  for (const NormRow& r : norm_report(ws, low))
    CHECK(r.reconstructed <= r.raw + 1e-12);
}

TEST_CASE("CSV emitters produce labeled rows") {
  Rng rng(100);
  const WeightStack ws = random_stack(rng, 1, 4);
  std::stringstream pca;
  write_pca_csv(pca, pca_single(ws));
  std::string line;
  std::getline(pca, line);
  CHECK(line == "label,k,ratio");
  std::getline(pca, line);
  CHECK(line.substr(0, 7) == "L0.Q,1,");

  const TuckerFit fit = decompose_tucker(ws, 4, 2);
  std::stringstream dist;
  write_distance_csv(dist, factor_distances(fit.factors));
  std::getline(dist, line);
  CHECK(line.substr(0, 10) == "slice,L0.Q");

  std::stringstream norms;
  write_norm_csv(norms, norm_report(ws, Factors(fit.factors)));
  std::getline(norms, line);
  CHECK(line == "label,raw_norm,reconstructed_norm");
}

}  // TEST_SUITE
