// SPDX-License-Identifier: Apache-2.0
#include "tslim/analyze.hpp"

#include <cmath>
#include <ostream>
#include <utility>

#include "tslim/error.hpp"
#include "tslim/format.hpp"
#include "tslim/linalg.hpp"
#include "tslim/rng.hpp"

namespace tslim {

namespace {

void finish_report(PcaReport& report) {
  if (report.curves.empty()) return;
  const std::size_t len = report.curves.front().curve.size();
  report.mean_curve.assign(len, 0.0);
  const std::size_t half_idx = len / 2 == 0 ? 0 : len / 2 - 1;  // D/2 components
  std::size_t above = 0;
  double at_half = 0.0;
  for (const PcaCurve& c : report.curves) {
    for (std::size_t k = 0; k < len; ++k) report.mean_curve[k] += c.curve[k];
    if (c.curve[half_idx] >= 0.9) ++above;
    at_half += c.curve[half_idx];
  }
  const double inv = 1.0 / static_cast<double>(report.curves.size());
  for (double& v : report.mean_curve) v *= inv;
  report.frac_90_at_half = static_cast<double>(above) * inv;
  report.mean_at_half = at_half * inv;
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  Matrix m(a.rows(), a.cols() + b.cols());
  m.set_col_block(0, a);
  m.set_col_block(a.cols(), b);
  return m;
}

}  // namespace

PcaReport pca_single(const WeightStack& ws) {
  PcaReport report;
  report.curves.reserve(ws.n_slices());
  for (std::size_t i = 0; i < ws.n_slices(); ++i)
    report.curves.push_back({slice_label(i), pca_variance(ws.tensor.slice(i))});
  finish_report(report);
  return report;
}

PcaReport pca_pair(const WeightStack& ws, PairAxis axis, std::uint64_t seed) {
  const std::size_t n = ws.n_slices();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const std::size_t all = n * (n - 1) / 2;
  if (all <= 10000) {
    pairs.reserve(all);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  } else {
    Rng rng(seed);
    pairs.reserve(500);
    for (std::size_t k = 0; k < 500; ++k) {
      std::size_t i = rng.below(n);
      std::size_t j = rng.below(n - 1);
      if (j >= i) ++j;
      pairs.emplace_back(std::min(i, j), std::max(i, j));
    }
  }

  PcaReport report;
  report.curves.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    // Column pairing analyzes [A | B]; row pairing analyzes the stacked row
    // space of [A; B], which is exactly [A^T | B^T].
    Matrix input =
        (axis == PairAxis::Cols)
            ? concat_cols(ws.tensor.slice(i), ws.tensor.slice(j))
            : concat_cols(ws.tensor.slice(i).transposed(),
                          ws.tensor.slice(j).transposed());
    report.curves.push_back(
        {slice_label(i) + "|" + slice_label(j), pca_variance(input)});
  }
  finish_report(report);
  return report;
}

DistanceMap factor_distances(const TuckerFactors& tk) {
  const std::size_t n = tk.n_slices();
  if (n < 2) throw DimError("factor_distances: need at least 2 mixing rows");
  const std::size_t l = tk.rank_l();

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < l; ++k) acc += tk.p(i, k) * tk.p(i, k);
    norms[i] = std::sqrt(acc);
  }

  DistanceMap map;
  map.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) map.labels.push_back(slice_label(i));
  map.distances = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (norms[i] == 0.0) map.flagged_rows.push_back(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      double dist;
      if (norms[i] == 0.0 || norms[j] == 0.0) {
        dist = 1.0;  // zero-norm convention: treated as orthogonal
      } else {
        double dot = 0.0;
        for (std::size_t k = 0; k < l; ++k) dot += tk.p(i, k) * tk.p(j, k);
        dist = 1.0 - dot / (norms[i] * norms[j]);
      }
      map.distances(i, j) = dist;
      map.distances(j, i) = dist;
    }
  }
  return map;
}

Matrix layer_submap(const DistanceMap& map, std::size_t layer) {
  if (12 * (layer + 1) > map.distances.rows())
    throw DimError("layer_submap: layer out of range");
  Matrix sub(12, 12);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j)
      sub(i, j) = map.distances(12 * layer + i, 12 * layer + j);
  return sub;
}

std::vector<NormRow> norm_report(const WeightStack& ws, const Factors& f) {
  std::vector<NormRow> rows;
  rows.reserve(ws.n_slices());
  for (std::size_t i = 0; i < ws.n_slices(); ++i) {
    NormRow r;
    r.label = slice_label(i);
    r.raw = ws.tensor.slice(i).frob_norm();
    r.reconstructed = reconstruct_slice(f, i).frob_norm();
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_pca_csv(std::ostream& out, const PcaReport& report) {
  out << "label,k,ratio\n";
  for (const PcaCurve& c : report.curves)
    for (std::size_t k = 0; k < c.curve.size(); ++k)
      out << c.label << ',' << (k + 1) << ',' << full_precision(c.curve[k]) << '\n';
  for (std::size_t k = 0; k < report.mean_curve.size(); ++k)
    out << "mean," << (k + 1) << ',' << full_precision(report.mean_curve[k]) << '\n';
}

void write_distance_csv(std::ostream& out, const DistanceMap& map) {
  out << "slice";
  for (const std::string& l : map.labels) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < map.distances.rows(); ++i) {
    out << map.labels[i];
    for (std::size_t j = 0; j < map.distances.cols(); ++j)
      out << ',' << full_precision(map.distances(i, j));
    out << '\n';
  }
}

void write_norm_csv(std::ostream& out, const std::vector<NormRow>& rows) {
  out << "label,raw_norm,reconstructed_norm\n";
  for (const NormRow& r : rows)
    out << r.label << ',' << full_precision(r.raw) << ','
        << full_precision(r.reconstructed) << '\n';
}

}  // namespace tslim
