// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tslim/decomp.hpp"
#include "tslim/stack.hpp"

namespace tslim {

struct PcaCurve {
  std::string label;
  std::vector<double> curve;  // cumulative captured-variance ratios
};

struct PcaReport {
  std::vector<PcaCurve> curves;
  std::vector<double> mean_curve;
  /// Fraction of curves capturing at least 90% variance with D/2 components.
  double frac_90_at_half = 0.0;
  /// Mean captured variance at D/2 components.
  double mean_at_half = 0.0;
};

/// One PCA curve per stack slice.
PcaReport pca_single(const WeightStack& ws);

enum class PairAxis { Rows, Cols };

/// PCA curves for pairs of slices concatenated along the chosen axis
/// (cols -> D x 2D input, rows -> 2D x D). Row pairing analyzes the stacked
/// row space, i.e. it equals column pairing of the transposed slices. All
/// unordered pairs are used when there are at most 10000 of them; otherwise
/// 500 seeded pairs are sampled.
PcaReport pca_pair(const WeightStack& ws, PairAxis axis, std::uint64_t seed = 1);

/// Symmetric 12L x 12L map of cosine distances 1 - cos(P_i, P_j) between
/// mixing rows, zero diagonal. Zero-norm rows get distance 1 to everything
/// and are listed in flagged_rows.
struct DistanceMap {
  std::vector<std::string> labels;
  Matrix distances;
  std::vector<std::size_t> flagged_rows;
};

DistanceMap factor_distances(const TuckerFactors& tk);

/// Per-layer 12 x 12 sub-map of a full distance map.
Matrix layer_submap(const DistanceMap& map, std::size_t layer);

struct NormRow {
  std::string label;
  double raw = 0.0;
  double reconstructed = 0.0;
};

/// Frobenius norm of every slice, raw vs reconstructed-through-factors.
std::vector<NormRow> norm_report(const WeightStack& ws, const Factors& f);

// CSV emitters ("label,k,ratio" rows for PCA; dense labeled grid for maps).
void write_pca_csv(std::ostream& out, const PcaReport& report);
void write_distance_csv(std::ostream& out, const DistanceMap& map);
void write_norm_csv(std::ostream& out, const std::vector<NormRow>& rows);

}  // namespace tslim
