// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tslim {

/// Compression method: I is the raw dense stack, II-alpha/beta per-matrix
/// SVD (with/without the explicit singular-value block), III shared head and
/// tail factors with per-slice cores, IV the matrix-bank model.
enum class Method { I, IIAlpha, IIBeta, III, IV };

std::string method_name(Method m);

struct BudgetQuery {
  Method method = Method::I;
  std::size_t L = 12;
  std::size_t D = 768;
  std::size_t d = 0;  // rank of the head/tail factors
  std::size_t l = 0;  // bank size (method IV)
  std::optional<std::size_t> vocab;   // V, embedding rows
  std::optional<std::size_t> n_ctx;   // position (+ token-type) embedding rows
  std::size_t b = 0, n = 0;           // batch and sequence length, for FLOPs
  bool include_overhead = false;      // biases + LayerNorms
};

struct BudgetReport {
  std::uint64_t core_params = 0;       // closed-form count of the weight blocks
  std::uint64_t overhead_params = 0;   // per-layer biases + two LayerNorms
  std::uint64_t embedding_params = 0;  // V*D + n_ctx*D
  std::uint64_t total = 0;
  std::uint64_t flops = 0;             // 0 when b or n is absent
  double compression_ratio = 0.0;      // total(I) / total(method), same base
};

/// Core closed forms:
///   I: 12*L*D^2
///   II-alpha: 24*L*D*d + 12*L*d^2   (per-slice sigma stored as a d x d block)
///   II-beta:  24*L*D*d
///   III: 12*L*d^2 + 2*D*d
///   IV:  l*d^2 + 12*L*l + 2*D*d
std::uint64_t core_param_count(const BudgetQuery& q);

/// Core plus whatever optional terms the query enables.
std::uint64_t param_count(const BudgetQuery& q);

/// Forward FLOPs at (b, n), counting 2 FLOPs per multiply. Weight blocks
/// cost b*n*D^2 multiplies each for method I and 2*b*n*D*d for the factored
/// methods (products independent of b and n are treated as precomputed;
/// II-alpha adds the b*n*d diagonal scaling). Attention adds 2*(2*b*n^2*D)*L
/// FLOPs for QK^T and AV. Softmax/GELU/LayerNorm are excluded.
std::uint64_t flops_forward(const BudgetQuery& q);

BudgetReport budget_report(const BudgetQuery& q);

/// One row of the whole-model accounting: compressed with method IV at
/// ranks (l, d), embedding included on both sides of the ratio.
struct CompressionRow {
  std::string name;
  std::size_t L = 0, D = 0, V = 0, n_ctx = 0, l = 0, d = 0;
};

struct CompressionEntry {
  std::string name;
  std::uint64_t dense_total = 0;       // V*D + n_ctx*D + 12*L*D^2
  std::uint64_t compressed_total = 0;  // V*D + n_ctx*D + IV core
  double ratio = 0.0;                  // dense/compressed
};

std::vector<CompressionEntry> compression_table(const std::vector<CompressionRow>& rows);

/// Preset rows for the half-rank (l = 6L, d = D/2) whole-model table, with
/// published totals for comparison. BERT rows carry 512 positions + 2 token
/// types, GPT rows 2048 positions.
struct Table7Ref {
  CompressionRow row;
  double published_total;  // published compressed total, in parameters
  double published_ratio;
};
std::vector<Table7Ref> table7_rows();

/// Preset encoder-only configurations with published parameter and FLOPS
/// numbers (b=1, n=128) used for calibration.
struct Table4Ref {
  std::string name;
  Method method = Method::I;
  std::size_t l = 0, d = 0;
  double published_params;  // published encoder parameter count
  double published_flops;   // published forward FLOPS at b=1, n=128; 0 if n/a
};
std::vector<Table4Ref> table4_rows();

}  // namespace tslim
