// SPDX-License-Identifier: Apache-2.0
#include "tslim/budget.hpp"

#include "tslim/error.hpp"

namespace tslim {

namespace {

using u64 = std::uint64_t;

void check_ranks(const BudgetQuery& q) {
  if (q.L < 1 || q.D < 1) throw DimError("budget: L and D must be >= 1");
  if (q.method != Method::I) {
    if (q.d < 1 || q.d > q.D) throw DimError("budget: rank d outside [1, D]");
  }
  if (q.method == Method::IV) {
    if (q.l < 1 || q.l > 12 * q.L) throw DimError("budget: rank l outside [1, 12L]");
  }
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::I: return "I";
    case Method::IIAlpha: return "II-alpha";
    case Method::IIBeta: return "II-beta";
    case Method::III: return "III";
    case Method::IV: return "IV";
  }
  return "?";
}

std::uint64_t core_param_count(const BudgetQuery& q) {
  check_ranks(q);
  const u64 L = q.L, D = q.D, d = q.d, l = q.l;
  switch (q.method) {
    case Method::I: return 12 * L * D * D;
    case Method::IIAlpha: return 24 * L * D * d + 12 * L * d * d;
    case Method::IIBeta: return 24 * L * D * d;
    case Method::III: return 12 * L * d * d + 2 * D * d;
    case Method::IV: return l * d * d + 12 * L * l + 2 * D * d;
  }
  return 0;
}

std::uint64_t param_count(const BudgetQuery& q) {
  u64 total = core_param_count(q);
  if (q.include_overhead) {
    // Per layer: q/k/v/o biases (4D), FFN biases (4D + D), two LayerNorms (2*2D).
    total += q.L * (4 * static_cast<u64>(q.D) + 4 * q.D + q.D + 4 * q.D);
  }
  if (q.vocab) {
    total += static_cast<u64>(*q.vocab) * q.D;
    if (q.n_ctx) total += static_cast<u64>(*q.n_ctx) * q.D;
  }
  return total;
}

std::uint64_t flops_forward(const BudgetQuery& q) {
  check_ranks(q);
  if (q.b < 1 || q.n < 1) throw DimError("flops_forward: b and n are required");
  const u64 L = q.L, D = q.D, d = q.d, b = q.b, n = q.n;

  u64 mults_per_block = 0;
  switch (q.method) {
    case Method::I: mults_per_block = b * n * D * D; break;
    case Method::IIAlpha: mults_per_block = 2 * b * n * D * d + b * n * d; break;
    case Method::IIBeta:
    case Method::III:
    case Method::IV: mults_per_block = 2 * b * n * D * d; break;
  }
  const u64 weight_mults = 12 * L * mults_per_block;
  const u64 attention_mults = 2 * b * n * n * D * L;  // QK^T and AV
  return 2 * (weight_mults + attention_mults);
}

BudgetReport budget_report(const BudgetQuery& q) {
  BudgetReport r;
  r.core_params = core_param_count(q);
  if (q.include_overhead)
    r.overhead_params = q.L * (13 * static_cast<u64>(q.D));
  if (q.vocab) {
    r.embedding_params = static_cast<u64>(*q.vocab) * q.D;
    if (q.n_ctx) r.embedding_params += static_cast<u64>(*q.n_ctx) * q.D;
  }
  r.total = r.core_params + r.overhead_params + r.embedding_params;
  if (q.b >= 1 && q.n >= 1) r.flops = flops_forward(q);

  BudgetQuery dense = q;
  dense.method = Method::I;
  const u64 dense_total = param_count(dense);
  r.compression_ratio =
      r.total ? static_cast<double>(dense_total) / static_cast<double>(r.total) : 0.0;
  return r;
}

std::vector<CompressionEntry> compression_table(
    const std::vector<CompressionRow>& rows) {
  std::vector<CompressionEntry> out;
  out.reserve(rows.size());
  for (const CompressionRow& row : rows) {
    BudgetQuery q;
    q.method = Method::IV;
    q.L = row.L;
    q.D = row.D;
    q.d = row.d;
    q.l = row.l;
    q.vocab = row.V;
    q.n_ctx = row.n_ctx;

    CompressionEntry e;
    e.name = row.name;
    const u64 embedding = (static_cast<u64>(row.V) + row.n_ctx) * row.D;
    e.dense_total = embedding + 12ull * row.L * row.D * row.D;
    e.compressed_total = embedding + core_param_count(q);
    e.ratio = static_cast<double>(e.dense_total) / static_cast<double>(e.compressed_total);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Table7Ref> table7_rows() {
  // Half layer rank (l = 6L) and half dimension rank (d = D/2); BERT rows
  // use 512 positions + 2 token types, GPT rows 2048 positions.
  auto bert = [](std::string name, std::size_t L, std::size_t D, std::size_t V,
                 double total, double ratio) {
    return Table7Ref{{std::move(name), L, D, V, 514, 6 * L, D / 2}, total, ratio};
  };
  auto gpt = [](std::string name, std::size_t L, std::size_t D, std::size_t V,
                double total, double ratio) {
    return Table7Ref{{std::move(name), L, D, V, 2048, 6 * L, D / 2}, total, ratio};
  };
  return {
      bert("BERT-base", 12, 768, 30522, 35.7e6, 3.1),
      bert("BERT-large", 24, 1024, 30522, 75.8e6, 4.5),
      gpt("GPT-3 Small", 12, 768, 50257, 50.7e6, 2.5),
      gpt("GPT-3 Medium", 24, 1024, 50257, 85.8e6, 4.1),
      gpt("GPT-3 Large", 24, 1536, 50257, 165.5e6, 4.6),
      gpt("GPT-3 XL", 24, 2048, 50257, 243.0e6, 5.3),
      gpt("GPT-3 2.7B", 32, 2560, 50257, 498.0e6, 5.4),
      gpt("GPT-3 6.7B", 32, 4096, 50257, 1.1e9, 6.3),
      gpt("GPT-3 13B", 40, 5140, 50257, 1.9e9, 6.8),
      gpt("GPT-3 175B", 96, 12288, 50257, 22.8e9, 7.7),
  };
}

std::vector<Table4Ref> table4_rows() {
  return {
      {"base", Method::I, 0, 0, 86.0e6, 22.5e9},
      {"III-384", Method::III, 0, 384, 23.0e6, 22.5e9},
      {"III-64", Method::III, 0, 64, 1.8e6, 4.3e9},
      {"IV-72-384", Method::IV, 72, 384, 12.3e6, 22.5e9},
      {"IV-36-256", Method::IV, 36, 256, 3.9e6, 15.2e9},
      {"IV-36-128", Method::IV, 36, 128, 1.9e6, 8.0e9},
  };
}

}  // namespace tslim
