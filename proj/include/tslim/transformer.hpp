// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "tslim/decomp.hpp"
#include "tslim/matrix.hpp"
#include "tslim/rng.hpp"
#include "tslim/stack.hpp"

namespace tslim {

inline constexpr double kLayerNormEps = 1e-5;

/// Batched activations: (b, n, D) stored as a (b*n) x D row-major matrix,
/// sequence-major within a batch.
struct Activations {
  std::size_t batch = 0;
  std::size_t seq = 0;
  Matrix flat;  // (batch*seq) x D
};

/// Outputs recorded by a full forward pass. Attention maps are stored per
/// layer as (b*N_h, n, n) tensors, batch-major then head-major.
struct ForwardTrace {
  std::vector<Tensor3> attention;
  Matrix last_hidden;          // (b*n) x D
  Matrix logits;               // b x n_classes
  std::uint64_t mults = 0;     // instrumented multiplication count
};

/// Parenthesization of x * U * (P_i C) * V; identical values, different
/// multiplication counts.
enum class MulOrder { IV1, IV2, IV3 };

/// Per-slice d x D products (P_i C) V, computed once so the per-call cost of
/// a factored application drops to the two activation-dependent products.
struct FactoredCache {
  std::vector<Matrix> m;
};

FactoredCache build_cache(const TuckerFactors& tk);

/// Applies weight block i to x_flat ((b*n) x D) through the factors in the
/// given multiplication order. With a counter, every product is instrumented
/// (including P_i C), so counts match the per-order closed forms; with a
/// cache, the precomputed product is used instead and only the two
/// activation-dependent products count. transposed applies the block's
/// transpose (used for the Out slices of the stack).
Matrix factored_linear(const Matrix& x_flat, std::size_t slice,
                       const TuckerFactors& tk, MulOrder order,
                       MulCounter* counter = nullptr, bool transposed = false,
                       const FactoredCache* cache = nullptr);

enum class SanMode { Monolithic, HeadSum };
enum class FfnMode { Monolithic, SubSum };

/// Self-attention sub-module. Monolithic is the standard concat-heads form;
/// HeadSum evaluates each head independently against its Q/K/V/O column and
/// row blocks and sums the head outputs. Returns the output (pre-residual)
/// and the attention maps (b*N_h, n, n).
std::pair<Activations, Tensor3> san_forward(const Activations& x,
                                            const LayerWeights& lw,
                                            const TransformerConfig& cfg,
                                            SanMode mode);

/// Feed-forward sub-module with exact-erf GELU. SubSum evaluates `splits`
/// independent thin sub-FFNs over column/row blocks of w_in/w_out, giving
/// each sub-FFN b_out/splits so the sum reproduces the monolithic output.
Activations ffn_forward(const Activations& x, const LayerWeights& lw,
                        const TransformerConfig& cfg, FfnMode mode,
                        std::size_t splits = TransformerConfig::kFfnSplit);

/// Per-layer parameters that are never decomposed.
struct LayerSideParams {
  std::vector<double> bq, bk, bv, bo;  // D
  std::vector<double> b_in;            // 4D
  std::vector<double> b_out;           // D
  std::vector<double> ln1_gamma, ln1_beta;  // D (after the attention block)
  std::vector<double> ln2_gamma, ln2_beta;  // D (after the FFN block)
};

/// Toy encoder: weight blocks either as the dense stack or as shared
/// factors, plus biases/LayerNorms and a linear classification head reading
/// the first token. Post-LN residual wiring.
struct ToyTransformer {
  TransformerConfig cfg;
  std::variant<Tensor3, TuckerFactors> blocks;
  std::vector<LayerSideParams> side;
  Matrix head_w;                  // D x n_classes
  std::vector<double> head_b;     // n_classes
  MulOrder order = MulOrder::IV3;
  bool cache_factors = false;

  bool factored() const { return std::holds_alternative<TuckerFactors>(blocks); }
  const Tensor3& dense_blocks() const { return std::get<Tensor3>(blocks); }
  const TuckerFactors& factors() const { return std::get<TuckerFactors>(blocks); }
  TuckerFactors& factors() { return std::get<TuckerFactors>(blocks); }
};

/// Dense toy model with seeded random weights.
ToyTransformer random_model(const TransformerConfig& cfg, Rng& rng,
                            double stddev = 0.1);

/// Factored copy of a dense model: the stack is fitted with the matrix-bank
/// decomposition, everything else is copied.
std::pair<ToyTransformer, TuckerFit> factorize_model(const ToyTransformer& dense,
                                                     std::size_t l, std::size_t d,
                                                     double tol = 1e-7,
                                                     std::size_t max_iters = 50);

/// Full L-layer forward pass. Counted multiplications: the 12L weight-block
/// applications plus the QK^T and AV attention products; softmax, GELU,
/// LayerNorm, bias adds and the classification head are not counted, and in
/// the cached factored regime neither is the offline (P_i C) V precompute.
ForwardTrace transformer_forward(const Activations& x, const ToyTransformer& model,
                                 MulCounter* counter = nullptr);

/// Token ids -> activations through a (fixed) embedding table.
Activations embed_tokens(const std::vector<std::uint32_t>& tokens,
                         std::size_t batch, std::size_t seq,
                         const Matrix& embedding);

/// exact-erf GELU, elementwise
double gelu_exact(double x);

/// Wall-clock comparison of dense vs factored forward on one random layer
/// configuration; medians and interquartile ranges over `reps` runs.
struct BenchResult {
  double dense_median_ms = 0.0;
  double dense_iqr_ms = 0.0;
  double factored_median_ms = 0.0;
  double factored_iqr_ms = 0.0;
};

BenchResult bench_forward(std::size_t D, std::size_t d, std::size_t n,
                          std::size_t reps, std::uint64_t seed);

}  // namespace tslim
