// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "tslim/matrix.hpp"
#include "tslim/stack.hpp"

namespace tslim {

/// Per-slice truncated-SVD factors (method II). The alpha variant keeps the
/// singular values explicit; the balanced beta variant folds sqrt(sigma) into
/// both sides so each slice is just a_i * b_i.
struct SvdFactors {
  enum class Variant { Alpha, Beta };
  Variant variant = Variant::Alpha;
  std::size_t hidden = 0;  // D
  std::size_t rank = 0;    // d
  // alpha: u_i (D x d), s_i (d, descending), v_i (d x D)
  // beta:  a_i = u_i*sqrt(diag(s_i)) in u, b_i = sqrt(diag(s_i))*v_i in v
  std::vector<Matrix> u;
  std::vector<std::vector<double>> s;  // empty for beta
  std::vector<Matrix> v;

  std::size_t n_slices() const { return u.size(); }
};

/// Shared head/tail factors with one d x d core per slice (method III).
struct TTFactors {
  Matrix u;                   // D x d, orthonormal columns
  std::vector<Matrix> cores;  // 12L matrices, d x d, not necessarily diagonal
  Matrix v;                   // d x D, orthonormal rows

  std::size_t hidden() const { return u.rows(); }
  std::size_t rank() const { return u.cols(); }
  std::size_t n_slices() const { return cores.size(); }
};

/// Shared head/tail factors, a bank of l small d x d matrices, and a mixing
/// matrix whose row i combines the bank into the core of slice i (method IV).
struct TuckerFactors {
  Matrix u;     // D x d
  Matrix v;     // d x D
  Tensor3 bank; // (l, d, d)
  Matrix p;     // 12L x l; row i mixes the bank for slice i

  std::size_t hidden() const { return u.rows(); }
  std::size_t rank_d() const { return u.cols(); }
  std::size_t rank_l() const { return bank.dim0(); }
  std::size_t n_slices() const { return p.rows(); }
};

using Factors = std::variant<SvdFactors, TTFactors, TuckerFactors>;

/// Per-slice truncated SVD of the whole stack. threads > 1 runs slices in
/// parallel; results are stored by slice index, so the output is identical
/// to the sequential one.
SvdFactors decompose_svd(const WeightStack& ws, std::size_t d,
                         SvdFactors::Variant variant, std::size_t threads = 1);

/// Shared-factor decomposition: u and v come from the truncated SVDs of the
/// mode-2 and mode-3 unfoldings, cores are the orthogonal projections
/// u^T * W_i * v^T (least-squares optimal for fixed u, v; no refinement).
TTFactors decompose_tt(const WeightStack& ws, std::size_t d);

struct TuckerFit {
  TuckerFactors factors;
  double rel_err = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> error_trace;  // relative error after init and per sweep
};

/// Matrix-bank decomposition fitted by HOSVD initialization plus alternating
/// (HOOI) refinement until the relative-error improvement drops below tol or
/// max_iters sweeps have run. Non-convergence is reported in the result, not
/// thrown. When l == 12L the mixing matrix is square orthogonal and the
/// mode-1 truncation is lossless, so the HOSVD fit is kept as-is; this keeps
/// the full-bank fit exactly equal to the shared-factor method.
TuckerFit decompose_tucker(const WeightStack& ws, std::size_t l, std::size_t d,
                           double tol = 1e-7, std::size_t max_iters = 50);

Matrix reconstruct_slice(const SvdFactors& f, std::size_t i);
Matrix reconstruct_slice(const TTFactors& f, std::size_t i);
Matrix reconstruct_slice(const TuckerFactors& f, std::size_t i);
Matrix reconstruct_slice(const Factors& f, std::size_t i);

/// Rebuilds the full approximated stack.
Tensor3 reconstruct_stack(const Factors& f);

struct ReconstructionError {
  double overall = 0.0;                // ||W - What||_F / ||W||_F
  std::vector<double> per_slice;       // same, slice by slice (0/0 -> 0)
};

ReconstructionError reconstruction_error(const WeightStack& ws, const Factors& f);

/// Embeds shared-factor factors as a full-bank mixing model: l = 12L,
/// p = identity, bank_i = core_i. Reconstruction is bit-identical.
TuckerFactors tucker_from_tt(const TTFactors& tt);

/// Collapses bank and mixing matrix into per-slice cores:
/// core_i = sum_k p[i,k] * bank_k. Reconstruction is preserved.
TTFactors merge_bank(const TuckerFactors& tk);

/// Layer-shared special case: the 12 shared D x D slices become the bank,
/// u = v = I, and p stacks L copies of the 12 x 12 identity, so slice 12j+k
/// reconstructs exactly as shared slice k.
TuckerFactors albert_factors(const std::vector<Matrix>& shared_slices,
                             std::size_t layers);

/// Number of stored elements under the serialized layout (sigma blocks of
/// the alpha variant count as dense d x d).
std::uint64_t stored_elements(const Factors& f);

// TKF binary format: "TKF1" magic; u32-LE L, D, d, l; u8 kind (0 = per-slice
// SVD, 1 = balanced per-slice SVD, 2 = shared-factor stored as the l = 12L
// full-bank special case, 3 = matrix bank); u8 dtype (1 = f64 LE); 2 pad
// bytes. Payload for kinds 2/3: u (D x d), v (d x D), bank (l*d*d),
// p (12L x l), row-major. Kind 0: per slice u_i, sigma_i as a dense d x d
// diagonal block, v_i. Kind 1: per slice a_i, b_i.
void write_tkf(std::ostream& out, const Factors& f, std::size_t layers);
void write_tkf_file(const std::string& path, const Factors& f, std::size_t layers);
Factors read_tkf(std::istream& in);
Factors read_tkf_file(const std::string& path);

/// L as encoded in / recoverable from the factors (n_slices / 12).
std::size_t factor_layers(const Factors& f);

}  // namespace tslim
