// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tslim/matrix.hpp"
#include "tslim/rng.hpp"

namespace tslim {

/// Shape of the toy encoder. d_ff is fixed at 4*D and the FFN split count at
/// H = 4, so every stacked weight block is D x D.
struct TransformerConfig {
  std::size_t layers = 1;       // L
  std::size_t hidden = 16;      // D
  std::size_t heads = 1;        // N_h
  std::size_t n_classes = 2;    // classification head width

  static constexpr std::size_t kFfnSplit = 4;  // H

  std::size_t d_ff() const { return 4 * hidden; }
  std::size_t d_head() const { return hidden / heads; }
  std::size_t n_slices() const { return 12 * layers; }

  /// Throws DimError unless D % N_h == 0 and L >= 1.
  void validate() const;
};

/// Per-layer dense weights. w_in is D x 4D, w_out is 4D x D; everything else
/// is D x D or a length-D / length-4D bias.
struct LayerWeights {
  Matrix wq, wk, wv, wo;
  Matrix w_in;   // D x 4D
  Matrix w_out;  // 4D x D
  std::vector<double> bq, bk, bv, bo;  // D each
  std::vector<double> b_in;            // 4D
  std::vector<double> b_out;           // D
};

/// The 12L x D x D tensor of stacked weight blocks. Slice order per layer:
/// [Q, K, V, O, In_1..In_4, Out_1..Out_4], where In_h is the h-th D-column
/// block of w_in and Out_h is the h-th D-row block of w_out stored
/// *transposed* so every slice is D x D. Biases are not part of the stack.
struct WeightStack {
  TransformerConfig config;
  Tensor3 tensor;  // (12L, D, D)

  std::size_t n_slices() const { return tensor.dim0(); }
};

/// Kinds of the 12 per-layer slices, in stack order.
enum class SliceKind { Q = 0, K, V, O, In1, In2, In3, In4, Out1, Out2, Out3, Out4 };

/// Human-readable label for slice i, e.g. "L3.In2".
std::string slice_label(std::size_t slice_index);

WeightStack stack_weights(const std::vector<LayerWeights>& layers,
                          const TransformerConfig& cfg);

/// Inverse of stack_weights on the matrix content; biases are zero-filled
/// (the stack does not carry them).
std::vector<LayerWeights> unstack(const WeightStack& ws);

/// Seeded random stack (and matching random layer weights) for demos/tests.
std::vector<LayerWeights> random_layers(const TransformerConfig& cfg, Rng& rng,
                                        double stddev = 0.1);

// WTS binary format: "WTS1" magic, u32-LE L, u32-LE D, u8 dtype (1 = IEEE-754
// binary64 little-endian), 3 zero pad bytes, then 12*L*D*D values in slice
// order. Readers reject bad magic/dtype with FormatError naming the offset.
void write_wts(std::ostream& out, const WeightStack& ws);
void write_wts_file(const std::string& path, const WeightStack& ws);
WeightStack read_wts(std::istream& in);
WeightStack read_wts_file(const std::string& path);

}  // namespace tslim
