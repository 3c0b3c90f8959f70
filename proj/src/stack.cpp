// SPDX-License-Identifier: Apache-2.0
#include "tslim/stack.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "tslim/error.hpp"

namespace tslim {

namespace {

constexpr std::array<const char*, 12> kSliceNames = {
    "Q", "K", "V", "O", "In1", "In2", "In3", "In4", "Out1", "Out2", "Out3", "Out4"};

void require_shape(const Matrix& m, std::size_t r, std::size_t c,
                   const std::string& what) {
  if (m.rows() != r || m.cols() != c)
    throw DimError(what + ": expected " + std::to_string(r) + "x" +
                   std::to_string(c) + ", got " + std::to_string(m.rows()) +
                   "x" + std::to_string(m.cols()));
}

}  // namespace

void TransformerConfig::validate() const {
  if (layers < 1) throw DimError("config: L must be >= 1");
  if (heads < 1 || hidden % heads != 0)
    throw DimError("config: D must be divisible by N_h");
  if (d_ff() % kFfnSplit != 0) throw DimError("config: d_ff must split into H blocks");
}

std::string slice_label(std::size_t slice_index) {
  return "L" + std::to_string(slice_index / 12) + "." +
         kSliceNames[slice_index % 12];
}

WeightStack stack_weights(const std::vector<LayerWeights>& layers,
                          const TransformerConfig& cfg) {
  cfg.validate();
  if (layers.size() != cfg.layers)
    throw DimError("stack_weights: expected " + std::to_string(cfg.layers) +
                   " layers, got " + std::to_string(layers.size()));
  const std::size_t D = cfg.hidden;

  WeightStack ws;
  ws.config = cfg;
  ws.tensor = Tensor3(12 * cfg.layers, D, D);
  for (std::size_t j = 0; j < cfg.layers; ++j) {
    const LayerWeights& lw = layers[j];
    require_shape(lw.wq, D, D, "wq");
    require_shape(lw.wk, D, D, "wk");
    require_shape(lw.wv, D, D, "wv");
    require_shape(lw.wo, D, D, "wo");
    require_shape(lw.w_in, D, 4 * D, "w_in");
    require_shape(lw.w_out, 4 * D, D, "w_out");

    const std::size_t base = 12 * j;
    ws.tensor.set_slice(base + 0, lw.wq);
    ws.tensor.set_slice(base + 1, lw.wk);
    ws.tensor.set_slice(base + 2, lw.wv);
    ws.tensor.set_slice(base + 3, lw.wo);
    for (std::size_t h = 0; h < 4; ++h)
      ws.tensor.set_slice(base + 4 + h, lw.w_in.col_block(h * D, D));
    // Out blocks are D-row blocks of w_out, stored transposed so the slice
    // is D x D like everything else; the factored forward pass transposes
    // back when applying them.
    for (std::size_t h = 0; h < 4; ++h)
      ws.tensor.set_slice(base + 8 + h, lw.w_out.row_block(h * D, D).transposed());
  }
  return ws;
}

std::vector<LayerWeights> unstack(const WeightStack& ws) {
  const std::size_t D = ws.config.hidden;
  std::vector<LayerWeights> layers(ws.config.layers);
  for (std::size_t j = 0; j < ws.config.layers; ++j) {
    LayerWeights& lw = layers[j];
    const std::size_t base = 12 * j;
    lw.wq = ws.tensor.slice(base + 0);
    lw.wk = ws.tensor.slice(base + 1);
    lw.wv = ws.tensor.slice(base + 2);
    lw.wo = ws.tensor.slice(base + 3);
    lw.w_in = Matrix(D, 4 * D);
    lw.w_out = Matrix(4 * D, D);
    for (std::size_t h = 0; h < 4; ++h) {
      lw.w_in.set_col_block(h * D, ws.tensor.slice(base + 4 + h));
      lw.w_out.set_row_block(h * D, ws.tensor.slice(base + 8 + h).transposed());
    }
    lw.bq.assign(D, 0.0);
    lw.bk.assign(D, 0.0);
    lw.bv.assign(D, 0.0);
    lw.bo.assign(D, 0.0);
    lw.b_in.assign(4 * D, 0.0);
    lw.b_out.assign(D, 0.0);
  }
  return layers;
}

std::vector<LayerWeights> random_layers(const TransformerConfig& cfg, Rng& rng,
                                        double stddev) {
  cfg.validate();
  const std::size_t D = cfg.hidden;
  auto rand_mat = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.storage()) v = rng.normal(0.0, stddev);
    return m;
  };
  auto rand_vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, stddev);
    return v;
  };
  std::vector<LayerWeights> layers(cfg.layers);
  for (LayerWeights& lw : layers) {
    lw.wq = rand_mat(D, D);
    lw.wk = rand_mat(D, D);
    lw.wv = rand_mat(D, D);
    lw.wo = rand_mat(D, D);
    lw.w_in = rand_mat(D, 4 * D);
    lw.w_out = rand_mat(4 * D, D);
    lw.bq = rand_vec(D);
    lw.bk = rand_vec(D);
    lw.bv = rand_vec(D);
    lw.bo = rand_vec(D);
    lw.b_in = rand_vec(4 * D);
    lw.b_out = rand_vec(D);
  }
  return layers;
}

namespace {

void put_u32le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("WTS: truncated while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

static_assert(sizeof(double) == 8, "binary formats assume 8-byte doubles");

void put_f64_block(std::ostream& out, const double* data, std::size_t n) {
  // Little-endian host assumed; the formats are defined little-endian.
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
}

void get_f64_block(std::istream& in, double* data, std::size_t n, const char* what) {
  if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 8)))
    throw FormatError(std::string("WTS: truncated while reading ") + what);
}

}  // namespace

void write_wts(std::ostream& out, const WeightStack& ws) {
  out.write("WTS1", 4);
  put_u32le(out, static_cast<std::uint32_t>(ws.config.layers));
  put_u32le(out, static_cast<std::uint32_t>(ws.config.hidden));
  const unsigned char tail[4] = {1, 0, 0, 0};  // dtype = 1 (f64 LE), 3 pad bytes
  out.write(reinterpret_cast<const char*>(tail), 4);
  put_f64_block(out, ws.tensor.data(), ws.tensor.size());
  if (!out) throw FormatError("WTS: write failed");
}

WeightStack read_wts(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("WTS: truncated header at offset 0");
  if (std::memcmp(magic, "WTS1", 4) != 0)
    throw FormatError("WTS: bad magic at offset 0 (expected \"WTS1\")");
  const std::uint32_t L = get_u32le(in, "layer count");
  const std::uint32_t D = get_u32le(in, "hidden size");
  unsigned char tail[4];
  if (!in.read(reinterpret_cast<char*>(tail), 4))
    throw FormatError("WTS: truncated header at offset 12");
  if (tail[0] != 1)
    throw FormatError("WTS: unsupported dtype " + std::to_string(tail[0]) +
                      " at offset 12 (expected 1 = f64 LE)");
  if (L == 0 || D == 0) throw FormatError("WTS: zero layer count or hidden size");

  WeightStack ws;
  ws.config.layers = L;
  ws.config.hidden = D;
  ws.config.heads = 1;  // WTS does not carry the head count
  ws.tensor = Tensor3(12 * static_cast<std::size_t>(L), D, D);
  get_f64_block(in, ws.tensor.data(), ws.tensor.size(), "tensor payload");
  if (!ws.tensor.all_finite()) throw FormatError("WTS: non-finite values in payload");
  return ws;
}

void write_wts_file(const std::string& path, const WeightStack& ws) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open for writing: " + path);
  write_wts(f, ws);
}

WeightStack read_wts_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open: " + path);
  return read_wts(f);
}

}  // namespace tslim
