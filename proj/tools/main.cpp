// SPDX-License-Identifier: Apache-2.0
//
// tslim: compress the stacked weight tensor of a toy Transformer encoder
// with per-slice SVD, shared-factor, or matrix-bank decompositions; analyze
// redundancy; account parameters/FLOPs; run a two-stage distillation demo.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "tslim/analyze.hpp"
#include "tslim/budget.hpp"
#include "tslim/decomp.hpp"
#include "tslim/distill.hpp"
#include "tslim/error.hpp"
#include "tslim/format.hpp"
#include "tslim/linalg.hpp"
#include "tslim/rng.hpp"
#include "tslim/stack.hpp"
#include "tslim/transformer.hpp"

namespace {

using namespace tslim;

constexpr int kExitUsage = 1;
constexpr int kExitFormat = 2;
constexpr int kExitNumeric = 3;

std::ostream& open_output(std::ofstream& file, const std::string& path) {
  if (path.empty()) return std::cout;
  file.open(path);
  if (!file) throw FormatError("cannot open for writing: " + path);
  return file;
}

Method parse_method(const std::string& name) {
  if (name == "i") return Method::I;
  if (name == "ii-alpha") return Method::IIAlpha;
  if (name == "ii-beta") return Method::IIBeta;
  if (name == "iii") return Method::III;
  if (name == "iv") return Method::IV;
  throw CLI::ValidationError("--method", "unknown method: " + name);
}

struct GenArgs {
  std::uint64_t seed = 1;
  std::size_t L = 2, D = 16, heads = 1;
  std::string out;
};

struct DecomposeArgs {
  std::string input, out;
  std::string method = "tucker";
  std::size_t rank_d = 0, rank_l = 0;
  double tol = 1e-7;
  std::size_t max_iters = 50;
  std::size_t threads = 1;
};

struct AnalyzeArgs {
  std::string input, out;
  std::string pair;  // empty = per-slice
  std::uint64_t seed = 1;
};

struct BudgetArgs {
  std::string method = "i";
  std::size_t L = 12, D = 768, rank_d = 0, rank_l = 0;
  std::uint64_t vocab = 0, n_ctx = 0;
  std::size_t b = 0, n = 0;
  bool overhead = false;
  bool table4 = false, table7 = false;
};

struct DistillArgs {
  std::uint64_t seed = 1;
  std::size_t L = 2, D = 16, heads = 2, classes = 3;
  std::size_t rank_d = 4, rank_l = 8;
  std::size_t steps_gd = 500, steps_td = 200;
  double lr = 1e-3, temperature = 1.0;
  std::size_t batch = 4, seq = 12, vocab = 64, pool = 16;
  std::string out;
};

struct BenchArgs {
  std::size_t D = 512, rank_d = 64, n = 128, reps = 10;
  std::uint64_t seed = 1;
};

int run_gen(const GenArgs& a) {
  TransformerConfig cfg;
  cfg.layers = a.L;
  cfg.hidden = a.D;
  cfg.heads = a.heads;
  Rng rng(a.seed);
  const WeightStack ws = stack_weights(random_layers(cfg, rng), cfg);
  write_wts_file(a.out, ws);
  std::cout << "wrote " << a.out << " (L=" << a.L << ", D=" << a.D << ")\n";
  return 0;
}

int run_decompose(const DecomposeArgs& a) {
  const WeightStack ws = read_wts_file(a.input);

  Factors factors{SvdFactors{}};
  if (a.method == "svd") {
    factors = decompose_svd(ws, a.rank_d, SvdFactors::Variant::Alpha, a.threads);
  } else if (a.method == "svd-balanced") {
    factors = decompose_svd(ws, a.rank_d, SvdFactors::Variant::Beta, a.threads);
  } else if (a.method == "tt") {
    factors = decompose_tt(ws, a.rank_d);
  } else if (a.method == "tucker") {
    const std::size_t l = a.rank_l ? a.rank_l : ws.n_slices();
    const TuckerFit fit = decompose_tucker(ws, l, a.rank_d, a.tol, a.max_iters);
    std::cout << "iterations=" << fit.iterations << '\n'
              << "converged=" << (fit.converged ? "yes" : "no") << '\n';
    factors = fit.factors;
  } else {
    throw CLI::ValidationError("--method", "unknown method: " + a.method);
  }

  const ReconstructionError err = reconstruction_error(ws, factors);
  std::cout << "rel_error=" << full_precision(err.overall) << '\n';
  write_tkf_file(a.out, factors, ws.config.layers);
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

int run_reconstruct(const std::string& input, const std::string& out) {
  const Factors factors = read_tkf_file(input);
  WeightStack ws;
  ws.config.layers = factor_layers(factors);
  ws.config.heads = 1;
  ws.tensor = reconstruct_stack(factors);
  ws.config.hidden = ws.tensor.dim1();
  write_wts_file(out, ws);
  std::cout << "wrote " << out << '\n';
  return 0;
}

int run_error(const std::string& wts_path, const std::string& tkf_path) {
  const WeightStack ws = read_wts_file(wts_path);
  const Factors factors = read_tkf_file(tkf_path);
  const ReconstructionError err = reconstruction_error(ws, factors);
  std::cout << full_precision(err.overall) << '\n';
  return 0;
}

int run_analyze(const AnalyzeArgs& a) {
  const WeightStack ws = read_wts_file(a.input);
  PcaReport report;
  if (a.pair.empty()) {
    report = pca_single(ws);
  } else if (a.pair == "rows") {
    report = pca_pair(ws, PairAxis::Rows, a.seed);
  } else if (a.pair == "cols") {
    report = pca_pair(ws, PairAxis::Cols, a.seed);
  } else {
    throw CLI::ValidationError("--pair", "expected rows or cols");
  }
  std::ofstream file;
  write_pca_csv(open_output(file, a.out), report);
  std::cerr << "curves=" << report.curves.size()
            << " capture_at_half(mean)=" << full_precision(report.mean_at_half)
            << " frac>=0.9@half=" << full_precision(report.frac_90_at_half) << '\n';
  return 0;
}

int run_distances(const std::string& input, const std::string& out) {
  const Factors factors = read_tkf_file(input);
  TuckerFactors tk;
  if (const auto* t = std::get_if<TTFactors>(&factors)) {
    tk = tucker_from_tt(*t);
  } else if (const auto* t2 = std::get_if<TuckerFactors>(&factors)) {
    tk = *t2;
  } else {
    throw DimError("distances: per-slice SVD factors have no mixing rows");
  }
  std::ofstream file;
  write_distance_csv(open_output(file, out), factor_distances(tk));
  return 0;
}

BudgetQuery to_query(const BudgetArgs& a) {
  BudgetQuery q;
  q.method = parse_method(a.method);
  q.L = a.L;
  q.D = a.D;
  q.d = a.rank_d;
  q.l = a.rank_l;
  if (a.vocab) q.vocab = a.vocab;
  if (a.n_ctx) q.n_ctx = a.n_ctx;
  q.b = a.b;
  q.n = a.n;
  q.include_overhead = a.overhead;
  return q;
}

int run_budget(const BudgetArgs& a) {
  if (a.table4) {
    std::cout << "name,method,core_params,published_params,offset,flops,published_flops,"
                 "flops_rel_err\n";
    for (const Table4Ref& ref : table4_rows()) {
      BudgetQuery q;
      q.method = ref.method;
      q.L = 12;
      q.D = 768;
      q.d = ref.d;
      q.l = ref.l;
      const std::uint64_t core = core_param_count(q);
      q.b = 1;
      q.n = 128;
      const std::uint64_t fl = flops_forward(q);
      const double frel = ref.published_flops
                              ? std::abs(static_cast<double>(fl) - ref.published_flops) /
                                    ref.published_flops
                              : 0.0;
      std::cout << ref.name << ',' << method_name(ref.method) << ',' << core << ','
                << full_precision(ref.published_params) << ','
                << full_precision(ref.published_params - static_cast<double>(core)) << ','
                << fl << ',' << full_precision(ref.published_flops) << ','
                << full_precision(frel) << '\n';
    }
    return 0;
  }
  if (a.table7) {
    std::cout << "name,L,D,V,n_ctx,l,d,compressed_total,published_total,rel_err,"
                 "ratio,published_ratio\n";
    const auto refs = table7_rows();
    std::vector<CompressionRow> rows;
    for (const auto& r : refs) rows.push_back(r.row);
    const auto entries = compression_table(rows);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto& row = refs[i].row;
      const double rel = std::abs(static_cast<double>(entries[i].compressed_total) -
                                  refs[i].published_total) /
                         refs[i].published_total;
      std::cout << row.name << ',' << row.L << ',' << row.D << ',' << row.V << ','
                << row.n_ctx << ',' << row.l << ',' << row.d << ','
                << entries[i].compressed_total << ','
                << full_precision(refs[i].published_total) << ',' << full_precision(rel)
                << ',' << full_precision(entries[i].ratio) << ','
                << full_precision(refs[i].published_ratio) << '\n';
    }
    return 0;
  }

  const BudgetQuery q = to_query(a);
  const BudgetReport r = budget_report(q);
  std::cout << "name,method,core_params,overhead_params,embedding_params,total,"
               "ratio,flops\n";
  std::cout << "query," << method_name(q.method) << ',' << r.core_params << ','
            << r.overhead_params << ',' << r.embedding_params << ',' << r.total
            << ',' << full_precision(r.compression_ratio) << ',' << r.flops << '\n';
  return 0;
}

int run_flops(const BudgetArgs& a) {
  BudgetQuery q = to_query(a);
  if (q.b == 0) q.b = 1;
  if (q.n == 0) q.n = 128;
  std::cout << flops_forward(q) << '\n';
  return 0;
}

int run_distill_demo(const DistillArgs& a) {
  TransformerConfig cfg;
  cfg.layers = a.L;
  cfg.hidden = a.D;
  cfg.heads = a.heads;
  cfg.n_classes = a.classes;
  cfg.validate();

  Rng teacher_rng(a.seed ^ 0x9e3779b97f4a7c15ull);
  const ToyTransformer teacher = random_model(cfg, teacher_rng);
  auto [student, fit] = factorize_model(teacher, a.rank_l, a.rank_d);
  std::cout << "decomposition_rel_error=" << full_precision(fit.rel_err) << '\n';

  DistillConfig dc;
  dc.seed = a.seed;
  dc.steps_gd = a.steps_gd;
  dc.steps_td = a.steps_td;
  dc.lr = a.lr;
  dc.batch = a.batch;
  dc.seq = a.seq;
  dc.temperature = a.temperature;
  dc.vocab = a.vocab;
  dc.pool_batches = a.pool;

  const TrainResult result = train(teacher, student, dc);
  std::ofstream file;
  write_curve_csv(open_output(file, a.out), result.curve);
  std::cerr << "gd_initial=" << full_precision(result.gd_initial) << '\n'
            << "gd_final=" << full_precision(result.gd_final) << '\n'
            << "td_initial=" << full_precision(result.td_initial) << '\n'
            << "td_final=" << full_precision(result.td_final) << '\n'
            << "gd_halved=" << (result.gd_final <= 0.5 * result.gd_initial ? "yes" : "no")
            << '\n';
  return 0;
}

int run_bench(const BenchArgs& a) {
  const BenchResult r = bench_forward(a.D, a.rank_d, a.n, a.reps, a.seed);
  std::cout << "dense_median_ms=" << full_precision(r.dense_median_ms) << '\n'
            << "dense_iqr_ms=" << full_precision(r.dense_iqr_ms) << '\n'
            << "factored_median_ms=" << full_precision(r.factored_median_ms) << '\n'
            << "factored_iqr_ms=" << full_precision(r.factored_iqr_ms) << '\n'
            << "speedup=" << full_precision(r.dense_median_ms / r.factored_median_ms)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weight-stack compression toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a seeded random weight stack");
  gen_cmd->add_option("--seed", gen.seed, "RNG seed");
  gen_cmd->add_option("--L", gen.L, "layer count")->required();
  gen_cmd->add_option("--D", gen.D, "hidden size")->required();
  gen_cmd->add_option("--heads", gen.heads, "attention heads");
  gen_cmd->add_option("-o,--out", gen.out, "output WTS path")->required();

  DecomposeArgs dec;
  auto* dec_cmd = app.add_subcommand("decompose", "fit factors to a weight stack");
  dec_cmd->add_option("input", dec.input, "input WTS path")->required();
  dec_cmd->add_option("--method", dec.method, "svd | svd-balanced | tt | tucker");
  dec_cmd->add_option("--rank-d", dec.rank_d, "dimension rank")->required();
  dec_cmd->add_option("--rank-l", dec.rank_l, "bank size (tucker; default 12L)");
  dec_cmd->add_option("--tol", dec.tol, "refinement stopping tolerance");
  dec_cmd->add_option("--max-iters", dec.max_iters, "refinement sweep cap");
  dec_cmd->add_option("--threads", dec.threads, "parallel slice SVDs");
  dec_cmd->add_option("-o,--out", dec.out, "output TKF path")->required();

  std::string rec_in, rec_out;
  auto* rec_cmd = app.add_subcommand("reconstruct", "rebuild a stack from factors");
  rec_cmd->add_option("input", rec_in, "input TKF path")->required();
  rec_cmd->add_option("-o,--out", rec_out, "output WTS path")->required();

  std::string err_wts, err_tkf;
  auto* err_cmd = app.add_subcommand("error", "relative reconstruction error");
  err_cmd->add_option("wts", err_wts, "weight stack")->required();
  err_cmd->add_option("tkf", err_tkf, "factors")->required();

  AnalyzeArgs ana;
  auto* ana_cmd = app.add_subcommand("analyze", "PCA captured-variance curves");
  ana_cmd->add_option("input", ana.input, "input WTS path")->required();
  ana_cmd->add_option("--pair", ana.pair, "pair slices along rows|cols");
  ana_cmd->add_option("--seed", ana.seed, "pair-sampling seed");
  ana_cmd->add_option("-o,--out", ana.out, "output CSV (default stdout)");

  std::string dist_in, dist_out;
  auto* dist_cmd = app.add_subcommand("distances", "cosine distances of mixing rows");
  dist_cmd->add_option("input", dist_in, "input TKF path")->required();
  dist_cmd->add_option("-o,--out", dist_out, "output CSV (default stdout)");

  BudgetArgs bud;
  auto* bud_cmd = app.add_subcommand("budget", "parameter accounting");
  bud_cmd->add_option("--method", bud.method, "i | ii-alpha | ii-beta | iii | iv");
  bud_cmd->add_option("--L", bud.L, "layer count");
  bud_cmd->add_option("--D", bud.D, "hidden size");
  bud_cmd->add_option("--rank-d", bud.rank_d, "dimension rank");
  bud_cmd->add_option("--rank-l", bud.rank_l, "bank size");
  bud_cmd->add_option("--vocab", bud.vocab, "embedding rows");
  bud_cmd->add_option("--n-ctx", bud.n_ctx, "position (+type) embedding rows");
  bud_cmd->add_option("--b", bud.b, "batch size (enables FLOPs)");
  bud_cmd->add_option("--n", bud.n, "sequence length (enables FLOPs)");
  bud_cmd->add_flag("--overhead", bud.overhead, "include biases + LayerNorms");
  bud_cmd->add_flag("--table4", bud.table4, "encoder-config comparison preset");
  bud_cmd->add_flag("--table7", bud.table7, "whole-model compression preset");

  BudgetArgs flp;
  auto* flp_cmd = app.add_subcommand("flops", "forward FLOPs for a configuration");
  flp_cmd->add_option("--method", flp.method, "i | ii-alpha | ii-beta | iii | iv");
  flp_cmd->add_option("--L", flp.L, "layer count");
  flp_cmd->add_option("--D", flp.D, "hidden size");
  flp_cmd->add_option("--rank-d", flp.rank_d, "dimension rank");
  flp_cmd->add_option("--rank-l", flp.rank_l, "bank size");
  flp_cmd->add_option("--b", flp.b, "batch size (default 1)");
  flp_cmd->add_option("--n", flp.n, "sequence length (default 128)");

  DistillArgs dd;
  auto* dd_cmd = app.add_subcommand("distill-demo", "two-stage distillation demo");
  dd_cmd->add_option("--seed", dd.seed, "RNG seed");
  dd_cmd->add_option("--L", dd.L, "layer count");
  dd_cmd->add_option("--D", dd.D, "hidden size");
  dd_cmd->add_option("--heads", dd.heads, "attention heads");
  dd_cmd->add_option("--classes", dd.classes, "head width");
  dd_cmd->add_option("--rank-d", dd.rank_d, "dimension rank");
  dd_cmd->add_option("--rank-l", dd.rank_l, "bank size");
  dd_cmd->add_option("--steps-gd", dd.steps_gd, "first-stage steps");
  dd_cmd->add_option("--steps-td", dd.steps_td, "second-stage steps");
  dd_cmd->add_option("--lr", dd.lr, "Adam learning rate");
  dd_cmd->add_option("--temperature", dd.temperature, "softening temperature");
  dd_cmd->add_option("--batch", dd.batch, "batch size");
  dd_cmd->add_option("--seq", dd.seq, "sequence length");
  dd_cmd->add_option("--vocab", dd.vocab, "synthetic vocabulary size");
  dd_cmd->add_option("--pool", dd.pool, "fixed batch pool size");
  dd_cmd->add_option("-o,--out", dd.out, "loss-curve CSV (default stdout)");

  BenchArgs ben;
  auto* ben_cmd = app.add_subcommand("bench", "dense vs factored forward wall clock");
  ben_cmd->add_option("--D", ben.D, "hidden size");
  ben_cmd->add_option("--rank-d", ben.rank_d, "dimension rank");
  ben_cmd->add_option("--n", ben.n, "sequence length");
  ben_cmd->add_option("--reps", ben.reps, "timed repetitions");
  ben_cmd->add_option("--seed", ben.seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen);
    if (dec_cmd->parsed()) return run_decompose(dec);
    if (rec_cmd->parsed()) return run_reconstruct(rec_in, rec_out);
    if (err_cmd->parsed()) return run_error(err_wts, err_tkf);
    if (ana_cmd->parsed()) return run_analyze(ana);
    if (dist_cmd->parsed()) return run_distances(dist_in, dist_out);
    if (bud_cmd->parsed()) return run_budget(bud);
    if (flp_cmd->parsed()) return run_flops(flp);
    if (dd_cmd->parsed()) return run_distill_demo(dd);
    if (ben_cmd->parsed()) return run_bench(ben);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
