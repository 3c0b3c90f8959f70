// SPDX-License-Identifier: Apache-2.0
#include "tslim/distill.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "tslim/autodiff.hpp"
#include "tslim/format.hpp"
#include "tslim/error.hpp"
#include "tslim/rng.hpp"

namespace tslim {

void DistillConfig::validate() const {
  if (steps_gd < 1 || steps_td < 1)
    throw DimError("distill: step counts must be positive");
  if (!(lr > 0.0)) throw DimError("distill: learning rate must be positive");
  if (!(temperature > 0.0)) throw DimError("distill: temperature must be positive");
  if (batch < 1 || seq < 1 || vocab < 2 || pool_batches < 1)
    throw DimError("distill: batch/seq/vocab/pool must be positive");
}

double gd_loss(const ForwardTrace& student, const ForwardTrace& teacher,
               double w_hidden, double w_attn) {
  const Matrix& sh = student.last_hidden;
  const Matrix& th = teacher.last_hidden;
  if (sh.rows() != th.rows() || sh.cols() != th.cols())
    throw DimError("gd_loss: hidden-state shapes differ");
  const Tensor3& sa = student.attention.back();
  const Tensor3& ta = teacher.attention.back();
  if (sa.dim0() != ta.dim0() || sa.dim1() != ta.dim1() || sa.dim2() != ta.dim2())
    throw DimError("gd_loss: attention-map shapes differ");

  double hid_ss = 0.0;
  for (std::size_t i = 0; i < sh.size(); ++i) {
    const double d = sh.data()[i] - th.data()[i];
    hid_ss += d * d;
  }
  // Per-map partial sums, matching the tape's accumulation order.
  double attn_ss = 0.0;
  const std::size_t map_elems = sa.dim1() * sa.dim2();
  for (std::size_t m = 0; m < sa.dim0(); ++m) {
    double part = 0.0;
    const double* s = sa.data() + m * map_elems;
    const double* t = ta.data() + m * map_elems;
    for (std::size_t i = 0; i < map_elems; ++i) {
      const double d = s[i] - t[i];
      part += d * d;
    }
    attn_ss += part;
  }
  return (w_hidden / static_cast<double>(sh.size())) * hid_ss +
         (w_attn / static_cast<double>(sa.size())) * attn_ss;
}

double td_loss(const Matrix& student_logits, const Matrix& teacher_logits,
               double temperature) {
  if (student_logits.rows() != teacher_logits.rows() ||
      student_logits.cols() != teacher_logits.cols())
    throw DimError("td_loss: logit shapes differ");
  const double T = temperature;

  auto softmax_row = [&](const double* r, std::size_t n, std::vector<double>& out) {
    double mx = r[0] / T;
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, r[j] / T);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(r[j] / T - mx);
      sum += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
  };

  const std::size_t C = student_logits.cols();
  std::vector<double> pt(C), ps(C);
  double loss = 0.0;
  for (std::size_t i = 0; i < student_logits.rows(); ++i) {
    softmax_row(teacher_logits.row(i), C, pt);
    softmax_row(student_logits.row(i), C, ps);
    for (std::size_t j = 0; j < C; ++j)
      if (pt[j] > 0.0) loss += pt[j] * (std::log(pt[j]) - std::log(ps[j]));
  }
  return loss * T * T / static_cast<double>(student_logits.rows());
}

namespace {

Matrix row_matrix(const std::vector<double>& v) {
  return Matrix(1, v.size(), v);
}

struct SideLeaves {
  ad::VarId bq, bk, bv, bo, b_in, b_out, g1, be1, g2, be2;
};

struct StudentLeaves {
  ad::VarId u, v, bank, p;
  std::vector<SideLeaves> side;
  ad::VarId head_w, head_b;
};

StudentLeaves make_leaves(ad::Tape& t, const ToyTransformer& s) {
  const TuckerFactors& tk = s.factors();
  StudentLeaves L;
  L.u = t.leaf(tk.u);
  L.v = t.leaf(tk.v);
  L.bank = t.leaf(tk.bank.as_matrix());
  L.p = t.leaf(tk.p);
  for (const LayerSideParams& sp : s.side) {
    SideLeaves sd;
    sd.bq = t.leaf(row_matrix(sp.bq));
    sd.bk = t.leaf(row_matrix(sp.bk));
    sd.bv = t.leaf(row_matrix(sp.bv));
    sd.bo = t.leaf(row_matrix(sp.bo));
    sd.b_in = t.leaf(row_matrix(sp.b_in));
    sd.b_out = t.leaf(row_matrix(sp.b_out));
    sd.g1 = t.leaf(row_matrix(sp.ln1_gamma));
    sd.be1 = t.leaf(row_matrix(sp.ln1_beta));
    sd.g2 = t.leaf(row_matrix(sp.ln2_gamma));
    sd.be2 = t.leaf(row_matrix(sp.ln2_beta));
    L.side.push_back(sd);
  }
  L.head_w = t.leaf(s.head_w);
  L.head_b = t.leaf(row_matrix(s.head_b));
  return L;
}

struct TapeForward {
  ad::VarId hidden = 0;
  ad::VarId logits = 0;
  std::vector<ad::VarId> last_attn;  // per (batch, head) map of the last layer
};

// Mirrors the plain factored forward (order IV-3, uncached) op for op.
TapeForward tape_forward(ad::Tape& t, const StudentLeaves& L,
                         const ToyTransformer& model, const Activations& x) {
  const TransformerConfig& cfg = model.cfg;
  const std::size_t D = cfg.hidden;
  const std::size_t dh = cfg.d_head();
  const std::size_t n = x.seq;
  const std::size_t d = model.factors().rank_d();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const ad::VarId merged = t.matmul(L.p, L.bank);  // all P_i C rows at once
  auto apply = [&](ad::VarId input, std::size_t slice, bool transposed) {
    const ad::VarId core = t.reshape(t.row_block(merged, slice, 1), d, d);
    if (!transposed)
      return t.matmul(t.matmul(input, L.u), t.matmul(core, L.v));
    return t.matmul_nt(t.matmul_nt(input, L.v), t.matmul(L.u, core));
  };

  TapeForward fw;
  ad::VarId h = t.leaf(x.flat);
  for (std::size_t j = 0; j < cfg.layers; ++j) {
    const SideLeaves& sd = L.side[j];
    const std::size_t base = 12 * j;

    const ad::VarId q = t.add_row_vector(apply(h, base + 0, false), sd.bq);
    const ad::VarId k = t.add_row_vector(apply(h, base + 1, false), sd.bk);
    const ad::VarId v = t.add_row_vector(apply(h, base + 2, false), sd.bv);

    ad::VarId ctx = t.leaf(Matrix(x.batch * n, D));
    for (std::size_t bi = 0; bi < x.batch; ++bi) {
      for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
        const ad::VarId qb = t.col_block(t.row_block(q, bi * n, n), hh * dh, dh);
        const ad::VarId kb = t.col_block(t.row_block(k, bi * n, n), hh * dh, dh);
        const ad::VarId vb = t.col_block(t.row_block(v, bi * n, n), hh * dh, dh);
        const ad::VarId a = t.softmax_rows(t.scale(t.matmul_nt(qb, kb), scale));
        if (j + 1 == cfg.layers) fw.last_attn.push_back(a);
        ctx = t.add_block(ctx, t.matmul(a, vb), bi * n, hh * dh);
      }
    }

    const ad::VarId attn_out = t.add_row_vector(apply(ctx, base + 3, false), sd.bo);
    h = t.add(h, attn_out);
    h = t.layernorm_rows(h, sd.g1, sd.be1, kLayerNormEps);

    ad::VarId ffn = t.leaf(Matrix(x.batch * n, D));
    for (std::size_t sub = 0; sub < 4; ++sub) {
      ad::VarId hid = t.add_row_vector(apply(h, base + 4 + sub, false),
                                       t.col_block(sd.b_in, sub * D, D));
      hid = t.gelu(hid);
      ffn = t.add(ffn, apply(hid, base + 8 + sub, true));
    }
    ffn = t.add_row_vector(ffn, sd.b_out);
    h = t.add(h, ffn);
    h = t.layernorm_rows(h, sd.g2, sd.be2, kLayerNormEps);
  }

  fw.hidden = h;
  fw.logits = t.add_row_vector(
      t.matmul(t.first_rows(h, x.batch, x.seq), L.head_w), L.head_b);
  return fw;
}

std::vector<double> grad_as_vector(const ad::Tape& t, ad::VarId id, std::size_t n) {
  const Matrix& g = t.grad(id);
  if (g.rows() == 0) return std::vector<double>(n, 0.0);
  return g.storage();
}

Matrix grad_as_matrix(const ad::Tape& t, ad::VarId id, std::size_t r, std::size_t c) {
  const Matrix& g = t.grad(id);
  if (g.rows() == 0) return Matrix(r, c);
  return g;
}

}  // namespace

double student_loss(const ToyTransformer& student, const Activations& x,
                    const LossSpec& spec, GradientSet* grads) {
  if (!student.factored())
    throw DimError("student_loss: the student must be a factored model");
  const TuckerFactors& tk = student.factors();

  ad::Tape tape;
  const StudentLeaves L = make_leaves(tape, student);
  const TapeForward fw = tape_forward(tape, L, student, x);

  ad::VarId loss;
  switch (spec.kind) {
    case LossKind::GD: {
      if (!spec.teacher) throw DimError("student_loss: GD needs a teacher trace");
      const ForwardTrace& teacher = *spec.teacher;
      const ad::VarId hid_ss = tape.sqdiff_sum(fw.hidden, teacher.last_hidden);
      const Tensor3& tmaps = teacher.attention.back();
      ad::VarId attn_ss = tape.sqdiff_sum(fw.last_attn[0], tmaps.slice(0));
      for (std::size_t m = 1; m < fw.last_attn.size(); ++m)
        attn_ss = tape.add(attn_ss, tape.sqdiff_sum(fw.last_attn[m], tmaps.slice(m)));
      const double nh = static_cast<double>(teacher.last_hidden.size());
      const double na = static_cast<double>(tmaps.size());
      loss = tape.add_scaled(hid_ss, spec.w_hidden / nh, attn_ss, spec.w_attn / na);
      break;
    }
    case LossKind::TD: {
      if (!spec.teacher) throw DimError("student_loss: TD needs a teacher trace");
      loss = tape.kd_kl(fw.logits, spec.teacher->logits, spec.temperature);
      break;
    }
    case LossKind::Task: {
      if (!spec.labels) throw DimError("student_loss: Task needs labels");
      loss = tape.softmax_xent(fw.logits, *spec.labels);
      break;
    }
    default:
      throw DimError("student_loss: unknown loss kind");
  }

  const double value = tape.val(loss)(0, 0);
  if (!std::isfinite(value))
    throw NumericError("student_loss: non-finite loss");
  if (!grads) return value;

  tape.backward(loss);

  GradientSet& g = *grads;
  g.u = grad_as_matrix(tape, L.u, tk.u.rows(), tk.u.cols());
  g.v = grad_as_matrix(tape, L.v, tk.v.rows(), tk.v.cols());
  g.p = grad_as_matrix(tape, L.p, tk.p.rows(), tk.p.cols());
  const Matrix bank_grad =
      grad_as_matrix(tape, L.bank, tk.rank_l(), tk.rank_d() * tk.rank_d());
  g.bank = Tensor3(tk.rank_l(), tk.rank_d(), tk.rank_d());
  g.bank.storage() = bank_grad.storage();
  g.side.clear();
  for (std::size_t j = 0; j < student.side.size(); ++j) {
    const SideLeaves& sd = L.side[j];
    const LayerSideParams& sp = student.side[j];
    SideGrads sg;
    sg.bq = grad_as_vector(tape, sd.bq, sp.bq.size());
    sg.bk = grad_as_vector(tape, sd.bk, sp.bk.size());
    sg.bv = grad_as_vector(tape, sd.bv, sp.bv.size());
    sg.bo = grad_as_vector(tape, sd.bo, sp.bo.size());
    sg.b_in = grad_as_vector(tape, sd.b_in, sp.b_in.size());
    sg.b_out = grad_as_vector(tape, sd.b_out, sp.b_out.size());
    sg.ln1_gamma = grad_as_vector(tape, sd.g1, sp.ln1_gamma.size());
    sg.ln1_beta = grad_as_vector(tape, sd.be1, sp.ln1_beta.size());
    sg.ln2_gamma = grad_as_vector(tape, sd.g2, sp.ln2_gamma.size());
    sg.ln2_beta = grad_as_vector(tape, sd.be2, sp.ln2_beta.size());
    g.side.push_back(std::move(sg));
  }
  g.head_w = grad_as_matrix(tape, L.head_w, student.head_w.rows(),
                            student.head_w.cols());
  g.head_b = grad_as_vector(tape, L.head_b, student.head_b.size());
  return value;
}

namespace {

struct Pool {
  Matrix embedding;  // vocab x D
  std::vector<std::vector<std::uint32_t>> tokens;  // per batch: b*n ids
  std::vector<std::vector<std::uint32_t>> labels;  // per batch: b labels
};

Pool make_pool(const DistillConfig& cfg, const TransformerConfig& tcfg) {
  Rng rng(cfg.seed);
  Pool pool;
  pool.embedding = Matrix(cfg.vocab, tcfg.hidden);
  for (double& v : pool.embedding.storage()) v = rng.normal(0.0, 1.0);

  pool.tokens.resize(cfg.pool_batches);
  for (auto& batch : pool.tokens) {
    batch.resize(cfg.batch * cfg.seq);
    for (auto& tok : batch)
      tok = static_cast<std::uint32_t>(rng.below(cfg.vocab));
  }

  // Synthetic task labels from a fixed random readout of the mean embedding;
  // deliberately independent of the teacher.
  Matrix readout(tcfg.hidden, tcfg.n_classes);
  for (double& v : readout.storage()) v = rng.normal(0.0, 1.0);
  pool.labels.resize(cfg.pool_batches);
  for (std::size_t k = 0; k < cfg.pool_batches; ++k) {
    pool.labels[k].resize(cfg.batch);
    for (std::size_t bi = 0; bi < cfg.batch; ++bi) {
      std::vector<double> mean(tcfg.hidden, 0.0);
      for (std::size_t i = 0; i < cfg.seq; ++i) {
        const std::uint32_t tok = pool.tokens[k][bi * cfg.seq + i];
        for (std::size_t c = 0; c < tcfg.hidden; ++c)
          mean[c] += pool.embedding(tok, c);
      }
      std::size_t best = 0;
      double best_score = -1e300;
      for (std::size_t cls = 0; cls < tcfg.n_classes; ++cls) {
        double score = 0.0;
        for (std::size_t c = 0; c < tcfg.hidden; ++c)
          score += mean[c] * readout(c, cls);
        if (score > best_score) {
          best_score = score;
          best = cls;
        }
      }
      pool.labels[k][bi] = static_cast<std::uint32_t>(best);
    }
  }
  return pool;
}

// Parameter views in a fixed order; gradients follow the same order.
struct Views {
  std::vector<double*> params;
  std::vector<const double*> grads;
  std::vector<std::size_t> sizes;
  std::size_t total = 0;

  void add(double* p, const double* g, std::size_t n) {
    params.push_back(p);
    grads.push_back(g);
    sizes.push_back(n);
    total += n;
  }
};

Views make_views(ToyTransformer& s, const GradientSet& g) {
  Views v;
  TuckerFactors& tk = s.factors();
  v.add(tk.u.data(), g.u.data(), tk.u.size());
  v.add(tk.v.data(), g.v.data(), tk.v.size());
  v.add(tk.bank.data(), g.bank.data(), tk.bank.size());
  v.add(tk.p.data(), g.p.data(), tk.p.size());
  for (std::size_t j = 0; j < s.side.size(); ++j) {
    LayerSideParams& sp = s.side[j];
    const SideGrads& sg = g.side[j];
    v.add(sp.bq.data(), sg.bq.data(), sp.bq.size());
    v.add(sp.bk.data(), sg.bk.data(), sp.bk.size());
    v.add(sp.bv.data(), sg.bv.data(), sp.bv.size());
    v.add(sp.bo.data(), sg.bo.data(), sp.bo.size());
    v.add(sp.b_in.data(), sg.b_in.data(), sp.b_in.size());
    v.add(sp.b_out.data(), sg.b_out.data(), sp.b_out.size());
    v.add(sp.ln1_gamma.data(), sg.ln1_gamma.data(), sp.ln1_gamma.size());
    v.add(sp.ln1_beta.data(), sg.ln1_beta.data(), sp.ln1_beta.size());
    v.add(sp.ln2_gamma.data(), sg.ln2_gamma.data(), sp.ln2_gamma.size());
    v.add(sp.ln2_beta.data(), sg.ln2_beta.data(), sp.ln2_beta.size());
  }
  v.add(s.head_w.data(), g.head_w.data(), s.head_w.size());
  v.add(s.head_b.data(), g.head_b.data(), s.head_b.size());
  return v;
}

struct Adam {
  double lr;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<double> m, v;

  explicit Adam(double lr_) : lr(lr_) {}

  void step(const Views& views) {
    if (m.empty()) {
      m.assign(views.total, 0.0);
      v.assign(views.total, 0.0);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    std::size_t off = 0;
    for (std::size_t k = 0; k < views.params.size(); ++k) {
      double* p = views.params[k];
      const double* g = views.grads[k];
      for (std::size_t i = 0; i < views.sizes[k]; ++i, ++off) {
        m[off] = beta1 * m[off] + (1.0 - beta1) * g[i];
        v[off] = beta2 * v[off] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[off] / bc1;
        const double vhat = v[off] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

struct Evaluator {
  const ToyTransformer& teacher;
  const DistillConfig& cfg;
  Pool pool;
  std::vector<Activations> inputs;
  std::vector<ForwardTrace> teacher_traces;

  Evaluator(const ToyTransformer& teacher_, const DistillConfig& cfg_)
      : teacher(teacher_), cfg(cfg_), pool(make_pool(cfg_, teacher_.cfg)) {
    for (std::size_t k = 0; k < cfg.pool_batches; ++k) {
      inputs.push_back(embed_tokens(pool.tokens[k], cfg.batch, cfg.seq,
                                    pool.embedding));
      teacher_traces.push_back(transformer_forward(inputs.back(), teacher));
    }
  }

  double mean_gd(const ToyTransformer& student) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const ForwardTrace st = transformer_forward(inputs[k], student);
      acc += gd_loss(st, teacher_traces[k], cfg.w_hidden, cfg.w_attn);
    }
    return acc / static_cast<double>(inputs.size());
  }

  double mean_td(const ToyTransformer& student, double temperature) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const ForwardTrace st = transformer_forward(inputs[k], student);
      acc += td_loss(st.logits, teacher_traces[k].logits, temperature);
    }
    return acc / static_cast<double>(inputs.size());
  }
};

TrainResult run_training(const ToyTransformer& teacher, ToyTransformer& student,
                         const DistillConfig& cfg, bool task_only) {
  cfg.validate();
  if (!student.factored())
    throw DimError("train: the student must be a factored model");
  if (student.cfg.hidden != teacher.cfg.hidden ||
      student.cfg.layers != teacher.cfg.layers ||
      student.cfg.heads != teacher.cfg.heads)
    throw DimError("train: teacher and student shapes differ");

  Evaluator ev(teacher, cfg);
  TrainResult result;
  result.gd_initial = ev.mean_gd(student);

  auto run_stage = [&](Stage stage, std::size_t steps) {
    Adam adam(cfg.lr);
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t k = step % cfg.pool_batches;
      LossSpec spec;
      if (task_only) {
        spec.kind = LossKind::Task;
        spec.labels = &ev.pool.labels[k];
      } else if (stage == Stage::GD) {
        spec.kind = LossKind::GD;
        spec.w_hidden = cfg.w_hidden;
        spec.w_attn = cfg.w_attn;
        spec.teacher = &ev.teacher_traces[k];
      } else {
        spec.kind = LossKind::TD;
        spec.temperature = cfg.temperature;
        spec.teacher = &ev.teacher_traces[k];
      }
      GradientSet grads;
      double loss;
      try {
        loss = student_loss(student, ev.inputs[k], spec, &grads);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(step) +
                           " (" + (stage == Stage::GD ? "GD" : "TD") + "): " + e.what());
      }
      adam.step(make_views(student, grads));
      result.curve.push_back({step, stage, loss});
    }
  };

  run_stage(Stage::GD, cfg.steps_gd);
  result.gd_final = ev.mean_gd(student);
  result.td_initial = ev.mean_td(student, cfg.temperature);
  run_stage(Stage::TD, cfg.steps_td);
  result.td_final = ev.mean_td(student, cfg.temperature);
  return result;
}

}  // namespace

TrainResult train(const ToyTransformer& teacher, ToyTransformer& student,
                  const DistillConfig& cfg) {
  return run_training(teacher, student, cfg, /*task_only=*/false);
}

TrainResult train_task_only(const ToyTransformer& teacher, ToyTransformer& student,
                            const DistillConfig& cfg) {
  return run_training(teacher, student, cfg, /*task_only=*/true);
}

double teacher_agreement(const ToyTransformer& teacher,
                         const ToyTransformer& student,
                         const DistillConfig& cfg) {
  Evaluator ev(teacher, cfg);
  return ev.mean_td(student, 1.0);
}

void write_curve_csv(std::ostream& out, const std::vector<TrainPoint>& curve) {
  out << "step,stage,loss\n";
  for (const TrainPoint& p : curve) {
    out << p.step << ',' << (p.stage == Stage::GD ? "GD" : "TD") << ','
        << full_precision(p.loss) << '\n';
  }
}

}  // namespace tslim
