// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "tslim/matrix.hpp"
#include "tslim/transformer.hpp"

namespace tslim {

struct DistillConfig {
  std::uint64_t seed = 1;
  std::size_t steps_gd = 500;
  std::size_t steps_td = 200;
  double lr = 1e-3;
  std::size_t batch = 4;
  std::size_t seq = 12;
  double w_hidden = 1.0;
  double w_attn = 1.0;
  double temperature = 1.0;
  std::size_t vocab = 64;
  std::size_t pool_batches = 16;  // fixed token batches, cycled during training

  void validate() const;
};

/// Hidden-state + attention-map matching loss (the first distillation
/// stage): w_hidden * MSE(last hidden) + w_attn * MSE(last-layer attention).
double gd_loss(const ForwardTrace& student, const ForwardTrace& teacher,
               double w_hidden, double w_attn);

/// Softened logit-matching loss (the second stage):
/// KL(softmax(t/T) || softmax(s/T)) * T^2, averaged over rows.
double td_loss(const Matrix& student_logits, const Matrix& teacher_logits,
               double temperature);

/// Gradients for every trainable student parameter; shapes mirror the model.
struct SideGrads {
  std::vector<double> bq, bk, bv, bo, b_in, b_out;
  std::vector<double> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

struct GradientSet {
  Matrix u, v, p;
  Tensor3 bank;
  std::vector<SideGrads> side;
  Matrix head_w;
  std::vector<double> head_b;
};

enum class LossKind { GD, TD, Task };

struct LossSpec {
  LossKind kind = LossKind::GD;
  double w_hidden = 1.0, w_attn = 1.0;  // GD
  double temperature = 1.0;             // TD
  const ForwardTrace* teacher = nullptr;              // GD / TD
  const std::vector<std::uint32_t>* labels = nullptr;  // Task
};

/// Runs the factored student forward through the tape, evaluates the loss,
/// and (when grads is non-null) backpropagates into every trainable
/// parameter. Gradients of shared factors accumulate over all 12L block
/// applications. Throws NumericError on a non-finite loss.
double student_loss(const ToyTransformer& student, const Activations& x,
                    const LossSpec& spec, GradientSet* grads);

enum class Stage { GD, TD };

struct TrainPoint {
  std::size_t step = 0;
  Stage stage = Stage::GD;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<TrainPoint> curve;
  double gd_initial = 0.0;   // pool-mean GD loss before training
  double gd_final = 0.0;     // pool-mean GD loss after the GD stage
  double td_initial = 0.0;   // pool-mean TD loss before the TD stage
  double td_final = 0.0;     // pool-mean TD loss after the TD stage
};

/// Two-stage distillation with Adam (0.9/0.999, eps 1e-8): first match the
/// teacher's last hidden states and attention maps, then its logits.
/// Deterministic given the seed; aborts with NumericError on divergence.
TrainResult train(const ToyTransformer& teacher, ToyTransformer& student,
                  const DistillConfig& cfg);

/// Baseline for the ablation: same data, step budget and optimizer, but the
/// objective is plain cross-entropy on synthetic task labels (no teacher
/// signal). gd/td fields report the same teacher-relative metrics.
TrainResult train_task_only(const ToyTransformer& teacher, ToyTransformer& student,
                            const DistillConfig& cfg);

/// Pool-mean softened-logit divergence from the teacher at T = 1.
double teacher_agreement(const ToyTransformer& teacher,
                         const ToyTransformer& student, const DistillConfig& cfg);

/// CSV: step,stage,loss
void write_curve_csv(std::ostream& out, const std::vector<TrainPoint>& curve);

}  // namespace tslim
