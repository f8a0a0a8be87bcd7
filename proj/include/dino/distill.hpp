#pragma once

// Momentum-teacher self-distillation: target construction, multi-crop loss,
// center/EMA updates, batch-normalized teacher variants, collapse metrics.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dino/model.hpp"
#include "dino/optim.hpp"
#include "dino/views.hpp"

namespace dino::distill {

enum class TeacherNorm { centering, sinkhorn, softmax_batch };

std::string teacher_norm_name(TeacherNorm norm);
TeacherNorm parse_teacher_norm(const std::string& name);  // ConfigError on unknown

struct DistillConfig {
  double student_temp = 0.1;
  double teacher_temp_start = 0.04;
  double teacher_temp = 0.07;
  double teacher_temp_warmup_epochs = 30;
  double center_momentum = 0.9;
  double momentum_start = 0.996;
  double momentum_end = 1.0;
  TeacherNorm teacher_norm = TeacherNorm::centering;
  // Only meaningful with TeacherNorm::centering; false disables both the
  // subtraction and the update (c stays at zero).
  bool centering = true;
  std::size_t sinkhorn_iters = 3;
  // Temperature of both batch-normalized variants.
  double sinkhorn_tau = 0.05;

  void validate() const;
};

template <typename T>
struct DistillState {
  ParamSet<T> teacher;
  Tensor<T> center;  // [K]
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;

  // Teacher starts as a copy of the student with gradients off; c = 0.
  static DistillState init(const ParamSet<T>& student, std::size_t out_dim);
};

// ---- targets ----------------------------------------------------------------

template <typename T>
Tensor<T> student_probs(const Tensor<T>& logits, double student_temp);

// softmax((logits - c) / teacher_temp) per row. The logits must be off-tape.
template <typename T>
Tensor<T> teacher_probs_centered(const Tensor<T>& logits, const Tensor<T>& center, double teacher_temp);

// x = exp(logits / tau) (with per-column max subtraction); num_iters rounds
// of column-sum then row-sum division.
template <typename T>
Tensor<T> sinkhorn(const Tensor<T>& logits, double tau, std::size_t num_iters);

// Column softmax followed by row renormalization; bitwise equal to
// sinkhorn(logits, tau, 1).
template <typename T>
Tensor<T> softmax_batch(const Tensor<T>& logits, double tau);

// ---- loss -------------------------------------------------------------------

template <typename T>
struct LossResult {
  Tensor<T> loss;
  std::size_t terms = 0;
};

// student_logits: one [B x K] tensor per view, globals in slots 0 and 1.
// teacher_probs: the two global-view teacher distributions [B x K].
// Mean over pairs (t, s != t) of the batch-mean H(P_t, P_s).
template <typename T>
LossResult<T> dino_loss(const std::vector<Tensor<T>>& student_logits, const std::vector<Tensor<T>>& teacher_probs,
                        double student_temp);

// ---- state updates ------------------------------------------------------------

// c <- m c + (1 - m) * column mean of teacher_logits.
template <typename T>
Tensor<T> update_center(const Tensor<T>& center, const Tensor<T>& teacher_logits, double momentum);

// theta_t <- lambda theta_t + (1 - lambda) theta_s, in place.
template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double lambda);

// ---- diagnostics ----------------------------------------------------------------

struct CollapseMetrics {
  double h = 0;   // entropy of P_t
  double kl = 0;  // KL(P_t || P_s)
  double ce = 0;  // H(P_t, P_s)
};

template <typename T>
CollapseMetrics collapse_metrics(const Tensor<T>& p_teacher, const Tensor<T>& p_student);

// ---- one step ---------------------------------------------------------------------

// Per-step schedule values, supplied by the driver.
struct StepSchedule {
  double lr = 0;
  double weight_decay = 0;
  double momentum = 1;      // lambda
  double teacher_temp = 0.04;
  double epoch = 0;          // fractional epoch, reporting only
};

struct StepMetrics {
  std::uint64_t step = 0;
  double epoch = 0;
  double loss = 0;
  double h = 0;
  double kl = 0;
  double ce = 0;
  double lambda = 0;
  double tau_t = 0;
  double lr = 0;
  double wd = 0;
};

// View-generation stream for one sample of one step.
Rng view_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t position);

template <typename T>
StepMetrics train_step(std::span<const Image* const> batch, const ModelConfig& model, ParamSet<T>& student,
                       DistillState<T>& state, AdamW<T>& optimizer, const DistillConfig& config,
                       const views::ViewConfig& view_config, const StepSchedule& schedule, std::uint64_t seed);

}  // namespace dino::distill
