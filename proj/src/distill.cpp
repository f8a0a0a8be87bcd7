#include "dino/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dino/errors.hpp"
#include "dino/kernels.hpp"

namespace dino::distill {
namespace {

template <typename T>
void require_matrix(const Tensor<T>& x, const char* what) {
  if (x.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(x.shape()));
}

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError(std::string(what) + " must be positive and finite");
}

// Shared by sinkhorn and softmax_batch so that one iteration of the former is
// the latter, operation for operation.
template <typename T>
std::vector<T> column_exp(const Tensor<T>& logits, double tau) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto v = logits.values();
  std::vector<T> colmax(k, -std::numeric_limits<T>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) colmax[j] = std::max(colmax[j], v[i * k + j]);
  const T inv_tau = T(1) / static_cast<T>(tau);
  std::vector<T> x(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) x[i * k + j] = std::exp((v[i * k + j] - colmax[j]) * inv_tau);
  return x;
}

template <typename T>
void normalize_columns(std::vector<T>& x, std::size_t n, std::size_t k) {
  std::vector<T> col(k, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) col[j] += x[i * k + j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) x[i * k + j] /= col[j];
}

template <typename T>
void normalize_rows(std::vector<T>& x, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) s += x[i * k + j];
    for (std::size_t j = 0; j < k; ++j) x[i * k + j] /= s;
  }
}

template <typename T>
void require_finite(const std::vector<T>& x, const char* what) {
  for (T v : x) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite intermediate");
  }
}

template <typename T>
Tensor<T> row_slice(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(x, std::span<const std::size_t>(idx));
}

template <typename T>
Tensor<T> plain_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const std::size_t k = x.dim(1);
  const auto v = x.values();
  return Tensor<T>({count, k}, std::vector<T>(v.begin() + static_cast<std::ptrdiff_t>(begin * k),
                                              v.begin() + static_cast<std::ptrdiff_t>((begin + count) * k)));
}

}  // namespace

std::string teacher_norm_name(TeacherNorm norm) {
  switch (norm) {
    case TeacherNorm::centering: return "centering";
    case TeacherNorm::sinkhorn: return "sinkhorn";
    case TeacherNorm::softmax_batch: return "softmax_batch";
  }
  return "?";
}

TeacherNorm parse_teacher_norm(const std::string& name) {
  if (name == "centering") return TeacherNorm::centering;
  if (name == "sinkhorn") return TeacherNorm::sinkhorn;
  if (name == "softmax_batch") return TeacherNorm::softmax_batch;
  throw ConfigError("unknown teacher_norm '" + name + "'");
}

void DistillConfig::validate() const {
  for (double t : {student_temp, teacher_temp_start, teacher_temp, sinkhorn_tau}) {
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("temperatures must be positive");
  }
  if (!(center_momentum >= 0.0 && center_momentum <= 1.0)) throw ConfigError("center momentum must lie in [0, 1]");
  if (!(momentum_start >= 0.0 && momentum_start <= 1.0 && momentum_end >= 0.0 && momentum_end <= 1.0)) {
    throw ConfigError("teacher momentum must lie in [0, 1]");
  }
  if (!(teacher_temp_warmup_epochs >= 0.0)) throw ConfigError("teacher temperature warmup must be non-negative");
  if (sinkhorn_iters == 0) throw ConfigError("sinkhorn_iters must be >= 1");
}

template <typename T>
DistillState<T> DistillState<T>::init(const ParamSet<T>& student, std::size_t out_dim) {
  DistillState s;
  s.teacher = student.clone();
  s.teacher.set_requires_grad(false);
  s.center = Tensor<T>::zeros({out_dim});
  return s;
}

template <typename T>
Tensor<T> student_probs(const Tensor<T>& logits, double student_temp) {
  require_positive(student_temp, "student temperature");
  return softmax(logits, static_cast<T>(student_temp));
}

template <typename T>
Tensor<T> teacher_probs_centered(const Tensor<T>& logits, const Tensor<T>& center, double teacher_temp) {
  require_positive(teacher_temp, "teacher temperature");
  require_matrix(logits, "teacher_probs_centered");
  if (logits.requires_grad()) throw ContractError("teacher logits must be detached from the tape");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (center.numel() != k) {
    throw DimensionError("center " + shape_str(center.shape()) + " does not match logits " + shape_str(logits.shape()));
  }
  const auto v = logits.values();
  const auto c = center.values();
  const T inv = T(1) / static_cast<T>(teacher_temp);
  std::vector<T> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * k;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = (v[i * k + j] - c[j]) * inv;
      mx = std::max(mx, row[j]);
    }
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::size_t j = 0; j < k; ++j) row[j] /= s;
  }
  return Tensor<T>({n, k}, std::move(out));
}

template <typename T>
Tensor<T> sinkhorn(const Tensor<T>& logits, double tau, std::size_t num_iters) {
  require_positive(tau, "sinkhorn tau");
  require_matrix(logits, "sinkhorn");
  if (num_iters == 0) throw ParameterError("sinkhorn needs at least one iteration");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<T> x = column_exp(logits, tau);
  for (std::size_t it = 0; it < num_iters; ++it) {
    normalize_columns(x, n, k);
    normalize_rows(x, n, k);
  }
  require_finite(x, "sinkhorn");
  return Tensor<T>({n, k}, std::move(x));
}

template <typename T>
Tensor<T> softmax_batch(const Tensor<T>& logits, double tau) {
  require_positive(tau, "softmax_batch tau");
  require_matrix(logits, "softmax_batch");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<T> x = column_exp(logits, tau);
  normalize_columns(x, n, k);
  normalize_rows(x, n, k);
  require_finite(x, "softmax_batch");
  return Tensor<T>({n, k}, std::move(x));
}

template <typename T>
LossResult<T> dino_loss(const std::vector<Tensor<T>>& student_logits, const std::vector<Tensor<T>>& teacher_probs,
                        double student_temp) {
  require_positive(student_temp, "student temperature");
  if (teacher_probs.size() != 2) throw ContractError("dino_loss needs exactly 2 global teacher views");
  if (student_logits.size() < 2) throw ContractError("dino_loss needs at least the 2 global student views");
  const Shape& ts = teacher_probs[0].shape();
  if (teacher_probs[1].shape() != ts || ts.size() != 2) throw DimensionError("teacher views differ in shape");
  for (const auto& s : student_logits) {
    if (s.shape() != ts) throw DimensionError("student view " + shape_str(s.shape()) + " vs teacher " + shape_str(ts));
  }
  // H is linear in its first argument, so all pair terms sharing a student view
  // collapse into one cross-entropy against the summed teacher targets.
  const auto t0 = teacher_probs[0].values();
  const auto t1 = teacher_probs[1].values();
  std::vector<T> both(t0.size());
  for (std::size_t i = 0; i < both.size(); ++i) both[i] = t0[i] + t1[i];
  const Tensor<T> target_both(ts, std::move(both));
  const Tensor<T> target0 = teacher_probs[0].detach();
  const Tensor<T> target1 = teacher_probs[1].detach();

  const std::size_t terms = 2 * (student_logits.size() - 1);
  const T temp = static_cast<T>(student_temp);
  Tensor<T> total;
  for (std::size_t s = 0; s < student_logits.size(); ++s) {
    const Tensor<T>& target = s == 0 ? target1 : s == 1 ? target0 : target_both;
    Tensor<T> term = soft_cross_entropy(student_logits[s], target, temp);
    total = total.defined() ? add(total, term) : term;
  }
  return {scale(total, T(1) / static_cast<T>(terms)), terms};
}

template <typename T>
Tensor<T> update_center(const Tensor<T>& center, const Tensor<T>& teacher_logits, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ParameterError("center momentum must lie in [0, 1]");
  require_matrix(teacher_logits, "update_center");
  const std::size_t n = teacher_logits.dim(0), k = teacher_logits.dim(1);
  if (center.numel() != k || n == 0) throw DimensionError("update_center: center/logits mismatch");
  const auto v = teacher_logits.values();
  std::vector<T> mean(k, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) mean[j] += v[i * k + j];
  const auto c = center.values();
  const T m = static_cast<T>(momentum);
  std::vector<T> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = m * c[j] + (T(1) - m) * (mean[j] / static_cast<T>(n));
  return Tensor<T>(center.shape(), std::move(out));
}

template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("teacher momentum must lie in [0, 1]");
  if (!teacher.structurally_equal(student)) throw ContractError("ema_update: teacher and student differ in structure");
  auto s = student.begin();
  for (auto t = teacher.begin(); t != teacher.end(); ++t, ++s) {
    kernels::axpby<T>(static_cast<T>(1.0 - lambda), s->second.values(), static_cast<T>(lambda), t->second.mutable_values());
  }
}

template <typename T>
CollapseMetrics collapse_metrics(const Tensor<T>& p_teacher, const Tensor<T>& p_student) {
  require_matrix(p_teacher, "collapse_metrics");
  if (p_teacher.shape() != p_student.shape()) throw DimensionError("collapse_metrics: shape mismatch");
  constexpr double kEps = 1e-30;
  const std::size_t n = p_teacher.dim(0), k = p_teacher.dim(1);
  const auto pt = p_teacher.values();
  const auto ps = p_student.values();
  CollapseMetrics m;
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0, kl = 0, ce = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = pt[i * k + j];
      if (p <= 0.0) continue;
      const double lq = std::log(std::max(static_cast<double>(ps[i * k + j]), kEps));
      const double lp = std::log(p);
      h -= p * lp;
      ce -= p * lq;
      kl += p * (lp - lq);
    }
    m.h += h;
    m.kl += kl;
    m.ce += ce;
  }
  m.h /= static_cast<double>(n);
  m.kl /= static_cast<double>(n);
  m.ce /= static_cast<double>(n);
  return m;
}

Rng view_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t position) {
  return Rng(Rng::mix64(seed) ^ Rng::mix64(step + 0x5851F42D4C957F2DULL), position);
}

template <typename T>
StepMetrics train_step(std::span<const Image* const> batch, const ModelConfig& model, ParamSet<T>& student,
                       DistillState<T>& state, AdamW<T>& optimizer, const DistillConfig& config,
                       const views::ViewConfig& view_config, const StepSchedule& schedule, std::uint64_t seed) {
  if (batch.empty()) throw ParameterError("train_step: empty batch");
  const std::size_t b = batch.size();
  const std::size_t nl = view_config.n_local;

  std::vector<views::ViewSet> sets;
  sets.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    Rng rng = view_rng(seed, state.step, i);
    sets.push_back(views::make_views(*batch[i], view_config, rng));
  }
  // View-major stacking: rows [v*B, (v+1)*B) hold view v of every sample.
  std::vector<const Image*> globals, locals;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t i = 0; i < b; ++i) globals.push_back(&sets[i].views[v].image);
  for (std::size_t v = 0; v < nl; ++v)
    for (std::size_t i = 0; i < b; ++i) locals.push_back(&sets[i].views[2 + v].image);
  const Tensor<T> global_images = stack_images<T>(globals);

  Tensor<T> teacher_logits;
  {
    NoGradGuard no_grad;
    teacher_logits = model_forward(global_images, model, state.teacher).head.logits;
  }
  Tensor<T> teacher_p;
  switch (config.teacher_norm) {
    case TeacherNorm::centering:
      teacher_p = config.centering
                      ? teacher_probs_centered(teacher_logits, state.center, schedule.teacher_temp)
                      : teacher_probs_centered(teacher_logits, Tensor<T>::zeros(state.center.shape()),
                                               schedule.teacher_temp);
      break;
    case TeacherNorm::sinkhorn:
      teacher_p = sinkhorn(teacher_logits, config.sinkhorn_tau, config.sinkhorn_iters);
      break;
    case TeacherNorm::softmax_batch:
      teacher_p = softmax_batch(teacher_logits, config.sinkhorn_tau);
      break;
  }

  const Tensor<T> student_global = model_forward(global_images, model, student).head.logits;
  std::vector<Tensor<T>> student_views{row_slice(student_global, 0, b), row_slice(student_global, b, b)};
  if (nl > 0) {
    const Tensor<T> student_local = model_forward(stack_images<T>(locals), model, student).head.logits;
    for (std::size_t v = 0; v < nl; ++v) student_views.push_back(row_slice(student_local, v * b, b));
  }
  const std::vector<Tensor<T>> teacher_views{plain_rows(teacher_p, 0, b), plain_rows(teacher_p, b, b)};
  const LossResult<T> loss = dino_loss(student_views, teacher_views, config.student_temp);

  // Diagnostics pair each teacher global view with the other global student view.
  CollapseMetrics cm;
  {
    NoGradGuard no_grad;
    const Tensor<T> ps = softmax(student_global.detach(), static_cast<T>(config.student_temp));
    const Tensor<T> swapped = concat_rows<T>({plain_rows(ps, b, b), plain_rows(ps, 0, b)});
    cm = collapse_metrics(teacher_p, swapped);
  }

  student.zero_grad();
  backward(loss.loss);
  optimizer.step(student, schedule.lr, schedule.weight_decay);
  ema_update(state.teacher, student, schedule.momentum);
  if (config.teacher_norm == TeacherNorm::centering && config.centering) {
    state.center = update_center(state.center, teacher_logits, config.center_momentum);
  }

  StepMetrics out;
  out.step = state.step;
  out.epoch = schedule.epoch;
  out.loss = static_cast<double>(loss.loss.item());
  out.h = cm.h;
  out.kl = cm.kl;
  out.ce = cm.ce;
  out.lambda = schedule.momentum;
  out.tau_t = schedule.teacher_temp;
  out.lr = schedule.lr;
  out.wd = schedule.weight_decay;
  ++state.step;
  return out;
}

#define DINO_INSTANTIATE(T)                                                                                         \
  template struct DistillState<T>;                                                                                  \
  template Tensor<T> student_probs<T>(const Tensor<T>&, double);                                                    \
  template Tensor<T> teacher_probs_centered<T>(const Tensor<T>&, const Tensor<T>&, double);                         \
  template Tensor<T> sinkhorn<T>(const Tensor<T>&, double, std::size_t);                                            \
  template Tensor<T> softmax_batch<T>(const Tensor<T>&, double);                                                    \
  template LossResult<T> dino_loss<T>(const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&, double);        \
  template Tensor<T> update_center<T>(const Tensor<T>&, const Tensor<T>&, double);                                  \
  template void ema_update<T>(ParamSet<T>&, const ParamSet<T>&, double);                                            \
  template CollapseMetrics collapse_metrics<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template StepMetrics train_step<T>(std::span<const Image* const>, const ModelConfig&, ParamSet<T>&,               \
                                     DistillState<T>&, AdamW<T>&, const DistillConfig&, const views::ViewConfig&,   \
                                     const StepSchedule&, std::uint64_t);

DINO_INSTANTIATE(float)
DINO_INSTANTIATE(double)

}  // namespace dino::distill
