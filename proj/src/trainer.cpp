#include "dino/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dino/errors.hpp"
#include "dino/eval.hpp"

namespace dino {

namespace fs = std::filesystem;
using json = nlohmann::json;

distill::StepSchedule RunSchedules::at(std::uint64_t step) const {
  distill::StepSchedule s;
  s.lr = schedule_value(lr, step);
  s.weight_decay = schedule_value(weight_decay, step);
  s.momentum = schedule_value(momentum, step);
  s.teacher_temp = schedule_value(teacher_temp, step);
  s.epoch = static_cast<double>(step) / static_cast<double>(steps_per_epoch);
  return s;
}

RunSchedules make_schedules(const RunConfig& c, std::size_t n) {
  if (n == 0) throw ConfigError("empty training set");
  RunSchedules s;
  s.steps_per_epoch = (n + c.batch_size - 1) / c.batch_size;
  s.total_steps = c.epochs * s.steps_per_epoch;
  const auto epochs_to_steps = [&](double e) {
    const double v = std::round(e * static_cast<double>(s.steps_per_epoch));
    return std::min<std::uint64_t>(static_cast<std::uint64_t>(std::max(v, 0.0)), s.total_steps);
  };
  s.lr = {ScheduleKind::cosine, scaled_lr(c.optim.lr_base, c.batch_size), c.optim.lr_final, 0.0,
          epochs_to_steps(c.optim.warmup_epochs), s.total_steps};
  s.weight_decay = {ScheduleKind::cosine, c.optim.wd_start, c.optim.wd_end, c.optim.wd_start, 0, s.total_steps};
  s.momentum = {ScheduleKind::cosine, c.distill.momentum_start, c.distill.momentum_end, c.distill.momentum_start, 0,
                s.total_steps};
  s.teacher_temp = {ScheduleKind::constant, c.distill.teacher_temp, c.distill.teacher_temp,
                    c.distill.teacher_temp_start, epochs_to_steps(c.distill.teacher_temp_warmup_epochs), s.total_steps};
  return s;
}

Datasets load_datasets(const RunConfig& c) {
  Datasets d;
  if (c.train_path.empty()) {
    d.train = data::gen_toy(c.toy, data::Split::train);
    d.test = data::gen_toy(c.toy, data::Split::test);
  } else {
    d.train = data::load_dataset(c.train_path);
    d.test = data::load_dataset(c.test_path);
  }
  return d;
}

data::Dataset take(const data::Dataset& d, std::size_t count) {
  if (count == 0 || count >= d.size()) return d;
  data::Dataset out = d;
  out.pixels.resize(count * d.image_elements());
  out.labels.resize(count);
  if (out.masks.size() > count) out.masks.resize(count);
  return out;
}

std::string metrics_json(const distill::StepMetrics& m) {
  json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  j["h"] = m.h;
  j["kl"] = m.kl;
  j["ce"] = m.ce;
  j["lambda"] = m.lambda;
  j["tau_t"] = m.tau_t;
  j["lr"] = m.lr;
  j["wd"] = m.wd;
  return j.dump();
}

std::string eval_json(const EvalSnapshot& e) {
  json j;
  j["step"] = e.step;
  j["epoch"] = e.epoch;
  j["teacher_knn"] = e.teacher_knn;
  j["student_knn"] = e.student_knn;
  return j.dump();
}

CollapseMode parse_collapse_mode(const std::string& name) {
  if (name == "no-center") return CollapseMode::no_center;
  if (name == "no-sharpen") return CollapseMode::no_sharpen;
  if (name == "both") return CollapseMode::both;
  throw ConfigError("unknown collapse mode '" + name + "' (no-center, no-sharpen, both)");
}

std::string collapse_mode_name(CollapseMode mode) {
  switch (mode) {
    case CollapseMode::no_center: return "no-center";
    case CollapseMode::no_sharpen: return "no-sharpen";
    case CollapseMode::both: return "both";
  }
  return "?";
}

void apply_collapse_mode(RunConfig& c, CollapseMode mode) {
  c.distill.teacher_norm = distill::TeacherNorm::centering;
  if (mode == CollapseMode::no_center) c.distill.centering = false;
  if (mode == CollapseMode::no_sharpen) {
    c.distill.teacher_temp_start = c.distill.student_temp;
    c.distill.teacher_temp = c.distill.student_temp;
  }
}

namespace {

bool finite(const distill::StepMetrics& m) {
  for (double v : {m.loss, m.h, m.kl, m.ce}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// Keeps records whose "step" is below `step`; used when resuming over an
// existing log.
void truncate_log(const fs::path& path, std::uint64_t step) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.contains("step") && j["step"].get<std::uint64_t>() < step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

// Settings that may differ between the halves of a resumed run.
std::string resumable_identity(RunConfig c) {
  c.stop_at_step = 0;
  c.out_dir.clear();
  c.checkpoint_every = 0;
  c.eval = EvalConfig{};
  return config_to_text(c);
}

}  // namespace

template <typename T>
TrainResult<T> run_training(const RunConfig& config, const Datasets& datasets, const TrainOptions& options) {
  config.validate();
  const data::Dataset& train = datasets.train;
  train.validate();
  if (train.channels != config.model.vit.channels) throw ConfigError("dataset channels differ from model.channels");
  const RunSchedules sched = make_schedules(config, train.size());
  const std::uint64_t stop =
      config.stop_at_step == 0 ? sched.total_steps : std::min<std::uint64_t>(config.stop_at_step, sched.total_steps);

  ParamSet<T> student;
  distill::DistillState<T> state;
  AdamW<T> optimizer;
  if (options.resume.empty()) {
    student = init_model<T>(config.model, config.seed);
    student.set_requires_grad(true);
    state = distill::DistillState<T>::init(student, config.model.head.out_dim);
    optimizer = AdamW<T>(student, config.optim.adam);
  } else {
    Checkpoint<T> ck = load_checkpoint<T>(options.resume);
    if (resumable_identity(parse_config(ck.config_text)) != resumable_identity(config)) {
      throw ConfigError("checkpoint " + options.resume + " was written by a different configuration");
    }
    student = std::move(ck.student);
    student.set_requires_grad(true);
    state.teacher = std::move(ck.teacher);
    state.center = std::move(ck.center);
    state.step = ck.step;
    state.epoch = ck.epoch;
    optimizer = AdamW<T>(student, config.optim.adam);
    optimizer.first_moment() = std::move(ck.adam_m);
    optimizer.second_moment() = std::move(ck.adam_v);
    optimizer.set_steps(ck.optimizer_steps);
  }

  const fs::path out_dir = config.out_dir;
  std::ofstream metrics_out, eval_out;
  if (options.write_files) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "config.txt", std::ios::trunc) << config_to_text(config);
    if (state.step == 0) {
      metrics_out.open(out_dir / "metrics.jsonl", std::ios::trunc);
      eval_out.open(out_dir / "eval.jsonl", std::ios::trunc);
    } else {
      truncate_log(out_dir / "metrics.jsonl", state.step);
      truncate_log(out_dir / "eval.jsonl", state.step + 1);
      metrics_out.open(out_dir / "metrics.jsonl", std::ios::app);
      eval_out.open(out_dir / "eval.jsonl", std::ios::app);
    }
  }

  // The stop step only controls this invocation and the directory is only
  // where it writes; neither belongs to the run's state.
  RunConfig stored = config;
  stored.stop_at_step = 0;
  stored.out_dir.clear();
  const std::string checkpoint_text = config_to_text(stored);
  const auto snapshot = [&]() {
    Checkpoint<T> ck;
    ck.config_text = checkpoint_text;
    ck.step = state.step;
    ck.epoch = state.epoch;
    ck.optimizer_steps = optimizer.steps();
    ck.student = student.clone();
    ck.teacher = state.teacher.clone();
    ck.center = state.center.detach();
    ck.adam_m = optimizer.first_moment().clone();
    ck.adam_v = optimizer.second_moment().clone();
    return ck;
  };

  data::Dataset eval_train, eval_test;
  if (config.eval.every > 0) {
    eval_train = take(train, config.eval.train_limit);
    eval_test = take(datasets.test, config.eval.test_limit);
  }
  const auto evaluate = [&]() {
    EvalSnapshot e;
    e.step = state.step;
    e.epoch = static_cast<double>(state.step) / static_cast<double>(sched.steps_per_epoch);
    const auto knn = [&](const ParamSet<T>& params) {
      const auto bank = eval::extract_features<T>(config.model, params, eval_train, config.eval.layers);
      const auto query = eval::extract_features<T>(config.model, params, eval_test, config.eval.layers);
      return eval::knn_eval(bank, query, config.eval.k, config.eval.tau);
    };
    e.teacher_knn = knn(state.teacher);
    e.student_knn = knn(student);
    return e;
  };

  TrainResult<T> result;
  const std::vector<Image> images = train.images();
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::vector<std::size_t>> epoch_batches;
  while (state.step < stop) {
    const std::uint64_t epoch = state.step / sched.steps_per_epoch;
    if (epoch != cached_epoch) {
      epoch_batches = data::batches(train.size(), config.batch_size, config.seed, epoch);
      cached_epoch = epoch;
    }
    std::vector<const Image*> batch;
    for (std::size_t i : epoch_batches[state.step % sched.steps_per_epoch]) batch.push_back(&images[i]);
    state.epoch = epoch;
    const distill::StepMetrics m = distill::train_step<T>(batch, config.model, student, state, optimizer,
                                                          config.distill, config.views, sched.at(state.step),
                                                          config.seed);
    if (!finite(m)) {
      const std::string dump = metrics_json(m);
      if (options.write_files) std::ofstream(out_dir / "abort.json", std::ios::trunc) << dump << '\n';
      throw NumericError("non-finite training metrics at step " + std::to_string(m.step) + ": " + dump);
    }
    result.metrics.push_back(m);
    if (metrics_out) metrics_out << metrics_json(m) << '\n';
    if (options.on_step) options.on_step(m);

    const bool last = state.step == sched.total_steps;
    if (config.eval.every > 0 && (state.step % config.eval.every == 0 || last)) {
      const EvalSnapshot e = evaluate();
      result.evals.push_back(e);
      if (eval_out) eval_out << eval_json(e) << std::endl;
      if (options.on_eval) options.on_eval(e);
    }
    if (options.write_files && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 &&
        state.step != stop) {
      save_checkpoint(snapshot(), out_dir / ("step-" + std::to_string(state.step) + ".dck"));
    }
  }
  if (state.step == sched.total_steps) state.epoch = config.epochs;
  result.final = snapshot();
  if (options.write_files) {
    metrics_out.flush();
    save_checkpoint(result.final, out_dir / (state.step == sched.total_steps ? std::string("final.dck")
                                                                              : "step-" + std::to_string(state.step) + ".dck"));
  }
  return result;
}

template TrainResult<float> run_training<float>(const RunConfig&, const Datasets&, const TrainOptions&);
template TrainResult<double> run_training<double>(const RunConfig&, const Datasets&, const TrainOptions&);

}  // namespace dino
