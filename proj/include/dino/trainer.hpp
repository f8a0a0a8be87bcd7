#pragma once

// Training driver: schedules, the step loop, JSON-lines logs, k-NN snapshots
// and checkpoints.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dino/checkpoint.hpp"
#include "dino/config.hpp"
#include "dino/data.hpp"
#include "dino/distill.hpp"
#include "dino/schedule.hpp"

namespace dino {

struct RunSchedules {
  std::uint64_t steps_per_epoch = 0;
  std::uint64_t total_steps = 0;
  ScheduleSpec lr;
  ScheduleSpec weight_decay;
  ScheduleSpec momentum;
  ScheduleSpec teacher_temp;

  distill::StepSchedule at(std::uint64_t step) const;
};

// total_steps = epochs * ceil(n / batch_size). Every schedule spans
// [0, total_steps]; the last executed step is total_steps - 1.
RunSchedules make_schedules(const RunConfig& config, std::size_t dataset_size);

struct EvalSnapshot {
  std::uint64_t step = 0;  // optimizer steps completed
  double epoch = 0;
  double teacher_knn = 0;
  double student_knn = 0;
};

struct TrainOptions {
  // Resume from this checkpoint instead of initializing.
  std::string resume;
  // Write metrics.jsonl, eval.jsonl and checkpoints under config.out_dir.
  bool write_files = true;
  std::function<void(const distill::StepMetrics&)> on_step;
  std::function<void(const EvalSnapshot&)> on_eval;
};

template <typename T>
struct TrainResult {
  Checkpoint<T> final;
  std::vector<distill::StepMetrics> metrics;  // steps executed by this call
  std::vector<EvalSnapshot> evals;
};

struct Datasets {
  data::Dataset train;
  data::Dataset test;
};
// The configured files, or the generated toy splits.
Datasets load_datasets(const RunConfig& config);

template <typename T>
TrainResult<T> run_training(const RunConfig& config, const Datasets& datasets, const TrainOptions& options = {});

// One metrics.jsonl record.
std::string metrics_json(const distill::StepMetrics& m);
std::string eval_json(const EvalSnapshot& e);

// Variants of the collapse study. no_sharpen sets the teacher temperature
// (start and end) to the student's; no_center disables centering; both keeps
// the configured mechanisms.
enum class CollapseMode { no_center, no_sharpen, both };
CollapseMode parse_collapse_mode(const std::string& name);
std::string collapse_mode_name(CollapseMode mode);
void apply_collapse_mode(RunConfig& config, CollapseMode mode);

// First `count` samples (all when count is 0 or too large).
data::Dataset take(const data::Dataset& dataset, std::size_t count);

}  // namespace dino
