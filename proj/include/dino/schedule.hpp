#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace dino {

enum class ScheduleKind { constant, linear, cosine };

std::string schedule_kind_name(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

// Linear warmup from `start` to `base` over `warmup_steps`, then `kind`
// interpolation from base (progress 0) to final (progress 1 at total_steps).
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::cosine;
  double base = 0;
  double final = 0;
  double start = 0;
  std::uint64_t warmup_steps = 0;
  std::uint64_t total_steps = 0;

  void validate() const;
};

// Throws ParameterError for step > total_steps.
double schedule_value(const ScheduleSpec& spec, std::uint64_t step);

// lr = base_per_256 * batch / 256
double scaled_lr(double base_per_256, std::size_t batch_size);

}  // namespace dino
