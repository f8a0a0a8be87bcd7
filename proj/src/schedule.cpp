#include "dino/schedule.hpp"

#include <cmath>
#include <numbers>

#include "dino/errors.hpp"

namespace dino {

std::string schedule_kind_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::cosine: return "cosine";
  }
  return "?";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "constant") return ScheduleKind::constant;
  if (name == "linear") return ScheduleKind::linear;
  if (name == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule kind '" + name + "'");
}

void ScheduleSpec::validate() const {
  if (warmup_steps > total_steps) throw ConfigError("schedule warmup exceeds total steps");
  if (!std::isfinite(base) || !std::isfinite(final) || !std::isfinite(start)) {
    throw ConfigError("schedule values must be finite");
  }
}

double schedule_value(const ScheduleSpec& spec, std::uint64_t step) {
  spec.validate();
  if (step > spec.total_steps) {
    throw ParameterError("schedule step " + std::to_string(step) + " beyond total " + std::to_string(spec.total_steps));
  }
  if (step < spec.warmup_steps) {
    return spec.start + (spec.base - spec.start) * static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
  }
  const std::uint64_t span = spec.total_steps - spec.warmup_steps;
  if (spec.kind == ScheduleKind::constant || span == 0) return spec.base;
  const double t = static_cast<double>(step - spec.warmup_steps) / static_cast<double>(span);
  if (spec.kind == ScheduleKind::linear) return spec.base + (spec.final - spec.base) * t;
  return spec.final + (spec.base - spec.final) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

double scaled_lr(double base_per_256, std::size_t batch_size) {
  if (batch_size == 0) throw ParameterError("batch size must be >= 1");
  return base_per_256 * static_cast<double>(batch_size) / 256.0;
}

}  // namespace dino
