#pragma once

// Run configuration: flat key=value text with dotted namespaces.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dino/data.hpp"
#include "dino/distill.hpp"
#include "dino/model.hpp"
#include "dino/optim.hpp"
#include "dino/views.hpp"

namespace dino {

struct OptimConfig {
  double lr_base = 0.0005;  // per 256 samples
  double lr_final = 1e-6;
  double warmup_epochs = 10;
  double wd_start = 0.04;
  double wd_end = 0.4;
  AdamWConfig adam;
};

struct EvalConfig {
  std::uint64_t every = 0;  // steps between k-NN snapshots; 0 disables
  std::size_t k = 20;
  double tau = 0.07;
  std::size_t layers = 1;
  std::size_t train_limit = 0;  // 0 = whole bank
  std::size_t test_limit = 0;
};

struct RunConfig {
  ModelConfig model;
  distill::DistillConfig distill;
  views::ViewConfig views;
  OptimConfig optim;
  EvalConfig eval;

  // Empty paths mean the generated toy set described by `toy`.
  std::string train_path;
  std::string test_path;
  data::ToySpec toy;

  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t stop_at_step = 0;      // 0: run to the end of the schedule
  std::string out_dir = "run";

  void validate() const;
};

// Unknown keys, duplicates, and malformed values raise ConfigError naming the
// line. Missing keys keep their defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Every key in a fixed order; parse_config(to_text(c)) reproduces c exactly.
std::string config_to_text(const RunConfig& config);
std::vector<std::string> config_keys();

// Applies one "key=value" override on top of an existing config.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace dino
