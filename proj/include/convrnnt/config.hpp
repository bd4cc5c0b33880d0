#pragma once

// Run configuration: a flat `key = value` text format where `[section]`
// headers prefix the following keys with `section.`. Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "convrnnt/features.hpp"
#include "convrnnt/transducer.hpp"

namespace convrnnt {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double peak_lr = 0.002;
  std::uint64_t warmup_steps = 10000;
};

struct TrainingConfig {
  std::size_t batch_size = 10;
  std::uint64_t max_steps = 2000;
  std::uint64_t eval_interval = 100;
  std::uint64_t seed = 1;
  // Stop once the eval-mode mean nll on the training set drops below this (0 = never).
  double target_nll = 0.0;
  // Also require this greedy exact-match rate before stopping early.
  double target_exact = 0.0;
  bool spec_augment = true;
  std::size_t max_symbols_per_frame = 10;
};

struct DataConfig {
  std::string train_manifest;
  std::string eval_manifest;
  std::string vocab;
  std::string stats;
};

struct RunConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  TrainingConfig training;
  DataConfig data;
  SpecAugConfig spec_augment;

  void validate() const;
};

// Parses text into ordered key → value pairs (dotted keys).
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

// Applies one key; throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
// "key=value" form used by --set.
void apply_override(RunConfig& cfg, const std::string& assignment);

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});
RunConfig run_config_from_text(const std::string& text);

// Every key with its current value, in canonical order.
std::string to_config_text(const RunConfig& cfg);

// FNV-1a over the canonical text of the model-architecture keys.
std::uint64_t model_config_hash(const ModelConfig& cfg);

// Full-size architecture used for parameter and FLOP reports.
ModelConfig full_model_config();
// Small architecture that trains on the toy corpus in minutes.
RunConfig desk_run_config();

}  // namespace convrnnt
