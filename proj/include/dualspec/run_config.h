#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dualspec/dsp.h"
#include "dualspec/models.h"
#include "dualspec/train.h"

namespace dualspec::config {

struct DataConfig {
  std::string manifest;  // relative paths resolve against the config file

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

// Per-stage replacements for the shared schedule; unset fields inherit.
struct StageOverride {
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  std::optional<int> max_epochs;

  friend bool operator==(const StageOverride&, const StageOverride&) = default;
};

// Everything a run needs. JSON keys mirror the field names; missing keys keep
// their defaults, unknown keys are rejected.
struct RunConfig {
  dsp::FrameConfig frame;
  models::MagnitudeNetConfig fme;
  models::RefineNetConfig dsr;
  train::TrainSchedule train;  // `stage` is chosen on the command line, not stored
  StageOverride stage1, stage2;  // "train.stage1" / "train.stage2"
  DataConfig data;
  std::uint64_t seed = 1;
  std::string output_dir = "run";

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);  // also resolves relative paths
std::string to_json(const RunConfig& config, int indent = 2);

// Canonical JSON of the parts that decide tensor shapes and signal flow.
std::string model_json(const RunConfig& config);
std::uint64_t fingerprint(const RunConfig& config);
std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t hash = 1469598103934665603ULL);

// The shared schedule with the stage's overrides applied.
train::TrainSchedule schedule_for(const RunConfig& config, int stage);

void validate(const RunConfig& config);

}  // namespace dualspec::config
