#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dualspec/checkpoint.h"
#include "dualspec/data.h"
#include "dualspec/models.h"
#include "dualspec/run_config.h"

// The workflows behind the `dualspec` executable. Each command throws a
// dualspec::Error on failure; the executable maps its kind to an exit code.
namespace dualspec::cli {

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

// DUALSPEC_LOG = quiet | info | debug (default info).
LogLevel log_level_from_env();

struct Context {
  std::ostream* out = nullptr;  // command results
  std::ostream* log = nullptr;  // progress messages
  LogLevel level = LogLevel::kInfo;
};

std::uint64_t fme_seed(std::uint64_t seed);
std::uint64_t dsr_seed(std::uint64_t seed);

// Networks rebuilt from a checkpoint's embedded config.
struct LoadedModels {
  config::RunConfig config;
  checkpoint::Checkpoint checkpoint;
  std::unique_ptr<models::MagnitudeNet> fme;
  std::unique_ptr<models::RefineNet> dsr;  // null for stage-1 checkpoints
};

LoadedModels load_models(const std::string& checkpoint_path);

std::string stage1_checkpoint_path(const config::RunConfig& config);
std::string full_checkpoint_path(const config::RunConfig& config);
std::string metrics_log_path(const config::RunConfig& config, int stage);

struct TrainArgs {
  int stage = 1;
  std::string config_path;
  bool allow_config_mismatch = false;
};
void cmd_train(const TrainArgs& args, const Context& ctx);

struct EnhanceArgs {
  std::vector<std::string> inputs;
  std::string checkpoint;
  std::string output;  // file (single input) or directory; default next to the input
  bool streaming = false;
  dsp::Index chunk = 128;
};
// Returns the paths written.
std::vector<std::string> cmd_enhance(const EnhanceArgs& args, const Context& ctx);

enum class OracleMode { kNone, kMask, kDouble, kClean };
OracleMode parse_oracle(const std::string& name);

struct EvalArgs {
  std::string manifest;
  std::string checkpoint;
  std::string split = "test";
  OracleMode oracle = OracleMode::kNone;
  std::string output;  // optional TSV copy of the table
};

struct EvalRow {
  std::string name;
  double si_sdr_noisy = 0, si_sdr_enhanced = 0;
  double snr_noisy = 0, snr_enhanced = 0;
};
struct EvalTable {
  std::vector<EvalRow> rows;
  EvalRow mean;
};
EvalTable cmd_eval(const EvalArgs& args, const Context& ctx);
std::string format_eval_table(const EvalTable& table);

void cmd_inspect(const std::string& path, const Context& ctx);

struct SynthArgs {
  std::string out_dir;
  data::SynthConfig synth;
};
// Writes the corpus, its manifest and a starter config.json.
void cmd_synth(const SynthArgs& args, const Context& ctx);

}  // namespace dualspec::cli
