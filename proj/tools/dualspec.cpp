// dualspec: train, run and inspect the two-stage speech enhancer.
#include <exception>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "dualspec/commands.h"
#include "dualspec/error.h"

using namespace dualspec;

int main(int argc, char** argv) {
  CLI::App app{"Two-stage causal speech enhancement (STFT magnitude, then STDCT refinement)"};
  app.require_subcommand(1);

  cli::TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train one stage from a JSON run config");
  train->add_option("--stage", train_args.stage, "1 (magnitude) or 2 (refinement)")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--config", train_args.config_path, "run config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_flag("--allow-config-mismatch", train_args.allow_config_mismatch,
                  "accept a stage-1 checkpoint built from a different model config");

  cli::EnhanceArgs enhance_args;
  auto* enhance = app.add_subcommand("enhance", "enhance WAV files with a trained checkpoint");
  enhance->add_option("--input", enhance_args.inputs, "input WAV (repeatable)")->required();
  enhance->add_option("--checkpoint", enhance_args.checkpoint, "full checkpoint")->required();
  enhance->add_option("--output", enhance_args.output,
                      "output file, or directory for several inputs");
  enhance->add_flag("--streaming", enhance_args.streaming, "run the causal streaming path");
  enhance->add_option("--chunk", enhance_args.chunk, "samples per streaming block")
      ->check(CLI::PositiveNumber);

  cli::EvalArgs eval_args;
  std::string oracle = "none";
  auto* eval = app.add_subcommand("eval", "SI-SDR / SNR table over a manifest split");
  eval->add_option("--manifest", eval_args.manifest, "dataset manifest")->required();
  eval->add_option("--checkpoint", eval_args.checkpoint, "full checkpoint");
  eval->add_option("--split", eval_args.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--oracle", oracle, "none, mask, double or clean")
      ->check(CLI::IsMember({"none", "mask", "double", "clean"}));
  eval->add_option("--output", eval_args.output, "also write the table here");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "layer shapes and parameter counts");
  inspect->add_option("path", inspect_path, "checkpoint or run config")->required();

  cli::SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus, manifest and config");
  synth->add_option("--out", synth_args.out_dir, "output directory")->required();
  synth->add_option("--train", synth_args.synth.train_items, "training items");
  synth->add_option("--val", synth_args.synth.val_items, "validation items");
  synth->add_option("--test", synth_args.synth.test_items, "test items");
  synth->add_option("--seed", synth_args.synth.seed, "corpus seed");
  synth->add_option("--min-seconds", synth_args.synth.min_seconds, "shortest clip");
  synth->add_option("--max-seconds", synth_args.synth.max_seconds, "longest clip");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  cli::Context ctx{&std::cout, &std::cerr, cli::log_level_from_env()};
  try {
    if (*train) {
      cli::cmd_train(train_args, ctx);
    } else if (*enhance) {
      cli::cmd_enhance(enhance_args, ctx);
    } else if (*eval) {
      eval_args.oracle = cli::parse_oracle(oracle);
      cli::cmd_eval(eval_args, ctx);
    } else if (*inspect) {
      cli::cmd_inspect(inspect_path, ctx);
    } else if (*synth) {
      cli::cmd_synth(synth_args, ctx);
    }
  } catch (const Error& e) {
    std::cerr << "dualspec: error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "dualspec: error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  } catch (const std::exception& e) {
    std::cerr << "dualspec: internal error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kNumeric);
  }
  return 0;
}
