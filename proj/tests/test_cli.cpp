#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "dualspec/audio.h"
#include "dualspec/checkpoint.h"
#include "dualspec/commands.h"
#include "dualspec/run_config.h"
#include "support.h"

using namespace dualspec;
namespace fs = std::filesystem;

namespace {

// Runs the installed executable; returns its exit status and captured stdout+stderr.
std::pair<int, std::string> run(const std::string& args, const testing::ScratchDir& dir) {
  const std::string log = dir.file("cli.log");
  const std::string cmd =
      std::string("DUALSPEC_LOG=quiet ") + DUALSPEC_BIN + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream f(log);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Small networks on the default framing so a full CLI round trip takes seconds.
config::RunConfig tiny_config() {
  config::RunConfig c;
  c.fme.encoder_channels = {4, 8};
  c.fme.decoder_channels = {4, 1};
  c.fme.gru_hidden = {8};
  c.fme.fc_units = 65 * 8;
  c.dsr.encoder_channels = {4, 8};
  c.dsr.decoder_channels = {4, 1};
  c.dsr.block_hidden = {6};
  c.train.max_epochs = 1;
  c.train.batch_size = 2;
  c.data.manifest = "manifest.tsv";
  c.output_dir = "run";
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
}

checkpoint::Checkpoint tiny_checkpoint() {
  const auto cfg = tiny_config();
  models::MagnitudeNet net(cfg.fme, 3);
  checkpoint::Checkpoint c;
  c.fingerprint = config::fingerprint(cfg);
  c.epoch = 4;
  c.best_val_loss = 0.125;
  c.config_json = config::to_json(cfg);
  checkpoint::store_parameters(c, net.params(), "fme.");
  std::vector<nn::Array<float>> state;
  for (const auto& e : net.params().entries())
    state.push_back(nn::Array<float>::Constant(e.tensor.size(), 0.5f));
  checkpoint::store_optimizer(c, net.params(), "fme.", state);
  return c;
}

}  // namespace

TEST_CASE("run config JSON round trip and strictness") {
  auto c = tiny_config();
  c.seed = 42;
  c.train.seed = 42;  // parsing copies the run seed into the schedule
  c.stage1.learning_rate = 1e-3;
  c.stage2.max_epochs = 7;
  const auto back = config::parse_run_config(config::to_json(c));
  CHECK(back == c);
  CHECK(config::fingerprint(back) == config::fingerprint(c));

  CHECK(config::schedule_for(c, 1).learning_rate == 1e-3);
  CHECK(config::schedule_for(c, 1).max_epochs == 1);
  CHECK(config::schedule_for(c, 2).learning_rate == c.train.learning_rate);
  CHECK(config::schedule_for(c, 2).max_epochs == 7);
  CHECK(config::schedule_for(c, 2).stage == train::Stage::kRefine);

  // Training knobs do not change the fingerprint; model shapes do.
  auto d = c;
  d.train.learning_rate = 0.5;
  CHECK(config::fingerprint(d) == config::fingerprint(c));
  d.fme.gru_hidden = {9};
  CHECK(config::fingerprint(d) != config::fingerprint(c));

  CHECK_THROWS_WITH_AS(config::parse_run_config(R"({"trian": {}})"),
                       doctest::Contains("unknown key 'trian'"), ConfigError);
  CHECK_THROWS_AS(config::parse_run_config(R"({"train": {"stage1": {"lr": 1}}})"), ConfigError);
  CHECK_THROWS_AS(config::parse_run_config(R"({"train": {"batch_size": "four"}})"), ConfigError);
  CHECK_THROWS_AS(config::parse_run_config(R"({"frame": {"window": "hann"}})"), ConfigError);
  CHECK_THROWS_AS(config::parse_run_config(R"({"fme": {"input_bins": 129}})"), ConfigError);
  CHECK_THROWS_AS(config::parse_run_config("{"), ConfigError);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  testing::ScratchDir dir("ckpt");
  const auto c = tiny_checkpoint();
  const auto bytes = checkpoint::serialize(c);
  CHECK(checkpoint::bit_identical(checkpoint::deserialize(bytes), c));
  checkpoint::save(dir.file("a.ckpt"), c);
  const auto loaded = checkpoint::load(dir.file("a.ckpt"));
  CHECK(checkpoint::bit_identical(loaded, c));
  CHECK(checkpoint::serialize(loaded) == bytes);

  models::MagnitudeNet net(tiny_config().fme, 99);
  checkpoint::restore_parameters(loaded, net.params(), "fme.");
  models::MagnitudeNet ref(tiny_config().fme, 3);
  for (std::size_t i = 0; i < net.params().entries().size(); ++i)
    CHECK((net.params().entries()[i].tensor.value() == ref.params().entries()[i].tensor.value()).all());
  const auto state = checkpoint::restore_optimizer(loaded, net.params(), "fme.");
  REQUIRE_FALSE(state.empty());
  CHECK(state[0](0) == 0.5f);
}

TEST_CASE("damaged checkpoints are refused") {
  const auto bytes = checkpoint::serialize(tiny_checkpoint());
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_WITH_AS(checkpoint::deserialize(flipped), doctest::Contains("checksum"), IoError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  CHECK_THROWS_AS(checkpoint::deserialize(truncated), IoError);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(checkpoint::deserialize(magic), IoError);
  CHECK_THROWS_AS(checkpoint::load("/nonexistent/x.ckpt"), IoError);

  models::MagnitudeNet other({}, 1);
  CHECK_THROWS_AS(checkpoint::restore_parameters(tiny_checkpoint(), other.params(), "fme."),
                  ShapeError);
}

TEST_CASE("fingerprint mismatch needs an explicit override") {
  const auto c = tiny_checkpoint();
  CHECK_NOTHROW(checkpoint::check_fingerprint(c, c.fingerprint, false, "x"));
  CHECK_THROWS_AS(checkpoint::check_fingerprint(c, c.fingerprint + 1, false, "x"), UsageError);
  CHECK_NOTHROW(checkpoint::check_fingerprint(c, c.fingerprint + 1, true, "x"));
}

TEST_CASE("executable: exit codes") {
  testing::ScratchDir dir("exit");
  CHECK(run("", dir).first == 1);
  CHECK(run("frobnicate", dir).first == 1);
  CHECK(run("--help", dir).first == 0);
  CHECK(run("train --stage 3 --config x.json", dir).first == 1);

  write_text(dir.file("bad.json"), R"({"seed": 1, "colour": "blue"})");
  const auto [code, text] = run("train --stage 1 --config " + dir.file("bad.json"), dir);
  CHECK(code == 1);
  CHECK(text.find("colour") != std::string::npos);

  CHECK(run("inspect " + dir.file("missing.ckpt"), dir).first == 2);
  write_text(dir.file("m.tsv"), "train a.wav b.wav 5\n");
  CHECK(run("eval --oracle clean --manifest " + dir.file("m.tsv"), dir).first == 2);
  CHECK(run("eval --manifest " + dir.file("m.tsv"), dir).first == 1);  // no checkpoint
}

TEST_CASE("executable: synth, train, enhance, eval, inspect") {
  testing::ScratchDir dir("flow");
  const std::string root = dir.path().string();
  REQUIRE(run("synth --out " + root + " --train 2 --val 1 --test 1 --min-seconds 0.3 "
              "--max-seconds 0.4",
              dir)
              .first == 0);
  REQUIRE(fs::exists(dir.file("manifest.tsv")));
  CHECK(config::load_run_config(dir.file("config.json")).stage1.learning_rate == 1e-3);

  write_text(dir.file("tiny.json"), config::to_json(tiny_config()));
  const std::string cfg = dir.file("tiny.json");

  // Stage 2 first is a usage error that names the missing checkpoint.
  auto early = run("train --stage 2 --config " + cfg, dir);
  CHECK(early.first == 1);
  CHECK(early.second.find("stage-1") != std::string::npos);

  REQUIRE(run("train --stage 1 --config " + cfg, dir).first == 0);
  REQUIRE(fs::exists(dir.file("run/stage1.ckpt")));
  CHECK(fs::exists(dir.file("run/stage1_metrics.jsonl")));

  // A stage-2 run with different model shapes is refused unless overridden.
  auto changed = tiny_config();
  changed.dsr.block_hidden = {6, 6};
  changed.fme.gru_hidden = {9};
  write_text(dir.file("changed.json"), config::to_json(changed));
  CHECK(run("train --stage 2 --config " + dir.file("changed.json"), dir).first == 1);

  REQUIRE(run("train --stage 2 --config " + cfg, dir).first == 0);
  const std::string full = dir.file("run/full.ckpt");
  REQUIRE(fs::exists(full));

  // Offline and streaming enhancement agree.
  const auto test = data::load_split(data::read_manifest(dir.file("manifest.tsv")), "test");
  audio::write_wav(dir.file("noisy.wav"), test[0].noisy);
  REQUIRE(run("enhance --input " + dir.file("noisy.wav") + " --checkpoint " + full + " --output " +
                  dir.file("off.wav"),
              dir)
              .first == 0);
  REQUIRE(run("enhance --streaming --chunk 100 --input " + dir.file("noisy.wav") +
                  " --checkpoint " + full + " --output " + dir.file("on.wav"),
              dir)
              .first == 0);
  const auto off = audio::read_wav(dir.file("off.wav")), on = audio::read_wav(dir.file("on.wav"));
  REQUIRE(off.size() == test[0].noisy.size());
  REQUIRE(on.size() == off.size());
  CHECK((on.samples - off.samples).cwiseAbs().maxCoeff() <= 1e-5);
  CHECK(run("enhance --input " + dir.file("noisy.wav") + " --checkpoint " +
                dir.file("run/stage1.ckpt"),
            dir)
            .first == 1);

  // Scoring the clean signal against itself hits the cap.
  const auto eval = run("eval --oracle clean --manifest " + dir.file("manifest.tsv") +
                            " --output " + dir.file("table.tsv"),
                        dir);
  REQUIRE(eval.first == 0);
  CHECK(slurp(dir.file("table.tsv")).find("\t100.0000\t") != std::string::npos);
  CHECK(run("eval --manifest " + dir.file("manifest.tsv") + " --checkpoint " + full, dir).first == 0);

  const auto inspect = run("inspect " + full, dir);
  REQUIRE(inspect.first == 0);
  CHECK(inspect.second.find("stage full") != std::string::npos);
  CHECK(inspect.second.find("total learnable parameters") != std::string::npos);
  const auto inspect_cfg = run("inspect " + cfg, dir);
  CHECK(inspect_cfg.first == 0);
  CHECK(inspect_cfg.second.find("257 -> 129 -> 65") != std::string::npos);
}

TEST_CASE("oracle names") {
  CHECK(cli::parse_oracle("double") == cli::OracleMode::kDouble);
  CHECK_THROWS_AS(cli::parse_oracle("triple"), UsageError);
}
