#include "dualspec/commands.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dualspec/audio.h"
#include "dualspec/error.h"
#include "dualspec/pipeline.h"
#include "dualspec/streaming.h"
#include "dualspec/train.h"

namespace dualspec::cli {

namespace fs = std::filesystem;
using dsp::Index;

namespace {

constexpr double kReferenceParamsM = 4.43;

void info(const Context& ctx, const std::string& msg) {
  if (ctx.log != nullptr && ctx.level >= LogLevel::kInfo) *ctx.log << msg << '\n';
}

std::vector<train::Example> to_examples(const std::vector<data::LoadedItem>& items) {
  std::vector<train::Example> out;
  for (const auto& it : items) out.push_back({it.noisy, it.clean});
  return out;
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

class MetricsLog {
 public:
  MetricsLog(const std::string& path, int stage) : path_(path), stage_(stage) {
    out_.open(path_ + ".tmp", std::ios::trunc);
    if (!out_) throw IoError(path_ + ": cannot open metrics log");
  }
  void write(const train::EpochRecord& r) {
    nlohmann::json j = {{"stage", stage_},
                        {"epoch", r.epoch},
                        {"train_loss", r.train_loss},
                        {"val_loss", r.val_loss},
                        {"lr", r.learning_rate}};
    out_ << j.dump() << '\n';
    out_.flush();
  }
  void commit() {
    out_.close();
    fs::rename(path_ + ".tmp", path_);
  }

 private:
  std::string path_;
  int stage_;
  std::ofstream out_;
};

std::string epoch_line(int stage, const train::EpochRecord& r) {
  std::ostringstream s;
  s << "stage " << stage << " epoch " << r.epoch << "  train " << fmt(r.train_loss) << "  val "
    << fmt(r.val_loss) << "  lr " << fmt(r.learning_rate, 3);
  return s.str();
}

std::vector<data::LoadedItem> load_training_split(const config::RunConfig& cfg,
                                                  const std::string& split) {
  if (cfg.data.manifest.empty())
    throw UsageError("config has no data.manifest; create one with `dualspec synth --out DIR`");
  const auto manifest = data::read_manifest(cfg.data.manifest);
  return data::load_split(manifest, split);
}

}  // namespace

LogLevel log_level_from_env() {
  const char* v = std::getenv("DUALSPEC_LOG");
  if (v == nullptr) return LogLevel::kInfo;
  const std::string s(v);
  if (s == "quiet" || s == "0") return LogLevel::kQuiet;
  if (s == "debug" || s == "2") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

std::uint64_t fme_seed(std::uint64_t seed) { return seed * 2 + 1; }
std::uint64_t dsr_seed(std::uint64_t seed) { return seed * 2 + 2; }

std::string stage1_checkpoint_path(const config::RunConfig& c) {
  return (fs::path(c.output_dir) / "stage1.ckpt").string();
}
std::string full_checkpoint_path(const config::RunConfig& c) {
  return (fs::path(c.output_dir) / "full.ckpt").string();
}
std::string metrics_log_path(const config::RunConfig& c, int stage) {
  return (fs::path(c.output_dir) / ("stage" + std::to_string(stage) + "_metrics.jsonl")).string();
}

LoadedModels load_models(const std::string& path) {
  LoadedModels m;
  m.checkpoint = checkpoint::load(path);
  m.config = config::parse_run_config(m.checkpoint.config_json);
  checkpoint::check_fingerprint(m.checkpoint, config::fingerprint(m.config), false, path);
  m.fme = std::make_unique<models::MagnitudeNet>(m.config.fme, fme_seed(m.config.seed));
  checkpoint::restore_parameters(m.checkpoint, m.fme->params(), "fme.");
  if (m.checkpoint.stage != checkpoint::StageTag::kFme) {
    m.dsr = std::make_unique<models::RefineNet>(m.config.dsr, dsr_seed(m.config.seed));
    checkpoint::restore_parameters(m.checkpoint, m.dsr->params(), "dsr.");
  }
  return m;
}

void cmd_train(const TrainArgs& args, const Context& ctx) {
  if (args.stage != 1 && args.stage != 2) throw UsageError("--stage must be 1 or 2");
  config::RunConfig cfg = config::load_run_config(args.config_path);
  fs::create_directories(cfg.output_dir);
  const std::uint64_t fp = config::fingerprint(cfg);
  train::TrainSchedule schedule = config::schedule_for(cfg, args.stage);

  const std::string stage1_path = stage1_checkpoint_path(cfg);
  checkpoint::Checkpoint stage1_ckpt;
  if (args.stage == 2) {
    if (!fs::exists(stage1_path))
      throw UsageError("stage 2 needs the stage-1 checkpoint " + stage1_path +
                       "; run `dualspec train --stage 1 --config " + args.config_path +
                       "` first");
    stage1_ckpt = checkpoint::load(stage1_path);
    checkpoint::check_fingerprint(stage1_ckpt, fp, args.allow_config_mismatch, stage1_path);
  }

  const auto train_items = to_examples(load_training_split(cfg, "train"));
  const auto val_items = to_examples(load_training_split(cfg, "val"));
  if (train_items.empty()) throw UsageError("manifest has no train records");
  info(ctx, "training stage " + std::to_string(args.stage) + " on " +
                std::to_string(train_items.size()) + " clips (" +
                std::to_string(val_items.size()) + " validation)");

  MetricsLog log(metrics_log_path(cfg, args.stage), args.stage);
  auto on_epoch = [&](const train::EpochRecord& r) {
    log.write(r);
    info(ctx, epoch_line(args.stage, r));
  };

  models::MagnitudeNet fme(cfg.fme, fme_seed(cfg.seed));
  checkpoint::Checkpoint out;
  out.fingerprint = fp;
  out.config_json = config::to_json(cfg);
  train::TrainResult result;
  if (args.stage == 1) {
    result = train::train_stage1(fme, train_items, val_items, schedule, cfg.frame, on_epoch);
    out.stage = checkpoint::StageTag::kFme;
    checkpoint::store_parameters(out, fme.params(), "fme.");
    checkpoint::store_optimizer(out, fme.params(), "fme.", result.optimizer_state);
  } else {
    checkpoint::restore_parameters(stage1_ckpt, fme.params(), "fme.");
    const auto serialized = checkpoint::serialize(stage1_ckpt);
    out.parent_fingerprint = config::fnv1a(serialized.data(), serialized.size());
    models::RefineNet dsr(cfg.dsr, dsr_seed(cfg.seed));
    result = train::train_stage2(fme, dsr, train_items, val_items, schedule, cfg.frame, on_epoch);
    out.stage = checkpoint::StageTag::kFull;
    checkpoint::store_parameters(out, fme.params(), "fme.");
    checkpoint::store_parameters(out, dsr.params(), "dsr.");
    checkpoint::store_optimizer(out, dsr.params(), "dsr.", result.optimizer_state);
  }
  out.epoch = result.best_epoch;
  out.best_val_loss = result.best_val_loss;
  const std::string path = args.stage == 1 ? stage1_path : full_checkpoint_path(cfg);
  checkpoint::save(path, out);
  log.commit();
  if (ctx.out != nullptr)
    *ctx.out << "wrote " << path << " (best epoch " << result.best_epoch << ", val loss "
             << fmt(result.best_val_loss) << ")\n";
}

std::vector<std::string> cmd_enhance(const EnhanceArgs& args, const Context& ctx) {
  if (args.inputs.empty()) throw UsageError("enhance needs at least one --input");
  if (args.checkpoint.empty()) throw UsageError("enhance needs --checkpoint");
  if (args.streaming && args.chunk < 1) throw UsageError("--chunk must be >= 1");
  LoadedModels m = load_models(args.checkpoint);
  if (!m.dsr)
    throw UsageError(args.checkpoint + " holds only stage 1; run `dualspec train --stage 2` first");

  const bool to_dir = args.inputs.size() > 1 || (!args.output.empty() && fs::is_directory(args.output));
  std::vector<std::string> written;
  for (const auto& input : args.inputs) {
    audio::WavInfo info_in;
    const dsp::Waveform x = audio::read_wav(input, audio::kDefaultSampleRate, &info_in);
    dsp::Waveform y;
    if (args.streaming) {
      pipeline::StreamingEnhancer enh(m.config.frame, *m.fme, *m.dsr);
      y.samples.resize(x.size());
      Index written_samples = 0;
      auto append = [&](const Eigen::VectorXd& block) {
        y.samples.segment(written_samples, block.size()) = block;
        written_samples += block.size();
      };
      for (Index pos = 0; pos < x.size(); pos += args.chunk)
        append(enh.push(x.samples.segment(pos, std::min(args.chunk, x.size() - pos))));
      append(enh.finish());
      y.sample_rate = x.sample_rate;
    } else {
      y = pipeline::full_forward(x, m.config.frame, pipeline::network_magnitude_fn(*m.fme),
                                 pipeline::network_mask_fn(*m.dsr));
    }
    std::string out_path;
    const fs::path in(input);
    const std::string stem = in.stem().string() + "_enhanced.wav";
    if (to_dir) {
      const fs::path dir = args.output.empty() ? in.parent_path() : fs::path(args.output);
      fs::create_directories(dir);
      out_path = (dir / stem).string();
    } else {
      out_path = args.output.empty() ? (in.parent_path() / stem).string() : args.output;
    }
    audio::write_wav(out_path, y, info_in.format);
    info(ctx, input + " -> " + out_path + (args.streaming ? " (streaming)" : ""));
    written.push_back(out_path);
  }
  return written;
}

OracleMode parse_oracle(const std::string& name) {
  if (name == "none") return OracleMode::kNone;
  if (name == "mask") return OracleMode::kMask;
  if (name == "double") return OracleMode::kDouble;
  if (name == "clean") return OracleMode::kClean;
  throw UsageError("--oracle must be none, mask, double or clean");
}

EvalTable cmd_eval(const EvalArgs& args, const Context& ctx) {
  if (args.manifest.empty()) throw UsageError("eval needs --manifest");
  std::unique_ptr<LoadedModels> models;
  if (args.oracle == OracleMode::kNone) {
    if (args.checkpoint.empty()) throw UsageError("eval needs --checkpoint unless --oracle is set");
    models = std::make_unique<LoadedModels>(load_models(args.checkpoint));
    if (!models->dsr) throw UsageError(args.checkpoint + " holds only stage 1");
  }
  const dsp::FrameConfig frame = models ? models->config.frame : dsp::FrameConfig{};
  const auto manifest = data::read_manifest(args.manifest);
  const auto items = data::load_split(manifest, args.split);
  if (items.empty()) throw UsageError("manifest has no '" + args.split + "' records");

  EvalTable table;
  for (const auto& it : items) {
    dsp::Waveform est;
    switch (args.oracle) {
      case OracleMode::kNone:
        est = pipeline::full_forward(it.noisy, frame, pipeline::network_magnitude_fn(*models->fme),
                                     pipeline::network_mask_fn(*models->dsr));
        break;
      case OracleMode::kMask:
        est = pipeline::full_forward(it.noisy, frame, pipeline::passthrough_magnitude_fn(),
                                     pipeline::oracle_mask_fn(it.clean, frame));
        break;
      case OracleMode::kDouble:
        est = pipeline::full_forward(it.noisy, frame, pipeline::oracle_magnitude_fn(it.clean, frame),
                                     pipeline::oracle_mask_fn(it.clean, frame));
        break;
      case OracleMode::kClean:
        est = it.clean;
        break;
    }
    EvalRow row;
    row.name = it.record.clean_path;
    row.si_sdr_noisy = data::si_sdr(it.noisy.samples, it.clean.samples);
    row.si_sdr_enhanced = data::si_sdr(est.samples, it.clean.samples);
    row.snr_noisy = data::snr(it.noisy.samples, it.clean.samples);
    row.snr_enhanced = data::snr(est.samples, it.clean.samples);
    table.rows.push_back(row);
  }
  table.mean.name = "mean";
  const double n = double(table.rows.size());
  for (const auto& r : table.rows) {
    table.mean.si_sdr_noisy += r.si_sdr_noisy / n;
    table.mean.si_sdr_enhanced += r.si_sdr_enhanced / n;
    table.mean.snr_noisy += r.snr_noisy / n;
    table.mean.snr_enhanced += r.snr_enhanced / n;
  }
  const std::string text = format_eval_table(table);
  if (ctx.out != nullptr) *ctx.out << text;
  if (!args.output.empty()) {
    std::ofstream f(args.output + ".tmp", std::ios::trunc);
    if (!f) throw IoError(args.output + ": cannot open for writing");
    f << text;
    f.close();
    fs::rename(args.output + ".tmp", args.output);
  }
  return table;
}

std::string format_eval_table(const EvalTable& table) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << "file\tsi_sdr_noisy\tsi_sdr_enhanced\tsi_sdr_improvement\tsnr_noisy\tsnr_enhanced\t"
       "snr_improvement\n";
  auto line = [&](const EvalRow& r) {
    s << r.name << '\t' << r.si_sdr_noisy << '\t' << r.si_sdr_enhanced << '\t'
      << r.si_sdr_enhanced - r.si_sdr_noisy << '\t' << r.snr_noisy << '\t' << r.snr_enhanced
      << '\t' << r.snr_enhanced - r.snr_noisy << '\n';
  };
  for (const auto& r : table.rows) line(r);
  line(table.mean);
  return s.str();
}

namespace {

void print_report(std::ostream& out, const std::string& title, const models::ParameterReport& r) {
  out << title << "\n";
  for (const auto& layer : r.layers) {
    out << "  " << std::left << std::setw(40) << layer.layer << std::right << std::setw(10)
        << layer.count << "\n";
    for (const auto& t : layer.tensors) out << "      " << t << "\n";
  }
  out << "  " << std::left << std::setw(40) << "subtotal" << std::right << std::setw(10)
      << r.total << "\n";
}

std::string ladder_string(const std::vector<Index>& ladder) {
  std::string s;
  for (std::size_t i = 0; i < ladder.size(); ++i) s += (i ? " -> " : "") + std::to_string(ladder[i]);
  return s;
}

bool looks_like_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  char magic[8] = {};
  f.read(magic, 8);
  return f.gcount() == 8 && std::string(magic, 7) == "DSPCKPT";
}

}  // namespace

void cmd_inspect(const std::string& path, const Context& ctx) {
  if (!fs::exists(path)) throw IoError(path + ": no such file");
  std::ostream& out = *ctx.out;
  std::unique_ptr<models::MagnitudeNet> fme;
  std::unique_ptr<models::RefineNet> dsr;
  config::RunConfig cfg;
  if (looks_like_checkpoint(path)) {
    LoadedModels m = load_models(path);
    out << "checkpoint " << path << "\n  stage " << checkpoint::stage_name(m.checkpoint.stage)
        << ", format v" << m.checkpoint.version << ", best epoch " << m.checkpoint.epoch
        << ", best val loss " << fmt(m.checkpoint.best_val_loss) << "\n  config fingerprint "
        << hex(m.checkpoint.fingerprint);
    if (m.checkpoint.parent_fingerprint != 0)
      out << ", stage-1 parent " << hex(m.checkpoint.parent_fingerprint);
    out << "\n\n";
    cfg = m.config;
    fme = std::move(m.fme);
    dsr = m.dsr ? std::move(m.dsr) : std::make_unique<models::RefineNet>(cfg.dsr, dsr_seed(cfg.seed));
  } else {
    cfg = config::load_run_config(path);
    out << "config " << path << " (fingerprint " << hex(config::fingerprint(cfg)) << ")\n\n";
    fme = std::make_unique<models::MagnitudeNet>(cfg.fme, fme_seed(cfg.seed));
    dsr = std::make_unique<models::RefineNet>(cfg.dsr, dsr_seed(cfg.seed));
  }

  const auto fme_report = models::count_parameters(fme->params());
  const auto dsr_report = models::count_parameters(dsr->params());
  print_report(out, "stage 1 (magnitude network)", fme_report);
  out << "\n";
  print_report(out, "stage 2 (refinement network)", dsr_report);

  const auto fme_ladder =
      models::frequency_ladder(cfg.fme.input_bins, cfg.fme.kernel_freq, cfg.fme.stride_freq,
                               cfg.fme.encoder_channels.size());
  const auto dsr_ladder =
      models::frequency_ladder(cfg.dsr.input_bins, cfg.dsr.kernel_freq, cfg.dsr.stride_freq,
                               cfg.dsr.encoder_channels.size());
  const Index total = fme_report.total + dsr_report.total;
  const double rel = (double(total) / (kReferenceParamsM * 1e6) - 1.0) * 100.0;
  out << "\nfrequency ladder, stage 1: " << ladder_string(fme_ladder) << "\n";
  out << "  bottleneck " << fme_ladder.back() << " bins x " << cfg.fme.encoder_channels.back()
      << " channels = " << fme_ladder.back() * cfg.fme.encoder_channels.back()
      << " features; fc " << cfg.fme.fc_units << " units\n";
  out << "frequency ladder, stage 2: " << ladder_string(dsr_ladder) << "\n";
  out << "\ntotal learnable parameters " << total << " (" << std::fixed << std::setprecision(3)
      << double(total) / 1e6 << " M; reference 4.43 M, " << std::showpos << std::setprecision(1)
      << rel << std::noshowpos << "%)\n";
  out << "  batch-norm running statistics are buffers and not counted\n";
  out.unsetf(std::ios::fixed);
}

void cmd_synth(const SynthArgs& args, const Context& ctx) {
  if (args.out_dir.empty()) throw UsageError("synth needs --out DIR");
  fs::create_directories(args.out_dir);
  const auto manifest = data::synth_dataset(args.synth, args.out_dir);
  config::RunConfig cfg;
  cfg.data.manifest = "manifest.tsv";
  cfg.output_dir = "run";
  cfg.seed = args.synth.seed;
  // Desk-scale recipe: a small corpus trains better with single-clip steps,
  // and stage 1 tolerates a larger step than stage 2.
  cfg.train.batch_size = 1;
  cfg.stage1.learning_rate = 1e-3;
  cfg.stage1.max_epochs = 20;
  const std::string cfg_path = (fs::path(args.out_dir) / "config.json").string();
  {
    std::ofstream f(cfg_path + ".tmp", std::ios::trunc);
    if (!f) throw IoError(cfg_path + ": cannot open for writing");
    f << config::to_json(cfg) << "\n";
  }
  fs::rename(cfg_path + ".tmp", cfg_path);
  if (ctx.out != nullptr)
    *ctx.out << "wrote " << manifest.records.size() << " records to "
             << (fs::path(args.out_dir) / "manifest.tsv").string() << " and " << cfg_path << "\n";
}

}  // namespace dualspec::cli
