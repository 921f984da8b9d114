#include "dualspec/run_config.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dualspec/error.h"

namespace dualspec::config {

using nlohmann::json;

namespace {

// Pulls typed values out of one JSON object and remembers which keys were
// used so leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type (" + it->dump() + ")");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_kernel(ObjectReader& r, const char* where, dsp::Index& kf, dsp::Index& kt) {
  std::vector<dsp::Index> kernel{kf, kt};
  r.get("kernel", kernel);
  if (kernel.size() != 2) throw ConfigError(std::string(where) + ".kernel: need [freq, time]");
  kf = kernel[0];
  kt = kernel[1];
}

json frame_json(const dsp::FrameConfig& f) {
  return {{"window_len", f.window_len},
          {"hop", f.hop},
          {"transform_points", f.transform_points},
          {"window", "hamming"}};
}

json fme_json(const models::MagnitudeNetConfig& c) {
  return {{"encoder_channels", c.encoder_channels},
          {"decoder_channels", c.decoder_channels},
          {"kernel", {c.kernel_freq, c.kernel_time}},
          {"stride_freq", c.stride_freq},
          {"gru_hidden", c.gru_hidden},
          {"fc_units", c.fc_units},
          {"input_bins", c.input_bins},
          {"input_scale", c.input_scale}};
}

json dsr_json(const models::RefineNetConfig& c) {
  return {{"encoder_channels", c.encoder_channels},
          {"decoder_channels", c.decoder_channels},
          {"kernel", {c.kernel_freq, c.kernel_time}},
          {"stride_freq", c.stride_freq},
          {"block_hidden", c.block_hidden},
          {"input_bins", c.input_bins},
          {"input_channels", c.input_channels},
          {"input_scale", c.input_scale}};
}

template <typename T>
void get_optional(ObjectReader& r, const json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  T value{};
  r.get(key, value);
  out = value;
}

void read_override(const json& j, const std::string& where, StageOverride& o) {
  ObjectReader r(j, where);
  get_optional(r, j, "learning_rate", o.learning_rate);
  get_optional(r, j, "batch_size", o.batch_size);
  get_optional(r, j, "max_epochs", o.max_epochs);
  r.finish();
}

json override_json(const StageOverride& o) {
  json j = json::object();
  if (o.learning_rate) j["learning_rate"] = *o.learning_rate;
  if (o.batch_size) j["batch_size"] = *o.batch_size;
  if (o.max_epochs) j["max_epochs"] = *o.max_epochs;
  return j;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader top(root, "config");
  if (const json* j = top.child("frame")) {
    ObjectReader r(*j, "frame");
    r.get("window_len", c.frame.window_len);
    r.get("hop", c.frame.hop);
    r.get("transform_points", c.frame.transform_points);
    std::string window = "hamming";
    r.get("window", window);
    if (window != "hamming") throw ConfigError("frame.window: only 'hamming' is supported");
    r.finish();
  }
  if (const json* j = top.child("fme")) {
    ObjectReader r(*j, "fme");
    r.get("encoder_channels", c.fme.encoder_channels);
    r.get("decoder_channels", c.fme.decoder_channels);
    read_kernel(r, "fme", c.fme.kernel_freq, c.fme.kernel_time);
    r.get("stride_freq", c.fme.stride_freq);
    r.get("gru_hidden", c.fme.gru_hidden);
    r.get("fc_units", c.fme.fc_units);
    r.get("input_bins", c.fme.input_bins);
    r.get("input_scale", c.fme.input_scale);
    r.finish();
  }
  if (const json* j = top.child("dsr")) {
    ObjectReader r(*j, "dsr");
    r.get("encoder_channels", c.dsr.encoder_channels);
    r.get("decoder_channels", c.dsr.decoder_channels);
    read_kernel(r, "dsr", c.dsr.kernel_freq, c.dsr.kernel_time);
    r.get("stride_freq", c.dsr.stride_freq);
    r.get("block_hidden", c.dsr.block_hidden);
    r.get("input_bins", c.dsr.input_bins);
    r.get("input_channels", c.dsr.input_channels);
    r.get("input_scale", c.dsr.input_scale);
    r.finish();
  }
  if (const json* j = top.child("train")) {
    ObjectReader r(*j, "train");
    r.get("learning_rate", c.train.learning_rate);
    r.get("rho", c.train.rho);
    r.get("eps", c.train.eps);
    r.get("halve_patience", c.train.halve_patience);
    r.get("batch_size", c.train.batch_size);
    r.get("max_epochs", c.train.max_epochs);
    r.get("clip_bound", c.train.clip_bound);
    if (const json* o = r.child("stage1")) read_override(*o, "train.stage1", c.stage1);
    if (const json* o = r.child("stage2")) read_override(*o, "train.stage2", c.stage2);
    r.finish();
  }
  if (const json* j = top.child("data")) {
    ObjectReader r(*j, "data");
    r.get("manifest", c.data.manifest);
    r.finish();
  }
  top.get("seed", c.seed);
  top.get("output_dir", c.output_dir);
  top.finish();
  c.train.seed = c.seed;
  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = parse_run_config(ss.str());
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.data.manifest);
  resolve(c.output_dir);
  return c;
}

std::string to_json(const RunConfig& c, int indent) {
  json train = {{"learning_rate", c.train.learning_rate},
                {"rho", c.train.rho},
                {"eps", c.train.eps},
                {"halve_patience", c.train.halve_patience},
                {"batch_size", c.train.batch_size},
                {"max_epochs", c.train.max_epochs},
                {"clip_bound", c.train.clip_bound}};
  if (c.stage1 != StageOverride{}) train["stage1"] = override_json(c.stage1);
  if (c.stage2 != StageOverride{}) train["stage2"] = override_json(c.stage2);
  json j = {{"frame", frame_json(c.frame)},
            {"fme", fme_json(c.fme)},
            {"dsr", dsr_json(c.dsr)},
            {"train", train},
            {"data", {{"manifest", c.data.manifest}}},
            {"seed", c.seed},
            {"output_dir", c.output_dir}};
  return j.dump(indent);
}

std::string model_json(const RunConfig& c) {
  const json j = {{"frame", frame_json(c.frame)}, {"fme", fme_json(c.fme)}, {"dsr", dsr_json(c.dsr)}};
  return j.dump();
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t hash) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) hash = (hash ^ p[i]) * 1099511628211ULL;
  return hash;
}

std::uint64_t fingerprint(const RunConfig& c) {
  const std::string s = model_json(c);
  return fnv1a(s.data(), s.size());
}

train::TrainSchedule schedule_for(const RunConfig& c, int stage) {
  if (stage != 1 && stage != 2) throw UsageError("stage must be 1 or 2");
  const StageOverride& o = stage == 1 ? c.stage1 : c.stage2;
  train::TrainSchedule s = c.train;
  s.stage = stage == 1 ? train::Stage::kMagnitude : train::Stage::kRefine;
  if (o.learning_rate) s.learning_rate = *o.learning_rate;
  if (o.batch_size) s.batch_size = *o.batch_size;
  if (o.max_epochs) s.max_epochs = *o.max_epochs;
  return s;
}

void validate(const RunConfig& c) {
  dsp::validate(c.frame);
  models::validate(c.fme);
  models::validate(c.dsr);
  train::validate(schedule_for(c, 1));
  train::validate(schedule_for(c, 2));
  if (c.fme.input_bins != c.frame.complex_bins())
    throw ConfigError("fme.input_bins must equal transform_points / 2 + 1 = " +
                      std::to_string(c.frame.complex_bins()));
  if (c.dsr.input_bins != c.frame.real_bins())
    throw ConfigError("dsr.input_bins must equal transform_points = " +
                      std::to_string(c.frame.real_bins()));
}

}  // namespace dualspec::config
