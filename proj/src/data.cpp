#include "dualspec/data.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "dualspec/audio.h"
#include "dualspec/error.h"

namespace dualspec::data {

namespace fs = std::filesystem;

Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                   std::uint64_t seed) {
  if (!std::isfinite(snr_db)) throw DomainError("mix: SNR must be finite");
  if (clean.size() == 0 || noise.size() == 0) throw DomainError("mix: empty input");
  if (clean.sample_rate != noise.sample_rate)
    throw DomainError("mix: clean and noise sample rates differ");
  const Index n = clean.size();
  Eigen::VectorXd fitted(n);
  if (noise.size() >= n) {
    nn::Rng rng(seed);
    const Index offset = rng.below(noise.size() - n + 1);
    fitted = noise.samples.segment(offset, n);
  } else {
    for (Index i = 0; i < n; ++i) fitted(i) = noise.samples(i % noise.size());
  }
  const double es = clean.samples.squaredNorm();
  const double en = fitted.squaredNorm();
  if (es == 0.0) throw DomainError("mix: clean source is silent");
  if (en == 0.0) throw DomainError("mix: noise is silent");

  Mixture m;
  m.alpha = std::sqrt(es / (en * std::pow(10.0, snr_db / 10.0)));
  Eigen::VectorXd scaled = m.alpha * fitted;
  Eigen::VectorXd x = clean.samples + scaled;
  const double peak = x.cwiseAbs().maxCoeff();
  m.gain = peak > 1.0 ? 1.0 / peak : 1.0;
  m.mixture = {m.gain * x, clean.sample_rate};
  m.clean = {m.gain * clean.samples, clean.sample_rate};
  m.noise = {m.gain * scaled, clean.sample_rate};
  return m;
}

namespace {

double capped(double db) { return std::clamp(db, -kMetricCapDb, kMetricCapDb); }

double ratio_db(double num, double den) {
  if (den <= 0.0) return kMetricCapDb;
  if (num <= 0.0) return -kMetricCapDb;
  return capped(10.0 * std::log10(num / den));
}

}  // namespace

double si_sdr(const Eigen::Ref<const Eigen::VectorXd>& estimate,
              const Eigen::Ref<const Eigen::VectorXd>& reference) {
  if (estimate.size() != reference.size()) throw ShapeError("si_sdr: length mismatch");
  const double rr = reference.squaredNorm();
  if (rr == 0.0) throw DomainError("si_sdr: silent reference");
  const Eigen::VectorXd target = (estimate.dot(reference) / rr) * reference;
  return ratio_db(target.squaredNorm(), (estimate - target).squaredNorm());
}

double snr(const Eigen::Ref<const Eigen::VectorXd>& estimate,
           const Eigen::Ref<const Eigen::VectorXd>& reference) {
  if (estimate.size() != reference.size()) throw ShapeError("snr: length mismatch");
  return ratio_db(reference.squaredNorm(), (estimate - reference).squaredNorm());
}

double energy_ratio_db(const Eigen::Ref<const Eigen::VectorXd>& signal,
                       const Eigen::Ref<const Eigen::VectorXd>& noise) {
  return 10.0 * std::log10(signal.squaredNorm() / noise.squaredNorm());
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double hann(Index i, Index len) {
  return 0.5 - 0.5 * std::cos(kTwoPi * (double(i) + 0.5) / double(len));
}

double resonance(double f, double centre, double width) {
  const double d = (f - centre) / width;
  return 1.0 / (1.0 + d * d);
}

void add_voiced(Eigen::VectorXd& y, Index start, Index len, int sr, nn::Rng& rng) {
  const double f0a = rng.uniform(100.0, 220.0);
  const double f0b = f0a * rng.uniform(0.8, 1.25);
  const double f1 = rng.uniform(300.0, 900.0);
  const double f2 = rng.uniform(1000.0, 2600.0);
  const double amp = rng.uniform(0.5, 1.0);
  double phase = rng.uniform(0.0, kTwoPi);
  for (Index i = 0; i < len && start + i < y.size(); ++i) {
    const double f0 = f0a + (f0b - f0a) * double(i) / double(len);
    phase += kTwoPi * f0 / sr;
    double v = 0.0;
    for (int h = 1; h * f0 < 0.45 * sr && h <= 40; ++h) {
      const double f = h * f0;
      const double a = (resonance(f, f1, 120.0) + 0.6 * resonance(f, f2, 180.0) + 0.02) / h;
      v += a * std::sin(h * phase);
    }
    y(start + i) += amp * hann(i, len) * v;
  }
}

void add_chirp(Eigen::VectorXd& y, Index start, Index len, int sr, nn::Rng& rng) {
  const double fa = rng.uniform(300.0, 1500.0);
  const double fb = rng.uniform(1500.0, std::min(4000.0, 0.45 * sr));
  const double amp = rng.uniform(0.2, 0.5);
  double phase = 0.0;
  for (Index i = 0; i < len && start + i < y.size(); ++i) {
    phase += kTwoPi * (fa + (fb - fa) * double(i) / double(len)) / sr;
    y(start + i) += amp * hann(i, len) * std::sin(phase);
  }
}

// Two-pole resonator on white noise.
void add_burst(Eigen::VectorXd& y, Index start, Index len, int sr, nn::Rng& rng) {
  const double centre = rng.uniform(2000.0, std::min(6000.0, 0.45 * sr));
  const double r = 0.97;
  const double c = 2.0 * r * std::cos(kTwoPi * centre / sr);
  const double amp = rng.uniform(0.05, 0.15);
  double y1 = 0.0, y2 = 0.0;
  for (Index i = 0; i < len && start + i < y.size(); ++i) {
    const double v = rng.normal() + c * y1 - r * r * y2;
    y2 = y1;
    y1 = v;
    y(start + i) += amp * hann(i, len) * v;
  }
}

void normalise_peak(Eigen::VectorXd& y, double peak) {
  const double p = y.cwiseAbs().maxCoeff();
  if (p > 0.0) y *= peak / p;
}

}  // namespace

Waveform synth_speech(Index num_samples, int sample_rate, nn::Rng& rng) {
  if (num_samples <= 0) throw DomainError("synth: length must be positive");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(num_samples);
  Index pos = Index(rng.uniform(0.0, 0.04) * sample_rate);
  while (pos < num_samples) {
    const Index len = std::max<Index>(16, Index(rng.uniform(0.12, 0.3) * sample_rate));
    const double kind = rng.uniform();
    if (kind < 0.7) {
      add_voiced(y, pos, len, sample_rate, rng);
    } else if (kind < 0.85) {
      add_chirp(y, pos, len, sample_rate, rng);
    } else {
      add_burst(y, pos, len, sample_rate, rng);
    }
    pos += len + Index(rng.uniform(0.02, 0.1) * sample_rate);
  }
  if (y.cwiseAbs().maxCoeff() == 0.0) y(0) = 1.0;  // keep even tiny clips non-silent
  normalise_peak(y, 0.5);
  return {y, sample_rate};
}

Waveform synth_noise(NoiseKind kind, Index num_samples, int sample_rate, nn::Rng& rng) {
  if (num_samples <= 0) throw DomainError("synth: length must be positive");
  Eigen::VectorXd y(num_samples);
  switch (kind) {
    case NoiseKind::kWhite:
      for (Index i = 0; i < num_samples; ++i) y(i) = rng.normal();
      break;
    case NoiseKind::kPink: {
      // Paul Kellet's economy filter bank.
      double b0 = 0, b1 = 0, b2 = 0;
      for (Index i = 0; i < num_samples; ++i) {
        const double w = rng.normal();
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        y(i) = b0 + b1 + b2 + w * 0.1848;
      }
      break;
    }
    case NoiseKind::kBabble:
      y.setZero();
      for (int talker = 0; talker < 5; ++talker)
        y += synth_speech(num_samples, sample_rate, rng).samples;
      break;
  }
  const double rms = std::sqrt(y.squaredNorm() / double(num_samples));
  if (rms > 0.0) y /= rms;
  return {y, sample_rate};
}

namespace {

std::uint64_t split_code(const std::string& split) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : split) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

SynthItem synth_item(const SynthConfig& config, const std::string& split, int index) {
  if (config.min_seconds <= 0.0 || config.max_seconds < config.min_seconds)
    throw ConfigError("synth: need 0 < min_seconds <= max_seconds");
  if (config.snr_high_db < config.snr_low_db) throw ConfigError("synth: empty SNR range");
  SynthItem item;
  item.seed = mix_seed(mix_seed(config.seed, split_code(split)), std::uint64_t(index));
  nn::Rng rng(item.seed);
  const int sr = config.sample_rate;
  const Index n = std::max<Index>(
      1, Index(std::llround(rng.uniform(config.min_seconds, config.max_seconds) * sr)));
  item.clean = synth_speech(n, sr, rng);
  item.noise_kind = static_cast<NoiseKind>(rng.below(3));
  item.noise = synth_noise(item.noise_kind, n + sr / 4, sr, rng);
  item.snr_db = rng.uniform(config.snr_low_db, config.snr_high_db);
  return item;
}

// ---------------------------------------------------------------------------

std::string DatasetManifest::resolve(const std::string& path) const {
  const fs::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

DatasetManifest read_manifest(const std::string& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open manifest");
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      std::istringstream c(line.substr(first + 1));
      std::string key;
      int rate = 0;
      if (c >> key && key == "sample_rate") {
        if (!(c >> rate) || rate <= 0) throw IoError(where + "bad sample_rate directive");
        m.sample_rate = rate;
      }
      continue;
    }
    std::istringstream fields(line);
    ManifestRecord r;
    std::string snr, seed, extra;
    if (!(fields >> r.split >> r.clean_path >> r.second_path >> snr >> seed))
      throw IoError(where + "expected 5 fields: split clean noise-or-mixture snr seed");
    if (fields >> extra) throw IoError(where + "unexpected extra field '" + extra + "'");
    if (r.split != "train" && r.split != "val" && r.split != "test")
      throw IoError(where + "split must be train, val or test, got '" + r.split + "'");
    try {
      std::size_t used = 0;
      if (snr != "-") {
        r.snr_db = std::stod(snr, &used);
        if (used != snr.size() || !std::isfinite(*r.snr_db)) throw std::invalid_argument(snr);
      }
      r.seed = std::stoull(seed, &used);
      if (used != seed.size()) throw std::invalid_argument(seed);
    } catch (const std::logic_error&) {
      throw IoError(where + "bad number in snr/seed fields");
    }
    if (check_files) {
      for (const auto* p : {&r.clean_path, &r.second_path})
        if (!fs::exists(m.resolve(*p))) throw IoError(where + "missing file " + m.resolve(*p));
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "# split\tclean\tnoise_or_mixture\tsnr_db\tseed\n";
  out << "# sample_rate " << manifest.sample_rate << "\n";
  out << std::setprecision(17);
  for (const auto& r : manifest.records) {
    out << r.split << '\t' << r.clean_path << '\t' << r.second_path << '\t';
    if (r.snr_db) {
      out << *r.snr_db;
    } else {
      out << '-';
    }
    out << '\t' << r.seed << '\n';
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError(path + ": cannot open for writing");
    f << out.str();
    if (!f) throw IoError(path + ": write failed");
  }
  fs::rename(tmp, path);
}

DatasetManifest synth_dataset(const SynthConfig& config, const std::string& out_dir) {
  DatasetManifest m;
  m.sample_rate = config.sample_rate;
  m.base_dir = out_dir;
  const std::pair<const char*, int> splits[] = {
      {"train", config.train_items}, {"val", config.val_items}, {"test", config.test_items}};
  for (const auto& [split, count] : splits) {
    if (count <= 0) continue;
    fs::create_directories(fs::path(out_dir) / split);
    for (int i = 0; i < count; ++i) {
      const SynthItem item = synth_item(config, split, i);
      std::ostringstream stem;
      stem << split << "/" << std::setw(4) << std::setfill('0') << i;
      ManifestRecord r{split, stem.str() + "_clean.wav", stem.str() + "_noise.wav", item.snr_db,
                       item.seed};
      audio::write_wav(m.resolve(r.clean_path), item.clean);
      audio::write_wav(m.resolve(r.second_path), item.noise);
      m.records.push_back(std::move(r));
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
  return m;
}

std::vector<LoadedItem> load_split(const DatasetManifest& manifest, const std::string& split) {
  std::vector<LoadedItem> items;
  for (const auto& r : manifest.records) {
    if (r.split != split) continue;
    LoadedItem item;
    item.record = r;
    const Waveform clean = audio::read_wav(manifest.resolve(r.clean_path), manifest.sample_rate);
    const Waveform second = audio::read_wav(manifest.resolve(r.second_path), manifest.sample_rate);
    if (r.snr_db) {
      Mixture mix = mix_at_snr(clean, second, *r.snr_db, r.seed);
      item.noisy = std::move(mix.mixture);
      item.clean = std::move(mix.clean);
    } else {
      if (second.size() != clean.size())
        throw ShapeError(r.second_path + ": mixture length differs from " + r.clean_path);
      item.noisy = second;
      item.clean = clean;
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace dualspec::data
