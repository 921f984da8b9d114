#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dualspec/dsp.h"
#include "dualspec/params.h"

namespace dualspec::data {

using dsp::Index;
using dsp::Waveform;

// ---- mixing ---------------------------------------------------------------

struct Mixture {
  Waveform mixture;  // clean + scaled noise, after peak normalisation
  Waveform clean;    // clean after the same normalisation gain
  Waveform noise;    // alpha * noise after the same gain
  double alpha = 1.0;  // noise scale before normalisation
  double gain = 1.0;   // peak-normalisation factor (1 unless the mixture clipped)
};

// Noise longer than the clean source is cropped at a seeded offset; shorter
// noise is tiled. Throws DomainError for a silent source or noise.
Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                   std::uint64_t seed);

// ---- metrics --------------------------------------------------------------

inline constexpr double kMetricCapDb = 100.0;

// Scale-invariant SDR: project the estimate on the reference first.
double si_sdr(const Eigen::Ref<const Eigen::VectorXd>& estimate,
              const Eigen::Ref<const Eigen::VectorXd>& reference);
// Plain SNR of the residual estimate - reference.
double snr(const Eigen::Ref<const Eigen::VectorXd>& estimate,
           const Eigen::Ref<const Eigen::VectorXd>& reference);
// 10 log10(|signal|^2 / |noise|^2), uncapped.
double energy_ratio_db(const Eigen::Ref<const Eigen::VectorXd>& signal,
                       const Eigen::Ref<const Eigen::VectorXd>& noise);

// ---- synthetic corpus -----------------------------------------------------

enum class NoiseKind { kWhite, kPink, kBabble };

// Voiced "speech": harmonic syllables with a gliding pitch, some chirps and
// band-limited noise bursts. Peak 0.5.
Waveform synth_speech(Index num_samples, int sample_rate, nn::Rng& rng);
// Unit-RMS noise.
Waveform synth_noise(NoiseKind kind, Index num_samples, int sample_rate, nn::Rng& rng);

struct SynthConfig {
  int train_items = 16;
  int val_items = 4;
  int test_items = 8;
  double min_seconds = 0.5;
  double max_seconds = 1.0;
  int sample_rate = 16000;
  double snr_low_db = -5.0;
  double snr_high_db = 15.0;
  std::uint64_t seed = 1;
};

struct SynthItem {
  Waveform clean;
  Waveform noise;
  NoiseKind noise_kind = NoiseKind::kWhite;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

// Item `index` of a split; depends only on (config, split, index).
SynthItem synth_item(const SynthConfig& config, const std::string& split, int index);

// ---- manifests ------------------------------------------------------------

// One line per record, tab separated: split, clean path, noise-or-mixture
// path, SNR in dB, seed. An SNR of "-" marks the third column as a ready-made
// mixture. Paths are relative to the manifest file. '#' starts a comment;
// "# sample_rate N" sets the rate.
struct ManifestRecord {
  std::string split;
  std::string clean_path;
  std::string second_path;
  std::optional<double> snr_db;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  int sample_rate = 16000;
  std::string base_dir;  // directory paths are resolved against

  std::string resolve(const std::string& path) const;
};

DatasetManifest read_manifest(const std::string& path, bool check_files = true);
void write_manifest(const std::string& path, const DatasetManifest& manifest);

// Writes clean/noise WAV pairs for every split under out_dir plus
// out_dir/manifest.tsv, and returns the manifest.
DatasetManifest synth_dataset(const SynthConfig& config, const std::string& out_dir);

struct LoadedItem {
  ManifestRecord record;
  Waveform noisy;
  Waveform clean;
};

// Loads (and mixes where needed) every record of a split in file order.
std::vector<LoadedItem> load_split(const DatasetManifest& manifest, const std::string& split);

}  // namespace dualspec::data
