#include <doctest.h>

#include <cstring>
#include <fstream>

#include "dualspec/audio.h"
#include "dualspec/data.h"
#include "support.h"

using namespace dualspec;
using dsp::Index;
using dsp::Waveform;

namespace {

Waveform sine(double freq, Index n, double amp = 0.5) {
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i) x(i) = amp * std::sin(2.0 * std::numbers::pi * freq * i / 16000.0);
  return {x, 16000};
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<char>& b) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(b.data(), std::streamsize(b.size()));
}

}  // namespace

TEST_CASE("float32 WAV round trip is exact") {
  testing::ScratchDir dir("wav");
  const Waveform x = sine(440.0, 16000);
  audio::write_wav(dir.file("a.wav"), x, audio::SampleFormat::kFloat32);
  audio::WavInfo info;
  const Waveform y = audio::read_wav(dir.file("a.wav"), 16000, &info);
  CHECK(info.format == audio::SampleFormat::kFloat32);
  REQUIRE(y.size() == x.size());
  CHECK((y.samples - x.samples.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("PCM16 scaling and clamping") {
  testing::ScratchDir dir("pcm");
  Eigen::VectorXd v(5);
  v << 0.0, 0.5, -1.0, 1.5, -0.25;
  audio::write_wav(dir.file("p.wav"), {v, 16000}, audio::SampleFormat::kPcm16);
  const auto bytes = read_bytes(dir.file("p.wav"));
  REQUIRE(bytes.size() == 44 + 10);
  std::int16_t raw[5];
  std::memcpy(raw, bytes.data() + 44, 10);
  CHECK(raw[1] == 16384);
  CHECK(raw[2] == -32768);
  CHECK(raw[3] == 32767);
  const Waveform y = audio::read_wav(dir.file("p.wav"));
  CHECK(y.samples(1) == 0.5);
  CHECK(y.samples(2) == -1.0);
  CHECK(y.samples(3) == 32767.0 / 32768.0);
  CHECK(y.samples(4) == -0.25);

  const Waveform s = sine(1000.0, 800);
  audio::write_wav(dir.file("s.wav"), s, audio::SampleFormat::kPcm16);
  CHECK((audio::read_wav(dir.file("s.wav")).samples - s.samples).cwiseAbs().maxCoeff() <=
        0.5 / 32768.0 + 1e-12);
}

TEST_CASE("malformed WAV files are rejected with a cause") {
  testing::ScratchDir dir("bad");
  audio::write_wav(dir.file("ok.wav"), sine(300.0, 400), audio::SampleFormat::kPcm16);
  auto bytes = read_bytes(dir.file("ok.wav"));

  auto truncated = bytes;
  truncated.resize(bytes.size() - 101);
  write_bytes(dir.file("trunc.wav"), truncated);
  CHECK_THROWS_WITH_AS(audio::read_wav(dir.file("trunc.wav")), doctest::Contains("truncated"),
                       IoError);

  auto stereo = bytes;
  stereo[22] = 2;
  write_bytes(dir.file("stereo.wav"), stereo);
  CHECK_THROWS_WITH_AS(audio::read_wav(dir.file("stereo.wav")), doctest::Contains("mono"), IoError);

  auto garbage = bytes;
  std::memcpy(garbage.data(), "RIFX", 4);
  write_bytes(dir.file("rifx.wav"), garbage);
  CHECK_THROWS_AS(audio::read_wav(dir.file("rifx.wav")), IoError);

  CHECK_THROWS_WITH_AS(audio::read_wav(dir.file("ok.wav"), 8000), doctest::Contains("sample rate"),
                       IoError);
  CHECK_NOTHROW(audio::read_wav(dir.file("ok.wav"), 0));
  CHECK_THROWS_AS(audio::read_wav(dir.file("missing.wav")), IoError);
}

TEST_CASE("mixing hits the requested SNR") {
  nn::Rng rng(5);
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> snr(-10, 20);
  for (int trial = 0; trial < 20; ++trial) {
    const Waveform s = data::synth_speech(4000, 16000, rng);
    const Waveform n = data::synth_noise(data::NoiseKind(trial % 3), 2000 + 300 * trial, 16000, rng);
    const double target = snr(gen);
    const auto m = data::mix_at_snr(s, n, target, trial);
    CHECK(data::energy_ratio_db(m.clean.samples, m.noise.samples) ==
          doctest::Approx(target).epsilon(1e-9));
    CHECK((m.mixture.samples - m.clean.samples - m.noise.samples).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(m.mixture.samples.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  }
}

TEST_CASE("mixing edge cases") {
  nn::Rng rng(2);
  const Waveform s = data::synth_speech(2000, 16000, rng);
  const Waveform n = data::synth_noise(data::NoiseKind::kWhite, 2000, 16000, rng);
  const auto zero_db = data::mix_at_snr(s, n, 0.0, 1);
  CHECK(zero_db.clean.samples.squaredNorm() ==
        doctest::Approx(zero_db.noise.samples.squaredNorm()).epsilon(1e-9));
  const auto quiet = data::mix_at_snr(s, n, 100.0, 1);
  CHECK((quiet.mixture.samples - quiet.clean.samples).norm() / quiet.clean.samples.norm() < 1e-4);
  // Loud noise forces peak normalisation; the gain applies to every part.
  const auto loud = data::mix_at_snr(s, n, -20.0, 1);
  CHECK(loud.gain < 1.0);
  CHECK(loud.mixture.samples.cwiseAbs().maxCoeff() == doctest::Approx(1.0));
  CHECK((loud.clean.samples - loud.gain * s.samples).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(data::mix_at_snr({Eigen::VectorXd::Zero(10)}, n, 0.0, 1), DomainError);
  CHECK_THROWS_AS(data::mix_at_snr(s, {Eigen::VectorXd::Zero(10)}, 0.0, 1), DomainError);
  CHECK_THROWS_AS(data::mix_at_snr(s, n, std::nan(""), 1), DomainError);
}

TEST_CASE("SI-SDR and SNR definitions") {
  const Waveform s = sine(220.0, 1000);
  CHECK(data::si_sdr(2.0 * s.samples, s.samples) == data::kMetricCapDb);
  CHECK(data::snr(2.0 * s.samples, s.samples) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(data::snr(s.samples, s.samples) == data::kMetricCapDb);
  std::mt19937_64 gen(3);
  const Eigen::VectorXd noise = testing::random_signal(1000, gen, 0.05);
  // Orthogonalised noise makes the SI-SDR a plain energy ratio.
  const Eigen::VectorXd ortho = noise - s.samples * (noise.dot(s.samples) / s.samples.squaredNorm());
  CHECK(data::si_sdr(s.samples + ortho, s.samples) ==
        doctest::Approx(10 * std::log10(s.samples.squaredNorm() / ortho.squaredNorm())));
  CHECK(data::si_sdr(-s.samples, s.samples) == data::kMetricCapDb);
  CHECK_THROWS_AS(data::si_sdr(s.samples, Eigen::VectorXd::Zero(1000)), DomainError);
  CHECK_THROWS_AS(data::snr(s.samples.head(10), s.samples), ShapeError);
}

TEST_CASE("synthetic corpus is deterministic per item") {
  data::SynthConfig cfg;
  const auto a = data::synth_item(cfg, "train", 3), b = data::synth_item(cfg, "train", 3);
  CHECK((a.clean.samples.array() == b.clean.samples.array()).all());
  CHECK((a.noise.samples.array() == b.noise.samples.array()).all());
  CHECK(a.snr_db == b.snr_db);
  const auto c = data::synth_item(cfg, "train", 4), d = data::synth_item(cfg, "test", 3);
  CHECK(a.seed != c.seed);
  CHECK(a.seed != d.seed);
  CHECK(a.clean.size() >= 8000);
  CHECK(a.clean.size() <= 16000);
  CHECK(a.snr_db >= -5.0);
  CHECK(a.snr_db <= 15.0);
  CHECK(a.clean.samples.cwiseAbs().maxCoeff() == doctest::Approx(0.5));
  nn::Rng rng(1);
  const auto pink = data::synth_noise(data::NoiseKind::kPink, 16000, 16000, rng);
  CHECK(std::sqrt(pink.samples.squaredNorm() / 16000) == doctest::Approx(1.0));
}

TEST_CASE("synth_dataset writes a manifest whose mixtures report their SNR") {
  testing::ScratchDir dir("synth");
  data::SynthConfig cfg;
  cfg.train_items = 3;
  cfg.val_items = 1;
  cfg.test_items = 2;
  const auto m = data::synth_dataset(cfg, dir.path().string());
  CHECK(m.records.size() == 6);
  const auto reread = data::read_manifest(dir.file("manifest.tsv"));
  REQUIRE(reread.records.size() == 6);
  CHECK(reread.records[2].snr_db == m.records[2].snr_db);
  const auto items = data::load_split(reread, "test");
  REQUIRE(items.size() == 2);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Eigen::VectorXd residual = items[i].noisy.samples - items[i].clean.samples;
    CHECK(data::energy_ratio_db(items[i].clean.samples, residual) ==
          doctest::Approx(*items[i].record.snr_db).epsilon(1e-6));
  }
}

TEST_CASE("manifest parsing") {
  testing::ScratchDir dir("manifest");
  audio::write_wav(dir.file("c.wav"), sine(200, 500));
  audio::write_wav(dir.file("n.wav"), sine(900, 500));
  {
    std::ofstream f(dir.file("m.tsv"));
    f << "# a comment\n# sample_rate 16000\n\ntrain c.wav n.wav 5 7\n"
      << "test  c.wav  n.wav  -  0\r\n";
  }
  const auto m = data::read_manifest(dir.file("m.tsv"));
  REQUIRE(m.records.size() == 2);
  CHECK(*m.records[0].snr_db == 5.0);
  CHECK(m.records[0].seed == 7);
  CHECK_FALSE(m.records[1].snr_db.has_value());
  // "-" means the third column already is the mixture.
  const auto test = data::load_split(m, "test");
  CHECK((test[0].noisy.samples - sine(900, 500).samples).cwiseAbs().maxCoeff() < 1e-6);

  data::write_manifest(dir.file("copy.tsv"), m);
  const auto copy = data::read_manifest(dir.file("copy.tsv"));
  CHECK(copy.records.size() == 2);
  CHECK(copy.records[1].clean_path == "c.wav");

  auto bad = [&](const std::string& body, const char* needle) {
    {
      std::ofstream f(dir.file("bad.tsv"));
      f << body;
    }
    CHECK_THROWS_WITH_AS(data::read_manifest(dir.file("bad.tsv")), doctest::Contains(needle),
                         IoError);
  };
  bad("train c.wav n.wav 5\n", "bad.tsv:1");
  bad("# ok\ndev c.wav n.wav 5 1\n", "bad.tsv:2");
  bad("train c.wav n.wav five 1\n", "bad number");
  bad("train c.wav gone.wav 5 1\n", "missing file");
  bad("train c.wav n.wav 5 1 extra\n", "extra");
}
