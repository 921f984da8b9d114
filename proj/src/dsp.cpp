#include "dualspec/dsp.h"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "dualspec/error.h"

namespace dualspec::dsp {

void validate(const FrameConfig& config) {
  if (config.window_len <= 0) throw ConfigError("window_len must be positive");
  if (config.hop <= 0 || config.hop > config.window_len)
    throw ConfigError("hop must be in [1, window_len]");
  if (config.transform_points < config.window_len)
    throw ConfigError("transform_points must be >= window_len");
  if (config.transform_points % 2 != 0)
    throw ConfigError("transform_points must be even");
}

Eigen::VectorXd make_window(const FrameConfig& config) {
  validate(config);
  if (config.window != WindowKind::kHamming) throw ConfigError("unsupported window kind");
  const Index n = config.window_len;
  Eigen::VectorXd w(n);
  if (n == 1) {
    w(0) = 1.0;
    return w;
  }
  for (Index k = 0; k < n; ++k)
    w(k) = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * double(k) / double(n - 1));
  return w;
}

Index frame_count(Index num_samples, const FrameConfig& config) {
  if (num_samples <= 0) throw DomainError("cannot frame an empty signal");
  return (config.edge_pad() + num_samples - 1) / config.hop + 1;
}

namespace {

Index padded_length(Index num_frames, const FrameConfig& config) {
  return (num_frames - 1) * config.hop + config.window_len;
}

}  // namespace

Eigen::VectorXd synthesis_envelope(Index num_frames, const FrameConfig& config) {
  const Eigen::VectorXd w2 = make_window(config).array().square();
  Eigen::VectorXd env = Eigen::VectorXd::Zero(padded_length(num_frames, config));
  for (Index t = 0; t < num_frames; ++t) env.segment(t * config.hop, config.window_len) += w2;
  return env;
}

Eigen::MatrixXd frame_signal(const Eigen::Ref<const Eigen::VectorXd>& samples,
                             const FrameConfig& config) {
  const Eigen::VectorXd w = make_window(config);
  const Index num_frames = frame_count(samples.size(), config);
  Eigen::VectorXd padded = Eigen::VectorXd::Zero(padded_length(num_frames, config));
  padded.segment(config.edge_pad(), samples.size()) = samples;

  Eigen::MatrixXd frames = Eigen::MatrixXd::Zero(config.transform_points, num_frames);
  for (Index t = 0; t < num_frames; ++t)
    frames.col(t).head(config.window_len) =
        padded.segment(t * config.hop, config.window_len).cwiseProduct(w);
  return frames;
}

Eigen::VectorXd overlap_add(const Eigen::Ref<const Eigen::MatrixXd>& frames,
                            const FrameConfig& config, Index num_samples) {
  const Eigen::VectorXd w = make_window(config);
  const Index num_frames = frames.cols();
  if (frames.rows() < config.window_len) throw ShapeError("frame shorter than window");
  if (num_frames < frame_count(num_samples, config))
    throw ShapeError("not enough frames to synthesize the requested length");

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(padded_length(num_frames, config));
  for (Index t = 0; t < num_frames; ++t)
    acc.segment(t * config.hop, config.window_len) +=
        frames.col(t).head(config.window_len).cwiseProduct(w);
  const Eigen::VectorXd env = synthesis_envelope(num_frames, config);
  return acc.segment(config.edge_pad(), num_samples).cwiseQuotient(
      env.segment(config.edge_pad(), num_samples));
}

Eigen::MatrixXd overlap_add_adjoint(const Eigen::Ref<const Eigen::VectorXd>& grad,
                                    const FrameConfig& config, Index num_frames) {
  const Eigen::VectorXd w = make_window(config);
  const Index num_samples = grad.size();
  const Eigen::VectorXd env = synthesis_envelope(num_frames, config);
  Eigen::VectorXd padded = Eigen::VectorXd::Zero(env.size());
  padded.segment(config.edge_pad(), num_samples) =
      grad.cwiseQuotient(env.segment(config.edge_pad(), num_samples));

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(config.transform_points, num_frames);
  for (Index t = 0; t < num_frames; ++t)
    out.col(t).head(config.window_len) =
        padded.segment(t * config.hop, config.window_len).cwiseProduct(w);
  return out;
}

const Eigen::MatrixXd& dct_matrix(Index n) {
  static std::mutex mutex;
  static std::map<Index, std::unique_ptr<Eigen::MatrixXd>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) {
    auto c = std::make_unique<Eigen::MatrixXd>(n, n);
    const double scale0 = std::sqrt(1.0 / double(n));
    const double scale = std::sqrt(2.0 / double(n));
    for (Index k = 0; k < n; ++k)
      for (Index i = 0; i < n; ++i)
        (*c)(k, i) = (k == 0 ? scale0 : scale) *
                     std::cos(std::numbers::pi * double(k) * double(2 * i + 1) / double(2 * n));
    slot = std::move(c);
  }
  return *slot;
}

Eigen::VectorXcd rfft(const Eigen::Ref<const Eigen::VectorXd>& frame) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  Eigen::VectorXd in = frame;
  Eigen::VectorXcd out;
  fft.fwd(out, in);
  return out;
}

Eigen::VectorXd irfft(const Eigen::Ref<const Eigen::VectorXcd>& bins, Index n) {
  if (bins.size() != n / 2 + 1) throw ShapeError("irfft: bin count does not match length");
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  Eigen::VectorXcd in = bins;
  // The imaginary parts of DC and Nyquist do not belong to a real signal.
  in(0) = in(0).real();
  in(n / 2) = in(n / 2).real();
  Eigen::VectorXd out;
  fft.inv(out, in, n);
  return out;
}

StftResult stft(const Waveform& x, const FrameConfig& config) {
  validate(config);
  if (x.size() == 0) throw DomainError("stft: empty input");
  const Eigen::MatrixXd frames = frame_signal(x.samples, config);
  const Index bins = config.complex_bins();

  StftResult r;
  r.complex.frames.resize(bins, frames.cols());
  for (Index t = 0; t < frames.cols(); ++t) r.complex.frames.col(t) = rfft(frames.col(t));
  r.complex.config = config;
  r.complex.num_samples = x.size();
  r.magnitude = {r.complex.frames.cwiseAbs(), config, x.size()};
  r.phase = {r.complex.frames.unaryExpr([](std::complex<double> z) { return std::arg(z); })
                 .real(),
             config, x.size()};
  return r;
}

Waveform istft(const ComplexSpectrogram& spec, int sample_rate) {
  validate(spec.config);
  const FrameConfig& config = spec.config;
  if (spec.frames.rows() != config.complex_bins())
    throw ShapeError("istft: bin count does not match transform_points");
  Eigen::MatrixXd frames(config.transform_points, spec.frames.cols());
  for (Index t = 0; t < spec.frames.cols(); ++t)
    frames.col(t) = irfft(spec.frames.col(t), config.transform_points);
  return {overlap_add(frames, config, spec.num_samples), sample_rate};
}

RealSpectrogram stdct(const Waveform& x, const FrameConfig& config) {
  validate(config);
  if (x.size() == 0) throw DomainError("stdct: empty input");
  const Eigen::MatrixXd frames = frame_signal(x.samples, config);
  return {dct_matrix(config.transform_points) * frames, config, x.size()};
}

Waveform istdct(const RealSpectrogram& spec, int sample_rate) {
  validate(spec.config);
  const FrameConfig& config = spec.config;
  if (spec.frames.rows() != config.real_bins())
    throw ShapeError("istdct: bin count does not match transform_points");
  const Eigen::MatrixXd frames = dct_matrix(config.transform_points).transpose() * spec.frames;
  return {overlap_add(frames, config, spec.num_samples), sample_rate};
}

ComplexSpectrogram apply_phase(const MagnitudeSpectrogram& magnitude,
                               const ComplexSpectrogram& reference) {
  if (magnitude.frames.rows() != reference.frames.rows() ||
      magnitude.frames.cols() != reference.frames.cols())
    throw ShapeError("apply_phase: magnitude and reference grids differ");
  ComplexSpectrogram out{reference.frames, reference.config, reference.num_samples};
  for (Index t = 0; t < out.frames.cols(); ++t) {
    for (Index k = 0; k < out.frames.rows(); ++k) {
      const std::complex<double> z = reference.frames(k, t);
      const double r = std::abs(z);
      out.frames(k, t) = r > 0.0 ? magnitude.frames(k, t) * (z / r) : std::complex<double>(0.0);
    }
  }
  return out;
}

}  // namespace dualspec::dsp
