#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>

namespace dualspec::dsp {

using Index = Eigen::Index;

enum class WindowKind { kHamming };

struct FrameConfig {
  Index window_len = 512;        // 32 ms at 16 kHz
  Index hop = 128;               // 8 ms
  Index transform_points = 512;
  WindowKind window = WindowKind::kHamming;

  // Zeros added ahead of the signal before framing (and at least as many after).
  Index edge_pad() const { return window_len - hop; }
  Index complex_bins() const { return transform_points / 2 + 1; }
  Index real_bins() const { return transform_points; }

  friend bool operator==(const FrameConfig&, const FrameConfig&) = default;
};

// Throws ConfigError when the invariants of FrameConfig do not hold.
void validate(const FrameConfig& config);

struct Waveform {
  Eigen::VectorXd samples;
  int sample_rate = 16000;

  Index size() const { return samples.size(); }
};

// All spectrogram grids are stored bins x frames, column-major, so each frame
// is one contiguous column. num_samples is the length of the signal that was
// analyzed; synthesis trims back to it.
struct ComplexSpectrogram {
  Eigen::MatrixXcd frames;
  FrameConfig config;
  Index num_samples = 0;
};

struct MagnitudeSpectrogram {
  Eigen::MatrixXd frames;
  FrameConfig config;
  Index num_samples = 0;
};

struct PhaseSpectrogram {
  Eigen::MatrixXd frames;
  FrameConfig config;
  Index num_samples = 0;
};

struct RealSpectrogram {
  Eigen::MatrixXd frames;
  FrameConfig config;
  Index num_samples = 0;
};

struct StftResult {
  MagnitudeSpectrogram magnitude;
  PhaseSpectrogram phase;
  ComplexSpectrogram complex;
};

// Hamming window w[k] = 0.54 - 0.46 cos(2 pi k / (N - 1)).
Eigen::VectorXd make_window(const FrameConfig& config);

// Number of frames so that every one of num_samples input samples is covered
// by the full set of overlapping frames.
Index frame_count(Index num_samples, const FrameConfig& config);

// sum_t w^2[k - t hop] at each position of the padded signal.
Eigen::VectorXd synthesis_envelope(Index num_frames, const FrameConfig& config);

// Pads, frames and windows a signal. Returns transform_points x frames; rows
// beyond window_len are zero.
Eigen::MatrixXd frame_signal(const Eigen::Ref<const Eigen::VectorXd>& samples,
                             const FrameConfig& config);

// Weighted overlap-add. Each column holds a time-domain frame (first
// window_len rows are used); it is windowed, summed, divided by the squared
// window envelope and trimmed to num_samples.
Eigen::VectorXd overlap_add(const Eigen::Ref<const Eigen::MatrixXd>& frames,
                            const FrameConfig& config, Index num_samples);

// Transpose of overlap_add as a linear map from frames to samples.
Eigen::MatrixXd overlap_add_adjoint(const Eigen::Ref<const Eigen::VectorXd>& grad,
                                    const FrameConfig& config, Index num_frames);

// Orthonormal DCT-II matrix C with C(k, n) = beta(k) cos(pi k (2n + 1) / 2N).
// The inverse (DCT-III) is its transpose. Cached per size; thread-safe.
const Eigen::MatrixXd& dct_matrix(Index n);

// Real FFT of one frame of length transform_points -> transform_points/2 + 1 bins.
Eigen::VectorXcd rfft(const Eigen::Ref<const Eigen::VectorXd>& frame);
// Inverse of rfft for an even-length output of size n.
Eigen::VectorXd irfft(const Eigen::Ref<const Eigen::VectorXcd>& bins, Index n);

StftResult stft(const Waveform& x, const FrameConfig& config);
Waveform istft(const ComplexSpectrogram& spec, int sample_rate = 16000);

RealSpectrogram stdct(const Waveform& x, const FrameConfig& config);
Waveform istdct(const RealSpectrogram& spec, int sample_rate = 16000);

// Combines a magnitude with the phase of a reference complex grid. Bins where
// the reference is exactly zero carry no phase and map to zero.
ComplexSpectrogram apply_phase(const MagnitudeSpectrogram& magnitude,
                               const ComplexSpectrogram& reference);

}  // namespace dualspec::dsp
