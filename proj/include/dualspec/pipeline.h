#pragma once

#include <functional>
#include <vector>

#include "dualspec/dsp.h"
#include "dualspec/models.h"
#include "dualspec/tensor.h"

// End-to-end two-stage signal flow:
//   noisy waveform -> STFT magnitude -> stage-1 enhancement -> noisy phase ->
//   ISTFT -> STDCT -> stage-2 mask (with the noisy STDCT) -> masked STDCT ->
//   ISTDCT.
namespace dualspec::pipeline {

using dsp::FrameConfig;
using dsp::Index;
using dsp::Waveform;

// Stage functions operate on bins x frames grids so networks and oracles are
// interchangeable.
using MagnitudeFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& noisy_magnitude)>;
using MaskFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& noisy_dct,
                                             const Eigen::MatrixXd& pre_enhanced_dct)>;

inline constexpr double kMaskFloor = 1e-8;
inline constexpr double kDefaultClipBound = 2.0;

struct Dctirm {
  Eigen::MatrixXd mask;  // bins x frames, every entry in [-clip_bound, clip_bound]
  double clip_bound = kDefaultClipBound;
};

// clean / pre_enhanced elementwise; denominators with |d| < 1e-8 become
// +-1e-8 keeping their sign (zero counts as positive), then clipped.
Eigen::MatrixXd ratio_mask(const Eigen::Ref<const Eigen::MatrixXd>& clean,
                           const Eigen::Ref<const Eigen::MatrixXd>& pre_enhanced,
                           double clip_bound);
Dctirm compute_dctirm(const dsp::RealSpectrogram& clean, const dsp::RealSpectrogram& pre_enhanced,
                      double clip_bound = kDefaultClipBound);

struct Stage1Result {
  dsp::ComplexSpectrogram enhanced;  // enhanced magnitude with the noisy phase
  Waveform intermediate;             // its inverse STFT
};

Stage1Result stage1_enhance(const Waveform& x, const FrameConfig& config,
                            const MagnitudeFn& magnitude_fn);

struct ForwardTrace {
  Stage1Result stage1;
  dsp::RealSpectrogram noisy_dct;
  dsp::RealSpectrogram pre_enhanced_dct;
  Eigen::MatrixXd mask;
  Waveform enhanced;
};

ForwardTrace full_forward_trace(const Waveform& x, const FrameConfig& config,
                                const MagnitudeFn& magnitude_fn, const MaskFn& mask_fn);
Waveform full_forward(const Waveform& x, const FrameConfig& config,
                      const MagnitudeFn& magnitude_fn, const MaskFn& mask_fn);

// Network-backed stage functions (eval mode, no tape).
MagnitudeFn network_magnitude_fn(models::MagnitudeNet& net);
MaskFn network_mask_fn(models::RefineNet& net);
// Oracles: the clean magnitude for stage 1, the clipped ideal ratio mask for stage 2.
MagnitudeFn oracle_magnitude_fn(const Waveform& clean, const FrameConfig& config);
MaskFn oracle_mask_fn(const Waveform& clean, const FrameConfig& config,
                      double clip_bound = kDefaultClipBound);
// Stage 1 skipped: passes the noisy magnitude through.
MagnitudeFn passthrough_magnitude_fn();

// bins x frames grids <-> [B, 1, bins, frames] tensors.
nn::Tensor<float> grids_to_tensor(const std::vector<Eigen::MatrixXd>& grids);
Eigen::MatrixXd tensor_to_grid(const nn::Tensor<float>& t, Index item);

// Eq.-level losses. loss_magnitude: mean squared magnitude error.
// loss_refine: mean |s_hat - s| + mean (mask_hat - mask)^2.
template <typename Scalar>
nn::Tensor<Scalar> loss_magnitude(nn::Tape<Scalar>* tape, const nn::Tensor<Scalar>& predicted,
                                  const nn::Tensor<Scalar>& clean);
template <typename Scalar>
nn::Tensor<Scalar> loss_refine(nn::Tape<Scalar>* tape, const nn::Tensor<Scalar>& estimate,
                               const nn::Tensor<Scalar>& clean,
                               const nn::Tensor<Scalar>& mask_estimate,
                               const nn::Tensor<Scalar>& mask_target);

// Differentiable inverse STDCT: [B, 1, bins, frames] -> [B, num_samples].
template <typename Scalar>
nn::Tensor<Scalar> istdct_op(nn::Tape<Scalar>* tape, const nn::Tensor<Scalar>& spectrum,
                             const FrameConfig& config, Index num_samples);

}  // namespace dualspec::pipeline
