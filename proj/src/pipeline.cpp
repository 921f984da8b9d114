#include "dualspec/pipeline.h"

#include <algorithm>
#include <cmath>

#include "dualspec/error.h"
#include "dualspec/ops.h"

namespace dualspec::pipeline {

Eigen::MatrixXd ratio_mask(const Eigen::Ref<const Eigen::MatrixXd>& clean,
                           const Eigen::Ref<const Eigen::MatrixXd>& pre_enhanced,
                           double clip_bound) {
  if (clean.rows() != pre_enhanced.rows() || clean.cols() != pre_enhanced.cols())
    throw ShapeError("ratio mask: clean and pre-enhanced grids differ in shape");
  if (!(clip_bound > 0.0)) throw ConfigError("clip bound must be positive");
  return clean.binaryExpr(pre_enhanced, [clip_bound](double s, double d) {
    if (std::abs(d) < kMaskFloor) d = d < 0.0 ? -kMaskFloor : kMaskFloor;
    return std::clamp(s / d, -clip_bound, clip_bound);
  });
}

Dctirm compute_dctirm(const dsp::RealSpectrogram& clean, const dsp::RealSpectrogram& pre_enhanced,
                      double clip_bound) {
  return {ratio_mask(clean.frames, pre_enhanced.frames, clip_bound), clip_bound};
}

Stage1Result stage1_enhance(const Waveform& x, const FrameConfig& config,
                            const MagnitudeFn& magnitude_fn) {
  const dsp::StftResult noisy = dsp::stft(x, config);
  Eigen::MatrixXd enhanced = magnitude_fn(noisy.magnitude.frames);
  if (enhanced.rows() != noisy.magnitude.frames.rows() ||
      enhanced.cols() != noisy.magnitude.frames.cols())
    throw ShapeError("stage 1 returned a grid of the wrong shape");
  if (!enhanced.allFinite()) throw NumericError("stage 1 produced non-finite magnitudes");
  Stage1Result r;
  r.enhanced = dsp::apply_phase({std::move(enhanced), config, x.size()}, noisy.complex);
  r.intermediate = dsp::istft(r.enhanced, x.sample_rate);
  return r;
}

ForwardTrace full_forward_trace(const Waveform& x, const FrameConfig& config,
                                const MagnitudeFn& magnitude_fn, const MaskFn& mask_fn) {
  ForwardTrace t;
  t.stage1 = stage1_enhance(x, config, magnitude_fn);
  t.pre_enhanced_dct = dsp::stdct(t.stage1.intermediate, config);
  t.noisy_dct = dsp::stdct(x, config);
  t.mask = mask_fn(t.noisy_dct.frames, t.pre_enhanced_dct.frames);
  if (t.mask.rows() != t.noisy_dct.frames.rows() || t.mask.cols() != t.noisy_dct.frames.cols())
    throw ShapeError("stage 2 returned a mask of the wrong shape");
  if (!t.mask.allFinite()) throw NumericError("stage 2 produced a non-finite mask");
  dsp::RealSpectrogram refined{t.mask.cwiseProduct(t.pre_enhanced_dct.frames), config, x.size()};
  t.enhanced = dsp::istdct(refined, x.sample_rate);
  return t;
}

Waveform full_forward(const Waveform& x, const FrameConfig& config,
                      const MagnitudeFn& magnitude_fn, const MaskFn& mask_fn) {
  return full_forward_trace(x, config, magnitude_fn, mask_fn).enhanced;
}

nn::Tensor<float> grids_to_tensor(const std::vector<Eigen::MatrixXd>& grids) {
  if (grids.empty()) throw ShapeError("no grids to stack");
  const Index bins = grids[0].rows(), frames = grids[0].cols();
  nn::Tensor<float> t(nn::Shape{Index(grids.size()), 1, bins, frames});
  for (std::size_t b = 0; b < grids.size(); ++b) {
    if (grids[b].rows() != bins || grids[b].cols() != frames)
      throw ShapeError("stacked grids differ in shape");
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        t.data() + b * bins * frames, bins, frames) = grids[b].cast<float>();
  }
  return t;
}

Eigen::MatrixXd tensor_to_grid(const nn::Tensor<float>& t, Index item) {
  const Index bins = t.dim(2), frames = t.dim(3);
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
             t.data() + item * t.dim(1) * bins * frames, bins, frames)
      .cast<double>();
}

MagnitudeFn network_magnitude_fn(models::MagnitudeNet& net) {
  return [&net](const Eigen::MatrixXd& magnitude) {
    auto out = net.forward(nullptr, grids_to_tensor({magnitude}), nn::Mode::kEval);
    return tensor_to_grid(out, 0);
  };
}

MaskFn network_mask_fn(models::RefineNet& net) {
  return [&net](const Eigen::MatrixXd& noisy, const Eigen::MatrixXd& pre) {
    auto out = net.forward(nullptr, grids_to_tensor({noisy}), grids_to_tensor({pre}),
                           nn::Mode::kEval);
    return tensor_to_grid(out, 0);
  };
}

MagnitudeFn oracle_magnitude_fn(const Waveform& clean, const FrameConfig& config) {
  Eigen::MatrixXd target = dsp::stft(clean, config).magnitude.frames;
  return [target = std::move(target)](const Eigen::MatrixXd& noisy) {
    if (noisy.rows() != target.rows() || noisy.cols() != target.cols())
      throw ShapeError("oracle magnitude: noisy and clean grids differ");
    return target;
  };
}

MaskFn oracle_mask_fn(const Waveform& clean, const FrameConfig& config, double clip_bound) {
  Eigen::MatrixXd clean_dct = dsp::stdct(clean, config).frames;
  return [clean_dct = std::move(clean_dct), clip_bound](const Eigen::MatrixXd&,
                                                        const Eigen::MatrixXd& pre) {
    return ratio_mask(clean_dct, pre, clip_bound);
  };
}

MagnitudeFn passthrough_magnitude_fn() {
  return [](const Eigen::MatrixXd& m) { return m; };
}

template <typename Scalar>
nn::Tensor<Scalar> loss_magnitude(nn::Tape<Scalar>* tape, const nn::Tensor<Scalar>& predicted,
                                  const nn::Tensor<Scalar>& clean) {
  return nn::mean_squared_error(tape, predicted, clean);
}

template <typename Scalar>
nn::Tensor<Scalar> loss_refine(nn::Tape<Scalar>* tape, const nn::Tensor<Scalar>& estimate,
                               const nn::Tensor<Scalar>& clean,
                               const nn::Tensor<Scalar>& mask_estimate,
                               const nn::Tensor<Scalar>& mask_target) {
  auto time_term = nn::mean_absolute_error(tape, estimate, clean);
  auto mask_term = nn::mean_squared_error(tape, mask_estimate, mask_target);
  return nn::add(tape, time_term, mask_term);
}

template <typename Scalar>
nn::Tensor<Scalar> istdct_op(nn::Tape<Scalar>* tape, const nn::Tensor<Scalar>& spectrum,
                             const FrameConfig& config, Index num_samples) {
  using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (spectrum.rank() != 4 || spectrum.dim(1) != 1 || spectrum.dim(2) != config.real_bins())
    throw ShapeError("istdct_op: expected [B, 1, " + std::to_string(config.real_bins()) +
                     ", T], got " + nn::shape_string(spectrum.shape()));
  const Index batch = spectrum.dim(0), bins = spectrum.dim(2), frames = spectrum.dim(3);
  const Eigen::MatrixXd& dct = dsp::dct_matrix(config.transform_points);
  nn::Tensor<Scalar> out(nn::Shape{batch, num_samples});
  for (Index b = 0; b < batch; ++b) {
    const Eigen::MatrixXd grid =
        Eigen::Map<const RowMat>(spectrum.data() + b * bins * frames, bins, frames)
            .template cast<double>();
    const Eigen::MatrixXd time_frames = dct.transpose() * grid;
    out.value().segment(b * num_samples, num_samples) =
        dsp::overlap_add(time_frames, config, num_samples).array().template cast<Scalar>();
  }
  if (nn::should_record(tape, spectrum)) {
    out.set_requires_grad(true);
    nn::Tensor<Scalar> in = spectrum;
    tape->record([=]() mutable {
      if (!out.has_grad()) return;
      const Eigen::MatrixXd& dct = dsp::dct_matrix(config.transform_points);
      for (Index b = 0; b < batch; ++b) {
        const Eigen::VectorXd g =
            out.grad().segment(b * num_samples, num_samples).template cast<double>().matrix();
        const Eigen::MatrixXd frames_grad =
            dct * dsp::overlap_add_adjoint(g, config, frames);
        Eigen::Map<RowMat>(in.grad().data() + b * bins * frames, bins, frames) +=
            frames_grad.template cast<Scalar>();
      }
    });
  }
  return out;
}

template nn::Tensor<float> loss_magnitude(nn::Tape<float>*, const nn::Tensor<float>&,
                                          const nn::Tensor<float>&);
template nn::Tensor<double> loss_magnitude(nn::Tape<double>*, const nn::Tensor<double>&,
                                           const nn::Tensor<double>&);
template nn::Tensor<float> loss_refine(nn::Tape<float>*, const nn::Tensor<float>&,
                                       const nn::Tensor<float>&, const nn::Tensor<float>&,
                                       const nn::Tensor<float>&);
template nn::Tensor<double> loss_refine(nn::Tape<double>*, const nn::Tensor<double>&,
                                        const nn::Tensor<double>&, const nn::Tensor<double>&,
                                        const nn::Tensor<double>&);
template nn::Tensor<float> istdct_op(nn::Tape<float>*, const nn::Tensor<float>&,
                                     const FrameConfig&, Index);
template nn::Tensor<double> istdct_op(nn::Tape<double>*, const nn::Tensor<double>&,
                                      const FrameConfig&, Index);

}  // namespace dualspec::pipeline
