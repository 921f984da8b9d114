#pragma once

#include <utility>

#include "dualspec/tensor.h"

// Differentiable network layers. Spectrogram-like tensors are laid out
// [batch, channels, frequency, time]; sequence tensors are
// [sequences, steps, features].
namespace dualspec::nn {

enum class Mode { kTrain, kEval };

// Cross-correlation over (frequency, time). Weight is [out, in, kf, kt], bias
// [out]. Frequency is zero-padded by pad_freq on both sides and strided;
// time is padded with kt - 1 zeros on the past side only, so output frame t
// sees input frames t - kt + 1 .. t. Output frequency extent is
// floor((F + 2 pad_freq - kf) / stride_freq) + 1.
template <typename Scalar>
Tensor<Scalar> conv2d_causal(Tape<Scalar>* tape, const Tensor<Scalar>& input,
                             const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                             Index stride_freq, Index pad_freq);

// Transposed counterpart of conv2d_causal. Weight is [in, out, kf, kt]. Along
// frequency it is the exact adjoint of the convolution that maps output_freq
// bins to the input's bin count; along time each input frame t spreads into
// output frames t .. t + kt - 1 and anything past the last frame is cropped,
// which keeps it causal.
template <typename Scalar>
Tensor<Scalar> deconv2d_causal(Tape<Scalar>* tape, const Tensor<Scalar>& input,
                               const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                               Index stride_freq, Index pad_freq, Index output_freq);

// Frequency extent after conv2d_causal; throws ShapeError if the kernel does
// not fit the padded input.
Index conv_output_extent(Index in, Index kernel, Index stride, Index pad);

template <typename Scalar>
struct BatchNormStats {
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
};

// Per-channel normalization over every axis except axis 1. In train mode the
// batch statistics are used and the running statistics are updated
// (running <- (1 - momentum) running + momentum batch, unbiased variance).
template <typename Scalar>
Tensor<Scalar> batch_norm(Tape<Scalar>* tape, const Tensor<Scalar>& input,
                          const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          BatchNormStats<Scalar>& stats, Mode mode, double momentum = 0.1,
                          double eps = 1e-5);

// Normalization over the last axis with per-feature scale and shift.
template <typename Scalar>
Tensor<Scalar> layer_norm(Tape<Scalar>* tape, const Tensor<Scalar>& input,
                          const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          double eps = 1e-5);

// out = x for x >= 0, slope[c] * x otherwise; c indexes `axis`.
template <typename Scalar>
Tensor<Scalar> prelu(Tape<Scalar>* tape, const Tensor<Scalar>& input, const Tensor<Scalar>& slope,
                     int axis);

// Affine map over the last axis. Weight is [out, in].
template <typename Scalar>
Tensor<Scalar> linear(Tape<Scalar>* tape, const Tensor<Scalar>& input,
                      const Tensor<Scalar>& weight, const Tensor<Scalar>& bias);

// Gate blocks are stacked (reset, update, candidate):
//   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//   h' = (1 - z) * n + z * h
template <typename Scalar>
struct GruWeights {
  Tensor<Scalar> w_ih;  // [3H, I]
  Tensor<Scalar> w_hh;  // [3H, H]
  Tensor<Scalar> b_ih;  // [3H]
  Tensor<Scalar> b_hh;  // [3H]

  Index hidden() const { return w_hh.dim(1); }
  Index input_size() const { return w_ih.dim(1); }
};

template <typename Scalar>
struct GruResult {
  Tensor<Scalar> output;       // [S, L, H], aligned with input steps
  Tensor<Scalar> final_state;  // [S, H], detached
};

// Runs S independent sequences. h0 may be null (zero state). With reverse the
// recurrence runs from the last step to the first.
template <typename Scalar>
GruResult<Scalar> gru(Tape<Scalar>* tape, const Tensor<Scalar>& sequence,
                      const GruWeights<Scalar>& weights, const Tensor<Scalar>* h0 = nullptr,
                      bool reverse = false);

// Forward and backward direction outputs, both aligned to the input order.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> bigru(Tape<Scalar>* tape,
                                                const Tensor<Scalar>& sequence,
                                                const GruWeights<Scalar>& forward,
                                                const GruWeights<Scalar>& backward);

}  // namespace dualspec::nn
