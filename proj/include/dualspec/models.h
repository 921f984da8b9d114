#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualspec/layers.h"
#include "dualspec/params.h"

namespace dualspec::models {

using nn::Index;
using nn::Mode;
using nn::Tensor;
using nn::Tape;

// Stage 1: convolutional recurrent network on STFT magnitudes.
struct MagnitudeNetConfig {
  std::vector<Index> encoder_channels{16, 32, 64, 128, 256};
  std::vector<Index> decoder_channels{128, 64, 32, 16, 1};
  Index kernel_freq = 3;
  Index kernel_time = 2;
  Index stride_freq = 2;
  std::vector<Index> gru_hidden{128, 64, 32};
  Index fc_units = 2304;
  Index input_bins = 257;
  // Magnitudes are multiplied by this before the network and the softplus
  // output is divided by it.
  double input_scale = 1.0;

  friend bool operator==(const MagnitudeNetConfig&, const MagnitudeNetConfig&) = default;
};

// Stage 2: convolutional network with time-frequency sequence blocks on
// STDCT coefficients; predicts a signed mask.
struct RefineNetConfig {
  std::vector<Index> encoder_channels{16, 32, 64, 128, 256};
  std::vector<Index> decoder_channels{128, 64, 32, 16, 1};
  Index kernel_freq = 5;
  Index kernel_time = 2;
  Index stride_freq = 2;
  std::vector<Index> block_hidden{128, 64, 32};  // one time-frequency block per entry
  Index input_bins = 512;
  Index input_channels = 2;
  double input_scale = 1.0;

  friend bool operator==(const RefineNetConfig&, const RefineNetConfig&) = default;
};

// Bin counts after each encoder stage, starting with the input extent.
std::vector<Index> frequency_ladder(Index input_bins, Index kernel_freq, Index stride_freq,
                                   std::size_t depth = 5);

void validate(const MagnitudeNetConfig& config);
void validate(const RefineNetConfig& config);

// Recurrent states and causal-convolution histories for frame-by-frame
// inference. Slots are filled in forward order on first use.
struct NetStreamState {
  std::vector<Tensor<float>> conv_history;
  std::vector<Tensor<float>> recurrent;
  bool empty() const { return conv_history.empty() && recurrent.empty(); }
};

struct ConvBlock {
  Tensor<float> weight, bias;
  bool normalized = true;
  Tensor<float> bn_gamma, bn_beta;
  nn::BatchNormStats<float> bn_stats;
  Tensor<float> prelu_slope;
};

struct GruLayer {
  nn::GruWeights<float> weights;
};

class TimeFreqBlock {
 public:
  TimeFreqBlock(nn::ParameterSet& params, const std::string& prefix, Index channels, Index hidden,
                nn::Rng& rng);

  // x: [B, channels, F, T] -> same shape. The frequency BiGRU runs inside each
  // frame; the time GRU runs along frames per bin.
  Tensor<float> forward(Tape<float>* tape, const Tensor<float>& x, Tensor<float>* time_state) const;

  Index hidden() const { return hidden_; }
  // Zeroes the projections, turning the block into the identity map.
  void zero_output_projection();

 private:
  Index channels_, hidden_;
  nn::GruWeights<float> freq_forward_, freq_backward_, time_;
  Tensor<float> norm1_gamma_, norm1_beta_, prelu1_;
  Tensor<float> norm2_gamma_, norm2_beta_, prelu2_;
  Tensor<float> proj_weight_, proj_bias_;
};

class MagnitudeNet {
 public:
  MagnitudeNet(const MagnitudeNetConfig& config, std::uint64_t seed);
  MagnitudeNet(const MagnitudeNet&) = delete;
  MagnitudeNet& operator=(const MagnitudeNet&) = delete;
  MagnitudeNet(MagnitudeNet&&) = default;
  MagnitudeNet& operator=(MagnitudeNet&&) = default;

  // magnitude: [B, 1, input_bins, T] -> enhanced magnitude of the same shape, >= 0.
  Tensor<float> forward(Tape<float>* tape, const Tensor<float>& magnitude, Mode mode,
                        NetStreamState* stream = nullptr);

  const MagnitudeNetConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

 private:
  MagnitudeNetConfig config_;
  nn::ParameterSet params_;
  std::vector<Index> ladder_;
  std::vector<ConvBlock> encoder_, decoder_;
  std::vector<GruLayer> grus_;
  Tensor<float> fc_weight_, fc_bias_;
};

class RefineNet {
 public:
  RefineNet(const RefineNetConfig& config, std::uint64_t seed);
  RefineNet(const RefineNet&) = delete;
  RefineNet& operator=(const RefineNet&) = delete;
  RefineNet(RefineNet&&) = default;
  RefineNet& operator=(RefineNet&&) = default;

  // noisy, pre_enhanced: [B, 1, input_bins, T] -> mask [B, 1, input_bins, T].
  Tensor<float> forward(Tape<float>* tape, const Tensor<float>& noisy,
                        const Tensor<float>& pre_enhanced, Mode mode,
                        NetStreamState* stream = nullptr);

  const RefineNetConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  std::vector<TimeFreqBlock>& blocks() { return blocks_; }

 private:
  RefineNetConfig config_;
  nn::ParameterSet params_;
  std::vector<Index> ladder_;
  std::vector<ConvBlock> encoder_, decoder_;
  std::vector<TimeFreqBlock> blocks_;
};

struct LayerCount {
  std::string layer;
  std::vector<std::string> tensors;  // "name [shape]"
  Index count = 0;
};

struct ParameterReport {
  std::vector<LayerCount> layers;
  Index total = 0;
};

// Learnable scalars grouped by layer (name prefix before the last '.').
ParameterReport count_parameters(const nn::ParameterSet& params);

}  // namespace dualspec::models
