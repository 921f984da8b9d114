#include "dualspec/models.h"

#include <array>
#include <cmath>
#include <map>

#include "dualspec/ops.h"

namespace dualspec::models {

namespace {

// Walks the slots of a NetStreamState in forward order.
class StreamCursor {
 public:
  explicit StreamCursor(NetStreamState* state) : state_(state) {}

  bool active() const { return state_ != nullptr; }

  Tensor<float>& next_history() {
    if (conv_ == state_->conv_history.size()) state_->conv_history.emplace_back();
    return state_->conv_history[conv_++];
  }
  Tensor<float>& next_recurrent() {
    if (rec_ == state_->recurrent.size()) state_->recurrent.emplace_back();
    return state_->recurrent[rec_++];
  }

 private:
  NetStreamState* state_;
  std::size_t conv_ = 0, rec_ = 0;
};

// Runs a time-causal layer. When streaming, the last kt - 1 input frames of
// the previous call are prepended and the matching leading outputs dropped,
// which reproduces the offline result frame for frame.
template <typename Fn>
Tensor<float> run_causal(Tape<float>* tape, const Tensor<float>& x, Index kernel_time,
                         StreamCursor& cursor, Fn&& layer) {
  if (!cursor.active() || kernel_time <= 1) return layer(x);
  Tensor<float>& history = cursor.next_history();
  const Index keep = kernel_time - 1;
  if (history.size() == 0 || history.dim(3) != keep || history.dim(1) != x.dim(1))
    history = Tensor<float>(nn::Shape{x.dim(0), x.dim(1), x.dim(2), keep});
  Tensor<float> joined = nn::concat<float>(tape, {history, x}, 3);
  const Index frames = joined.dim(3);
  history = nn::slice<float>(nullptr, joined, 3, frames - keep, frames).detach();
  Tensor<float> y = layer(joined);
  return nn::slice<float>(tape, y, 3, keep, y.dim(3));
}

ConvBlock make_block(nn::ParameterSet& params, const std::string& prefix, Index in, Index out,
                     Index kf, Index kt, bool transposed, bool normalized, nn::Rng& rng) {
  ConvBlock b;
  const nn::Shape wshape = transposed ? nn::Shape{in, out, kf, kt} : nn::Shape{out, in, kf, kt};
  b.weight = params.add_parameter(prefix + ".conv.weight", wshape);
  b.bias = params.add_parameter(prefix + ".conv.bias", {out});
  const double bound = 1.0 / std::sqrt(double(in * kf * kt));
  nn::fill_uniform(b.weight, rng, bound);
  nn::fill_uniform(b.bias, rng, bound);
  b.normalized = normalized;
  if (normalized) {
    b.bn_gamma = params.add_parameter(prefix + ".bn.weight", {out});
    b.bn_beta = params.add_parameter(prefix + ".bn.bias", {out});
    nn::fill_constant(b.bn_gamma, 1.0f);
    b.bn_stats.running_mean = params.add_buffer(prefix + ".bn.running_mean", {out}, 0.0f);
    b.bn_stats.running_var = params.add_buffer(prefix + ".bn.running_var", {out}, 1.0f);
    b.prelu_slope = params.add_parameter(prefix + ".prelu.weight", {out});
    nn::fill_constant(b.prelu_slope, 0.25f);
  }
  return b;
}

nn::GruWeights<float> make_gru(nn::ParameterSet& params, const std::string& prefix, Index in,
                               Index hidden, nn::Rng& rng) {
  nn::GruWeights<float> g;
  g.w_ih = params.add_parameter(prefix + ".weight_ih", {3 * hidden, in});
  g.w_hh = params.add_parameter(prefix + ".weight_hh", {3 * hidden, hidden});
  g.b_ih = params.add_parameter(prefix + ".bias_ih", {3 * hidden});
  g.b_hh = params.add_parameter(prefix + ".bias_hh", {3 * hidden});
  const double bound = 1.0 / std::sqrt(double(hidden));
  for (auto* t : {&g.w_ih, &g.w_hh, &g.b_ih, &g.b_hh}) nn::fill_uniform(*t, rng, bound);
  return g;
}

Tensor<float> apply_block(Tape<float>* tape, const ConvBlock& b, Tensor<float> x, Mode mode,
                          StreamCursor& cursor, Index stride, Index pad, Index output_freq,
                          bool transposed) {
  const Index kt = b.weight.dim(3);
  Tensor<float> y = run_causal(tape, x, kt, cursor, [&](const Tensor<float>& in) {
    return transposed ? nn::deconv2d_causal(tape, in, b.weight, b.bias, stride, pad, output_freq)
                      : nn::conv2d_causal(tape, in, b.weight, b.bias, stride, pad);
  });
  if (!b.normalized) return y;
  auto stats = b.bn_stats;
  y = nn::batch_norm(tape, y, b.bn_gamma, b.bn_beta, stats, mode);
  return nn::prelu(tape, y, b.prelu_slope, 1);
}

void check_ladder_config(const std::vector<Index>& enc, const std::vector<Index>& dec,
                         Index kf, Index kt, Index sf) {
  if (enc.empty() || enc.size() != dec.size())
    throw ConfigError("encoder and decoder need the same, non-zero number of blocks");
  for (std::size_t i = 0; i + 1 < dec.size(); ++i)
    if (dec[i] != enc[enc.size() - 2 - i])
      throw ConfigError("decoder channels must mirror the encoder for skip connections");
  if (kf < 1 || kt < 1 || sf < 1) throw ConfigError("kernel and stride must be positive");
}

}  // namespace

std::vector<Index> frequency_ladder(Index input_bins, Index kernel_freq, Index stride_freq,
                                   std::size_t depth) {
  std::vector<Index> ladder{input_bins};
  for (std::size_t i = 0; i < depth; ++i)
    ladder.push_back(nn::conv_output_extent(ladder.back(), kernel_freq, stride_freq,
                                            kernel_freq / 2));
  return ladder;
}

void validate(const MagnitudeNetConfig& c) {
  check_ladder_config(c.encoder_channels, c.decoder_channels, c.kernel_freq, c.kernel_time,
                      c.stride_freq);
  if (c.gru_hidden.empty()) throw ConfigError("magnitude net needs at least one GRU");
  if (!(c.input_scale > 0.0)) throw ConfigError("input_scale must be positive");
  const Index bins =
      frequency_ladder(c.input_bins, c.kernel_freq, c.stride_freq, c.encoder_channels.size()).back();
  if (bins < 1) throw ConfigError("input_bins too small for the encoder depth");
  if (bins * c.encoder_channels.back() != c.fc_units)
    throw ConfigError("fc_units " + std::to_string(c.fc_units) + " != bottleneck " +
                      std::to_string(bins) + " bins x " +
                      std::to_string(c.encoder_channels.back()) + " channels");
  if (c.decoder_channels.back() != 1) throw ConfigError("magnitude net must end in 1 channel");
}

void validate(const RefineNetConfig& c) {
  check_ladder_config(c.encoder_channels, c.decoder_channels, c.kernel_freq, c.kernel_time,
                      c.stride_freq);
  if (c.input_channels != 2) throw ConfigError("refine net takes exactly 2 input channels");
  if (!(c.input_scale > 0.0)) throw ConfigError("input_scale must be positive");
  if (c.decoder_channels.back() != 1) throw ConfigError("refine net must end in 1 channel");
  if (frequency_ladder(c.input_bins, c.kernel_freq, c.stride_freq, c.encoder_channels.size())
          .back() < 1)
    throw ConfigError("input_bins too small for the encoder depth");
}

// ---------------------------------------------------------------------------

TimeFreqBlock::TimeFreqBlock(nn::ParameterSet& params, const std::string& prefix, Index channels,
                             Index hidden, nn::Rng& rng)
    : channels_(channels), hidden_(hidden) {
  freq_forward_ = make_gru(params, prefix + ".freq_gru.forward", channels, hidden, rng);
  freq_backward_ = make_gru(params, prefix + ".freq_gru.backward", channels, hidden, rng);
  norm1_gamma_ = params.add_parameter(prefix + ".freq_norm.weight", {hidden});
  norm1_beta_ = params.add_parameter(prefix + ".freq_norm.bias", {hidden});
  prelu1_ = params.add_parameter(prefix + ".freq_prelu.weight", {hidden});
  time_ = make_gru(params, prefix + ".time_gru", hidden, hidden, rng);
  norm2_gamma_ = params.add_parameter(prefix + ".time_norm.weight", {hidden});
  norm2_beta_ = params.add_parameter(prefix + ".time_norm.bias", {hidden});
  prelu2_ = params.add_parameter(prefix + ".time_prelu.weight", {hidden});
  proj_weight_ = params.add_parameter(prefix + ".proj.weight", {channels, hidden});
  proj_bias_ = params.add_parameter(prefix + ".proj.bias", {channels});
  nn::fill_constant(norm1_gamma_, 1.0f);
  nn::fill_constant(norm2_gamma_, 1.0f);
  nn::fill_constant(prelu1_, 0.25f);
  nn::fill_constant(prelu2_, 0.25f);
  const double bound = 1.0 / std::sqrt(double(hidden));
  nn::fill_uniform(proj_weight_, rng, bound);
  nn::fill_uniform(proj_bias_, rng, bound);
}

void TimeFreqBlock::zero_output_projection() {
  proj_weight_.value().setZero();
  proj_bias_.value().setZero();
}

Tensor<float> TimeFreqBlock::forward(Tape<float>* tape, const Tensor<float>& x,
                                     Tensor<float>* time_state) const {
  if (x.rank() != 4 || x.dim(1) != channels_)
    throw ShapeError("time-frequency block: expected [B, " + std::to_string(channels_) +
                     ", F, T], got " + nn::shape_string(x.shape()));
  const Index batch = x.dim(0), bins = x.dim(2), frames = x.dim(3);
  static constexpr std::array<int, 4> kToFrameMajor{0, 3, 2, 1};   // [B, T, F, C]
  static constexpr std::array<int, 4> kToBinMajor{0, 2, 1, 3};     // [B, F, T, h]
  static constexpr std::array<int, 4> kToChannelFirst{0, 3, 1, 2}; // [B, C, F, T]

  // Along frequency inside each frame.
  Tensor<float> seq = nn::permute<float>(tape, x, kToFrameMajor);
  seq = nn::reshape(tape, seq, {batch * frames, bins, channels_});
  auto [fwd, bwd] = nn::bigru(tape, seq, freq_forward_, freq_backward_);
  Tensor<float> h = nn::add(tape, fwd, bwd);
  h = nn::layer_norm(tape, h, norm1_gamma_, norm1_beta_);
  h = nn::prelu(tape, h, prelu1_, -1);

  // Along time for each bin.
  h = nn::reshape(tape, h, {batch, frames, bins, hidden_});
  h = nn::permute<float>(tape, h, kToBinMajor);
  h = nn::reshape(tape, h, {batch * bins, frames, hidden_});
  const Tensor<float>* h0 =
      (time_state != nullptr && time_state->size() == batch * bins * hidden_) ? time_state
                                                                               : nullptr;
  auto rec = nn::gru(tape, h, time_, h0);
  if (time_state != nullptr) *time_state = rec.final_state;
  h = nn::layer_norm(tape, rec.output, norm2_gamma_, norm2_beta_);
  h = nn::prelu(tape, h, prelu2_, -1);

  h = nn::linear(tape, h, proj_weight_, proj_bias_);
  h = nn::reshape(tape, h, {batch, bins, frames, channels_});
  h = nn::permute<float>(tape, h, kToChannelFirst);
  return nn::add(tape, x, h);
}

// ---------------------------------------------------------------------------

MagnitudeNet::MagnitudeNet(const MagnitudeNetConfig& config, std::uint64_t seed)
    : config_(config) {
  validate(config_);
  nn::Rng rng(seed);
  ladder_ = frequency_ladder(config_.input_bins, config_.kernel_freq, config_.stride_freq,
                             config_.encoder_channels.size());
  const auto& enc = config_.encoder_channels;
  const auto& dec = config_.decoder_channels;
  Index in = 1;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    encoder_.push_back(make_block(params_, "encoder." + std::to_string(i), in, enc[i],
                                  config_.kernel_freq, config_.kernel_time, false, true, rng));
    in = enc[i];
  }
  Index features = config_.fc_units;
  for (std::size_t i = 0; i < config_.gru_hidden.size(); ++i) {
    grus_.push_back({make_gru(params_, "gru." + std::to_string(i), features,
                              config_.gru_hidden[i], rng)});
    features = config_.gru_hidden[i];
  }
  fc_weight_ = params_.add_parameter("fc.weight", {config_.fc_units, features});
  fc_bias_ = params_.add_parameter("fc.bias", {config_.fc_units});
  nn::fill_uniform(fc_weight_, rng, 1.0 / std::sqrt(double(features)));
  nn::fill_uniform(fc_bias_, rng, 1.0 / std::sqrt(double(features)));
  for (std::size_t i = 0; i < dec.size(); ++i) {
    const Index skip = enc[enc.size() - 1 - i];
    decoder_.push_back(make_block(params_, "decoder." + std::to_string(i), in + skip, dec[i],
                                  config_.kernel_freq, config_.kernel_time, true,
                                  i + 1 < dec.size(), rng));
    in = dec[i];
  }
}

Tensor<float> MagnitudeNet::forward(Tape<float>* tape, const Tensor<float>& magnitude, Mode mode,
                                    NetStreamState* stream) {
  if (magnitude.rank() != 4 || magnitude.dim(1) != 1 || magnitude.dim(2) != config_.input_bins)
    throw ShapeError("magnitude net: expected [B, 1, " + std::to_string(config_.input_bins) +
                     ", T], got " + nn::shape_string(magnitude.shape()));
  StreamCursor cursor(stream);
  const Index pad = config_.kernel_freq / 2;
  const Index batch = magnitude.dim(0), frames = magnitude.dim(3);

  Tensor<float> x = nn::scale(tape, magnitude, float(config_.input_scale));
  std::vector<Tensor<float>> skips;
  for (const auto& block : encoder_) {
    x = apply_block(tape, block, x, mode, cursor, config_.stride_freq, pad, 0, false);
    skips.push_back(x);
  }

  const Index channels = x.dim(1), bins = x.dim(2);
  static constexpr std::array<int, 4> kFrameMajor{0, 3, 1, 2};
  static constexpr std::array<int, 4> kChannelFirst{0, 2, 3, 1};
  Tensor<float> seq = nn::permute<float>(tape, x, kFrameMajor);
  seq = nn::reshape(tape, seq, {batch, frames, channels * bins});
  for (auto& layer : grus_) {
    Tensor<float>* state = nullptr;
    if (cursor.active()) state = &cursor.next_recurrent();
    const Tensor<float>* h0 = (state != nullptr && state->size() > 0) ? state : nullptr;
    auto r = nn::gru(tape, seq, layer.weights, h0);
    if (state != nullptr) *state = r.final_state;
    seq = r.output;
  }
  seq = nn::linear(tape, seq, fc_weight_, fc_bias_);
  seq = nn::reshape(tape, seq, {batch, frames, channels, bins});
  x = nn::permute<float>(tape, seq, kChannelFirst);

  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    x = nn::concat<float>(tape, {x, skips[skips.size() - 1 - i]}, 1);
    const Index target = ladder_[ladder_.size() - 2 - i];
    x = apply_block(tape, decoder_[i], x, mode, cursor, config_.stride_freq, pad, target, true);
  }
  x = nn::softplus(tape, x);
  return nn::scale(tape, x, float(1.0 / config_.input_scale));
}

// ---------------------------------------------------------------------------

RefineNet::RefineNet(const RefineNetConfig& config, std::uint64_t seed) : config_(config) {
  validate(config_);
  nn::Rng rng(seed);
  ladder_ = frequency_ladder(config_.input_bins, config_.kernel_freq, config_.stride_freq,
                             config_.encoder_channels.size());
  const auto& enc = config_.encoder_channels;
  const auto& dec = config_.decoder_channels;
  Index in = config_.input_channels;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    encoder_.push_back(make_block(params_, "encoder." + std::to_string(i), in, enc[i],
                                  config_.kernel_freq, config_.kernel_time, false, true, rng));
    in = enc[i];
  }
  for (std::size_t i = 0; i < config_.block_hidden.size(); ++i)
    blocks_.emplace_back(params_, "tfblock." + std::to_string(i), in, config_.block_hidden[i], rng);
  for (std::size_t i = 0; i < dec.size(); ++i) {
    const Index skip = enc[enc.size() - 1 - i];
    decoder_.push_back(make_block(params_, "decoder." + std::to_string(i), in + skip, dec[i],
                                  config_.kernel_freq, config_.kernel_time, true,
                                  i + 1 < dec.size(), rng));
    in = dec[i];
  }
  // Start the mask near 1 so an untrained refiner passes the pre-enhanced spectrum through.
  nn::fill_constant(decoder_.back().bias, 1.0f);
}

Tensor<float> RefineNet::forward(Tape<float>* tape, const Tensor<float>& noisy,
                                 const Tensor<float>& pre_enhanced, Mode mode,
                                 NetStreamState* stream) {
  auto check = [&](const Tensor<float>& t, const char* what) {
    if (t.rank() != 4 || t.dim(1) != 1 || t.dim(2) != config_.input_bins)
      throw ShapeError(std::string("refine net: ") + what + " must be [B, 1, " +
                       std::to_string(config_.input_bins) + ", T], got " +
                       nn::shape_string(t.shape()));
  };
  check(noisy, "noisy input");
  check(pre_enhanced, "pre-enhanced input");
  if (noisy.shape() != pre_enhanced.shape())
    throw ShapeError("refine net: noisy and pre-enhanced inputs differ in shape");
  StreamCursor cursor(stream);
  const Index pad = config_.kernel_freq / 2;

  Tensor<float> x = nn::concat<float>(tape, {noisy, pre_enhanced}, 1);
  if (config_.input_scale != 1.0) x = nn::scale(tape, x, float(config_.input_scale));
  std::vector<Tensor<float>> skips;
  for (const auto& block : encoder_) {
    x = apply_block(tape, block, x, mode, cursor, config_.stride_freq, pad, 0, false);
    skips.push_back(x);
  }
  for (const auto& block : blocks_) {
    Tensor<float>* state = cursor.active() ? &cursor.next_recurrent() : nullptr;
    x = block.forward(tape, x, state);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    x = nn::concat<float>(tape, {x, skips[skips.size() - 1 - i]}, 1);
    const Index target = ladder_[ladder_.size() - 2 - i];
    x = apply_block(tape, decoder_[i], x, mode, cursor, config_.stride_freq, pad, target, true);
  }
  return x;
}

// ---------------------------------------------------------------------------

ParameterReport count_parameters(const nn::ParameterSet& params) {
  ParameterReport report;
  std::map<std::string, std::size_t> slot;
  for (const auto& e : params.entries()) {
    if (e.role != nn::TensorRole::kParameter) continue;
    const auto dot = e.name.rfind('.');
    const std::string layer = dot == std::string::npos ? e.name : e.name.substr(0, dot);
    auto it = slot.find(layer);
    if (it == slot.end()) {
      it = slot.emplace(layer, report.layers.size()).first;
      report.layers.push_back({layer, {}, 0});
    }
    auto& lc = report.layers[it->second];
    lc.tensors.push_back(e.name + " " + nn::shape_string(e.tensor.shape()));
    lc.count += e.tensor.size();
    report.total += e.tensor.size();
  }
  return report;
}

}  // namespace dualspec::models
