#pragma once

#include <deque>
#include <functional>
#include <memory>

#include "dualspec/dsp.h"
#include "dualspec/models.h"

namespace dualspec::pipeline {

using dsp::FrameConfig;
using dsp::Index;

// Per-frame stage functions. They are called once per frame in order and may
// carry state between calls.
using FrameMagnitudeFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& noisy_magnitude)>;
using FrameMaskFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& noisy_dct,
                                                  const Eigen::VectorXd& pre_enhanced_dct)>;

// Frame-at-a-time wrappers around the networks (eval mode). Each owns its
// stream state, so one instance serves exactly one stream.
FrameMagnitudeFn streaming_magnitude_fn(models::MagnitudeNet& net);
FrameMaskFn streaming_mask_fn(models::RefineNet& net);

// Causal two-stage enhancement over arbitrarily sized sample blocks.
//
// Output sample m depends on inputs 0 .. m + latency() - 1 only. After finish()
// the concatenated output has the same length as the input and matches the
// offline pipeline.
class StreamingEnhancer {
 public:
  StreamingEnhancer(const FrameConfig& config, FrameMagnitudeFn stage1, FrameMaskFn stage2);
  StreamingEnhancer(const FrameConfig& config, models::MagnitudeNet& stage1,
                    models::RefineNet& stage2);

  // Appends input samples and returns whatever output became final.
  Eigen::VectorXd push(const Eigen::Ref<const Eigen::VectorXd>& samples);
  // Ends the stream: returns the remaining output so the total equals the
  // number of samples pushed. The enhancer cannot be reused afterwards.
  Eigen::VectorXd finish();

  // window_len + (window_len - hop): one analysis window plus the synthesis
  // tail, for each of the two cascaded transforms combined.
  Index latency() const { return 2 * config_.edge_pad() + config_.hop; }
  Index samples_in() const { return samples_in_; }
  Index samples_out() const { return samples_out_; }

  static Index latency_for(const FrameConfig& config) {
    return 2 * config.edge_pad() + config.hop;
  }

 private:
  class Framer;
  class OverlapAdder;

  void process_input_frame(const Eigen::VectorXd& windowed);
  void feed_intermediate(const Eigen::Ref<const Eigen::VectorXd>& y, Eigen::VectorXd& out_acc);
  void process_dct_frame(const Eigen::VectorXd& windowed, Eigen::VectorXd& out_acc);

  FrameConfig config_;
  FrameMagnitudeFn stage1_;
  FrameMaskFn stage2_;
  std::shared_ptr<Framer> input_framer_, intermediate_framer_;
  std::shared_ptr<OverlapAdder> stft_synth_, dct_synth_;
  std::deque<Eigen::VectorXd> noisy_dct_queue_;
  Eigen::VectorXd pending_intermediate_;
  Index samples_in_ = 0, samples_out_ = 0;
  Index intermediate_out_ = 0;
  bool finished_ = false;
};

}  // namespace dualspec::pipeline
