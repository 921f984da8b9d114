#include "dualspec/streaming.h"

#include <vector>

#include "dualspec/error.h"
#include "dualspec/pipeline.h"

namespace dualspec::pipeline {

// Pads the stream with edge_pad() zeros up front and hands out windowed
// frames as soon as a full window is buffered.
class StreamingEnhancer::Framer {
 public:
  explicit Framer(const FrameConfig& config)
      : config_(config), window_(dsp::make_window(config)),
        buffer_(static_cast<std::size_t>(config.edge_pad()), 0.0) {}

  void push(const Eigen::Ref<const Eigen::VectorXd>& samples) {
    buffer_.insert(buffer_.end(), samples.data(), samples.data() + samples.size());
    pushed_ += samples.size();
  }
  void push_zeros(Index n) {
    buffer_.insert(buffer_.end(), static_cast<std::size_t>(n), 0.0);
    pushed_ += n;
  }

  bool next(Eigen::VectorXd& frame) {
    const Index available = Index(buffer_.size()) - start_;
    if (available < config_.window_len) return false;
    frame = Eigen::VectorXd::Zero(config_.transform_points);
    frame.head(config_.window_len) =
        Eigen::Map<const Eigen::VectorXd>(buffer_.data() + start_, config_.window_len)
            .cwiseProduct(window_);
    start_ += config_.hop;
    if (start_ > 8 * config_.window_len) {
      buffer_.erase(buffer_.begin(), buffer_.begin() + start_);
      start_ = 0;
    }
    return true;
  }

  // Real samples pushed so far (excluding the leading pad).
  Index pushed() const { return pushed_; }

 private:
  FrameConfig config_;
  Eigen::VectorXd window_;
  std::vector<double> buffer_;
  Index start_ = 0;
  Index pushed_ = 0;
};

// Weighted overlap-add with the steady-state envelope. Every real sample
// position sees the full set of overlapping frames, so dividing by the
// periodic envelope matches the offline synthesis.
class StreamingEnhancer::OverlapAdder {
 public:
  explicit OverlapAdder(const FrameConfig& config)
      : config_(config), window_(dsp::make_window(config)),
        acc_(Eigen::VectorXd::Zero(config.window_len)),
        envelope_(Eigen::VectorXd::Zero(config.hop)) {
    for (Index k = 0; k < config.window_len; ++k)
      envelope_(k % config.hop) += window_(k) * window_(k);
  }

  // Adds one time-domain frame; returns the samples it completed with the
  // leading pad removed.
  Eigen::VectorXd add(const Eigen::VectorXd& frame) {
    const Index hop = config_.hop, len = config_.window_len;
    acc_ += frame.head(len).cwiseProduct(window_);
    Eigen::VectorXd done = acc_.head(hop).cwiseQuotient(envelope_);
    acc_.head(len - hop) = acc_.segment(hop, len - hop).eval();
    acc_.tail(hop).setZero();

    const Index skip = std::min<Index>(hop, std::max<Index>(0, config_.edge_pad() - position_));
    position_ += hop;
    return done.tail(hop - skip);
  }

 private:
  FrameConfig config_;
  Eigen::VectorXd window_;
  Eigen::VectorXd acc_;
  Eigen::VectorXd envelope_;
  Index position_ = 0;  // padded position of acc_(0)
};

FrameMagnitudeFn streaming_magnitude_fn(models::MagnitudeNet& net) {
  auto state = std::make_shared<models::NetStreamState>();
  return [&net, state](const Eigen::VectorXd& magnitude) {
    Eigen::MatrixXd grid = magnitude;
    auto out = net.forward(nullptr, grids_to_tensor({grid}), nn::Mode::kEval, state.get());
    return Eigen::VectorXd(tensor_to_grid(out, 0).col(0));
  };
}

FrameMaskFn streaming_mask_fn(models::RefineNet& net) {
  auto state = std::make_shared<models::NetStreamState>();
  return [&net, state](const Eigen::VectorXd& noisy, const Eigen::VectorXd& pre) {
    Eigen::MatrixXd n = noisy, p = pre;
    auto out = net.forward(nullptr, grids_to_tensor({n}), grids_to_tensor({p}), nn::Mode::kEval,
                           state.get());
    return Eigen::VectorXd(tensor_to_grid(out, 0).col(0));
  };
}

StreamingEnhancer::StreamingEnhancer(const FrameConfig& config, FrameMagnitudeFn stage1,
                                     FrameMaskFn stage2)
    : config_(config), stage1_(std::move(stage1)), stage2_(std::move(stage2)) {
  dsp::validate(config_);
  if (!stage1_ || !stage2_) throw UsageError("streaming enhancer needs both stage functions");
  input_framer_ = std::make_shared<Framer>(config_);
  intermediate_framer_ = std::make_shared<Framer>(config_);
  stft_synth_ = std::make_shared<OverlapAdder>(config_);
  dct_synth_ = std::make_shared<OverlapAdder>(config_);
}

StreamingEnhancer::StreamingEnhancer(const FrameConfig& config, models::MagnitudeNet& stage1,
                                     models::RefineNet& stage2)
    : StreamingEnhancer(config, streaming_magnitude_fn(stage1), streaming_mask_fn(stage2)) {}

void StreamingEnhancer::process_input_frame(const Eigen::VectorXd& windowed) {
  const Index points = config_.transform_points;
  noisy_dct_queue_.push_back(dsp::dct_matrix(points) * windowed);

  const Eigen::VectorXcd spectrum = dsp::rfft(windowed);
  const Eigen::VectorXd enhanced = stage1_(spectrum.cwiseAbs());
  if (enhanced.size() != spectrum.size())
    throw ShapeError("streaming stage 1 returned the wrong number of bins");
  if (!enhanced.allFinite()) throw NumericError("stage 1 produced non-finite magnitudes");
  Eigen::VectorXcd combined(spectrum.size());
  for (Index k = 0; k < spectrum.size(); ++k) {
    const double r = std::abs(spectrum(k));
    combined(k) = r > 0.0 ? enhanced(k) * (spectrum(k) / r) : std::complex<double>(0.0);
  }
  const Eigen::VectorXd y = stft_synth_->add(dsp::irfft(combined, points));
  pending_intermediate_.conservativeResize(pending_intermediate_.size() + y.size());
  pending_intermediate_.tail(y.size()) = y;
}

void StreamingEnhancer::process_dct_frame(const Eigen::VectorXd& windowed,
                                          Eigen::VectorXd& out_acc) {
  const Eigen::MatrixXd& dct = dsp::dct_matrix(config_.transform_points);
  if (noisy_dct_queue_.empty()) throw Error(ErrorKind::kNumeric, "streaming frame queue underrun");
  const Eigen::VectorXd noisy = std::move(noisy_dct_queue_.front());
  noisy_dct_queue_.pop_front();
  const Eigen::VectorXd pre = dct * windowed;
  const Eigen::VectorXd mask = stage2_(noisy, pre);
  if (mask.size() != pre.size()) throw ShapeError("streaming stage 2 returned the wrong size");
  if (!mask.allFinite()) throw NumericError("stage 2 produced a non-finite mask");
  const Eigen::VectorXd s = dct_synth_->add(dct.transpose() * mask.cwiseProduct(pre));
  out_acc.conservativeResize(out_acc.size() + s.size());
  out_acc.tail(s.size()) = s;
}

void StreamingEnhancer::feed_intermediate(const Eigen::Ref<const Eigen::VectorXd>& y,
                                          Eigen::VectorXd& out_acc) {
  intermediate_framer_->push(y);
  intermediate_out_ += y.size();
  Eigen::VectorXd frame;
  while (intermediate_framer_->next(frame)) process_dct_frame(frame, out_acc);
}

Eigen::VectorXd StreamingEnhancer::push(const Eigen::Ref<const Eigen::VectorXd>& samples) {
  if (finished_) throw UsageError("streaming enhancer already finished");
  if (!samples.allFinite()) throw DomainError("non-finite input samples");
  input_framer_->push(samples);
  samples_in_ += samples.size();
  Eigen::VectorXd frame;
  while (input_framer_->next(frame)) process_input_frame(frame);

  Eigen::VectorXd out(0);
  if (pending_intermediate_.size() > 0) {
    feed_intermediate(pending_intermediate_, out);
    pending_intermediate_.resize(0);
  }
  samples_out_ += out.size();
  return out;
}

Eigen::VectorXd StreamingEnhancer::finish() {
  if (finished_) throw UsageError("streaming enhancer already finished");
  finished_ = true;
  const Index n = samples_in_;
  Eigen::VectorXd out(0);
  if (n == 0) return out;

  const Index frames = dsp::frame_count(n, config_);
  const Index padded = (frames - 1) * config_.hop + config_.window_len;
  input_framer_->push_zeros(padded - config_.edge_pad() - n);
  Eigen::VectorXd frame;
  while (input_framer_->next(frame)) process_input_frame(frame);

  // The intermediate signal ends at n samples; offline it is zero-padded.
  const Index keep = std::max<Index>(0, std::min<Index>(pending_intermediate_.size(),
                                                        n - intermediate_out_));
  feed_intermediate(pending_intermediate_.head(keep), out);
  pending_intermediate_.resize(0);
  intermediate_framer_->push_zeros(padded - config_.edge_pad() - intermediate_out_);
  while (intermediate_framer_->next(frame)) process_dct_frame(frame, out);

  const Index remaining = n - samples_out_;
  if (out.size() < remaining) throw Error(ErrorKind::kNumeric, "streaming flush came up short");
  out.conservativeResize(remaining);
  samples_out_ = n;
  return out;
}

}  // namespace dualspec::pipeline
