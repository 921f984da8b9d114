#include "dualspec/train.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dualspec/error.h"
#include "dualspec/ops.h"
#include "dualspec/pipeline.h"

namespace dualspec::train {

namespace {

using nn::Tensor;

void check_set(const std::vector<Example>& set) {
  for (const auto& e : set) {
    if (e.noisy.size() == 0 || e.noisy.size() != e.clean.size())
      throw ShapeError("training example: noisy and clean must be non-empty and equally long");
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, nn::Rng* rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng != nullptr) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng->below(Index(i))]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += std::size_t(batch_size))
    batches.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
  return batches;
}

struct Batch {
  std::vector<dsp::Waveform> noisy, clean;
  Index samples = 0;
};

Batch gather(const std::vector<Example>& set, const std::vector<std::size_t>& idx) {
  Batch b;
  b.samples = set[idx[0]].noisy.size();
  for (auto i : idx) b.samples = std::min(b.samples, set[i].noisy.size());
  for (auto i : idx) {
    b.noisy.push_back({set[i].noisy.samples.head(b.samples), set[i].noisy.sample_rate});
    b.clean.push_back({set[i].clean.samples.head(b.samples), set[i].clean.sample_rate});
  }
  return b;
}

struct Stage1Tensors {
  Tensor<float> noisy, clean;
  std::vector<dsp::ComplexSpectrogram> noisy_complex;
};

Stage1Tensors stage1_inputs(const Batch& b, const dsp::FrameConfig& frame, bool with_clean) {
  Stage1Tensors t;
  std::vector<Eigen::MatrixXd> noisy, clean;
  for (std::size_t i = 0; i < b.noisy.size(); ++i) {
    auto r = dsp::stft(b.noisy[i], frame);
    noisy.push_back(r.magnitude.frames);
    t.noisy_complex.push_back(std::move(r.complex));
    if (with_clean) clean.push_back(dsp::stft(b.clean[i], frame).magnitude.frames);
  }
  t.noisy = pipeline::grids_to_tensor(noisy);
  if (with_clean) t.clean = pipeline::grids_to_tensor(clean);
  return t;
}

struct Stage2Tensors {
  Tensor<float> noisy_dct, pre_dct, target, clean_wave;
};

// Runs the frozen first stage and derives the refine-stage inputs and targets.
Stage2Tensors stage2_inputs(models::MagnitudeNet& frozen, const Batch& b,
                            const dsp::FrameConfig& frame, double clip_bound) {
  Stage1Tensors s1 = stage1_inputs(b, frame, false);
  const Tensor<float> enhanced = frozen.forward(nullptr, s1.noisy, nn::Mode::kEval);
  std::vector<Eigen::MatrixXd> noisy_dct, pre_dct, target;
  Tensor<float> clean_wave(nn::Shape{Index(b.clean.size()), b.samples});
  for (std::size_t i = 0; i < b.noisy.size(); ++i) {
    dsp::MagnitudeSpectrogram mag{pipeline::tensor_to_grid(enhanced, Index(i)), frame, b.samples};
    const auto pre_wave = dsp::istft(dsp::apply_phase(mag, s1.noisy_complex[i]));
    pre_dct.push_back(dsp::stdct(pre_wave, frame).frames);
    noisy_dct.push_back(dsp::stdct(b.noisy[i], frame).frames);
    target.push_back(
        pipeline::ratio_mask(dsp::stdct(b.clean[i], frame).frames, pre_dct.back(), clip_bound));
    clean_wave.value().segment(Index(i) * b.samples, b.samples) =
        b.clean[i].samples.cast<float>().array();
  }
  return {pipeline::grids_to_tensor(noisy_dct), pipeline::grids_to_tensor(pre_dct),
          pipeline::grids_to_tensor(target), clean_wave};
}

Tensor<float> stage2_loss(nn::Tape<float>* tape, models::RefineNet& net, const Stage2Tensors& in,
                          nn::Mode mode, const dsp::FrameConfig& frame) {
  const Tensor<float> mask = net.forward(tape, in.noisy_dct, in.pre_dct, mode);
  const Tensor<float> refined = nn::mul(tape, mask, in.pre_dct);
  const Tensor<float> estimate =
      pipeline::istdct_op(tape, refined, frame, in.clean_wave.dim(1));
  return pipeline::loss_refine(tape, estimate, in.clean_wave, mask, in.target);
}

double checked(double loss) {
  if (!std::isfinite(loss)) throw NumericError("training loss became non-finite");
  return loss;
}

// Shared epoch loop: step(batch) returns the batch loss after an update,
// validate() the validation loss.
template <typename StepFn, typename ValFn>
TrainResult run_epochs(nn::ParameterSet& params, const std::vector<Example>& train_set,
                       const TrainSchedule& schedule, const EpochCallback& on_epoch,
                       nn::Rmsprop& optimizer, StepFn&& step, ValFn&& validate_fn) {
  nn::PlateauHalving plateau(schedule.halve_patience);
  nn::Rng rng(schedule.seed ^ 0x5deece66dULL);
  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<nn::Array<float>> best = params.snapshot();

  for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = optimizer.learning_rate();
    double total = 0.0;
    const auto batches = make_batches(train_set.size(), schedule.batch_size, &rng);
    for (const auto& idx : batches) total += checked(step(gather(train_set, idx)));
    rec.train_loss = total / double(batches.size());
    rec.val_loss = checked(validate_fn(rec.train_loss));
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best = params.snapshot();
    }
    if (plateau.observe(rec.val_loss)) optimizer.set_learning_rate(optimizer.learning_rate() / 2);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  params.restore(best);
  result.optimizer_state = optimizer.state();
  result.final_learning_rate = optimizer.learning_rate();
  return result;
}

nn::RmspropConfig optimizer_config(const TrainSchedule& s) {
  return {s.learning_rate, s.rho, s.eps};
}

}  // namespace

void validate(const TrainSchedule& s) {
  if (!(s.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (s.halve_patience < 1) throw ConfigError("halve_patience must be >= 1");
  if (s.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (s.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(s.rho > 0.0 && s.rho < 1.0)) throw ConfigError("rho must be in (0, 1)");
  if (!(s.eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(s.clip_bound > 0.0)) throw ConfigError("clip_bound must be positive");
}

double evaluate_stage1(models::MagnitudeNet& net, const std::vector<Example>& set, int batch_size,
                       const dsp::FrameConfig& frame) {
  if (set.empty()) throw UsageError("evaluation set is empty");
  check_set(set);
  double total = 0.0;
  const auto batches = make_batches(set.size(), batch_size, nullptr);
  for (const auto& idx : batches) {
    const Batch b = gather(set, idx);
    const Stage1Tensors t = stage1_inputs(b, frame, true);
    const Tensor<float> pred = net.forward(nullptr, t.noisy, nn::Mode::kEval);
    total += pipeline::loss_magnitude<float>(nullptr, pred, t.clean).item();
  }
  return total / double(batches.size());
}

double evaluate_stage2(models::MagnitudeNet& frozen, models::RefineNet& net,
                       const std::vector<Example>& set, int batch_size, double clip_bound,
                       const dsp::FrameConfig& frame) {
  if (set.empty()) throw UsageError("evaluation set is empty");
  check_set(set);
  double total = 0.0;
  const auto batches = make_batches(set.size(), batch_size, nullptr);
  for (const auto& idx : batches) {
    const Stage2Tensors in = stage2_inputs(frozen, gather(set, idx), frame, clip_bound);
    total += stage2_loss(nullptr, net, in, nn::Mode::kEval, frame).item();
  }
  return total / double(batches.size());
}

TrainResult train_stage1(models::MagnitudeNet& net, const std::vector<Example>& train_set,
                         const std::vector<Example>& val_set, const TrainSchedule& schedule,
                         const dsp::FrameConfig& frame, const EpochCallback& on_epoch) {
  validate(schedule);
  if (schedule.stage != Stage::kMagnitude) throw UsageError("schedule is not for stage 1");
  if (train_set.empty()) throw UsageError("training set is empty");
  check_set(train_set);
  check_set(val_set);
  nn::ParameterSet& params = net.params();
  params.set_requires_grad(true);
  nn::Rmsprop optimizer(params, optimizer_config(schedule));

  auto step = [&](const Batch& b) {
    const Stage1Tensors t = stage1_inputs(b, frame, true);
    nn::Tape<float> tape;
    const Tensor<float> pred = net.forward(&tape, t.noisy, nn::Mode::kTrain);
    const Tensor<float> loss = pipeline::loss_magnitude(&tape, pred, t.clean);
    tape.backward(loss);
    optimizer.step(params);
    params.zero_grad();
    return double(loss.item());
  };
  auto val = [&](double train_loss) {
    return val_set.empty() ? train_loss
                           : evaluate_stage1(net, val_set, schedule.batch_size, frame);
  };
  return run_epochs(params, train_set, schedule, on_epoch, optimizer, step, val);
}

TrainResult train_stage2(models::MagnitudeNet& frozen, models::RefineNet& net,
                         const std::vector<Example>& train_set,
                         const std::vector<Example>& val_set, const TrainSchedule& schedule,
                         const dsp::FrameConfig& frame, const EpochCallback& on_epoch) {
  validate(schedule);
  if (schedule.stage != Stage::kRefine) throw UsageError("schedule is not for stage 2");
  if (train_set.empty()) throw UsageError("training set is empty");
  check_set(train_set);
  check_set(val_set);
  frozen.params().set_requires_grad(false);
  nn::ParameterSet& params = net.params();
  params.set_requires_grad(true);
  nn::Rmsprop optimizer(params, optimizer_config(schedule));

  auto step = [&](const Batch& b) {
    const Stage2Tensors in = stage2_inputs(frozen, b, frame, schedule.clip_bound);
    nn::Tape<float> tape;
    const Tensor<float> loss = stage2_loss(&tape, net, in, nn::Mode::kTrain, frame);
    tape.backward(loss);
    optimizer.step(params);
    params.zero_grad();
    return double(loss.item());
  };
  auto val = [&](double train_loss) {
    return val_set.empty()
               ? train_loss
               : evaluate_stage2(frozen, net, val_set, schedule.batch_size, schedule.clip_bound,
                                 frame);
  };
  return run_epochs(params, train_set, schedule, on_epoch, optimizer, step, val);
}

}  // namespace dualspec::train
