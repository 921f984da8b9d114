#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dualspec/dsp.h"
#include "dualspec/models.h"
#include "dualspec/optim.h"

namespace dualspec::train {

using dsp::Index;

enum class Stage { kMagnitude = 1, kRefine = 2 };

struct TrainSchedule {
  Stage stage = Stage::kMagnitude;
  double learning_rate = 2e-4;
  double rho = 0.9;
  double eps = 1e-8;
  int halve_patience = 5;
  int batch_size = 4;
  int max_epochs = 30;
  std::uint64_t seed = 1;
  double clip_bound = 2.0;  // DCTIRM target clip (stage 2)

  friend bool operator==(const TrainSchedule&, const TrainSchedule&) = default;
};

void validate(const TrainSchedule& schedule);

// One training item. Clips in a minibatch are cropped to the shortest one.
struct Example {
  dsp::Waveform noisy;
  dsp::Waveform clean;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<nn::Array<float>> optimizer_state;  // RMSprop mean squares after the last epoch
  double final_learning_rate = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// RMSprop on the magnitude loss. The network ends holding its
// best-validation parameters. With no validation items the training loss is
// used for scheduling.
TrainResult train_stage1(models::MagnitudeNet& net, const std::vector<Example>& train_set,
                         const std::vector<Example>& val_set, const TrainSchedule& schedule,
                         const dsp::FrameConfig& frame = {}, const EpochCallback& on_epoch = {});

// Stage 1 stays frozen (eval mode, no gradients); mask targets are
// recomputed from its output for every batch.
TrainResult train_stage2(models::MagnitudeNet& frozen, models::RefineNet& net,
                         const std::vector<Example>& train_set,
                         const std::vector<Example>& val_set, const TrainSchedule& schedule,
                         const dsp::FrameConfig& frame = {}, const EpochCallback& on_epoch = {});

// Mean loss of a stage over a set in eval mode.
double evaluate_stage1(models::MagnitudeNet& net, const std::vector<Example>& set,
                       int batch_size, const dsp::FrameConfig& frame = {});
double evaluate_stage2(models::MagnitudeNet& frozen, models::RefineNet& net,
                       const std::vector<Example>& set, int batch_size, double clip_bound,
                       const dsp::FrameConfig& frame = {});

}  // namespace dualspec::train
