#pragma once

#include <vector>

#include "dualspec/params.h"

namespace dualspec::nn {

struct RmspropConfig {
  double learning_rate = 2e-4;
  double rho = 0.9;  // smoothing of the running mean square
  double eps = 1e-8;
};

// v <- rho v + (1 - rho) g^2 ; p <- p - lr g / (sqrt(v) + eps)
template <typename Scalar>
void rmsprop_step(Eigen::Ref<Array<Scalar>> param, const Eigen::Ref<const Array<Scalar>>& grad,
                  Eigen::Ref<Array<Scalar>> mean_square, const RmspropConfig& config) {
  mean_square = Scalar(config.rho) * mean_square + Scalar(1.0 - config.rho) * grad.square();
  param -= Scalar(config.learning_rate) * grad / (mean_square.sqrt() + Scalar(config.eps));
}

// RMSprop over every learnable parameter of a ParameterSet. Accumulators
// mirror parameter shapes and are zero at construction.
class Rmsprop {
 public:
  Rmsprop(const ParameterSet& params, RmspropConfig config);

  void step(ParameterSet& params);

  double learning_rate() const { return config_.learning_rate; }
  void set_learning_rate(double lr);
  const RmspropConfig& config() const { return config_; }
  std::vector<Array<float>>& state() { return mean_square_; }
  const std::vector<Array<float>>& state() const { return mean_square_; }

 private:
  RmspropConfig config_;
  std::vector<Array<float>> mean_square_;  // one per ParameterSet entry, empty for buffers
};

// Halves the learning rate once `patience` consecutive epochs fail to improve
// on the best validation loss seen so far.
class PlateauHalving {
 public:
  explicit PlateauHalving(int patience);

  // Returns true when this observation triggers a halving.
  bool observe(double validation_loss);
  double best() const { return best_; }
  int bad_epochs() const { return bad_epochs_; }

 private:
  int patience_;
  double best_;
  int bad_epochs_ = 0;
};

}  // namespace dualspec::nn
