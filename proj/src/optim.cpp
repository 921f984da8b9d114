#include "dualspec/optim.h"

#include <limits>

namespace dualspec::nn {

Rmsprop::Rmsprop(const ParameterSet& params, RmspropConfig config) : config_(config) {
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (config.rho < 0.0 || config.rho >= 1.0) throw ConfigError("rho must be in [0, 1)");
  for (const auto& e : params.entries())
    mean_square_.push_back(e.role == TensorRole::kParameter ? Array<float>::Zero(e.tensor.size())
                                                            : Array<float>());
}

void Rmsprop::step(ParameterSet& params) {
  auto& entries = params.entries();
  if (entries.size() != mean_square_.size()) throw UsageError("rmsprop: parameter set changed");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (e.role != TensorRole::kParameter || !e.tensor.requires_grad()) continue;
    const Array<float> g = e.tensor.grad_or_zero();
    rmsprop_step<float>(e.tensor.value(), g, mean_square_[i], config_);
  }
}

void Rmsprop::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  config_.learning_rate = lr;
}

PlateauHalving::PlateauHalving(int patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool PlateauHalving::observe(double validation_loss) {
  if (validation_loss < best_) {
    best_ = validation_loss;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ >= patience_) {
    bad_epochs_ = 0;
    return true;
  }
  return false;
}

}  // namespace dualspec::nn
