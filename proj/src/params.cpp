#include "dualspec/params.h"

#include <cmath>
#include <numbers>

namespace dualspec::nn {

double Rng::normal() {
  // Box-Muller; u1 kept away from zero.
  const double u1 = (double(engine_() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor<float> ParameterSet::add_parameter(const std::string& name, Shape shape) {
  if (contains(name)) throw UsageError("duplicate parameter name: " + name);
  Tensor<float> t(std::move(shape), true);
  index_[name] = entries_.size();
  entries_.push_back({name, t, TensorRole::kParameter});
  return t;
}

Tensor<float> ParameterSet::add_buffer(const std::string& name, Shape shape, float fill) {
  if (contains(name)) throw UsageError("duplicate buffer name: " + name);
  Tensor<float> t(std::move(shape), false);
  t.value().setConstant(fill);
  index_[name] = entries_.size();
  entries_.push_back({name, t, TensorRole::kBuffer});
  return t;
}

const Tensor<float>& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

Tensor<float>& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

Index ParameterSet::parameter_count() const {
  Index n = 0;
  for (const auto& e : entries_)
    if (e.role == TensorRole::kParameter) n += e.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParameterSet::set_requires_grad(bool value) {
  for (auto& e : entries_)
    if (e.role == TensorRole::kParameter) e.tensor.set_requires_grad(value);
}

std::vector<Array<float>> ParameterSet::snapshot() const {
  std::vector<Array<float>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor.value());
  return out;
}

void ParameterSet::restore(const std::vector<Array<float>>& values) {
  if (values.size() != entries_.size()) throw UsageError("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != entries_[i].tensor.size())
      throw ShapeError("restore: size mismatch for " + entries_[i].name);
    entries_[i].tensor.value() = values[i];
  }
}

void fill_uniform(Tensor<float>& t, Rng& rng, double bound) {
  for (Index i = 0; i < t.size(); ++i) t.value()(i) = static_cast<float>(rng.uniform(-bound, bound));
}

void fill_constant(Tensor<float>& t, float value) { t.value().setConstant(value); }

}  // namespace dualspec::nn
