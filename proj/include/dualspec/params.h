#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dualspec/layers.h"
#include "dualspec/tensor.h"

namespace dualspec::nn {

// Portable uniform draws on top of mt19937_64 (std distributions are not
// bit-reproducible across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t next() { return engine_(); }
  Index below(Index n) { return static_cast<Index>(engine_() % static_cast<std::uint64_t>(n)); }

 private:
  std::mt19937_64 engine_;
};

enum class TensorRole { kParameter, kBuffer };

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
  TensorRole role;
};

// Ordered registry of a network's learnable parameters and non-learnable
// buffers (batch-norm running statistics), keyed by hierarchical names.
class ParameterSet {
 public:
  Tensor<float> add_parameter(const std::string& name, Shape shape);
  Tensor<float> add_buffer(const std::string& name, Shape shape, float fill);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<NamedTensor>& entries() { return entries_; }
  const Tensor<float>& at(const std::string& name) const;
  Tensor<float>& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  // Scalar count of learnable parameters (buffers excluded).
  Index parameter_count() const;
  void zero_grad();
  void set_requires_grad(bool value);

  // Deep copy of every value (for best-checkpoint snapshots and freezing).
  std::vector<Array<float>> snapshot() const;
  void restore(const std::vector<Array<float>>& values);

 private:
  std::vector<NamedTensor> entries_;
  std::map<std::string, std::size_t> index_;
};

void fill_uniform(Tensor<float>& t, Rng& rng, double bound);
void fill_constant(Tensor<float>& t, float value);

}  // namespace dualspec::nn
