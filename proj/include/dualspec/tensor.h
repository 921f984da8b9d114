#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "dualspec/error.h"

namespace dualspec::nn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct TensorNode {
  Shape shape;
  Array<Scalar> value;
  Array<Scalar> grad;  // empty until something flows into it
  bool requires_grad = false;
};

// Row-major N-d array with an optional gradient slot. Copies share storage,
// like a handle; use clone() for a deep copy.
template <typename Scalar>
class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode<Scalar>>()) {}
  explicit Tensor(Shape shape, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<Scalar>>()) {
    node_->value = Array<Scalar>::Zero(shape_size(shape));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }
  Tensor(Shape shape, Array<Scalar> values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<Scalar>>()) {
    if (shape_size(shape) != values.size())
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       shape_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(Scalar v) {
    Array<Scalar> a(1);
    a(0) = v;
    return Tensor(Shape{}, std::move(a));
  }

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const { return node_->shape.at(axis < 0 ? axis + rank() : axis); }
  Index size() const { return node_->value.size(); }

  Array<Scalar>& value() { return node_->value; }
  const Array<Scalar>& value() const { return node_->value; }
  Scalar* data() { return node_->value.data(); }
  const Scalar* data() const { return node_->value.data(); }
  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->value(0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return node_->grad.size() == size(); }
  // Gradient accumulator, zero-initialized on first access. Const like a
  // shared_ptr: the handle is const, the node it points to is not.
  Array<Scalar>& grad() const {
    if (!has_grad()) node_->grad = Array<Scalar>::Zero(size());
    return node_->grad;
  }
  // Gradient for reading: zeros if nothing flowed into this tensor.
  Array<Scalar> grad_or_zero() const {
    return has_grad() ? node_->grad : Array<Scalar>::Zero(size());
  }
  void zero_grad() { node_->grad.resize(0); }

  Tensor clone() const { return Tensor(shape(), value(), requires_grad()); }
  Tensor detach() const { return Tensor(shape(), value(), false); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<Scalar>> node_;
};

// Records backward closures in execution order and replays them in reverse.
// A tape can be consumed once.
template <typename Scalar>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    if (consumed_) throw UsageError("tape: recording onto a consumed tape");
    ops_.push_back(std::move(backward_fn));
  }

  void backward(Tensor<Scalar> loss) {
    if (consumed_) throw UsageError("tape: backward called twice without re-recording");
    if (loss.size() != 1)
      throw UsageError("tape: backward needs a scalar loss, got shape " +
                       shape_string(loss.shape()));
    consumed_ = true;
    loss.grad()(0) += Scalar(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

// True when an op on these inputs must be recorded.
template <typename Scalar, typename... Ts>
bool should_record(const Tape<Scalar>* tape, const Ts&... inputs) {
  return tape != nullptr && (inputs.requires_grad() || ...);
}

}  // namespace dualspec::nn
