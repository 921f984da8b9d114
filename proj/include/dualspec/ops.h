#pragma once

#include <span>
#include <vector>

#include "dualspec/tensor.h"

// Shape and elementwise operations on Tensor. Every op takes a nullable tape;
// with a null tape (or no input requiring grad) nothing is recorded.
namespace dualspec::nn {

template <typename Scalar>
Tensor<Scalar> add(Tape<Scalar>* tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(Tape<Scalar>* tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(Tape<Scalar>* tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(Tape<Scalar>* tape, const Tensor<Scalar>& a, Scalar factor);

template <typename Scalar>
Tensor<Scalar> softplus(Tape<Scalar>* tape, const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> reshape(Tape<Scalar>* tape, const Tensor<Scalar>& a, Shape shape);
template <typename Scalar>
Tensor<Scalar> permute(Tape<Scalar>* tape, const Tensor<Scalar>& a, std::span<const int> axes);
template <typename Scalar>
Tensor<Scalar> concat(Tape<Scalar>* tape, const std::vector<Tensor<Scalar>>& parts, int axis);
template <typename Scalar>
Tensor<Scalar> slice(Tape<Scalar>* tape, const Tensor<Scalar>& a, int axis, Index begin,
                     Index end);

template <typename Scalar>
Tensor<Scalar> sum(Tape<Scalar>* tape, const Tensor<Scalar>& a);

// mean((a - b)^2), accumulated in double.
template <typename Scalar>
Tensor<Scalar> mean_squared_error(Tape<Scalar>* tape, const Tensor<Scalar>& a,
                                  const Tensor<Scalar>& b);
// mean(|a - b|), accumulated in double. The subgradient at zero is zero.
template <typename Scalar>
Tensor<Scalar> mean_absolute_error(Tape<Scalar>* tape, const Tensor<Scalar>& a,
                                   const Tensor<Scalar>& b);

}  // namespace dualspec::nn
