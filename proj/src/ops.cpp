#include "dualspec/ops.h"

#include <cmath>
#include <sstream>

namespace dualspec::nn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw ShapeError("axis out of range");
  return a;
}

// Gathers src into dst where dst[i] = src[map(i)] for a permutation of axes.
template <typename Scalar, bool kScatter>
void permute_copy(const Scalar* src, Scalar* dst, const Shape& in_shape,
                  std::span<const int> axes) {
  const int rank = static_cast<int>(in_shape.size());
  std::vector<Index> in_strides(rank, 1);
  for (int i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  std::vector<Index> out_shape(rank), stride_for_out(rank);
  for (int i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    stride_for_out[i] = in_strides[axes[i]];
  }
  const Index total = shape_size(in_shape);
  if (total == 0) return;
  std::vector<Index> counter(rank, 0);
  Index in_offset = 0;
  const Index inner = rank ? out_shape[rank - 1] : 1;
  const Index inner_stride = rank ? stride_for_out[rank - 1] : 0;
  for (Index out = 0; out < total; out += inner) {
    for (Index k = 0; k < inner; ++k) {
      if constexpr (kScatter)
        dst[in_offset + k * inner_stride] += src[out + k];
      else
        dst[out + k] = src[in_offset + k * inner_stride];
    }
    for (int d = rank - 2; d >= 0; --d) {
      in_offset += stride_for_out[d];
      if (++counter[d] < out_shape[d]) break;
      in_offset -= stride_for_out[d] * out_shape[d];
      counter[d] = 0;
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(Tape<Scalar>* tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape(), a.value() + b.value());
  if (should_record(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() += out.grad();
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sub(Tape<Scalar>* tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.shape(), a.value() - b.value());
  if (should_record(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() -= out.grad();
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(Tape<Scalar>* tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape(), a.value() * b.value());
  if (should_record(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.grad() += out.grad() * b.value();
      if (b.requires_grad()) b.grad() += out.grad() * a.value();
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(Tape<Scalar>* tape, const Tensor<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), a.value() * factor);
  if (should_record(tape, a)) {
    out.set_requires_grad(true);
    tape->record([a, out, factor]() mutable {
      if (out.has_grad()) a.grad() += out.grad() * factor;
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> softplus(Tape<Scalar>* tape, const Tensor<Scalar>& a) {
  // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
  Array<Scalar> v = a.value().unaryExpr([](Scalar x) {
    return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
  });
  Tensor<Scalar> out(a.shape(), std::move(v));
  if (should_record(tape, a)) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      const Array<Scalar> sig =
          a.value().unaryExpr([](Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); });
      a.grad() += out.grad() * sig;
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> reshape(Tape<Scalar>* tape, const Tensor<Scalar>& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw ShapeError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  Tensor<Scalar> out(std::move(shape), a.value());
  if (should_record(tape, a)) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      if (out.has_grad()) a.grad() += out.grad();
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> permute(Tape<Scalar>* tape, const Tensor<Scalar>& a, std::span<const int> axes) {
  if (static_cast<int>(axes.size()) != a.rank()) throw ShapeError("permute: wrong axis count");
  std::vector<bool> seen(axes.size(), false);
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    const int ax = axes[i];
    if (ax < 0 || ax >= a.rank() || seen[ax]) throw ShapeError("permute: invalid axes");
    seen[ax] = true;
    out_shape[i] = a.dim(ax);
  }
  Tensor<Scalar> out(out_shape);
  permute_copy<Scalar, false>(a.data(), out.data(), a.shape(), axes);
  if (should_record(tape, a)) {
    out.set_requires_grad(true);
    std::vector<int> ax(axes.begin(), axes.end());
    tape->record([a, out, ax]() mutable {
      if (!out.has_grad()) return;
      permute_copy<Scalar, true>(out.grad().data(), a.grad().data(), a.shape(), ax);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat(Tape<Scalar>* tape, const std::vector<Tensor<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rank = parts[0].rank();
  axis = normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && p.dim(d) != out_shape[d])
        throw ShapeError("concat: extent mismatch on axis " + std::to_string(d));
    out_shape[axis] += p.dim(axis);
  }
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[d];
  const Index out_block = out_shape[axis] * inner;

  Tensor<Scalar> out(out_shape);
  Index offset = 0;
  std::vector<Index> offsets;
  for (const auto& p : parts) {
    const Index block = p.dim(axis) * inner;
    for (Index o = 0; o < outer; ++o)
      std::copy_n(p.data() + o * block, block, out.data() + o * out_block + offset);
    offsets.push_back(offset);
    offset += block;
  }

  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && any) {
    out.set_requires_grad(true);
    tape->record([parts, out, offsets, outer, inner, out_block, axis]() mutable {
      if (!out.has_grad()) return;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        auto& p = parts[i];
        if (!p.requires_grad()) continue;
        const Index block = p.dim(axis) * inner;
        auto& g = p.grad();
        for (Index o = 0; o < outer; ++o)
          g.segment(o * block, block) += out.grad().segment(o * out_block + offsets[i], block);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice(Tape<Scalar>* tape, const Tensor<Scalar>& a, int axis, Index begin,
                     Index end) {
  axis = normalize_axis(axis, a.rank());
  if (begin < 0 || end > a.dim(axis) || begin > end) throw ShapeError("slice: bad range");
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const Index in_block = a.dim(axis) * inner;
  const Index out_block = (end - begin) * inner;
  Tensor<Scalar> out(out_shape);
  for (Index o = 0; o < outer; ++o)
    std::copy_n(a.data() + o * in_block + begin * inner, out_block, out.data() + o * out_block);
  if (should_record(tape, a)) {
    out.set_requires_grad(true);
    tape->record([a, out, outer, in_block, out_block, begin, inner]() mutable {
      if (!out.has_grad()) return;
      auto& g = a.grad();
      for (Index o = 0; o < outer; ++o)
        g.segment(o * in_block + begin * inner, out_block) +=
            out.grad().segment(o * out_block, out_block);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(Tape<Scalar>* tape, const Tensor<Scalar>& a) {
  const double s = a.value().template cast<double>().sum();
  Tensor<Scalar> out = Tensor<Scalar>::scalar(static_cast<Scalar>(s));
  if (should_record(tape, a)) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      if (out.has_grad()) a.grad() += out.grad()(0);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean_squared_error(Tape<Scalar>* tape, const Tensor<Scalar>& a,
                                  const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mean_squared_error");
  if (a.size() == 0) throw ShapeError("mean_squared_error: empty input");
  const double n = static_cast<double>(a.size());
  const double loss =
      (a.value().template cast<double>() - b.value().template cast<double>()).square().sum() / n;
  Tensor<Scalar> out = Tensor<Scalar>::scalar(static_cast<Scalar>(loss));
  if (should_record(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out, n]() mutable {
      if (!out.has_grad()) return;
      const Scalar g = out.grad()(0) * static_cast<Scalar>(2.0 / n);
      const Array<Scalar> diff = a.value() - b.value();
      if (a.requires_grad()) a.grad() += g * diff;
      if (b.requires_grad()) b.grad() -= g * diff;
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean_absolute_error(Tape<Scalar>* tape, const Tensor<Scalar>& a,
                                   const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mean_absolute_error");
  if (a.size() == 0) throw ShapeError("mean_absolute_error: empty input");
  const double n = static_cast<double>(a.size());
  const double loss =
      (a.value().template cast<double>() - b.value().template cast<double>()).abs().sum() / n;
  Tensor<Scalar> out = Tensor<Scalar>::scalar(static_cast<Scalar>(loss));
  if (should_record(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out, n]() mutable {
      if (!out.has_grad()) return;
      const Scalar g = out.grad()(0) * static_cast<Scalar>(1.0 / n);
      const Array<Scalar> sign = (a.value() - b.value()).unaryExpr([](Scalar d) {
        return d > Scalar(0) ? Scalar(1) : (d < Scalar(0) ? Scalar(-1) : Scalar(0));
      });
      if (a.requires_grad()) a.grad() += g * sign;
      if (b.requires_grad()) b.grad() -= g * sign;
    });
  }
  return out;
}

#define DUALSPEC_INSTANTIATE_OPS(S)                                                         \
  template Tensor<S> add(Tape<S>*, const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> sub(Tape<S>*, const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> mul(Tape<S>*, const Tensor<S>&, const Tensor<S>&);                    \
  template Tensor<S> scale(Tape<S>*, const Tensor<S>&, S);                                 \
  template Tensor<S> softplus(Tape<S>*, const Tensor<S>&);                                 \
  template Tensor<S> reshape(Tape<S>*, const Tensor<S>&, Shape);                           \
  template Tensor<S> permute(Tape<S>*, const Tensor<S>&, std::span<const int>);            \
  template Tensor<S> concat(Tape<S>*, const std::vector<Tensor<S>>&, int);                 \
  template Tensor<S> slice(Tape<S>*, const Tensor<S>&, int, Index, Index);                 \
  template Tensor<S> sum(Tape<S>*, const Tensor<S>&);                                      \
  template Tensor<S> mean_squared_error(Tape<S>*, const Tensor<S>&, const Tensor<S>&);     \
  template Tensor<S> mean_absolute_error(Tape<S>*, const Tensor<S>&, const Tensor<S>&);

DUALSPEC_INSTANTIATE_OPS(float)
DUALSPEC_INSTANTIATE_OPS(double)

}  // namespace dualspec::nn
