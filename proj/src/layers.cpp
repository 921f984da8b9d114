#include "dualspec/layers.h"

#include <algorithm>
#include <cmath>

namespace dualspec::nn {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;
template <typename S>
using RowMatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstRowMatMap = Eigen::Map<const RowMat<S>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Patch matrix shared by the convolution and its transpose.
//   cols(fd * T + t, (c * kf + i) * kt + j) <-> grid[c, fd * sf - pf + i, t + tbase + j]
// kScatter=false gathers grid into cols; kScatter=true accumulates cols into grid.
template <typename S, bool kScatter>
void patch_transfer(std::conditional_t<kScatter, S*, const S*> grid,
                    std::conditional_t<kScatter, const S*, S*> cols, Index channels,
                    Index grid_freq, Index frames, Index patch_freq, Index sf, Index pf, Index kf,
                    Index kt, Index tbase) {
  const Index rows = patch_freq * frames;
  for (Index c = 0; c < channels; ++c) {
    for (Index i = 0; i < kf; ++i) {
      for (Index j = 0; j < kt; ++j) {
        const Index shift = tbase + j;
        const Index t_begin = std::max<Index>(0, -shift);
        const Index t_end = std::min<Index>(frames, frames - shift);
        auto col = cols + ((c * kf + i) * kt + j) * rows;
        for (Index fd = 0; fd < patch_freq; ++fd) {
          const Index fs = fd * sf - pf + i;
          auto seg = col + fd * frames;
          if (fs < 0 || fs >= grid_freq || t_begin >= t_end) {
            if constexpr (!kScatter) std::fill_n(seg, frames, S(0));
            continue;
          }
          auto src = grid + (c * grid_freq + fs) * frames + shift;
          if constexpr (kScatter) {
            for (Index t = t_begin; t < t_end; ++t) src[t] += seg[t];
          } else {
            std::fill_n(seg, t_begin, S(0));
            std::copy(src + t_begin, src + t_end, seg + t_begin);
            std::fill(seg + t_end, seg + frames, S(0));
          }
        }
      }
    }
  }
}

template <typename S>
void add_channel_bias(S* out, const S* bias, Index channels, Index plane) {
  for (Index c = 0; c < channels; ++c)
    Eigen::Map<Array<S>>(out + c * plane, plane) += bias[c];
}

template <typename S>
void accumulate_channel_bias_grad(const S* grad, S* bias_grad, Index channels, Index plane) {
  for (Index c = 0; c < channels; ++c)
    bias_grad[c] += Eigen::Map<const Array<S>>(grad + c * plane, plane).sum();
}

}  // namespace

Index conv_output_extent(Index in, Index kernel, Index stride, Index pad) {
  if (stride < 1) throw ShapeError("stride must be >= 1");
  if (in + 2 * pad < kernel)
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded extent " +
                     std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename S>
Tensor<S> conv2d_causal(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& weight,
                        const Tensor<S>& bias, Index stride_freq, Index pad_freq) {
  require(input.rank() == 4, "conv2d: input must be [B, C, F, T]");
  require(weight.rank() == 4, "conv2d: weight must be [out, in, kf, kt]");
  const Index batch = input.dim(0), cin = input.dim(1), fin = input.dim(2), frames = input.dim(3);
  const Index cout = weight.dim(0), kf = weight.dim(2), kt = weight.dim(3);
  require(weight.dim(1) == cin, "conv2d: weight in-channels " + std::to_string(weight.dim(1)) +
                                    " != input channels " + std::to_string(cin));
  require(bias.size() == cout, "conv2d: bias size mismatch");
  require(kt >= 1 && kf >= 1, "conv2d: empty kernel");
  const Index fout = conv_output_extent(fin, kf, stride_freq, pad_freq);
  const Index k = cin * kf * kt;
  const Index rows = fout * frames;
  const Index tbase = -(kt - 1);

  Tensor<S> out(Shape{batch, cout, fout, frames});
  ConstMatMap<S> w(weight.data(), k, cout);
  Mat<S> patches(rows, k);
  for (Index b = 0; b < batch; ++b) {
    patch_transfer<S, false>(input.data() + b * cin * fin * frames, patches.data(), cin, fin,
                             frames, fout, stride_freq, pad_freq, kf, kt, tbase);
    MatMap<S> y(out.data() + b * cout * rows, rows, cout);
    y.noalias() = patches * w;
    add_channel_bias(y.data(), bias.data(), cout, rows);
  }

  if (should_record(tape, input, weight, bias)) {
    out.set_requires_grad(true);
    tape->record([=]() mutable {
      if (!out.has_grad()) return;
      Mat<S> patches(rows, k), dpatches(rows, k);
      Mat<S> dw = Mat<S>::Zero(k, cout);
      ConstMatMap<S> w(weight.data(), k, cout);
      for (Index b = 0; b < batch; ++b) {
        ConstMatMap<S> dy(out.grad().data() + b * cout * rows, rows, cout);
        if (weight.requires_grad()) {
          patch_transfer<S, false>(input.data() + b * cin * fin * frames, patches.data(), cin,
                                   fin, frames, fout, stride_freq, pad_freq, kf, kt, tbase);
          dw.noalias() += patches.transpose() * dy;
        }
        if (bias.requires_grad())
          accumulate_channel_bias_grad(dy.data(), bias.grad().data(), cout, rows);
        if (input.requires_grad()) {
          dpatches.noalias() = dy * w.transpose();
          patch_transfer<S, true>(input.grad().data() + b * cin * fin * frames, dpatches.data(),
                                  cin, fin, frames, fout, stride_freq, pad_freq, kf, kt, tbase);
        }
      }
      if (weight.requires_grad()) MatMap<S>(weight.grad().data(), k, cout) += dw;
    });
  }
  return out;
}

template <typename S>
Tensor<S> deconv2d_causal(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& weight,
                          const Tensor<S>& bias, Index stride_freq, Index pad_freq,
                          Index output_freq) {
  require(input.rank() == 4, "deconv2d: input must be [B, C, F, T]");
  require(weight.rank() == 4, "deconv2d: weight must be [in, out, kf, kt]");
  const Index batch = input.dim(0), cin = input.dim(1), fin = input.dim(2), frames = input.dim(3);
  const Index cout = weight.dim(1), kf = weight.dim(2), kt = weight.dim(3);
  require(weight.dim(0) == cin, "deconv2d: weight in-channels mismatch");
  require(bias.size() == cout, "deconv2d: bias size mismatch");
  if (output_freq <= 0 || conv_output_extent(output_freq, kf, stride_freq, pad_freq) != fin)
    throw ShapeError("deconv2d: output extent " + std::to_string(output_freq) +
                     " is not reachable from " + std::to_string(fin) + " bins");
  const Index k = cout * kf * kt;
  const Index rows = fin * frames;
  const Index plane = output_freq * frames;

  Tensor<S> out(Shape{batch, cout, output_freq, frames});
  ConstMatMap<S> w(weight.data(), k, cin);
  Mat<S> cols(rows, k);
  for (Index b = 0; b < batch; ++b) {
    ConstMatMap<S> x(input.data() + b * cin * rows, rows, cin);
    cols.noalias() = x * w.transpose();
    S* y = out.data() + b * cout * plane;
    patch_transfer<S, true>(y, cols.data(), cout, output_freq, frames, fin, stride_freq, pad_freq,
                            kf, kt, 0);
    add_channel_bias(y, bias.data(), cout, plane);
  }

  if (should_record(tape, input, weight, bias)) {
    out.set_requires_grad(true);
    tape->record([=]() mutable {
      if (!out.has_grad()) return;
      Mat<S> dcols(rows, k);
      Mat<S> dw = Mat<S>::Zero(k, cin);
      ConstMatMap<S> w(weight.data(), k, cin);
      for (Index b = 0; b < batch; ++b) {
        const S* dy = out.grad().data() + b * cout * plane;
        if (bias.requires_grad())
          accumulate_channel_bias_grad(dy, bias.grad().data(), cout, plane);
        patch_transfer<S, false>(dy, dcols.data(), cout, output_freq, frames, fin, stride_freq,
                                 pad_freq, kf, kt, 0);
        ConstMatMap<S> x(input.data() + b * cin * rows, rows, cin);
        if (weight.requires_grad()) dw.noalias() += dcols.transpose() * x;
        if (input.requires_grad())
          MatMap<S>(input.grad().data() + b * cin * rows, rows, cin).noalias() += dcols * w;
      }
      if (weight.requires_grad()) MatMap<S>(weight.grad().data(), k, cin) += dw;
    });
  }
  return out;
}

template <typename S>
Tensor<S> batch_norm(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& gamma,
                     const Tensor<S>& beta, BatchNormStats<S>& stats, Mode mode, double momentum,
                     double eps) {
  require(input.rank() >= 2, "batch_norm: input rank must be >= 2");
  const Index batch = input.dim(0), channels = input.dim(1);
  const Index plane = input.size() / std::max<Index>(1, batch * channels);
  require(gamma.size() == channels && beta.size() == channels, "batch_norm: parameter size");
  require(stats.running_mean.size() == channels && stats.running_var.size() == channels,
          "batch_norm: running statistics size");
  const Index count = batch * plane;
  require(count >= 1, "batch_norm: empty channel");

  Array<S> mean(channels), inv_std(channels);
  if (mode == Mode::kTrain) {
    for (Index c = 0; c < channels; ++c) {
      double s = 0.0, s2 = 0.0;
      for (Index b = 0; b < batch; ++b) {
        auto v = Eigen::Map<const Array<S>>(input.data() + (b * channels + c) * plane, plane)
                     .template cast<double>();
        s += v.sum();
      }
      const double mu = s / double(count);
      for (Index b = 0; b < batch; ++b) {
        auto v = Eigen::Map<const Array<S>>(input.data() + (b * channels + c) * plane, plane)
                     .template cast<double>();
        s2 += (v - mu).square().sum();
      }
      const double var = s2 / double(count);
      mean(c) = S(mu);
      inv_std(c) = S(1.0 / std::sqrt(var + eps));
      const double unbiased = count > 1 ? var * double(count) / double(count - 1) : var;
      stats.running_mean.value()(c) =
          S((1.0 - momentum) * double(stats.running_mean.value()(c)) + momentum * mu);
      stats.running_var.value()(c) =
          S((1.0 - momentum) * double(stats.running_var.value()(c)) + momentum * unbiased);
    }
  } else {
    mean = stats.running_mean.value();
    inv_std = (stats.running_var.value() + S(eps)).rsqrt();
  }

  Tensor<S> xhat(input.shape());
  Tensor<S> out(input.shape());
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      const Index off = (b * channels + c) * plane;
      auto x = Eigen::Map<const Array<S>>(input.data() + off, plane);
      auto xh = Eigen::Map<Array<S>>(xhat.data() + off, plane);
      xh = (x - mean(c)) * inv_std(c);
      Eigen::Map<Array<S>>(out.data() + off, plane) = xh * gamma.value()(c) + beta.value()(c);
    }
  }

  if (should_record(tape, input, gamma, beta)) {
    out.set_requires_grad(true);
    const bool train = mode == Mode::kTrain;
    tape->record([=]() mutable {
      if (!out.has_grad()) return;
      const auto& dy = out.grad();
      for (Index c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (Index b = 0; b < batch; ++b) {
          const Index off = (b * channels + c) * plane;
          auto g = dy.segment(off, plane).template cast<double>();
          sum_dy += g.sum();
          sum_dy_xhat += (g * xhat.value().segment(off, plane).template cast<double>()).sum();
        }
        if (gamma.requires_grad()) gamma.grad()(c) += S(sum_dy_xhat);
        if (beta.requires_grad()) beta.grad()(c) += S(sum_dy);
        if (!input.requires_grad()) continue;
        const S gam = gamma.value()(c);
        for (Index b = 0; b < batch; ++b) {
          const Index off = (b * channels + c) * plane;
          auto dx = input.grad().segment(off, plane);
          if (train) {
            const double n = double(count);
            dx += (gam * inv_std(c) / S(n)) *
                  (S(n) * dy.segment(off, plane) - S(sum_dy) -
                   xhat.value().segment(off, plane) * S(sum_dy_xhat));
          } else {
            dx += dy.segment(off, plane) * (gam * inv_std(c));
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> layer_norm(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& gamma,
                     const Tensor<S>& beta, double eps) {
  require(input.rank() >= 1, "layer_norm: scalar input");
  const Index features = input.dim(-1);
  const Index rows = input.size() / std::max<Index>(1, features);
  require(gamma.size() == features && beta.size() == features, "layer_norm: parameter size");

  ConstMatMap<S> x(input.data(), features, rows);
  Tensor<S> xhat_t(input.shape());
  MatMap<S> xhat(xhat_t.data(), features, rows);
  Array<S> inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    auto col = x.col(r).template cast<double>();
    const double mu = col.mean();
    const double var = (col.array() - mu).square().mean();
    inv_std(r) = S(1.0 / std::sqrt(var + eps));
    xhat.col(r) = ((col.array() - mu) * double(inv_std(r))).template cast<S>().matrix();
  }
  Tensor<S> out(input.shape());
  MatMap<S> y(out.data(), features, rows);
  y.array() = (xhat.array().colwise() * gamma.value()).colwise() + beta.value();

  if (should_record(tape, input, gamma, beta)) {
    out.set_requires_grad(true);
    tape->record([=]() mutable {
      if (!out.has_grad()) return;
      ConstMatMap<S> dy(out.grad().data(), features, rows);
      ConstMatMap<S> xh(xhat_t.data(), features, rows);
      if (gamma.requires_grad())
        gamma.grad() += (dy.array() * xh.array()).rowwise().sum();
      if (beta.requires_grad()) beta.grad() += dy.array().rowwise().sum();
      if (!input.requires_grad()) return;
      MatMap<S> dx(input.grad().data(), features, rows);
      const S n = S(features);
      for (Index r = 0; r < rows; ++r) {
        Array<S> dxh = dy.col(r).array() * gamma.value();
        const S s1 = dxh.sum();
        const S s2 = (dxh * xh.col(r).array()).sum();
        dx.col(r).array() += (inv_std(r) / n) * (n * dxh - s1 - xh.col(r).array() * s2);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> prelu(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& slope, int axis) {
  const int ax = axis < 0 ? axis + input.rank() : axis;
  require(ax >= 0 && ax < input.rank(), "prelu: axis out of range");
  const Index channels = input.dim(ax);
  require(slope.size() == channels, "prelu: slope size mismatch");
  Index inner = 1;
  for (int d = ax + 1; d < input.rank(); ++d) inner *= input.dim(d);
  const Index outer = input.size() / (channels * inner);

  Tensor<S> out(input.shape());
  for (Index o = 0; o < outer; ++o)
    for (Index c = 0; c < channels; ++c) {
      const Index off = (o * channels + c) * inner;
      const S a = slope.value()(c);
      auto x = input.value().segment(off, inner);
      out.value().segment(off, inner) = (x >= S(0)).select(x, a * x);
    }

  if (should_record(tape, input, slope)) {
    out.set_requires_grad(true);
    tape->record([=]() mutable {
      if (!out.has_grad()) return;
      for (Index o = 0; o < outer; ++o)
        for (Index c = 0; c < channels; ++c) {
          const Index off = (o * channels + c) * inner;
          auto x = input.value().segment(off, inner);
          auto dy = out.grad().segment(off, inner);
          if (slope.requires_grad()) slope.grad()(c) += (x < S(0)).select(dy * x, S(0)).sum();
          if (input.requires_grad())
            input.grad().segment(off, inner) += (x >= S(0)).select(dy, dy * slope.value()(c));
        }
    });
  }
  return out;
}

template <typename S>
Tensor<S> linear(Tape<S>* tape, const Tensor<S>& input, const Tensor<S>& weight,
                 const Tensor<S>& bias) {
  require(input.rank() >= 1 && weight.rank() == 2, "linear: bad ranks");
  const Index in = weight.dim(1), outf = weight.dim(0);
  require(input.dim(-1) == in, "linear: input features " + std::to_string(input.dim(-1)) +
                                   " != weight columns " + std::to_string(in));
  require(bias.size() == outf, "linear: bias size mismatch");
  const Index n = input.size() / in;
  Shape shape = input.shape();
  shape.back() = outf;
  Tensor<S> out(shape);
  ConstMatMap<S> x(input.data(), in, n);
  ConstRowMatMap<S> w(weight.data(), outf, in);
  MatMap<S> y(out.data(), outf, n);
  y.noalias() = w * x;
  y.colwise() += bias.value().matrix();

  if (should_record(tape, input, weight, bias)) {
    out.set_requires_grad(true);
    tape->record([=]() mutable {
      if (!out.has_grad()) return;
      ConstMatMap<S> dy(out.grad().data(), outf, n);
      ConstMatMap<S> x(input.data(), in, n);
      ConstRowMatMap<S> w(weight.data(), outf, in);
      if (weight.requires_grad()) RowMatMap<S>(weight.grad().data(), outf, in).noalias() += dy * x.transpose();
      if (bias.requires_grad()) bias.grad() += dy.rowwise().sum().array();
      if (input.requires_grad()) MatMap<S>(input.grad().data(), in, n).noalias() += w.transpose() * dy;
    });
  }
  return out;
}

template <typename S>
GruResult<S> gru(Tape<S>* tape, const Tensor<S>& sequence, const GruWeights<S>& weights,
                 const Tensor<S>* h0, bool reverse) {
  require(sequence.rank() == 3, "gru: sequence must be [S, L, I]");
  const Index nseq = sequence.dim(0), steps = sequence.dim(1), in = sequence.dim(2);
  const Index hid = weights.hidden();
  require(weights.w_ih.rank() == 2 && weights.w_ih.dim(0) == 3 * hid,
          "gru: w_ih must be [3H, I]");
  require(weights.w_hh.rank() == 2 && weights.w_hh.dim(0) == 3 * hid,
          "gru: w_hh must be [3H, H]");
  require(weights.w_ih.dim(1) == in, "gru: feature size " + std::to_string(in) +
                                         " != expected " + std::to_string(weights.w_ih.dim(1)));
  require(weights.b_ih.size() == 3 * hid && weights.b_hh.size() == 3 * hid, "gru: bias size");
  if (h0 != nullptr)
    require(h0->rank() == 2 && h0->dim(0) == nseq && h0->dim(1) == hid,
            "gru: h0 must be [S, H]");
  require(steps >= 1, "gru: empty sequence");

  // Time-major copies: column (l * nseq + s).
  Mat<S> x_tm(in, steps * nseq);
  for (Index s = 0; s < nseq; ++s)
    for (Index l = 0; l < steps; ++l)
      x_tm.col(l * nseq + s) =
          Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(sequence.data() + (s * steps + l) * in, in);

  ConstRowMatMap<S> w_ih(weights.w_ih.data(), 3 * hid, in);
  ConstRowMatMap<S> w_hh(weights.w_hh.data(), 3 * hid, hid);
  const auto b_ih = weights.b_ih.value().matrix();
  const auto b_hh = weights.b_hh.value().matrix();

  Mat<S> gi = w_ih * x_tm;
  gi.colwise() += b_ih;

  // states.col(k * nseq + s) is the hidden state before processing step k.
  Mat<S> states(hid, (steps + 1) * nseq);
  if (h0 != nullptr)
    states.leftCols(nseq) = ConstMatMap<S>(h0->data(), hid, nseq);
  else
    states.leftCols(nseq).setZero();
  Mat<S> r_all(hid, steps * nseq), z_all(hid, steps * nseq), n_all(hid, steps * nseq),
      ghn_all(hid, steps * nseq);
  Mat<S> gh(3 * hid, nseq);

  auto position = [&](Index k) { return reverse ? steps - 1 - k : k; };
  auto sigmoid = [](S v) { return S(1) / (S(1) + std::exp(-v)); };

  for (Index k = 0; k < steps; ++k) {
    const Index pos = position(k);
    auto hprev = states.middleCols(k * nseq, nseq);
    gh.noalias() = w_hh * hprev;
    gh.colwise() += b_hh;
    auto gi_blk = gi.middleCols(pos * nseq, nseq);
    auto r = r_all.middleCols(pos * nseq, nseq);
    auto z = z_all.middleCols(pos * nseq, nseq);
    auto n = n_all.middleCols(pos * nseq, nseq);
    r = (gi_blk.topRows(hid) + gh.topRows(hid)).unaryExpr(sigmoid);
    z = (gi_blk.middleRows(hid, hid) + gh.middleRows(hid, hid)).unaryExpr(sigmoid);
    ghn_all.middleCols(pos * nseq, nseq) = gh.bottomRows(hid);
    n = (gi_blk.bottomRows(hid).array() + r.array() * gh.bottomRows(hid).array()).tanh().matrix();
    states.middleCols((k + 1) * nseq, nseq) =
        ((S(1) - z.array()) * n.array() + z.array() * hprev.array()).matrix();
  }

  GruResult<S> result;
  result.output = Tensor<S>(Shape{nseq, steps, hid});
  for (Index k = 0; k < steps; ++k) {
    const Index pos = position(k);
    for (Index s = 0; s < nseq; ++s)
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(result.output.data() + (s * steps + pos) * hid,
                                                      hid) = states.col((k + 1) * nseq + s);
  }
  result.final_state = Tensor<S>(Shape{nseq, hid});
  MatMap<S>(result.final_state.data(), hid, nseq) = states.rightCols(nseq);

  const bool h0_grad = h0 != nullptr && h0->requires_grad();
  if (tape != nullptr && (sequence.requires_grad() || weights.w_ih.requires_grad() ||
                          weights.w_hh.requires_grad() || weights.b_ih.requires_grad() ||
                          weights.b_hh.requires_grad() || h0_grad)) {
    Tensor<S> out = result.output;
    out.set_requires_grad(true);
    Tensor<S> h0_t = h0 != nullptr ? *h0 : Tensor<S>();
    tape->record([=, x_tm = std::move(x_tm), states = std::move(states), r_all = std::move(r_all),
                  z_all = std::move(z_all), n_all = std::move(n_all),
                  ghn_all = std::move(ghn_all)]() mutable {
      if (!out.has_grad()) return;
      GruWeights<S> wts = weights;
      ConstRowMatMap<S> w_ih(wts.w_ih.data(), 3 * hid, in);
      ConstRowMatMap<S> w_hh(wts.w_hh.data(), 3 * hid, hid);
      Mat<S> dgi(3 * hid, steps * nseq);
      Mat<S> dw_hh = Mat<S>::Zero(3 * hid, hid);
      Eigen::Matrix<S, Eigen::Dynamic, 1> db_hh = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(3 * hid);
      Mat<S> carry = Mat<S>::Zero(hid, nseq);
      Mat<S> dgh(3 * hid, nseq);
      const auto& dout = out.grad();
      auto pos_of = [&](Index k) { return reverse ? steps - 1 - k : k; };
      for (Index k = steps - 1; k >= 0; --k) {
        const Index pos = pos_of(k);
        Mat<S> dh = carry;
        for (Index s = 0; s < nseq; ++s)
          dh.col(s) += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(
              dout.data() + (s * steps + pos) * hid, hid);
        auto hprev = states.middleCols(k * nseq, nseq).array();
        auto r = r_all.middleCols(pos * nseq, nseq).array();
        auto z = z_all.middleCols(pos * nseq, nseq).array();
        auto n = n_all.middleCols(pos * nseq, nseq).array();
        auto ghn = ghn_all.middleCols(pos * nseq, nseq).array();
        const auto dha = dh.array();
        const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> dn_pre = dha * (S(1) - z) * (S(1) - n.square());
        const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> dz_pre = dha * (hprev - n) * z * (S(1) - z);
        const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> dr_pre = dn_pre * ghn * r * (S(1) - r);
        auto dgi_blk = dgi.middleCols(pos * nseq, nseq);
        dgi_blk.topRows(hid) = dr_pre.matrix();
        dgi_blk.middleRows(hid, hid) = dz_pre.matrix();
        dgi_blk.bottomRows(hid) = dn_pre.matrix();
        dgh.topRows(hid) = dr_pre.matrix();
        dgh.middleRows(hid, hid) = dz_pre.matrix();
        dgh.bottomRows(hid) = (dn_pre * r).matrix();
        dw_hh.noalias() += dgh * states.middleCols(k * nseq, nseq).transpose();
        db_hh += dgh.rowwise().sum();
        carry = (dha * z).matrix();
        carry.noalias() += w_hh.transpose() * dgh;
      }
      if (wts.w_hh.requires_grad()) RowMatMap<S>(wts.w_hh.grad().data(), 3 * hid, hid) += dw_hh;
      if (wts.b_hh.requires_grad()) wts.b_hh.grad() += db_hh.array();
      if (wts.w_ih.requires_grad())
        RowMatMap<S>(wts.w_ih.grad().data(), 3 * hid, in).noalias() += dgi * x_tm.transpose();
      if (wts.b_ih.requires_grad()) wts.b_ih.grad() += dgi.rowwise().sum().array();
      if (sequence.requires_grad()) {
        Tensor<S> seq = sequence;
        const Mat<S> dx = w_ih.transpose() * dgi;
        for (Index s = 0; s < nseq; ++s)
          for (Index l = 0; l < steps; ++l)
            Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(seq.grad().data() + (s * steps + l) * in,
                                                            in) += dx.col(l * nseq + s);
      }
      if (h0_grad) MatMap<S>(h0_t.grad().data(), hid, nseq) += carry;
    });
    result.output = out;
  }
  return result;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> bigru(Tape<S>* tape, const Tensor<S>& sequence,
                                      const GruWeights<S>& forward, const GruWeights<S>& backward) {
  auto f = gru<S>(tape, sequence, forward, nullptr, false);
  auto b = gru<S>(tape, sequence, backward, nullptr, true);
  return {f.output, b.output};
}

#define DUALSPEC_INSTANTIATE_LAYERS(S)                                                        \
  template Tensor<S> conv2d_causal(Tape<S>*, const Tensor<S>&, const Tensor<S>&,             \
                                   const Tensor<S>&, Index, Index);                          \
  template Tensor<S> deconv2d_causal(Tape<S>*, const Tensor<S>&, const Tensor<S>&,           \
                                     const Tensor<S>&, Index, Index, Index);                 \
  template Tensor<S> batch_norm(Tape<S>*, const Tensor<S>&, const Tensor<S>&,                \
                                const Tensor<S>&, BatchNormStats<S>&, Mode, double, double); \
  template Tensor<S> layer_norm(Tape<S>*, const Tensor<S>&, const Tensor<S>&,                \
                                const Tensor<S>&, double);                                   \
  template Tensor<S> prelu(Tape<S>*, const Tensor<S>&, const Tensor<S>&, int);               \
  template Tensor<S> linear(Tape<S>*, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&); \
  template GruResult<S> gru(Tape<S>*, const Tensor<S>&, const GruWeights<S>&,               \
                            const Tensor<S>*, bool);                                         \
  template std::pair<Tensor<S>, Tensor<S>> bigru(Tape<S>*, const Tensor<S>&,                 \
                                                 const GruWeights<S>&, const GruWeights<S>&);

DUALSPEC_INSTANTIATE_LAYERS(float)
DUALSPEC_INSTANTIATE_LAYERS(double)

}  // namespace dualspec::nn
