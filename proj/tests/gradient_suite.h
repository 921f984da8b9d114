#pragma once

// Central finite differences in double precision against the tape, for every
// op, layer and loss. Shared by the unit tests and the acceptance run.

#include <array>
#include <functional>
#include <string>

#include "dualspec/layers.h"
#include "dualspec/ops.h"
#include "dualspec/pipeline.h"
#include "support.h"

namespace testing::grad {

using namespace dualspec;
using nn::Index;
using nn::Shape;
using T = nn::Tensor<double>;
using Tape = nn::Tape<double>;

inline constexpr int kShapes = 20;
inline constexpr double kTol = 1e-4;

inline T random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(gen);
  return t;
}

inline Index draw(std::mt19937_64& gen, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(gen);
}

using Builder = std::function<T(Tape*, std::vector<T>&)>;

// Loss = sum(f(inputs) * R) for a fixed random R. Returns the worst relative
// error over every input tensor.
inline double check_gradients(std::vector<T> inputs, const Builder& f, std::mt19937_64& gen) {
  const T probe = f(nullptr, inputs);
  const T weights = random_tensor(probe.shape(), gen);
  auto loss_value = [&]() {
    const T out = f(nullptr, inputs);
    return (out.value() * weights.value()).sum();
  };

  for (auto& x : inputs) {
    x.zero_grad();
    x.set_requires_grad(true);
  }
  Tape tape;
  const T out = f(&tape, inputs);
  const T loss = nn::sum(&tape, nn::mul(&tape, out, weights));
  tape.backward(loss);

  double worst = 0.0;
  for (auto& x : inputs) {
    const nn::Array<double> g = x.grad_or_zero();
    x.set_requires_grad(false);
    worst = std::max(worst, testing::gradient_error(loss_value, x.data(), x.size(), g.data(), gen,
                                                    24, 1e-6, 1e-4));
  }
  return worst;
}

inline std::vector<T> gru_inputs(std::mt19937_64& gen, Index s, Index l, Index i, Index h) {
  return {random_tensor({s, l, i}, gen), random_tensor({3 * h, i}, gen, -0.7, 0.7),
          random_tensor({3 * h, h}, gen, -0.7, 0.7), random_tensor({3 * h}, gen, -0.5, 0.5),
          random_tensor({3 * h}, gen, -0.5, 0.5)};
}

inline nn::GruWeights<double> weights_from(std::vector<T>& in, std::size_t first) {
  return {in[first], in[first + 1], in[first + 2], in[first + 3]};
}

struct Suite {
  std::string name;
  std::uint64_t seed;
  std::function<double(std::mt19937_64&)> one_shape;  // worst error on one random shape
};

struct SuiteResult {
  std::string name;
  int shapes = 0;
  double worst = 0.0;
};

inline SuiteResult run(const Suite& s) {
  std::mt19937_64 gen(s.seed);
  SuiteResult r{s.name, kShapes, 0.0};
  for (int i = 0; i < kShapes; ++i) r.worst = std::max(r.worst, s.one_shape(gen));
  return r;
}

inline std::vector<Suite> suites() {
  std::vector<Suite> all;
  auto add = [&all](const char* name, std::function<double(std::mt19937_64&)> f, std::uint64_t seed) {
    all.push_back({name, seed, std::move(f)});
  };
    // elementwise ops
    add("add", [](auto& gen) {
      Shape s{draw(gen, 1, 4), draw(gen, 1, 5)};
      return check_gradients({random_tensor(s, gen), random_tensor(s, gen)},
                             [](Tape* t, auto& in) { return nn::add(t, in[0], in[1]); }, gen);
    }, 1);
    add("sub", [](auto& gen) {
      Shape s{draw(gen, 1, 4), draw(gen, 1, 5)};
      return check_gradients({random_tensor(s, gen), random_tensor(s, gen)},
                             [](Tape* t, auto& in) { return nn::sub(t, in[0], in[1]); }, gen);
    }, 2);
    add("mul", [](auto& gen) {
      Shape s{draw(gen, 1, 3), draw(gen, 1, 3), draw(gen, 1, 4)};
      return check_gradients({random_tensor(s, gen), random_tensor(s, gen)},
                             [](Tape* t, auto& in) { return nn::mul(t, in[0], in[1]); }, gen);
    }, 3);
    add("scale", [](auto& gen) {
      const double k = std::uniform_real_distribution<double>(-3, 3)(gen);
      return check_gradients({random_tensor({draw(gen, 1, 6), draw(gen, 1, 6)}, gen)},
                             [k](Tape* t, auto& in) { return nn::scale(t, in[0], k); }, gen);
    }, 4);
    add("softplus", [](auto& gen) {
      return check_gradients({random_tensor({draw(gen, 1, 6), draw(gen, 1, 6)}, gen, -6, 6)},
                             [](Tape* t, auto& in) { return nn::softplus(t, in[0]); }, gen);
    }, 5);
    add("sum", [](auto& gen) {
      return check_gradients({random_tensor({draw(gen, 1, 6), draw(gen, 1, 6)}, gen)},
                             [](Tape* t, auto& in) { return nn::sum(t, in[0]); }, gen);
    }, 6);

    // shape ops
    add("reshape", [](auto& gen) {
      const Index a = draw(gen, 1, 4), b = draw(gen, 1, 4), c = draw(gen, 1, 4);
      return check_gradients({random_tensor({a, b, c}, gen)},
                             [=](Tape* t, auto& in) { return nn::reshape(t, in[0], {a * b, c}); },
                             gen);
    }, 7);
    add("permute", [](auto& gen) {
      std::array<int, 4> axes{0, 1, 2, 3};
      std::shuffle(axes.begin(), axes.end(), gen);
      Shape s{draw(gen, 1, 3), draw(gen, 1, 3), draw(gen, 1, 3), draw(gen, 1, 3)};
      return check_gradients({random_tensor(s, gen)},
                             [axes](Tape* t, auto& in) { return nn::permute(t, in[0], axes); }, gen);
    }, 8);
    add("concat", [](auto& gen) {
      const int axis = int(draw(gen, 0, 2));
      Shape a{draw(gen, 1, 3), draw(gen, 1, 3), draw(gen, 1, 3)};
      Shape b = a;
      b[axis] = draw(gen, 1, 3);
      return check_gradients({random_tensor(a, gen), random_tensor(b, gen)},
                             [axis](Tape* t, auto& in) {
                               return nn::concat<double>(t, {in[0], in[1]}, axis);
                             },
                             gen);
    }, 9);
    add("slice", [](auto& gen) {
      const int axis = int(draw(gen, 0, 2));
      Shape s{draw(gen, 2, 4), draw(gen, 2, 4), draw(gen, 2, 4)};
      const Index begin = draw(gen, 0, s[axis] - 1), end = draw(gen, begin + 1, s[axis]);
      return check_gradients({random_tensor(s, gen)},
                             [=](Tape* t, auto& in) { return nn::slice(t, in[0], axis, begin, end); },
                             gen);
    }, 10);

    // causal convolution
    add("conv2d_causal", [](auto& gen) {
      const Index b = draw(gen, 1, 2), cin = draw(gen, 1, 3), cout = draw(gen, 1, 3);
      const Index kf = draw(gen, 1, 3), kt = draw(gen, 1, 2), stride = draw(gen, 1, 2);
      const Index pad = draw(gen, 0, kf / 2), f = draw(gen, kf, 9), t = draw(gen, 1, 5);
      return check_gradients(
          {random_tensor({b, cin, f, t}, gen), random_tensor({cout, cin, kf, kt}, gen),
           random_tensor({cout}, gen)},
          [=](Tape* tp, auto& in) { return nn::conv2d_causal(tp, in[0], in[1], in[2], stride, pad); },
          gen);
    }, 11);
    add("deconv2d_causal", [](auto& gen) {
      const Index b = draw(gen, 1, 2), cin = draw(gen, 1, 3), cout = draw(gen, 1, 3);
      const Index kf = draw(gen, 1, 3), kt = draw(gen, 1, 2), stride = draw(gen, 1, 2);
      const Index pad = draw(gen, 0, kf / 2), out_f = draw(gen, kf, 9), t = draw(gen, 1, 5);
      const Index in_f = nn::conv_output_extent(out_f, kf, stride, pad);
      return check_gradients(
          {random_tensor({b, cin, in_f, t}, gen), random_tensor({cin, cout, kf, kt}, gen),
           random_tensor({cout}, gen)},
          [=](Tape* tp, auto& in) {
            return nn::deconv2d_causal(tp, in[0], in[1], in[2], stride, pad, out_f);
          },
          gen);
    }, 12);

    // normalization, activation, linear
    add("batch_norm (train)", [](auto& gen) {
      const Index c = draw(gen, 1, 3);
      Shape s{draw(gen, 1, 3), c, draw(gen, 1, 4), draw(gen, 2, 4)};
      return check_gradients(
          {random_tensor(s, gen), random_tensor({c}, gen, 0.5, 1.5), random_tensor({c}, gen)},
          [c](Tape* t, auto& in) {
            nn::BatchNormStats<double> stats{T(Shape{c}), T(Shape{c}, nn::Array<double>::Ones(c))};
            return nn::batch_norm(t, in[0], in[1], in[2], stats, nn::Mode::kTrain);
          },
          gen);
    }, 13);
    add("batch_norm (eval)", [](auto& gen) {
      const Index c = draw(gen, 1, 3);
      Shape s{draw(gen, 1, 3), c, draw(gen, 1, 4), draw(gen, 1, 4)};
      const T mean = random_tensor({c}, gen), var = random_tensor({c}, gen, 0.2, 2.0);
      return check_gradients(
          {random_tensor(s, gen), random_tensor({c}, gen, 0.5, 1.5), random_tensor({c}, gen)},
          [=](Tape* t, auto& in) {
            nn::BatchNormStats<double> stats{mean.clone(), var.clone()};
            return nn::batch_norm(t, in[0], in[1], in[2], stats, nn::Mode::kEval);
          },
          gen);
    }, 14);
    add("layer_norm", [](auto& gen) {
      const Index d = draw(gen, 2, 6);
      return check_gradients({random_tensor({draw(gen, 1, 3), draw(gen, 1, 3), d}, gen),
                              random_tensor({d}, gen, 0.5, 1.5), random_tensor({d}, gen)},
                             [](Tape* t, auto& in) { return nn::layer_norm(t, in[0], in[1], in[2]); },
                             gen);
    }, 15);
    add("prelu", [](auto& gen) {
      const Index c = draw(gen, 1, 3);
      return check_gradients(
          {random_tensor({draw(gen, 1, 2), c, draw(gen, 1, 4), draw(gen, 1, 3)}, gen),
           random_tensor({c}, gen, 0.0, 0.5)},
          [](Tape* t, auto& in) { return nn::prelu(t, in[0], in[1], 1); }, gen);
    }, 16);
    add("linear", [](auto& gen) {
      const Index i = draw(gen, 1, 5), o = draw(gen, 1, 5);
      return check_gradients({random_tensor({draw(gen, 1, 3), draw(gen, 1, 3), i}, gen),
                              random_tensor({o, i}, gen), random_tensor({o}, gen)},
                             [](Tape* t, auto& in) { return nn::linear(t, in[0], in[1], in[2]); },
                             gen);
    }, 17);

    // recurrent layers
    add("gru", [](auto& gen) {
      const Index s = draw(gen, 1, 3), l = draw(gen, 1, 5), h = draw(gen, 1, 4);
      const bool reverse = draw(gen, 0, 1) == 1;
      auto in = gru_inputs(gen, s, l, draw(gen, 1, 4), h);
      const bool with_state = draw(gen, 0, 1) == 1;
      if (with_state) in.push_back(random_tensor({s, h}, gen));
      return check_gradients(std::move(in),
                             [=](Tape* t, auto& x) {
                               const T* h0 = with_state ? &x[5] : nullptr;
                               return nn::gru(t, x[0], weights_from(x, 1), h0, reverse).output;
                             },
                             gen);
    }, 18);
    add("bigru", [](auto& gen) {
      const Index s = draw(gen, 1, 3), l = draw(gen, 1, 5), i = draw(gen, 1, 3), h = draw(gen, 1, 3);
      auto in = gru_inputs(gen, s, l, i, h);
      auto back = gru_inputs(gen, s, l, i, h);
      in.insert(in.end(), back.begin() + 1, back.end());
      return check_gradients(std::move(in),
                             [](Tape* t, auto& x) {
                               auto [f, b] = nn::bigru(t, x[0], weights_from(x, 1), weights_from(x, 5));
                               return nn::add(t, f, nn::scale(t, b, 0.7));
                             },
                             gen);
    }, 19);

    // losses and the inverse STDCT
    add("mean_squared_error", [](auto& gen) {
      Shape s{draw(gen, 1, 4), draw(gen, 1, 5)};
      return check_gradients({random_tensor(s, gen), random_tensor(s, gen)},
                             [](Tape* t, auto& in) { return nn::mean_squared_error(t, in[0], in[1]); },
                             gen);
    }, 20);
    add("mean_absolute_error", [](auto& gen) {
      Shape s{draw(gen, 1, 4), draw(gen, 1, 5)};
      return check_gradients({random_tensor(s, gen), random_tensor(s, gen)},
                             [](Tape* t, auto& in) { return nn::mean_absolute_error(t, in[0], in[1]); },
                             gen);
    }, 21);
    add("loss_magnitude", [](auto& gen) {
      Shape s{draw(gen, 1, 2), 1, draw(gen, 2, 6), draw(gen, 1, 4)};
      return check_gradients({random_tensor(s, gen, 0, 2), random_tensor(s, gen, 0, 2)},
                             [](Tape* t, auto& in) {
                               return pipeline::loss_magnitude(t, in[0], in[1]);
                             },
                             gen);
    }, 22);

    // Small frames keep the DCT cheap; the op is shape-generic.
    add("istdct_op + loss_refine", [](auto& gen) {
      dsp::FrameConfig c;
      c.window_len = 16 * draw(gen, 1, 2);
      c.hop = c.window_len / (1 << draw(gen, 0, 2));
      c.transform_points = c.window_len * draw(gen, 1, 2);
      const Index batch = draw(gen, 1, 2), n = draw(gen, 1, 40);
      const Index frames = dsp::frame_count(n, c), bins = c.real_bins();
      Shape grid{batch, 1, bins, frames};
      return check_gradients(
          {random_tensor(grid, gen), random_tensor(grid, gen, -2, 2), random_tensor(grid, gen, -2, 2),
           random_tensor({batch, n}, gen)},
          [=](Tape* t, auto& in) {
            const T refined = nn::mul(t, in[1], in[0]);
            const T estimate = pipeline::istdct_op(t, refined, c, n);
            return pipeline::loss_refine(t, estimate, in[3], in[1], in[2]);
          },
          gen);
    }, 23);
  return all;
}

}  // namespace testing::grad
