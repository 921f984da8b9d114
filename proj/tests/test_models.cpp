#include <doctest.h>

#include "dualspec/models.h"
#include "support.h"

using namespace dualspec;
using models::Index;
using nn::Shape;
using Tf = nn::Tensor<float>;

namespace {

Tf random_input(Shape s, std::mt19937_64& gen, float lo = 0.0f, float hi = 2.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tf t(std::move(s));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(gen);
  return t;
}

// Frames [0, t) of a [B, C, F, T] tensor.
Eigen::ArrayXf leading_frames(const Tf& x, Index t) {
  const Index outer = x.dim(0) * x.dim(1) * x.dim(2), frames = x.dim(3);
  Eigen::ArrayXf out(outer * t);
  for (Index o = 0; o < outer; ++o)
    for (Index j = 0; j < t; ++j) out(o * t + j) = x.data()[o * frames + j];
  return out;
}

void perturb_from(Tf& x, Index t, std::mt19937_64& gen) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  const Index outer = x.dim(0) * x.dim(1) * x.dim(2), frames = x.dim(3);
  for (Index o = 0; o < outer; ++o)
    for (Index j = t; j < frames; ++j) x.data()[o * frames + j] += std::abs(nd(gen));
}

}  // namespace

TEST_CASE("frequency ladders") {
  CHECK(models::frequency_ladder(257, 3, 2) == std::vector<Index>{257, 129, 65, 33, 17, 9});
  CHECK(models::frequency_ladder(512, 5, 2) == std::vector<Index>{512, 256, 128, 64, 32, 16});
  CHECK(models::frequency_ladder(33, 3, 2, 2) == std::vector<Index>{33, 17, 9});
}

TEST_CASE("magnitude net structure") {
  models::MagnitudeNet net({}, 1);
  const auto& p = net.params();
  CHECK(p.at("encoder.0.conv.weight").shape() == Shape{16, 1, 3, 2});
  CHECK(p.at("encoder.0.conv.weight").size() + p.at("encoder.0.conv.bias").size() == 112);
  CHECK(p.at("fc.weight").shape() == Shape{2304, 32});
  CHECK(p.at("gru.0.weight_ih").shape() == Shape{3 * 128, 2304});
  CHECK(p.at("decoder.4.conv.weight").shape() == Shape{32, 1, 3, 2});
  CHECK_FALSE(p.contains("decoder.4.bn.weight"));  // no norm on the output layer
}

TEST_CASE("parameter totals") {
  models::MagnitudeNet fme({}, 1);
  models::RefineNet dsr({}, 2);
  const Index total = fme.params().parameter_count() + dsr.params().parameter_count();
  CHECK(total == 3818722);
  CHECK(std::abs(double(total) - 4.43e6) / 4.43e6 <= 0.15);
  const auto report = models::count_parameters(fme.params());
  CHECK(report.total == fme.params().parameter_count());
  CHECK(report.layers.front().layer == "encoder.0.conv");
  CHECK(report.layers.front().count == 112);
}

TEST_CASE("magnitude net: shape, non-negativity, causality") {
  std::mt19937_64 gen(1);
  models::MagnitudeNet net({}, 3);
  Tf x = random_input({2, 1, 257, 9}, gen);
  const Tf y = net.forward(nullptr, x, nn::Mode::kEval);
  CHECK(y.shape() == Shape{2, 1, 257, 9});
  CHECK(y.value().minCoeff() >= 0.0f);
  CHECK(y.value().allFinite());

  for (int trial = 0; trial < 10; ++trial) {
    const Index t = std::uniform_int_distribution<Index>(1, 8)(gen);
    Tf z = x.clone();
    perturb_from(z, t, gen);
    const Tf yz = net.forward(nullptr, z, nn::Mode::kEval);
    CHECK((leading_frames(yz, t) == leading_frames(y, t)).all());
    CHECK_FALSE((yz.value() == y.value()).all());
  }
}

TEST_CASE("refine net: shape, causality") {
  std::mt19937_64 gen(2);
  models::RefineNet net({}, 4);
  Tf a = random_input({1, 1, 512, 7}, gen, -1, 1), b = random_input({1, 1, 512, 7}, gen, -1, 1);
  const Tf m = net.forward(nullptr, a, b, nn::Mode::kEval);
  CHECK(m.shape() == Shape{1, 1, 512, 7});
  for (int trial = 0; trial < 10; ++trial) {
    const Index t = std::uniform_int_distribution<Index>(1, 6)(gen);
    Tf a2 = a.clone(), b2 = b.clone();
    perturb_from(trial % 2 ? a2 : b2, t, gen);
    const Tf m2 = net.forward(nullptr, a2, b2, nn::Mode::kEval);
    CHECK((leading_frames(m2, t) == leading_frames(m, t)).all());
  }
}

TEST_CASE("frame-by-frame state reproduces the full pass") {
  std::mt19937_64 gen(5);
  models::MagnitudeNet fme({}, 6);
  models::RefineNet dsr({}, 7);
  const Tf x = random_input({1, 1, 257, 6}, gen);
  const Tf a = random_input({1, 1, 512, 6}, gen, -1, 1), b = random_input({1, 1, 512, 6}, gen, -1, 1);
  const Tf full1 = fme.forward(nullptr, x, nn::Mode::kEval);
  const Tf full2 = dsr.forward(nullptr, a, b, nn::Mode::kEval);
  models::NetStreamState s1, s2;
  for (Index t = 0; t < 6; ++t) {
    auto frame = [t](const Tf& g) {
      Tf f(Shape{1, 1, g.dim(2), 1});
      for (Index k = 0; k < g.dim(2); ++k) f.data()[k] = g.data()[k * g.dim(3) + t];
      return f;
    };
    const Tf y1 = fme.forward(nullptr, frame(x), nn::Mode::kEval, &s1);
    const Tf y2 = dsr.forward(nullptr, frame(a), frame(b), nn::Mode::kEval, &s2);
    for (Index k = 0; k < 257; ++k)
      CHECK(y1.data()[k] == doctest::Approx(full1.data()[k * 6 + t]).epsilon(1e-4));
    for (Index k = 0; k < 512; k += 37)
      CHECK(y2.data()[k] == doctest::Approx(full2.data()[k * 6 + t]).epsilon(1e-4).scale(1e-3));
  }
}

TEST_CASE("time-frequency block with zeroed projection is the identity") {
  std::mt19937_64 gen(8);
  nn::ParameterSet params;
  nn::Rng rng(3);
  models::TimeFreqBlock block(params, "blk", 6, 5, rng);
  block.zero_output_projection();
  const Tf x = random_input({2, 6, 4, 3}, gen, -1, 1);
  const Tf y = block.forward(nullptr, x, nullptr);
  CHECK(y.shape() == x.shape());
  CHECK((y.value() == x.value()).all());
}

TEST_CASE("network input validation") {
  models::MagnitudeNet fme({}, 1);
  CHECK_THROWS_AS(fme.forward(nullptr, Tf(Shape{1, 1, 256, 3}), nn::Mode::kEval), ShapeError);
  models::RefineNet dsr({}, 1);
  CHECK_THROWS_AS(dsr.forward(nullptr, Tf(Shape{1, 1, 512, 3}), Tf(Shape{1, 1, 512, 4}),
                              nn::Mode::kEval),
                  ShapeError);
  models::MagnitudeNetConfig bad;
  bad.input_scale = 0;
  CHECK_THROWS_AS(models::validate(bad), ConfigError);
  models::RefineNetConfig bad2;
  bad2.decoder_channels.pop_back();
  CHECK_THROWS_AS(models::validate(bad2), ConfigError);
}

TEST_CASE("same seed, same weights") {
  models::MagnitudeNet a({}, 9), b({}, 9), c({}, 10);
  const auto& wa = a.params().at("gru.1.weight_hh").value();
  CHECK((wa == b.params().at("gru.1.weight_hh").value()).all());
  CHECK_FALSE((wa == c.params().at("gru.1.weight_hh").value()).all());
}
