#include <doctest.h>

#include "dualspec/pipeline.h"
#include "dualspec/streaming.h"
#include "support.h"

using namespace dualspec;
using dsp::FrameConfig;
using dsp::Index;
using dsp::Waveform;

namespace {

Eigen::VectorXd run_stream(pipeline::StreamingEnhancer& s, const Eigen::VectorXd& x, Index chunk) {
  Eigen::VectorXd out(0);
  auto append = [&out](const Eigen::VectorXd& y) {
    out.conservativeResize(out.size() + y.size());
    out.tail(y.size()) = y;
  };
  for (Index i = 0; i < x.size(); i += chunk) append(s.push(x.segment(i, std::min(chunk, x.size() - i))));
  append(s.finish());
  return out;
}

pipeline::FrameMagnitudeFn identity_magnitude() {
  return [](const Eigen::VectorXd& m) { return m; };
}
pipeline::FrameMaskFn unit_mask() {
  return [](const Eigen::VectorXd& n, const Eigen::VectorXd&) {
    return Eigen::VectorXd::Ones(n.size()).eval();
  };
}

}  // namespace

TEST_CASE("latency is two edge pads plus a hop") {
  CHECK(pipeline::StreamingEnhancer::latency_for(FrameConfig{}) == 896);
  pipeline::StreamingEnhancer s(FrameConfig{}, identity_magnitude(), unit_mask());
  CHECK(s.latency() == 896);
}

TEST_CASE("identity stages stream the input back") {
  std::mt19937_64 gen(1);
  const Eigen::VectorXd x = testing::random_signal(3001, gen);
  for (Index chunk : {Index(1), Index(77), Index(128), Index(4096)}) {
    pipeline::StreamingEnhancer s(FrameConfig{}, identity_magnitude(), unit_mask());
    const Eigen::VectorXd y = run_stream(s, x, chunk);
    REQUIRE(y.size() == x.size());
    CHECK((y - x).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(s.samples_in() == 3001);
    CHECK(s.samples_out() == 3001);
  }
}

TEST_CASE("no output sample waits longer than the latency") {
  // Output m is released no later than the push of input m + latency - 1.
  std::mt19937_64 gen(2);
  const Eigen::VectorXd x = testing::random_signal(2500, gen);
  pipeline::StreamingEnhancer s(FrameConfig{}, identity_magnitude(), unit_mask());
  Index emitted = 0, worst_lag = 0;
  for (Index i = 0; i < x.size(); ++i) {
    emitted += s.push(x.segment(i, 1)).size();
    const Index fed = i + 1;
    if (fed >= s.latency()) CHECK(emitted >= fed - s.latency() + 1);
    worst_lag = std::max(worst_lag, fed - emitted);
  }
  CHECK(worst_lag == s.latency() - 1);
}

TEST_CASE("streaming networks match the offline pipeline") {
  std::mt19937_64 gen(3);
  const Waveform x{testing::random_signal(2200, gen, 0.2), 16000};
  models::MagnitudeNet fme({}, 4);
  models::RefineNet dsr({}, 5);
  const Waveform offline = pipeline::full_forward(x, FrameConfig{}, pipeline::network_magnitude_fn(fme),
                                                  pipeline::network_mask_fn(dsr));
  for (Index chunk : {Index(1), Index(128), Index(4096)}) {
    pipeline::StreamingEnhancer s(FrameConfig{}, fme, dsr);
    const Eigen::VectorXd y = run_stream(s, x.samples, chunk);
    REQUIRE(y.size() == offline.size());
    CHECK((y - offline.samples).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("streaming silence stays silent") {
  models::MagnitudeNet fme({}, 4);
  models::RefineNet dsr({}, 5);
  pipeline::StreamingEnhancer s(FrameConfig{}, fme, dsr);
  const Eigen::VectorXd y = run_stream(s, Eigen::VectorXd::Zero(1500), 300);
  CHECK(y.size() == 1500);
  CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("finish ends the stream") {
  pipeline::StreamingEnhancer s(FrameConfig{}, identity_magnitude(), unit_mask());
  s.push(Eigen::VectorXd::Ones(10));
  CHECK(s.finish().size() == 10);
  CHECK_THROWS_AS(s.push(Eigen::VectorXd::Ones(1)), UsageError);
  CHECK_THROWS_AS(s.finish(), UsageError);
  pipeline::StreamingEnhancer empty(FrameConfig{}, identity_magnitude(), unit_mask());
  CHECK(empty.finish().size() == 0);
}
