#pragma once

// Shared helpers for the unit and acceptance tests: brute-force transform
// oracles and a central-difference gradient checker.

#include <cmath>
#include <complex>
#include <filesystem>
#include <string>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "dualspec/dsp.h"
#include "dualspec/tensor.h"

namespace testing {

using dualspec::dsp::FrameConfig;
using dualspec::dsp::Index;

inline Eigen::VectorXd random_signal(Index n, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i) x(i) = nd(gen);
  return x;
}

inline double rel_l2(const Eigen::Ref<const Eigen::MatrixXcd>& a,
                     const Eigen::Ref<const Eigen::MatrixXcd>& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

// Textbook definitions, written independently of the library: explicit
// zero padding, a Hamming window from its formula, O(N^2) sums.
inline std::vector<double> oracle_padded(const Eigen::VectorXd& x, const FrameConfig& c,
                                         Index frames) {
  std::vector<double> p((frames - 1) * c.hop + c.window_len, 0.0);
  for (Index i = 0; i < x.size(); ++i) p[c.window_len - c.hop + i] = x(i);
  return p;
}

inline double oracle_window(Index k, Index n) {
  return 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * double(k) / double(n - 1));
}

inline Eigen::MatrixXcd oracle_stft(const Eigen::VectorXd& x, const FrameConfig& c, Index frames) {
  const auto p = oracle_padded(x, c, frames);
  const Index bins = c.transform_points / 2 + 1;
  Eigen::MatrixXcd out(bins, frames);
  for (Index t = 0; t < frames; ++t)
    for (Index k = 0; k < bins; ++k) {
      std::complex<double> acc = 0.0;
      for (Index n = 0; n < c.window_len; ++n) {
        const double ang = -2.0 * std::numbers::pi * double(k * n) / double(c.transform_points);
        acc += oracle_window(n, c.window_len) * p[t * c.hop + n] *
               std::complex<double>(std::cos(ang), std::sin(ang));
      }
      out(k, t) = acc;
    }
  return out;
}

inline Eigen::MatrixXd oracle_stdct(const Eigen::VectorXd& x, const FrameConfig& c, Index frames) {
  const auto p = oracle_padded(x, c, frames);
  const Index n_pts = c.transform_points;
  Eigen::MatrixXd out(n_pts, frames);
  for (Index t = 0; t < frames; ++t)
    for (Index k = 0; k < n_pts; ++k) {
      const double beta = k == 0 ? std::sqrt(1.0 / n_pts) : std::sqrt(2.0 / n_pts);
      double acc = 0.0;
      for (Index n = 0; n < c.window_len; ++n)
        acc += oracle_window(n, c.window_len) * p[t * c.hop + n] *
               std::cos(std::numbers::pi * double(k) * double(2 * n + 1) / double(2 * n_pts));
      out(k, t) = beta * acc;
    }
  return out;
}

// Central differences of a scalar function against an analytic gradient.
// Returns the worst relative error max|fd - g| / max(|fd|, |g|, floor) over
// `probes` randomly chosen coordinates.
inline double gradient_error(const std::function<double()>& f, double* x, Index n,
                             const double* analytic, std::mt19937_64& gen, int probes = 24,
                             double h = 1e-6, double floor = 1e-6) {
  double worst = 0.0;
  std::uniform_int_distribution<Index> pick(0, n - 1);
  for (int p = 0; p < probes && p < 4 * n; ++p) {
    const Index i = n <= probes ? p % n : pick(gen);
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f();
    x[i] = orig - h;
    const double down = f();
    x[i] = orig;
    const double fd = (up - down) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(analytic[i]), floor});
    worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
  }
  return worst;
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dualspec_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
