// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <vector>

#include "nn3a/audio.hpp"
#include "nn3a/error.hpp"

namespace nn3a {

// Per-frequency linear echo canceller. Filter taps are re-solved every frame
// from exponentially forgotten weighted covariance accumulators; the frame
// weight is |E|^(beta-2) with the error magnitude clamped from below, so
// high-error (double-talk) frames contribute little to adaptation.
struct WrlsConfig {
  int taps = 5;
  double beta = 0.2;
  double lambda = 0.995;
  double eps = 1e-3;
  double gamma_floor = 1e-3;
};

inline void validate(const WrlsConfig& cfg) {
  if (cfg.taps < 1) fail(ErrorKind::Config, "wrls taps must be >= 1");
  if (cfg.beta < 0.0 || cfg.beta > 2.0) {
    fail(ErrorKind::Config, "wrls beta must be in [0, 2]");
  }
  if (!(cfg.lambda > 0.0) || cfg.lambda > 1.0) {
    fail(ErrorKind::Config, "wrls lambda must be in (0, 1]");
  }
  if (!(cfg.eps > 0.0)) fail(ErrorKind::Config, "wrls eps must be positive");
  if (!(cfg.gamma_floor > 0.0)) {
    fail(ErrorKind::Config, "wrls gamma_floor must be positive");
  }
}

// Error-dependent adaptation weight. Constant one for beta == 2 (classical
// exponentially weighted recursive least squares).
inline double gamma_weight(double error_mag, double beta, double floor) {
  return std::pow(std::max(error_mag, floor), beta - 2.0);
}

struct WrlsBinState {
  Eigen::VectorXcd w;      // filter taps
  Eigen::VectorXcd xline;  // far-end tap-delay line, newest first
  Eigen::MatrixXcd R;      // weighted covariance accumulator
  Eigen::VectorXcd r;      // weighted cross-correlation accumulator
};

struct WrlsState {
  WrlsConfig cfg;
  std::vector<WrlsBinState> bins;
  long solver_resets = 0;  // diagnostics: bins re-initialized mid-stream
};

inline WrlsState wrls_init(const WrlsConfig& cfg, int num_bins) {
  validate(cfg);
  if (num_bins < 1) fail(ErrorKind::Config, "wrls needs at least one bin");
  WrlsState state;
  state.cfg = cfg;
  state.bins.resize(static_cast<size_t>(num_bins));
  for (auto& bin : state.bins) {
    bin.w = Eigen::VectorXcd::Zero(cfg.taps);
    bin.xline = Eigen::VectorXcd::Zero(cfg.taps);
    bin.R = cfg.eps * Eigen::MatrixXcd::Identity(cfg.taps, cfg.taps);
    bin.r = Eigen::VectorXcd::Zero(cfg.taps);
  }
  return state;
}

struct WrlsStepOutput {
  SpectralFrame e;  // mic minus echo estimate
  SpectralFrame y;  // echo estimate
};

// One frame of prediction followed by accumulator update. The outputs use
// the taps from before this frame's update.
inline WrlsStepOutput wrls_step(WrlsState& state, const SpectralFrame& d_frame,
                                const SpectralFrame& x_frame) {
  const int num_bins = static_cast<int>(state.bins.size());
  if (d_frame.bins.size() != num_bins || x_frame.bins.size() != num_bins) {
    fail(ErrorKind::Shape, "wrls frame size does not match state");
  }
  const WrlsConfig& cfg = state.cfg;
  const int taps = cfg.taps;

  WrlsStepOutput out;
  out.e.bins.resize(num_bins);
  out.y.bins.resize(num_bins);
  out.e.frame_index = d_frame.frame_index;
  out.y.frame_index = d_frame.frame_index;

  for (int f = 0; f < num_bins; ++f) {
    WrlsBinState& bin = state.bins[f];
    for (int i = taps - 1; i > 0; --i) bin.xline[i] = bin.xline[i - 1];
    bin.xline[0] = x_frame.bins[f];

    const std::complex<double> y = bin.w.dot(bin.xline);
    const std::complex<double> d = d_frame.bins[f];
    const std::complex<double> e = d - y;
    out.y.bins[f] = y;
    out.e.bins[f] = e;

    const double g = gamma_weight(std::abs(e), cfg.beta, cfg.gamma_floor);
    bin.R *= cfg.lambda;
    bin.R.noalias() += g * (bin.xline * bin.xline.adjoint());
    bin.r *= cfg.lambda;
    bin.r.noalias() += g * bin.xline * std::conj(d);

    Eigen::VectorXcd w_new = bin.R.ldlt().solve(bin.r);
    if (w_new.allFinite()) {
      bin.w = w_new;
    } else {
      bin.w.setZero();
      bin.xline.setZero();
      bin.R = cfg.eps * Eigen::MatrixXcd::Identity(taps, taps);
      bin.r.setZero();
      ++state.solver_resets;
    }
  }
  return out;
}

struct WrlsStreams {
  std::vector<SpectralFrame> e;
  std::vector<SpectralFrame> y;
  std::vector<SpectralFrame> d;
  std::vector<SpectralFrame> x;
};

// Run the canceller over whole signals. The shorter input is zero-padded to
// the longer one's length; all four spectral streams are returned for
// feature assembly downstream.
inline WrlsStreams wrls_process(const TimeSignal& mic, const TimeSignal& farend,
                                const WrlsConfig& cfg, const StftConfig& stft_cfg) {
  if (mic.sample_rate != farend.sample_rate) {
    fail(ErrorKind::Config, "mic and far-end sample rates differ");
  }
  TimeSignal m = mic;
  TimeSignal x = farend;
  const size_t n = std::max(m.samples.size(), x.samples.size());
  m.samples.resize(n, 0.0);
  x.samples.resize(n, 0.0);

  WrlsStreams streams;
  streams.d = stft(m, stft_cfg);
  streams.x = stft(x, stft_cfg);

  WrlsState state = wrls_init(cfg, stft_cfg.num_bins());
  const size_t num_frames = streams.d.size();
  streams.e.reserve(num_frames);
  streams.y.reserve(num_frames);
  for (size_t t = 0; t < num_frames; ++t) {
    WrlsStepOutput out = wrls_step(state, streams.d[t], streams.x[t]);
    streams.e.push_back(std::move(out.e));
    streams.y.push_back(std::move(out.y));
  }
  return streams;
}

}  // namespace nn3a
