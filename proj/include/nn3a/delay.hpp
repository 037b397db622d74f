// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "nn3a/audio.hpp"
#include "nn3a/error.hpp"

namespace nn3a {

struct DelayEstimate {
  int lag = 0;            // samples; positive = mic lags behind far end
  double confidence = 0;  // correlation peak prominence in [0,1]
};

inline constexpr int kDefaultMaxDelaySamples = 8000;  // 500 ms at 16 kHz

// Length-preserving shift. Positive lag moves the signal forward in time
// (zero-filled head); negative lag truncates the head.
inline TimeSignal apply_delay(const TimeSignal& signal, int lag) {
  const int n = signal.length();
  if (std::abs(lag) >= n && n > 0) {
    fail(ErrorKind::Config, "delay shift of " + std::to_string(lag) +
                                " samples exceeds signal length " +
                                std::to_string(n));
  }
  TimeSignal out;
  out.sample_rate = signal.sample_rate;
  out.samples.assign(signal.samples.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    const int src = i - lag;
    if (src >= 0 && src < n) out.samples[i] = signal.samples[src];
  }
  return out;
}

namespace detail {

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p *= 2;
  return p;
}

}  // namespace detail

// Bulk delay between microphone and far-end reference via phase-transform
// weighted cross-correlation. Mic blocks of 4096 samples are correlated
// against the far-end context around the same offset; the weighted cross
// spectra are averaged over blocks before picking the peak.
inline DelayEstimate estimate_delay(const TimeSignal& mic,
                                    const TimeSignal& farend,
                                    int max_lag = kDefaultMaxDelaySamples) {
  if (mic.length() < mic.sample_rate || farend.length() < farend.sample_rate) {
    fail(ErrorKind::Config, "delay estimation needs at least 1 s of audio");
  }
  if (max_lag <= 0) fail(ErrorKind::Config, "max_lag must be positive");

  double far_energy = 0;
  for (double v : farend.samples) far_energy += v * v;
  const double far_rms = std::sqrt(far_energy / farend.length());
  if (far_rms < 1e-3) {  // below -60 dBFS: nothing to correlate against
    return DelayEstimate{0, 0.0};
  }

  const int block = 4096;
  const int ctx = block + 2 * max_lag;
  const int fft_len = detail::next_pow2(ctx + 1);

  Eigen::FFT<double> fft;
  std::vector<double> a(static_cast<size_t>(fft_len), 0.0);
  std::vector<double> b(static_cast<size_t>(fft_len), 0.0);
  std::vector<std::complex<double>> fa, fb;
  std::vector<std::complex<double>> acc(static_cast<size_t>(fft_len),
                                        std::complex<double>(0, 0));

  int blocks = 0;
  const int usable = std::min(mic.length(), farend.length());
  for (int off = 0; off + block <= usable; off += block) {
    std::fill(a.begin(), a.end(), 0.0);
    std::fill(b.begin(), b.end(), 0.0);
    for (int i = 0; i < block; ++i) a[i] = mic.samples[off + i];
    for (int i = 0; i < ctx; ++i) {
      const int src = off - max_lag + i;
      if (src >= 0 && src < farend.length()) b[i] = farend.samples[src];
    }
    fft.fwd(fa, a);
    fft.fwd(fb, b);
    for (int k = 0; k < fft_len; ++k) {
      std::complex<double> c = fa[k] * std::conj(fb[k]);
      const double mag = std::abs(c);
      if (mag > 1e-12) acc[k] += c / mag;
    }
    ++blocks;
  }
  if (blocks == 0) return DelayEstimate{0, 0.0};

  std::vector<std::complex<double>> corr;
  fft.inv(corr, acc);

  // correlation index for a candidate lag: mic[n] ~ far[n - lag]
  auto corr_at = [&](int lag) {
    int k = lag - max_lag;
    k %= fft_len;
    if (k < 0) k += fft_len;
    return std::abs(corr[static_cast<size_t>(k)].real());
  };

  int best_lag = 0;
  double best = -1;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    const double v = corr_at(lag);
    if (v > best) {
      best = v;
      best_lag = lag;
    }
  }

  const int exclusion = 32;
  double second = 0;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    if (std::abs(lag - best_lag) <= exclusion) continue;
    second = std::max(second, corr_at(lag));
  }
  double confidence = 0;
  if (best > 0) confidence = std::clamp(1.0 - second / best, 0.0, 1.0);
  return DelayEstimate{best_lag, confidence};
}

}  // namespace nn3a
