// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <vector>

#include "nn3a/error.hpp"

namespace nn3a {

inline constexpr int kDefaultSampleRate = 16000;

struct TimeSignal {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  int length() const { return static_cast<int>(samples.size()); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Analysis/synthesis framing. The same square-root Hann window is used on
// both sides; at 50% overlap the squared-window overlap-add sums to one,
// which stft()/istft() rely on.
struct StftConfig {
  int win_len = 320;
  int hop_len = 160;
  int fft_len = 512;
  std::vector<double> window;
  double ola_norm = 1.0;  // squared-window overlap sum

  int num_bins() const { return fft_len / 2 + 1; }
  int head_pad() const { return win_len - hop_len; }
};

struct SpectralFrame {
  Eigen::VectorXcd bins;
  int frame_index = 0;
};

inline std::vector<double> sqrt_hann_window(int win_len) {
  std::vector<double> w(win_len);
  for (int n = 0; n < win_len; ++n) {
    w[n] = std::sin(M_PI * n / win_len);  // sqrt of periodic Hann
  }
  return w;
}

inline StftConfig make_stft_config(int win_len = 320, int hop_len = 160,
                                   int fft_len = 512) {
  if (win_len <= 0 || hop_len <= 0 || fft_len <= 0) {
    fail(ErrorKind::Config, "stft sizes must be positive");
  }
  if (hop_len * 2 != win_len) {
    fail(ErrorKind::Config, "hop_len must be win_len/2");
  }
  if (fft_len < win_len) {
    fail(ErrorKind::Config, "fft_len must be >= win_len");
  }
  StftConfig cfg;
  cfg.win_len = win_len;
  cfg.hop_len = hop_len;
  cfg.fft_len = fft_len;
  cfg.window = sqrt_hann_window(win_len);

  const double ref = cfg.window[0] * cfg.window[0] +
                     cfg.window[hop_len] * cfg.window[hop_len];
  for (int n = 0; n < hop_len; ++n) {
    const double s = cfg.window[n] * cfg.window[n] +
                     cfg.window[n + hop_len] * cfg.window[n + hop_len];
    if (std::abs(s - ref) > 1e-10) {
      fail(ErrorKind::Config, "window does not satisfy overlap-add constancy");
    }
  }
  if (ref <= 0.0) {
    fail(ErrorKind::Config, "degenerate analysis window");
  }
  cfg.ola_norm = ref;
  return cfg;
}

namespace detail {

inline Eigen::VectorXcd rfft(const std::vector<double>& time) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, time);
  return Eigen::Map<const Eigen::VectorXcd>(freq.data(),
                                            static_cast<long>(freq.size()));
}

inline std::vector<double> irfft(const Eigen::VectorXcd& bins, int fft_len) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> freq(bins.data(), bins.data() + bins.size());
  std::vector<double> time;
  fft.inv(time, freq, fft_len);
  return time;
}

inline int frame_count(int content_len, const StftConfig& cfg) {
  if (content_len <= cfg.win_len) return 1;
  return (content_len - cfg.win_len + cfg.hop_len - 1) / cfg.hop_len + 1;
}

}  // namespace detail

// Frame, window and transform a signal. The input is padded with
// win_len-hop_len leading zeros, so frame t covers padded samples
// [t*hop, t*hop + win); the trailing partial frame is zero-padded.
inline std::vector<SpectralFrame> stft(const TimeSignal& signal,
                                       const StftConfig& cfg) {
  const int head = cfg.head_pad();
  const int content = head + signal.length();
  const int num_frames = detail::frame_count(content, cfg);
  const int padded_len = (num_frames - 1) * cfg.hop_len + cfg.win_len;

  std::vector<double> padded(static_cast<size_t>(padded_len), 0.0);
  for (int i = 0; i < signal.length(); ++i) padded[head + i] = signal.samples[i];

  std::vector<SpectralFrame> frames(num_frames);
  std::vector<double> buf(static_cast<size_t>(cfg.fft_len), 0.0);
  for (int t = 0; t < num_frames; ++t) {
    const int off = t * cfg.hop_len;
    for (int n = 0; n < cfg.win_len; ++n) {
      buf[n] = padded[off + n] * cfg.window[n];
    }
    std::fill(buf.begin() + cfg.win_len, buf.end(), 0.0);
    frames[t].bins = detail::rfft(buf);
    frames[t].frame_index = t;
  }
  return frames;
}

// Raw synthesis: inverse-transform each frame, apply the synthesis window to
// its first win_len samples and overlap-add. No edge padding is removed.
inline std::vector<double> overlap_add(const std::vector<SpectralFrame>& frames,
                                       const StftConfig& cfg) {
  if (frames.empty()) return {};
  const int num_frames = static_cast<int>(frames.size());
  const int out_len = (num_frames - 1) * cfg.hop_len + cfg.win_len;
  std::vector<double> out(static_cast<size_t>(out_len), 0.0);
  for (int t = 0; t < num_frames; ++t) {
    if (frames[t].bins.size() != cfg.num_bins()) {
      fail(ErrorKind::Shape, "spectral frame has wrong number of bins");
    }
    const std::vector<double> time = detail::irfft(frames[t].bins, cfg.fft_len);
    const int off = t * cfg.hop_len;
    for (int n = 0; n < cfg.win_len; ++n) {
      out[off + n] += time[n] * cfg.window[n];
    }
  }
  const double inv = 1.0 / cfg.ola_norm;
  for (double& v : out) v *= inv;
  return out;
}

// Inverse of stft(): overlap-add then drop the leading pad. The result may
// be slightly longer than the original signal (trailing frame padding);
// callers crop to the length they need.
inline TimeSignal istft(const std::vector<SpectralFrame>& frames,
                        const StftConfig& cfg,
                        int sample_rate = kDefaultSampleRate) {
  std::vector<double> ola = overlap_add(frames, cfg);
  const int head = cfg.head_pad();
  TimeSignal out;
  out.sample_rate = sample_rate;
  if (static_cast<int>(ola.size()) > head) {
    out.samples.assign(ola.begin() + head, ola.end());
  }
  return out;
}

}  // namespace nn3a
