// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nn3a/audio.hpp"
#include "nn3a/delay.hpp"
#include "nn3a/error.hpp"
#include "nn3a/wav.hpp"

namespace nn3a {

inline constexpr int kMaxEchoPathLength = 8000;  // 0.5 s at 16 kHz
inline constexpr int kActivityBlock = 160;
inline constexpr double kActivityGateDb = -40.0;

// Recipe for one simulated utterance.
struct MixtureSpec {
  double ser_db = 0.0;
  double snr_db = 20.0;
  bool mute_farend = false;     // x = 0
  bool mute_noise = false;      // v = 0
  bool mute_echo_path = false;  // a = 0 (loudspeaker muted)
  double rt60 = 0.3;
  std::vector<double> echo_path;
  int delay_samples = 0;
  uint64_t seed = 0;
};

struct MixtureRanges {
  double ser_lo = -10.0, ser_hi = 20.0;
  double snr_lo = 0.0, snr_hi = 40.0;
  double p_mute_farend = 0.3;
  double p_mute_noise = 0.2;
  double p_mute_echo_path = 0.1;
  double rt60_lo = 0.1, rt60_hi = 0.6;
  int delay_lo = 0, delay_hi = 1600;  // up to 100 ms bulk delay
};

struct MixtureOutput {
  TimeSignal mic;         // d = echo + near + noise
  TimeSignal farend;      // x as played (reference for the canceller)
  TimeSignal near_clean;  // s
  TimeSignal echo;        // scaled x*a
  TimeSignal noise;       // scaled v
  MixtureSpec spec;
  double achieved_ser_db = std::numeric_limits<double>::quiet_NaN();
  double achieved_snr_db = std::numeric_limits<double>::quiet_NaN();
};

// Exponentially decaying noise model of a room impulse response with a unit
// direct path at lag zero. The decay constant is set so the energy decay
// curve drops 60 dB at rt60.
inline std::vector<double> synthesize_echo_path(std::mt19937_64& rng,
                                                double rt60, int length) {
  if (!(rt60 > 0.0)) fail(ErrorKind::Config, "rt60 must be positive");
  length = std::clamp(length, 16, kMaxEchoPathLength);
  std::vector<double> h(static_cast<size_t>(length), 0.0);
  h[0] = 1.0;
  const double decay = 3.0 * std::log(10.0) / (rt60 * kDefaultSampleRate);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int n = 1; n < length; ++n) {
    h[n] = 0.5 * gauss(rng) * std::exp(-decay * n);
  }
  return h;
}

inline MixtureSpec sample_spec(std::mt19937_64& rng,
                               const MixtureRanges& ranges = {}) {
  MixtureSpec spec;
  spec.ser_db = std::uniform_real_distribution<double>(ranges.ser_lo,
                                                       ranges.ser_hi)(rng);
  spec.snr_db = std::uniform_real_distribution<double>(ranges.snr_lo,
                                                       ranges.snr_hi)(rng);
  spec.mute_farend = std::bernoulli_distribution(ranges.p_mute_farend)(rng);
  spec.mute_noise = std::bernoulli_distribution(ranges.p_mute_noise)(rng);
  spec.mute_echo_path =
      std::bernoulli_distribution(ranges.p_mute_echo_path)(rng);
  spec.rt60 = std::uniform_real_distribution<double>(ranges.rt60_lo,
                                                     ranges.rt60_hi)(rng);
  spec.delay_samples = std::uniform_int_distribution<int>(
      ranges.delay_lo, ranges.delay_hi)(rng);
  spec.seed = rng();

  const int ir_len = std::min<int>(
      kMaxEchoPathLength,
      std::max(256, static_cast<int>(std::lround(1.2 * spec.rt60 *
                                                 kDefaultSampleRate))));
  if (spec.mute_echo_path) {
    spec.echo_path.assign(static_cast<size_t>(ir_len), 0.0);
  } else {
    spec.echo_path = synthesize_echo_path(rng, spec.rt60, ir_len);
  }
  return spec;
}

namespace detail {

inline std::vector<double> fft_convolve(const std::vector<double>& x,
                                        const std::vector<double>& h) {
  if (x.empty() || h.empty()) return {};
  const int out_len = static_cast<int>(x.size() + h.size()) - 1;
  const int fft_len = next_pow2(out_len);
  std::vector<double> xa(static_cast<size_t>(fft_len), 0.0);
  std::vector<double> ha(static_cast<size_t>(fft_len), 0.0);
  std::copy(x.begin(), x.end(), xa.begin());
  std::copy(h.begin(), h.end(), ha.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fx, fh;
  fft.fwd(fx, xa);
  fft.fwd(fh, ha);
  for (size_t i = 0; i < fx.size(); ++i) fx[i] *= fh[i];
  std::vector<double> out;
  fft.inv(out, fx);
  out.resize(static_cast<size_t>(out_len));
  return out;
}

// Blocks of the near-end signal within 40 dB of its loudest block.
inline std::vector<char> active_blocks(const std::vector<double>& s) {
  const int blocks =
      static_cast<int>((s.size() + kActivityBlock - 1) / kActivityBlock);
  std::vector<double> rms(static_cast<size_t>(blocks), 0.0);
  double peak = 0.0;
  for (int b = 0; b < blocks; ++b) {
    double acc = 0.0;
    const size_t lo = static_cast<size_t>(b) * kActivityBlock;
    const size_t hi = std::min(s.size(), lo + kActivityBlock);
    for (size_t i = lo; i < hi; ++i) acc += s[i] * s[i];
    rms[b] = std::sqrt(acc / kActivityBlock);
    peak = std::max(peak, rms[b]);
  }
  const double gate = peak * std::pow(10.0, kActivityGateDb / 20.0);
  std::vector<char> active(static_cast<size_t>(blocks), 0);
  for (int b = 0; b < blocks; ++b) active[b] = rms[b] > gate ? 1 : 0;
  return active;
}

inline double masked_power(const std::vector<double>& x,
                           const std::vector<char>& active) {
  double acc = 0.0;
  size_t count = 0;
  for (size_t b = 0; b < active.size(); ++b) {
    if (!active[b]) continue;
    const size_t lo = b * kActivityBlock;
    const size_t hi = std::min(x.size(), lo + kActivityBlock);
    for (size_t i = lo; i < hi; ++i) acc += x[i] * x[i];
    count += hi - lo;
  }
  return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

}  // namespace detail

// Mix one utterance: the far end is delayed and convolved with the echo
// path, echo and noise are scaled to hit the requested ratios measured over
// near-end-active blocks, and the microphone signal is the exact sum of the
// stored components. If the sum would clip, all components are scaled down
// together (ratios are preserved).
inline MixtureOutput mix(const MixtureSpec& spec, const TimeSignal& near,
                         const TimeSignal& far, const TimeSignal& noise) {
  if (near.sample_rate != far.sample_rate ||
      near.sample_rate != noise.sample_rate) {
    fail(ErrorKind::Config, "mix: sample rates differ");
  }
  const size_t n = near.samples.size();
  if (n == 0) fail(ErrorKind::Config, "mix: empty near-end signal");

  MixtureOutput out;
  out.spec = spec;
  out.near_clean = near;

  out.farend.sample_rate = near.sample_rate;
  out.farend.samples.assign(n, 0.0);
  if (!spec.mute_farend) {
    const size_t m = std::min(n, far.samples.size());
    std::copy(far.samples.begin(), far.samples.begin() + m,
              out.farend.samples.begin());
  }

  std::vector<double> echo(n, 0.0);
  const bool echo_possible = !spec.mute_farend && !spec.mute_echo_path &&
                             !spec.echo_path.empty();
  if (echo_possible) {
    TimeSignal delayed = out.farend;
    if (spec.delay_samples != 0) {
      delayed = apply_delay(out.farend, spec.delay_samples);
    }
    std::vector<double> conv =
        detail::fft_convolve(delayed.samples, spec.echo_path);
    conv.resize(n, 0.0);
    echo = std::move(conv);
  }

  std::vector<double> noise_used(n, 0.0);
  if (!spec.mute_noise) {
    const size_t m = std::min(n, noise.samples.size());
    std::copy(noise.samples.begin(), noise.samples.begin() + m,
              noise_used.begin());
  }

  const std::vector<char> active = detail::active_blocks(near.samples);
  const double p_near = detail::masked_power(near.samples, active);
  const bool near_silent = p_near <= 0.0;

  double echo_scale = 0.0;
  if (echo_possible) {
    if (near_silent) {
      fail(ErrorKind::Config,
           "mix: silent near end cannot satisfy a finite echo ratio");
    }
    const double p_echo = detail::masked_power(echo, active);
    if (p_echo > 0.0) {
      echo_scale =
          std::sqrt(p_near / (p_echo * std::pow(10.0, spec.ser_db / 10.0)));
    }
  }
  double noise_scale = 0.0;
  if (!spec.mute_noise) {
    if (near_silent) {
      fail(ErrorKind::Config,
           "mix: silent near end cannot satisfy a finite noise ratio");
    }
    const double p_noise = detail::masked_power(noise_used, active);
    if (p_noise > 0.0) {
      noise_scale =
          std::sqrt(p_near / (p_noise * std::pow(10.0, spec.snr_db / 10.0)));
    }
  }

  out.echo.sample_rate = near.sample_rate;
  out.echo.samples.resize(n);
  out.noise.sample_rate = near.sample_rate;
  out.noise.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    out.echo.samples[i] = echo_scale * echo[i];
    out.noise.samples[i] = noise_scale * noise_used[i];
  }

  out.mic.sample_rate = near.sample_rate;
  out.mic.samples.resize(n);
  auto sum_mic = [&out, n]() {
    for (size_t i = 0; i < n; ++i) {
      out.mic.samples[i] = out.echo.samples[i] + out.near_clean.samples[i] +
                           out.noise.samples[i];
    }
  };
  sum_mic();
  double peak = 0.0;
  for (double v : out.mic.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.99) {
    const double g = 0.99 / peak;
    for (size_t i = 0; i < n; ++i) {
      out.echo.samples[i] *= g;
      out.near_clean.samples[i] *= g;
      out.noise.samples[i] *= g;
      out.farend.samples[i] *= g;
    }
    sum_mic();
  }

  if (echo_possible && echo_scale > 0.0) {
    const double p_s = detail::masked_power(out.near_clean.samples, active);
    const double p_e = detail::masked_power(out.echo.samples, active);
    out.achieved_ser_db = 10.0 * std::log10(p_s / p_e);
  }
  if (!spec.mute_noise && noise_scale > 0.0) {
    const double p_s = detail::masked_power(out.near_clean.samples, active);
    const double p_v = detail::masked_power(out.noise.samples, active);
    out.achieved_snr_db = 10.0 * std::log10(p_s / p_v);
  }
  return out;
}

// --- synthetic sources ------------------------------------------------------

namespace detail {

struct Resonator {
  double a1 = 0.0, a2 = 0.0, y1 = 0.0, y2 = 0.0;
  void set(double freq, double bw, int fs) {
    const double r = std::exp(-M_PI * bw / fs);
    a1 = 2.0 * r * std::cos(2.0 * M_PI * freq / fs);
    a2 = -r * r;
  }
  double tick(double x) {
    const double y = x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace detail

// Speech-shaped burst generator: white noise through two drifting resonators
// with a syllable-rate envelope, separated by pauses. Used as a stand-in for
// real speech corpora.
inline TimeSignal gen_speech(std::mt19937_64& rng, int num_samples,
                             int sample_rate = kDefaultSampleRate) {
  TimeSignal sig;
  sig.sample_rate = sample_rate;
  sig.samples.assign(static_cast<size_t>(num_samples), 0.0);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  int pos = static_cast<int>(unit(rng) * 0.2 * sample_rate);  // lead-in
  bool burst = true;
  while (pos < num_samples) {
    if (burst) {
      const int len = static_cast<int>((0.25 + 0.35 * unit(rng)) * sample_rate);
      detail::Resonator r1, r2;
      r1.set(250.0 + 650.0 * unit(rng), 80.0 + 120.0 * unit(rng), sample_rate);
      r2.set(1000.0 + 1600.0 * unit(rng), 150.0 + 200.0 * unit(rng),
             sample_rate);
      const double am_freq = 3.0 + 4.0 * unit(rng);
      const double am_phase = 2.0 * M_PI * unit(rng);
      for (int i = 0; i < len && pos + i < num_samples; ++i) {
        const double env =
            0.35 + 0.65 * 0.5 *
                       (1.0 - std::cos(2.0 * M_PI * am_freq * i / sample_rate +
                                       am_phase));
        const double x = gauss(rng);
        sig.samples[pos + i] = env * (r1.tick(x) + 0.5 * r2.tick(x));
      }
      pos += len;
    } else {
      pos += static_cast<int>((0.08 + 0.27 * unit(rng)) * sample_rate);
    }
    burst = !burst;
  }

  double peak = 0.0;
  for (double v : sig.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    const double g = 0.15 / peak;
    for (double& v : sig.samples) v *= g;
  }
  return sig;
}

// Stationary colored noise or a babble-like sum of speech streams.
inline TimeSignal gen_noise(std::mt19937_64& rng, int num_samples,
                            int sample_rate = kDefaultSampleRate) {
  TimeSignal sig;
  sig.sample_rate = sample_rate;
  sig.samples.assign(static_cast<size_t>(num_samples), 0.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < 0.6) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double a = 0.2 + 0.7 * unit(rng);
    double y = 0.0;
    for (int i = 0; i < num_samples; ++i) {
      y = a * y + gauss(rng);
      sig.samples[i] = y;
    }
  } else {
    for (int k = 0; k < 3; ++k) {
      std::mt19937_64 sub(rng());
      TimeSignal s = gen_speech(sub, num_samples, sample_rate);
      for (int i = 0; i < num_samples; ++i) sig.samples[i] += s.samples[i];
    }
  }
  double acc = 0.0;
  for (double v : sig.samples) acc += v * v;
  const double rms = std::sqrt(acc / std::max(1, num_samples));
  if (rms > 0.0) {
    const double g = 0.05 / rms;
    for (double& v : sig.samples) v *= g;
  }
  return sig;
}

// --- corpora and dataset files ----------------------------------------------

inline std::vector<std::string> list_wavs(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorKind::Io, "no wav files in " + dir);
  return files;
}

// Random file + random crop from a user-supplied corpus, zero-padded when
// the file is shorter than requested.
inline TimeSignal draw_from_files(const std::vector<std::string>& files,
                                  std::mt19937_64& rng, int num_samples) {
  const size_t idx =
      std::uniform_int_distribution<size_t>(0, files.size() - 1)(rng);
  TimeSignal full = read_wav(files[idx]);
  if (full.sample_rate != kDefaultSampleRate) {
    fail(ErrorKind::Format, "corpus file is not 16 kHz: " + files[idx]);
  }
  TimeSignal out;
  out.sample_rate = full.sample_rate;
  out.samples.assign(static_cast<size_t>(num_samples), 0.0);
  if (!full.samples.empty()) {
    const int max_off =
        std::max(0, full.length() - num_samples);
    const int off =
        max_off > 0 ? std::uniform_int_distribution<int>(0, max_off)(rng) : 0;
    const int m = std::min(num_samples, full.length() - off);
    std::copy(full.samples.begin() + off, full.samples.begin() + off + m,
              out.samples.begin());
  }
  return out;
}

struct DatasetSources {
  std::vector<std::string> speech_files;  // empty -> synthetic speech
  std::vector<std::string> noise_files;   // empty -> synthetic noise
};

inline MixtureOutput synth_random_mixture(uint64_t seed, double duration_s,
                                          const MixtureRanges& ranges = {},
                                          const DatasetSources& sources = {}) {
  std::mt19937_64 rng(seed);
  const int n = static_cast<int>(duration_s * kDefaultSampleRate);
  MixtureSpec spec = sample_spec(rng, ranges);
  TimeSignal near = sources.speech_files.empty()
                        ? gen_speech(rng, n)
                        : draw_from_files(sources.speech_files, rng, n);
  TimeSignal far = sources.speech_files.empty()
                       ? gen_speech(rng, n)
                       : draw_from_files(sources.speech_files, rng, n);
  TimeSignal noise = sources.noise_files.empty()
                         ? gen_noise(rng, n)
                         : draw_from_files(sources.noise_files, rng, n);
  return mix(spec, near, far, noise);
}

// Far-end single talk: silent near end, echo at a fixed playback level plus
// light noise. Ratio targets do not apply, so this bypasses mix().
inline MixtureOutput synth_fe_st_mixture(uint64_t seed, double duration_s,
                                         double noise_rms = 5e-4,
                                         const MixtureRanges& ranges = {}) {
  std::mt19937_64 rng(seed);
  const int n = static_cast<int>(duration_s * kDefaultSampleRate);

  MixtureSpec spec;
  spec.ser_db = std::numeric_limits<double>::quiet_NaN();
  spec.snr_db = std::numeric_limits<double>::quiet_NaN();
  spec.rt60 = std::uniform_real_distribution<double>(ranges.rt60_lo,
                                                     ranges.rt60_hi)(rng);
  spec.delay_samples = std::uniform_int_distribution<int>(
      ranges.delay_lo, ranges.delay_hi)(rng);
  spec.seed = rng();
  const int ir_len = std::min<int>(
      kMaxEchoPathLength,
      std::max(256, static_cast<int>(std::lround(1.2 * spec.rt60 *
                                                 kDefaultSampleRate))));
  spec.echo_path = synthesize_echo_path(rng, spec.rt60, ir_len);

  MixtureOutput out;
  out.spec = spec;
  out.farend = gen_speech(rng, n);
  out.near_clean.sample_rate = kDefaultSampleRate;
  out.near_clean.samples.assign(static_cast<size_t>(n), 0.0);

  TimeSignal delayed = spec.delay_samples != 0
                           ? apply_delay(out.farend, spec.delay_samples)
                           : out.farend;
  std::vector<double> conv =
      detail::fft_convolve(delayed.samples, spec.echo_path);
  conv.resize(static_cast<size_t>(n), 0.0);
  out.echo.sample_rate = kDefaultSampleRate;
  out.echo.samples = std::move(conv);

  out.noise.sample_rate = kDefaultSampleRate;
  out.noise.samples.resize(static_cast<size_t>(n));
  std::normal_distribution<double> gauss(0.0, noise_rms);
  for (int i = 0; i < n; ++i) out.noise.samples[i] = gauss(rng);

  out.mic.sample_rate = kDefaultSampleRate;
  out.mic.samples.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.mic.samples[i] = out.echo.samples[i] + out.noise.samples[i];
  }
  return out;
}

inline nlohmann::json manifest_entry(const std::string& id,
                                     const MixtureOutput& mixture) {
  nlohmann::json j;
  j["id"] = id;
  j["mic"] = id + "_mic.wav";
  j["farend"] = id + "_farend.wav";
  j["near"] = id + "_near.wav";
  j["echo"] = id + "_echo.wav";
  j["noise"] = id + "_noise.wav";
  if (std::isfinite(mixture.spec.ser_db)) j["ser_db"] = mixture.spec.ser_db;
  if (std::isfinite(mixture.spec.snr_db)) j["snr_db"] = mixture.spec.snr_db;
  j["mute_farend"] = mixture.spec.mute_farend;
  j["mute_noise"] = mixture.spec.mute_noise;
  j["mute_echo_path"] = mixture.spec.mute_echo_path;
  j["rt60"] = mixture.spec.rt60;
  j["delay_samples"] = mixture.spec.delay_samples;
  j["seed"] = mixture.spec.seed;
  if (std::isfinite(mixture.achieved_ser_db)) {
    j["achieved_ser_db"] = mixture.achieved_ser_db;
  }
  if (std::isfinite(mixture.achieved_snr_db)) {
    j["achieved_snr_db"] = mixture.achieved_snr_db;
  }
  return j;
}

inline void write_utterance(const std::string& dir, const std::string& id,
                            const MixtureOutput& mixture,
                            std::ostream& manifest) {
  namespace fs = std::filesystem;
  write_wav((fs::path(dir) / (id + "_mic.wav")).string(), mixture.mic);
  write_wav((fs::path(dir) / (id + "_farend.wav")).string(), mixture.farend);
  write_wav((fs::path(dir) / (id + "_near.wav")).string(), mixture.near_clean);
  write_wav((fs::path(dir) / (id + "_echo.wav")).string(), mixture.echo);
  write_wav((fs::path(dir) / (id + "_noise.wav")).string(), mixture.noise);
  manifest << manifest_entry(id, mixture).dump() << "\n";
}

// Generate a dataset directory: per-utterance wav sets plus manifest.jsonl.
// Returns the manifest path.
inline std::string simulate_dataset(const std::string& out_dir, int count,
                                    uint64_t seed, double duration_s,
                                    const MixtureRanges& ranges = {},
                                    const DatasetSources& sources = {},
                                    int fe_st_count = 0) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string manifest_path =
      (fs::path(out_dir) / "manifest.jsonl").string();
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) fail(ErrorKind::Io, "cannot write " + manifest_path);

  for (int i = 0; i < count; ++i) {
    const uint64_t utt_seed = seed ^ (0x9E3779B97F4A7C15ULL * (i + 1));
    MixtureOutput mixture =
        synth_random_mixture(utt_seed, duration_s, ranges, sources);
    char id[32];
    std::snprintf(id, sizeof(id), "utt_%05d", i);
    write_utterance(out_dir, id, mixture, manifest);
  }
  for (int i = 0; i < fe_st_count; ++i) {
    const uint64_t utt_seed = seed ^ (0xC2B2AE3D27D4EB4FULL * (i + 1));
    MixtureOutput mixture = synth_fe_st_mixture(utt_seed, duration_s);
    char id[32];
    std::snprintf(id, sizeof(id), "fest_%05d", i);
    write_utterance(out_dir, id, mixture, manifest);
  }
  if (!manifest) fail(ErrorKind::Io, "short write: " + manifest_path);
  return manifest_path;
}

}  // namespace nn3a
