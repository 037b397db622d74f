// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nn3a/audio.hpp"
#include "nn3a/error.hpp"

namespace nn3a {

// Amplify-only gain control gated by the near-end speech probability: level
// tracking and gain adaptation run only on frames classified as speech, so
// noise-only passages are never pumped up.
struct AgcConfig {
  double target_peak_dbfs = -6.0;
  double max_gain_db = 18.0;
  double attack_ms = 10.0;
  double release_ms = 200.0;
  double vad_gate = 0.5;
};

inline void validate(const AgcConfig& cfg) {
  if (cfg.max_gain_db < 0.0) {
    fail(ErrorKind::Config, "agc max_gain_db must be >= 0");
  }
  if (!(cfg.vad_gate > 0.0) || !(cfg.vad_gate < 1.0)) {
    fail(ErrorKind::Config, "agc vad_gate must be in (0, 1)");
  }
  if (!(cfg.attack_ms > 0.0) || !(cfg.release_ms > 0.0)) {
    fail(ErrorKind::Config, "agc time constants must be positive");
  }
}

struct AgcState {
  double tracked_peak = 0.0;
  double current_gain = 1.0;
  double desired_gain = 1.0;
};

// Process one hop-sized block. The block gain is interpolated sample by
// sample from the previous block's gain to avoid zipper noise; output is
// clamped to the PCM16 full-scale range.
inline std::vector<double> agc_step(AgcState& state,
                                    const std::vector<double>& block,
                                    double vad_prob, const AgcConfig& cfg,
                                    int sample_rate = kDefaultSampleRate) {
  validate(cfg);
  const double block_ms = 1000.0 * static_cast<double>(block.size()) /
                          sample_rate;
  const double attack = std::exp(-block_ms / cfg.attack_ms);
  const double release = std::exp(-block_ms / cfg.release_ms);
  const double target = std::pow(10.0, cfg.target_peak_dbfs / 20.0);
  const double max_gain = std::pow(10.0, cfg.max_gain_db / 20.0);

  if (vad_prob >= cfg.vad_gate) {
    double peak = 0.0;
    for (double v : block) peak = std::max(peak, std::abs(v));
    const double coef = peak > state.tracked_peak ? attack : release;
    state.tracked_peak = coef * state.tracked_peak + (1.0 - coef) * peak;
    if (state.tracked_peak > 1e-9) {
      state.desired_gain =
          std::clamp(target / state.tracked_peak, 1.0, max_gain);
    } else {
      state.desired_gain = 1.0;
    }
  }
  // outside speech both the level and the desired gain hold

  const double prev_gain = state.current_gain;
  state.current_gain =
      state.desired_gain + (prev_gain - state.desired_gain) * release;

  std::vector<double> out(block.size());
  const double n_inv = block.empty() ? 0.0 : 1.0 / static_cast<double>(block.size());
  for (size_t i = 0; i < block.size(); ++i) {
    const double frac = static_cast<double>(i + 1) * n_inv;
    const double gain = prev_gain + (state.current_gain - prev_gain) * frac;
    out[i] = std::clamp(block[i] * gain, -1.0, 1.0 - 1.0 / 32768.0);
  }
  return out;
}

// Convenience wrapper: chop a signal into hop-sized blocks and gate each
// block with its frame probability (block b uses vad_probs[b]; the last
// probability is reused if the signal runs longer).
inline TimeSignal agc_process(const TimeSignal& signal,
                              const std::vector<double>& vad_probs,
                              const AgcConfig& cfg, int hop_len = 160) {
  validate(cfg);
  AgcState state;
  TimeSignal out;
  out.sample_rate = signal.sample_rate;
  out.samples.reserve(signal.samples.size());
  std::vector<double> block;
  size_t b = 0;
  for (size_t off = 0; off < signal.samples.size(); off += hop_len, ++b) {
    const size_t len =
        std::min<size_t>(hop_len, signal.samples.size() - off);
    block.assign(signal.samples.begin() + off,
                 signal.samples.begin() + off + len);
    double vad = 0.0;
    if (!vad_probs.empty()) {
      vad = vad_probs[std::min(b, vad_probs.size() - 1)];
    }
    std::vector<double> gained =
        agc_step(state, block, vad, cfg, signal.sample_rate);
    out.samples.insert(out.samples.end(), gained.begin(), gained.end());
  }
  return out;
}

}  // namespace nn3a
