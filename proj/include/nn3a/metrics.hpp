// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "nn3a/audio.hpp"
#include "nn3a/error.hpp"

namespace nn3a {

inline constexpr double kMetricCapDb = 120.0;

enum class Scenario { NE_ST, FE_ST, DT };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::NE_ST: return "NE_ST";
    case Scenario::FE_ST: return "FE_ST";
    case Scenario::DT: return "DT";
  }
  return "?";
}

struct EvalReport {
  std::string id;
  Scenario scenario = Scenario::DT;
  double erle_db = std::numeric_limits<double>::quiet_NaN();
  double erle_tail_db = std::numeric_limits<double>::quiet_NaN();
  double si_sdr_db = std::numeric_limits<double>::quiet_NaN();
  double seg_snr_db = std::numeric_limits<double>::quiet_NaN();
  double vad_accuracy = std::numeric_limits<double>::quiet_NaN();
  double vad_false_accept = std::numeric_limits<double>::quiet_NaN();
  double vad_false_reject = std::numeric_limits<double>::quiet_NaN();
};

// Echo return loss enhancement over the hop-sized blocks flagged in
// active_mask (far end active, near end silent). The denominator is floored
// so the report caps at 120 dB.
inline double erle(const TimeSignal& mic, const TimeSignal& processed,
                   const std::vector<char>& active_mask, int block = 160) {
  if (mic.samples.size() != processed.samples.size()) {
    fail(ErrorKind::Shape, "erle: signal lengths differ");
  }
  double num = 0.0, den = 0.0;
  bool any = false;
  for (size_t b = 0; b < active_mask.size(); ++b) {
    if (!active_mask[b]) continue;
    any = true;
    const size_t lo = b * static_cast<size_t>(block);
    const size_t hi = std::min(mic.samples.size(), lo + block);
    for (size_t i = lo; i < hi; ++i) {
      num += mic.samples[i] * mic.samples[i];
      den += processed.samples[i] * processed.samples[i];
    }
  }
  if (!any) fail(ErrorKind::Metric, "erle: no active blocks in mask");
  if (num <= 0.0) return 0.0;
  return 10.0 * std::log10(num / std::max(den, num * 1e-12));
}

// Scale-invariant signal-to-distortion ratio, capped at +/-120 dB.
inline double si_sdr(const TimeSignal& reference, const TimeSignal& estimate) {
  if (reference.samples.size() != estimate.samples.size()) {
    fail(ErrorKind::Shape, "si_sdr: signal lengths differ");
  }
  double rr = 0.0, er = 0.0;
  for (size_t i = 0; i < reference.samples.size(); ++i) {
    rr += reference.samples[i] * reference.samples[i];
    er += estimate.samples[i] * reference.samples[i];
  }
  if (rr <= 0.0) fail(ErrorKind::Metric, "si_sdr: silent reference");
  const double scale = er / rr;
  double target = 0.0, noise = 0.0;
  for (size_t i = 0; i < reference.samples.size(); ++i) {
    const double t = scale * reference.samples[i];
    const double n = estimate.samples[i] - t;
    target += t * t;
    noise += n * n;
  }
  if (noise <= target * 1e-12) return kMetricCapDb;
  if (target <= noise * 1e-12) return -kMetricCapDb;
  return std::clamp(10.0 * std::log10(target / noise), -kMetricCapDb,
                    kMetricCapDb);
}

// Mean per-block SNR over reference-active blocks, each block clamped to the
// conventional [-10, 35] dB range.
inline double seg_snr(const TimeSignal& reference, const TimeSignal& estimate,
                      int block = 160) {
  if (reference.samples.size() != estimate.samples.size()) {
    fail(ErrorKind::Shape, "seg_snr: signal lengths differ");
  }
  const size_t blocks =
      (reference.samples.size() + block - 1) / static_cast<size_t>(block);
  std::vector<double> power(blocks, 0.0);
  double peak = 0.0;
  for (size_t b = 0; b < blocks; ++b) {
    const size_t lo = b * static_cast<size_t>(block);
    const size_t hi = std::min(reference.samples.size(), lo + block);
    for (size_t i = lo; i < hi; ++i) {
      power[b] += reference.samples[i] * reference.samples[i];
    }
    peak = std::max(peak, power[b]);
  }
  if (peak <= 0.0) fail(ErrorKind::Metric, "seg_snr: silent reference");
  const double gate = peak * 1e-4;  // -40 dB in power
  double acc = 0.0;
  int count = 0;
  for (size_t b = 0; b < blocks; ++b) {
    if (power[b] <= gate) continue;
    const size_t lo = b * static_cast<size_t>(block);
    const size_t hi = std::min(reference.samples.size(), lo + block);
    double err = 0.0;
    for (size_t i = lo; i < hi; ++i) {
      const double d = reference.samples[i] - estimate.samples[i];
      err += d * d;
    }
    const double snr =
        10.0 * std::log10(power[b] / std::max(err, power[b] * 1e-12));
    acc += std::clamp(snr, -10.0, 35.0);
    ++count;
  }
  if (count == 0) fail(ErrorKind::Metric, "seg_snr: no active blocks");
  return acc / count;
}

struct VadScore {
  double accuracy = 0.0;
  double false_accept = 0.0;  // predicted speech on non-speech frames
  double false_reject = 0.0;  // predicted non-speech on speech frames
};

// Frame accuracy at a probability threshold; probabilities equal to the
// threshold count as speech.
inline VadScore vad_accuracy(const std::vector<double>& pred_probs,
                             const std::vector<int>& labels,
                             double threshold = 0.5) {
  if (pred_probs.size() != labels.size()) {
    fail(ErrorKind::Shape, "vad_accuracy: length mismatch");
  }
  if (pred_probs.empty()) fail(ErrorKind::Metric, "vad_accuracy: empty input");
  size_t correct = 0, fa = 0, fr = 0, pos = 0, neg = 0;
  for (size_t i = 0; i < pred_probs.size(); ++i) {
    const bool pred = pred_probs[i] >= threshold;
    const bool truth = labels[i] != 0;
    if (pred == truth) ++correct;
    if (truth) {
      ++pos;
      if (!pred) ++fr;
    } else {
      ++neg;
      if (pred) ++fa;
    }
  }
  VadScore score;
  score.accuracy = static_cast<double>(correct) / pred_probs.size();
  score.false_accept = neg > 0 ? static_cast<double>(fa) / neg : 0.0;
  score.false_reject = pos > 0 ? static_cast<double>(fr) / pos : 0.0;
  return score;
}

}  // namespace nn3a
