// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nn3a/agc.hpp"
#include "nn3a/audio.hpp"
#include "nn3a/delay.hpp"
#include "nn3a/dfsmn.hpp"
#include "nn3a/error.hpp"
#include "nn3a/metrics.hpp"
#include "nn3a/simulation.hpp"
#include "nn3a/training.hpp"
#include "nn3a/wav.hpp"
#include "nn3a/wrls.hpp"

namespace nn3a {

enum class DelayMode { Auto, Fixed, Off };

struct PipelineConfig {
  StftConfig stft = make_stft_config();
  WrlsConfig wrls;
  AgcConfig agc;
  DelayMode delay_mode = DelayMode::Auto;
  int fixed_delay_samples = 0;
  int max_delay_samples = kDefaultMaxDelaySamples;
  bool bypass_model = false;
  bool no_agc = false;
  bool collect_debug = false;
};

struct FrameDebug {
  double erle_so_far_db = 0.0;
  double tap_norm = 0.0;
  double gamma_mean = 0.0;
  double gamma_max = 0.0;
};

struct EnhanceResult {
  TimeSignal enhanced;
  std::vector<double> vad;  // one near-end speech probability per frame
  DelayEstimate delay;
  long solver_resets = 0;
  std::vector<FrameDebug> debug;  // filled when collect_debug is set
};

// Full inference chain: delay compensation, linear echo cancellation,
// mask/VAD inference, masking, resynthesis and gain control. Passing a null
// model (or setting bypass_model) yields the linear-stage-only output with a
// unit mask. When oracle_near is given, the mask is the ground-truth
// phase-sensitive mask of that signal and the VAD trace is its energy gate.
inline EnhanceResult enhance_signals(const TimeSignal& mic,
                                     const TimeSignal& farend,
                                     const ModelFile* model,
                                     const PipelineConfig& cfg,
                                     const TimeSignal* oracle_near = nullptr) {
  if (mic.samples.empty()) fail(ErrorKind::Config, "empty microphone input");
  if (farend.samples.empty()) fail(ErrorKind::Config, "empty far-end input");
  if (mic.sample_rate != farend.sample_rate) {
    fail(ErrorKind::Config, "mic and far-end sample rates differ");
  }
  const bool use_model = model != nullptr && !cfg.bypass_model &&
                         oracle_near == nullptr;
  if (use_model) {
    if (model->stft_win_len != cfg.stft.win_len ||
        model->stft_hop_len != cfg.stft.hop_len ||
        model->stft_fft_len != cfg.stft.fft_len) {
      fail(ErrorKind::Config,
           "model was trained for different framing geometry");
    }
  }

  EnhanceResult result;

  TimeSignal far_aligned = farend;
  switch (cfg.delay_mode) {
    case DelayMode::Auto:
      if (mic.length() >= mic.sample_rate &&
          farend.length() >= farend.sample_rate) {
        result.delay = estimate_delay(mic, farend, cfg.max_delay_samples);
        if (result.delay.lag != 0 &&
            std::abs(result.delay.lag) < farend.length()) {
          far_aligned = apply_delay(farend, result.delay.lag);
        }
      }
      break;
    case DelayMode::Fixed:
      result.delay.lag = cfg.fixed_delay_samples;
      result.delay.confidence = 1.0;
      if (cfg.fixed_delay_samples != 0 &&
          std::abs(cfg.fixed_delay_samples) < farend.length()) {
        far_aligned = apply_delay(farend, cfg.fixed_delay_samples);
      }
      break;
    case DelayMode::Off:
      break;
  }

  TimeSignal mic_eq = mic;
  TimeSignal far_eq = far_aligned;
  const size_t n = std::max(mic_eq.samples.size(), far_eq.samples.size());
  mic_eq.samples.resize(n, 0.0);
  far_eq.samples.resize(n, 0.0);

  std::vector<SpectralFrame> d_frames = stft(mic_eq, cfg.stft);
  std::vector<SpectralFrame> x_frames = stft(far_eq, cfg.stft);
  const int num_frames = static_cast<int>(d_frames.size());
  const int num_bins = cfg.stft.num_bins();

  std::vector<SpectralFrame> s_oracle;
  std::vector<int> oracle_labels;
  if (oracle_near != nullptr) {
    TimeSignal near_eq = *oracle_near;
    near_eq.samples.resize(n, 0.0);
    s_oracle = stft(near_eq, cfg.stft);
    oracle_labels = compute_vad_labels(near_eq, cfg.stft);
  }

  WrlsState state = wrls_init(cfg.wrls, num_bins);
  std::vector<LayerState> layer_states;
  const bool mask_mic = use_model && mask_on_mic(model->config.input_set);
  if (use_model) {
    if (model->config.num_bins != num_bins) {
      fail(ErrorKind::Config, "model bin count does not match framing");
    }
    layer_states = make_layer_states(model->config);
  }

  std::vector<SpectralFrame> enhanced_frames(
      static_cast<size_t>(num_frames));
  result.vad.resize(static_cast<size_t>(num_frames), 1.0);
  if (cfg.collect_debug) {
    result.debug.resize(static_cast<size_t>(num_frames));
  }
  double acc_d = 0.0, acc_e = 0.0;

  for (int t = 0; t < num_frames; ++t) {
    WrlsStepOutput step = wrls_step(state, d_frames[t], x_frames[t]);

    Eigen::VectorXd mask;
    double vad = 1.0;
    if (oracle_near != nullptr) {
      mask.resize(num_bins);
      for (int f = 0; f < num_bins; ++f) {
        const std::complex<double> s = s_oracle[t].bins[f];
        const std::complex<double> e = step.e.bins[f];
        const double raw = (s * std::conj(e)).real() / (std::norm(e) + kPsmEps);
        mask[f] = std::clamp(raw, 0.0, 1.0);
      }
      vad = static_cast<double>(oracle_labels[static_cast<size_t>(t)]);
    } else if (use_model) {
      SignalFrames frames;
      frames.e = &step.e.bins;
      frames.y = &step.y.bins;
      frames.d = &d_frames[t].bins;
      frames.x = &x_frames[t].bins;
      const Eigen::VectorXd features =
          assemble_features(frames, model->config.input_set, num_bins);
      MaskVadOutput out =
          model_forward(features, layer_states, model->params);
      mask = std::move(out.mask);
      vad = out.vad_prob;
    } else {
      mask = Eigen::VectorXd::Ones(num_bins);
    }

    result.vad[static_cast<size_t>(t)] = vad;
    enhanced_frames[static_cast<size_t>(t)] =
        apply_mask(mask_mic ? d_frames[t] : step.e, mask);

    if (cfg.collect_debug) {
      FrameDebug& dbg = result.debug[static_cast<size_t>(t)];
      acc_d += d_frames[t].bins.squaredNorm();
      acc_e += step.e.bins.squaredNorm();
      dbg.erle_so_far_db =
          acc_e > 0 ? 10.0 * std::log10(std::max(acc_d, 1e-300) / acc_e) : 0.0;
      double tap_acc = 0.0, gsum = 0.0, gmax = 0.0;
      for (int f = 0; f < num_bins; ++f) {
        tap_acc += state.bins[static_cast<size_t>(f)].w.norm();
        const double g = gamma_weight(std::abs(step.e.bins[f]), cfg.wrls.beta,
                                      cfg.wrls.gamma_floor);
        gsum += g;
        gmax = std::max(gmax, g);
      }
      dbg.tap_norm = tap_acc / num_bins;
      dbg.gamma_mean = gsum / num_bins;
      dbg.gamma_max = gmax;
    }
  }
  result.solver_resets = state.solver_resets;

  TimeSignal resynth = istft(enhanced_frames, cfg.stft, mic.sample_rate);
  resynth.samples.resize(mic.samples.size(), 0.0);

  if (cfg.no_agc) {
    result.enhanced = std::move(resynth);
    return result;
  }

  // hop block b of the output is finalized by frame b+1
  const size_t num_blocks =
      (resynth.samples.size() + cfg.stft.hop_len - 1) / cfg.stft.hop_len;
  std::vector<double> block_vad(num_blocks, 0.0);
  for (size_t b = 0; b < num_blocks; ++b) {
    const size_t t = std::min<size_t>(b + 1, result.vad.size() - 1);
    block_vad[b] = result.vad[t];
  }
  result.enhanced = agc_process(resynth, block_vad, cfg.agc, cfg.stft.hop_len);
  return result;
}

// --- training data preparation ----------------------------------------------

// Turn one utterance into model inputs and targets. The far end is aligned
// with the known bulk delay, streamed through the canceller, and the target
// mask is computed against whichever spectrum the configured input set masks.
inline TrainingExample make_training_example(const TimeSignal& mic,
                                             const TimeSignal& farend,
                                             const TimeSignal& near_clean,
                                             int delay_samples,
                                             const ModelConfig& model_cfg,
                                             const StftConfig& stft_cfg,
                                             const WrlsConfig& wrls_cfg) {
  TimeSignal far_aligned = farend;
  if (delay_samples != 0 && std::abs(delay_samples) < farend.length()) {
    far_aligned = apply_delay(farend, delay_samples);
  }
  WrlsStreams streams = wrls_process(mic, far_aligned, wrls_cfg, stft_cfg);
  TimeSignal near_eq = near_clean;
  near_eq.samples.resize(mic.samples.size(), 0.0);
  std::vector<SpectralFrame> s_frames = stft(near_eq, stft_cfg);

  TrainingExample ex;
  const auto& reference =
      mask_on_mic(model_cfg.input_set) ? streams.d : streams.e;
  ex.targets.psm = compute_psm(s_frames, reference);
  ex.targets.vad_label = compute_vad_labels(near_eq, stft_cfg);

  const int num_bins = stft_cfg.num_bins();
  ex.features.reserve(streams.d.size());
  for (size_t t = 0; t < streams.d.size(); ++t) {
    SignalFrames frames;
    frames.e = &streams.e[t].bins;
    frames.y = &streams.y[t].bins;
    frames.d = &streams.d[t].bins;
    frames.x = &streams.x[t].bins;
    ex.features.push_back(
        assemble_features(frames, model_cfg.input_set, num_bins));
  }
  return ex;
}

inline TrainingExample make_training_example(const MixtureOutput& mixture,
                                             const ModelConfig& model_cfg,
                                             const StftConfig& stft_cfg,
                                             const WrlsConfig& wrls_cfg) {
  return make_training_example(mixture.mic, mixture.farend, mixture.near_clean,
                               mixture.spec.delay_samples, model_cfg, stft_cfg,
                               wrls_cfg);
}

// --- manifests ----------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string mic, farend, near, echo, noise;
  int delay_samples = 0;
  nlohmann::json raw;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open manifest: " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& ex) {
      fail(ErrorKind::Format, "manifest line " + std::to_string(line_no) +
                                  ": " + ex.what());
    }
    ManifestEntry e;
    e.id = j.value("id", "utt_" + std::to_string(line_no));
    auto resolve = [&base](const std::string& p) {
      std::filesystem::path fp(p);
      return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    e.mic = resolve(j.value("mic", ""));
    e.farend = resolve(j.value("farend", ""));
    e.near = resolve(j.value("near", ""));
    e.echo = j.contains("echo") ? resolve(j["echo"].get<std::string>()) : "";
    e.noise = j.contains("noise") ? resolve(j["noise"].get<std::string>()) : "";
    e.delay_samples = j.value("delay_samples", 0);
    e.raw = std::move(j);
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::vector<TrainingExample> prepare_training_data(
    const std::string& manifest_path, const ModelConfig& model_cfg,
    const StftConfig& stft_cfg, const WrlsConfig& wrls_cfg,
    int max_utterances = 0) {
  std::vector<TrainingExample> dataset;
  const auto entries = read_manifest(manifest_path);
  for (const auto& e : entries) {
    if (max_utterances > 0 &&
        static_cast<int>(dataset.size()) >= max_utterances) {
      break;
    }
    const TimeSignal mic = read_wav(e.mic);
    const TimeSignal far = read_wav(e.farend);
    const TimeSignal near = read_wav(e.near);
    dataset.push_back(make_training_example(mic, far, near, e.delay_samples,
                                            model_cfg, stft_cfg, wrls_cfg));
  }
  if (dataset.empty()) {
    fail(ErrorKind::Config, "manifest has no usable utterances");
  }
  return dataset;
}

// --- evaluation harness -------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["scenario"] = to_string(r.scenario);
  auto put = [&j](const char* key, double v) {
    if (std::isfinite(v)) j[key] = v;
  };
  put("erle_db", r.erle_db);
  put("erle_tail_db", r.erle_tail_db);
  put("si_sdr_db", r.si_sdr_db);
  put("seg_snr_db", r.seg_snr_db);
  put("vad_accuracy", r.vad_accuracy);
  put("vad_false_accept", r.vad_false_accept);
  put("vad_false_reject", r.vad_false_reject);
  return j;
}

// Score one processed utterance against the simulation ground truth. The
// far-active/near-silent mask for echo metrics comes from the stored echo
// and near-end components, not from blind detection.
inline EvalReport evaluate_utterance(const ManifestEntry& entry,
                                     const TimeSignal& processed,
                                     const std::vector<double>* vad_trace,
                                     const StftConfig& stft_cfg) {
  const TimeSignal mic = read_wav(entry.mic);
  const TimeSignal near = read_wav(entry.near);
  TimeSignal proc = processed;
  proc.samples.resize(mic.samples.size(), 0.0);

  EvalReport report;
  report.id = entry.id;

  std::vector<char> near_active = detail::active_blocks(near.samples);
  std::vector<char> far_active;
  if (!entry.echo.empty()) {
    const TimeSignal echo = read_wav(entry.echo);
    far_active = detail::active_blocks(echo.samples);
    double energy = 0.0;
    for (double v : echo.samples) energy += v * v;
    if (energy <= 0.0) std::fill(far_active.begin(), far_active.end(), 0);
  } else {
    far_active.assign(near_active.size(), 0);
  }

  bool has_near = false, has_far = false;
  double near_energy = 0.0;
  for (double v : near.samples) near_energy += v * v;
  has_near = near_energy > 0.0;
  for (char c : far_active) has_far = has_far || c;

  report.scenario = has_near ? (has_far ? Scenario::DT : Scenario::NE_ST)
                             : Scenario::FE_ST;

  std::vector<char> echo_only(far_active.size(), 0);
  bool any_echo_only = false;
  for (size_t b = 0; b < far_active.size(); ++b) {
    const bool near_here = b < near_active.size() && near_active[b];
    echo_only[b] = (far_active[b] && !near_here) ? 1 : 0;
    any_echo_only = any_echo_only || echo_only[b];
  }
  if (any_echo_only) {
    report.erle_db = erle(mic, proc, echo_only);
    std::vector<char> tail = echo_only;
    std::fill(tail.begin(), tail.begin() + tail.size() / 2, 0);
    bool any_tail = false;
    for (char c : tail) any_tail = any_tail || c;
    if (any_tail) report.erle_tail_db = erle(mic, proc, tail);
  }

  if (has_near) {
    report.si_sdr_db = si_sdr(near, proc);
    report.seg_snr_db = seg_snr(near, proc);
  }

  if (vad_trace != nullptr && !vad_trace->empty()) {
    std::vector<int> labels = compute_vad_labels(near, stft_cfg);
    if (labels.size() == vad_trace->size()) {
      const VadScore score = vad_accuracy(*vad_trace, labels);
      report.vad_accuracy = score.accuracy;
      report.vad_false_accept = score.false_accept;
      report.vad_false_reject = score.false_reject;
    }
  }
  return report;
}

inline std::vector<double> read_vad_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::vector<double> probs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      probs.push_back(j.at("vad").get<double>());
    } catch (const std::exception&) {
      return {};
    }
  }
  return probs;
}

inline nlohmann::json aggregate_reports(const std::vector<EvalReport>& reports) {
  nlohmann::json agg;
  for (Scenario sc : {Scenario::NE_ST, Scenario::FE_ST, Scenario::DT}) {
    int count = 0;
    double erle_acc = 0, erle_n = 0, erle_tail_acc = 0, erle_tail_n = 0;
    double sdr_acc = 0, sdr_n = 0, seg_acc = 0, seg_n = 0;
    double vad_acc = 0, vad_n = 0;
    for (const auto& r : reports) {
      if (r.scenario != sc) continue;
      ++count;
      if (std::isfinite(r.erle_db)) { erle_acc += r.erle_db; ++erle_n; }
      if (std::isfinite(r.erle_tail_db)) {
        erle_tail_acc += r.erle_tail_db;
        ++erle_tail_n;
      }
      if (std::isfinite(r.si_sdr_db)) { sdr_acc += r.si_sdr_db; ++sdr_n; }
      if (std::isfinite(r.seg_snr_db)) { seg_acc += r.seg_snr_db; ++seg_n; }
      if (std::isfinite(r.vad_accuracy)) { vad_acc += r.vad_accuracy; ++vad_n; }
    }
    nlohmann::json row;
    row["count"] = count;
    if (erle_n > 0) row["erle_db"] = erle_acc / erle_n;
    if (erle_tail_n > 0) row["erle_tail_db"] = erle_tail_acc / erle_tail_n;
    if (sdr_n > 0) row["si_sdr_db"] = sdr_acc / sdr_n;
    if (seg_n > 0) row["seg_snr_db"] = seg_acc / seg_n;
    if (vad_n > 0) row["vad_accuracy"] = vad_acc / vad_n;
    agg[to_string(sc)] = row;
  }
  return agg;
}

// Score a directory of processed files (<id>_enhanced.wav and optional
// <id>_vad.jsonl) against a dataset manifest.
inline nlohmann::json run_eval(const std::string& manifest_path,
                               const std::string& processed_dir,
                               const StftConfig& stft_cfg = make_stft_config()) {
  namespace fs = std::filesystem;
  const auto entries = read_manifest(manifest_path);
  std::vector<EvalReport> reports;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& entry : entries) {
    const std::string processed_path =
        (fs::path(processed_dir) / (entry.id + "_enhanced.wav")).string();
    if (!fs::exists(processed_path)) {
      fail(ErrorKind::Io, "missing processed file: " + processed_path);
    }
    const TimeSignal processed = read_wav(processed_path);
    const std::vector<double> vad = read_vad_jsonl(
        (fs::path(processed_dir) / (entry.id + "_enhanced.vad.jsonl"))
            .string());
    EvalReport report = evaluate_utterance(
        entry, processed, vad.empty() ? nullptr : &vad, stft_cfg);
    rows.push_back(report_to_json(report));
    reports.push_back(std::move(report));
  }
  nlohmann::json out;
  out["utterances"] = rows;
  out["aggregate"] = aggregate_reports(reports);
  return out;
}

// --- flat key=value config files ----------------------------------------------

inline std::map<std::string, std::string> parse_kv_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r\n") != std::string::npos) {
        fail(ErrorKind::Config, "config line " + std::to_string(line_no) +
                                    " is not key = value");
      }
      continue;
    }
    auto trim = [](std::string s) {
      const size_t b = s.find_first_not_of(" \t\r\n");
      const size_t e = s.find_last_not_of(" \t\r\n");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      fail(ErrorKind::Config,
           "config line " + std::to_string(line_no) + " has empty key");
    }
    kv[key] = value;
  }
  return kv;
}

struct TrainFileConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  WrlsConfig wrls;
  int max_utterances = 0;
};

inline TrainFileConfig parse_train_config(const std::string& path,
                                          int num_bins) {
  TrainFileConfig cfg;
  cfg.model.num_bins = num_bins;
  auto kv = parse_kv_file(path);
  for (const auto& [key, value] : kv) {
    try {
      if (key == "input_set") {
        cfg.model.input_set = input_set_from_string(value);
      } else if (key == "num_layers") {
        cfg.model.num_layers = std::stoi(value);
      } else if (key == "hidden_dim") {
        cfg.model.hidden_dim = std::stoi(value);
      } else if (key == "projection_dim") {
        cfg.model.projection_dim = std::stoi(value);
      } else if (key == "memory_order") {
        cfg.model.memory_order = std::stoi(value);
      } else if (key == "alpha") {
        if (value == "unweighted") {
          cfg.loss.alpha.reset();
        } else {
          cfg.loss.alpha = std::stod(value);
        }
      } else if (key == "vad_loss_scale") {
        cfg.loss.vad_loss_scale = std::stod(value);
      } else if (key == "learning_rate") {
        cfg.train.learning_rate = std::stod(value);
      } else if (key == "steps") {
        cfg.train.steps = std::stoi(value);
      } else if (key == "batch_size") {
        cfg.train.batch_size = std::stoi(value);
      } else if (key == "clip_norm") {
        cfg.train.clip_norm = std::stod(value);
      } else if (key == "seed") {
        cfg.train.seed = std::stoull(value);
      } else if (key == "max_utterances") {
        cfg.max_utterances = std::stoi(value);
      } else if (key == "wrls_taps") {
        cfg.wrls.taps = std::stoi(value);
      } else if (key == "wrls_beta") {
        cfg.wrls.beta = std::stod(value);
      } else if (key == "wrls_lambda") {
        cfg.wrls.lambda = std::stod(value);
      } else if (key == "wrls_eps") {
        cfg.wrls.eps = std::stod(value);
      } else {
        fail(ErrorKind::Config, "unknown config key: " + key);
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "bad value for config key " + key + ": " + value);
    }
  }
  validate(cfg.model);
  validate(cfg.wrls);
  if (cfg.loss.alpha.has_value() && !(*cfg.loss.alpha > 1.0)) {
    fail(ErrorKind::Config, "alpha must be > 1 or 'unweighted'");
  }
  return cfg;
}

}  // namespace nn3a
