// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "nn3a/audio.hpp"
#include "nn3a/dfsmn.hpp"
#include "nn3a/error.hpp"

namespace nn3a {

struct TrainingTargets {
  Eigen::MatrixXd psm;         // frames x bins, clamped to [0,1]
  std::vector<int> vad_label;  // one {0,1} label per frame
};

// alpha == nullopt selects plain (unweighted) mean squared error.
struct LossConfig {
  std::optional<double> alpha = 1.1;
  double vad_loss_scale = 1.0;
};

struct LossBreakdown {
  double total = 0;
  double mask_loss = 0;
  double vad_loss = 0;
};

inline constexpr double kPsmEps = 1e-10;
inline constexpr double kProbEps = 1e-7;

// Phase-sensitive mask target of the clean spectrum against a reference
// spectrum, clamped to the reachable range of the sigmoid mask head.
inline Eigen::MatrixXd compute_psm(const std::vector<SpectralFrame>& clean,
                                   const std::vector<SpectralFrame>& reference) {
  if (clean.size() != reference.size()) {
    fail(ErrorKind::Shape, "psm: frame count mismatch");
  }
  if (clean.empty()) return Eigen::MatrixXd(0, 0);
  const long bins = clean[0].bins.size();
  Eigen::MatrixXd psm(static_cast<long>(clean.size()), bins);
  for (size_t t = 0; t < clean.size(); ++t) {
    if (clean[t].bins.size() != bins || reference[t].bins.size() != bins) {
      fail(ErrorKind::Shape, "psm: bin count mismatch");
    }
    for (long f = 0; f < bins; ++f) {
      const std::complex<double> s = clean[t].bins[f];
      const std::complex<double> e = reference[t].bins[f];
      const double raw =
          (s * std::conj(e)).real() / (std::norm(e) + kPsmEps);
      psm(static_cast<long>(t), f) = std::clamp(raw, 0.0, 1.0);
    }
  }
  return psm;
}

// Frame-level activity labels from the clean near-end signal: a frame is
// active when its RMS is within 40 dB of the loudest frame. Framing matches
// stft() so labels align with spectral frames.
inline std::vector<int> compute_vad_labels(const TimeSignal& near_clean,
                                           const StftConfig& cfg) {
  const int head = cfg.head_pad();
  const int content = head + near_clean.length();
  const int num_frames = detail::frame_count(content, cfg);

  std::vector<double> rms(static_cast<size_t>(num_frames), 0.0);
  double peak = 0.0;
  for (int t = 0; t < num_frames; ++t) {
    double acc = 0.0;
    for (int n = 0; n < cfg.win_len; ++n) {
      const int src = t * cfg.hop_len + n - head;
      if (src >= 0 && src < near_clean.length()) {
        acc += near_clean.samples[src] * near_clean.samples[src];
      }
    }
    rms[t] = std::sqrt(acc / cfg.win_len);
    peak = std::max(peak, rms[t]);
  }
  const double threshold = peak * 0.01;  // -40 dB
  std::vector<int> labels(static_cast<size_t>(num_frames), 0);
  for (int t = 0; t < num_frames; ++t) labels[t] = rms[t] > threshold ? 1 : 0;
  return labels;
}

// Per-bin loss weight alpha - psm; more weight where the target mask is
// small (echo/noise dominant bins).
inline Eigen::MatrixXd loss_weights(const Eigen::MatrixXd& psm,
                                    const std::optional<double>& alpha) {
  if (!alpha.has_value()) {
    return Eigen::MatrixXd::Ones(psm.rows(), psm.cols());
  }
  if (!(*alpha > 1.0)) {
    fail(ErrorKind::Config, "loss weighting alpha must be > 1");
  }
  return (*alpha - psm.array()).matrix();
}

// Weighted mask MSE plus VAD cross-entropy, both averaged over frames.
inline LossBreakdown compute_loss(const std::vector<MaskVadOutput>& outputs,
                                  const TrainingTargets& targets,
                                  const LossConfig& cfg) {
  const long num_frames = static_cast<long>(outputs.size());
  if (num_frames != targets.psm.rows() ||
      outputs.size() != targets.vad_label.size()) {
    fail(ErrorKind::Shape, "loss: output/target length mismatch");
  }
  const Eigen::MatrixXd weights = loss_weights(targets.psm, cfg.alpha);

  LossBreakdown loss;
  for (long t = 0; t < num_frames; ++t) {
    const Eigen::VectorXd& mask = outputs[static_cast<size_t>(t)].mask;
    if (mask.size() != targets.psm.cols()) {
      fail(ErrorKind::Shape, "loss: mask width mismatch");
    }
    for (long f = 0; f < mask.size(); ++f) {
      const double diff = mask[f] - targets.psm(t, f);
      loss.mask_loss += weights(t, f) * diff * diff;
    }
    const double p = std::clamp(outputs[static_cast<size_t>(t)].vad_prob,
                                kProbEps, 1.0 - kProbEps);
    const double label = targets.vad_label[static_cast<size_t>(t)];
    loss.vad_loss += -label * std::log(p) - (1.0 - label) * std::log(1.0 - p);
  }
  loss.mask_loss /= num_frames;
  loss.vad_loss /= num_frames;
  loss.total = loss.mask_loss + cfg.vad_loss_scale * loss.vad_loss;
  return loss;
}

// Gradients mirror the parameter container tensor for tensor.
using GradientSet = ModelParams;

inline GradientSet zero_like(const ModelParams& p) {
  GradientSet g;
  g.w_in = Eigen::MatrixXd::Zero(p.w_in.rows(), p.w_in.cols());
  g.b_in = Eigen::VectorXd::Zero(p.b_in.size());
  g.layers.resize(p.layers.size());
  for (size_t j = 0; j < p.layers.size(); ++j) {
    g.layers[j].w1 = Eigen::MatrixXd::Zero(p.layers[j].w1.rows(),
                                           p.layers[j].w1.cols());
    g.layers[j].b1 = Eigen::VectorXd::Zero(p.layers[j].b1.size());
    g.layers[j].w2 = Eigen::MatrixXd::Zero(p.layers[j].w2.rows(),
                                           p.layers[j].w2.cols());
    g.layers[j].b2 = Eigen::VectorXd::Zero(p.layers[j].b2.size());
    g.layers[j].mem = Eigen::MatrixXd::Zero(p.layers[j].mem.rows(),
                                            p.layers[j].mem.cols());
  }
  g.w_mask = Eigen::MatrixXd::Zero(p.w_mask.rows(), p.w_mask.cols());
  g.b_mask = Eigen::VectorXd::Zero(p.b_mask.size());
  g.w_vad = Eigen::VectorXd::Zero(p.w_vad.size());
  g.b_vad = 0.0;
  return g;
}

namespace detail {

inline void accumulate(GradientSet& acc, const GradientSet& g) {
  acc.w_in += g.w_in;
  acc.b_in += g.b_in;
  for (size_t j = 0; j < acc.layers.size(); ++j) {
    acc.layers[j].w1 += g.layers[j].w1;
    acc.layers[j].b1 += g.layers[j].b1;
    acc.layers[j].w2 += g.layers[j].w2;
    acc.layers[j].b2 += g.layers[j].b2;
    acc.layers[j].mem += g.layers[j].mem;
  }
  acc.w_mask += g.w_mask;
  acc.b_mask += g.b_mask;
  acc.w_vad += g.w_vad;
  acc.b_vad += g.b_vad;
}

template <typename Fn>
inline void for_each_tensor(GradientSet& g, Fn&& fn) {
  fn(g.w_in);
  fn(g.b_in);
  for (auto& l : g.layers) {
    fn(l.w1);
    fn(l.b1);
    fn(l.w2);
    fn(l.b2);
    fn(l.mem);
  }
  fn(g.w_mask);
  fn(g.b_mask);
  fn(g.w_vad);
}

inline double global_norm(GradientSet& g) {
  double acc = g.b_vad * g.b_vad;
  for_each_tensor(g, [&acc](auto& t) { acc += t.squaredNorm(); });
  return std::sqrt(acc);
}

inline void scale(GradientSet& g, double s) {
  for_each_tensor(g, [s](auto& t) { t *= s; });
  g.b_vad *= s;
}

inline void check_finite(const GradientSet& g) {
  auto check = [](const Eigen::MatrixXd& t, const char* name) {
    if (!t.allFinite()) {
      fail(ErrorKind::Numeric, std::string("non-finite gradient in ") + name);
    }
  };
  check(g.w_in, "w_in");
  check(g.b_in, "b_in");
  for (size_t j = 0; j < g.layers.size(); ++j) {
    const std::string p = "layer" + std::to_string(j) + ".";
    if (!g.layers[j].w1.allFinite() || !g.layers[j].b1.allFinite() ||
        !g.layers[j].w2.allFinite() || !g.layers[j].b2.allFinite() ||
        !g.layers[j].mem.allFinite()) {
      fail(ErrorKind::Numeric, "non-finite gradient in " + p + "tensors");
    }
  }
  check(g.w_mask, "w_mask");
  check(g.b_mask, "b_mask");
  check(g.w_vad, "w_vad");
  if (!std::isfinite(g.b_vad)) {
    fail(ErrorKind::Numeric, "non-finite gradient in b_vad");
  }
}

}  // namespace detail

struct BackwardResult {
  LossBreakdown loss;
  GradientSet grads;
  std::vector<MaskVadOutput> outputs;
};

// Whole-sequence forward pass with recording, then exact reverse-mode
// gradients of the total loss, including the memory-sum paths across time.
inline BackwardResult backward(const std::vector<Eigen::VectorXd>& features,
                               const ModelParams& params,
                               const TrainingTargets& targets,
                               const LossConfig& loss_cfg) {
  const int num_frames = static_cast<int>(features.size());
  const int num_layers = static_cast<int>(params.layers.size());
  if (num_frames == 0) fail(ErrorKind::Shape, "backward: empty sequence");
  if (num_frames != targets.psm.rows() ||
      features.size() != targets.vad_label.size()) {
    fail(ErrorKind::Shape, "backward: target length mismatch");
  }
  const int memory_rows = static_cast<int>(params.layers.empty()
                                               ? 1
                                               : params.layers[0].mem.rows());

  // forward with trace
  std::vector<Eigen::VectorXd> a0(features.size());
  std::vector<std::vector<Eigen::VectorXd>> hin(
      static_cast<size_t>(num_layers));
  std::vector<std::vector<Eigen::VectorXd>> u(static_cast<size_t>(num_layers));
  std::vector<std::vector<Eigen::VectorXd>> htilde(
      static_cast<size_t>(num_layers));
  for (int j = 0; j < num_layers; ++j) {
    hin[j].resize(features.size());
    u[j].resize(features.size());
    htilde[j].resize(features.size());
  }
  std::vector<Eigen::VectorXd> h_final(features.size());
  std::vector<MaskVadOutput> outputs(features.size());

  for (int t = 0; t < num_frames; ++t) {
    if (features[t].size() != params.w_in.cols()) {
      fail(ErrorKind::Shape, "backward: feature dimension mismatch");
    }
    a0[t] = params.w_in * features[t] + params.b_in;
    Eigen::VectorXd h = a0[t].cwiseMax(0.0);
    for (int j = 0; j < num_layers; ++j) {
      const LayerParams& lp = params.layers[j];
      hin[j][t] = h;
      u[j][t] = lp.w1 * h + lp.b1;
      const Eigen::VectorXd p = u[j][t].cwiseMax(0.0);
      htilde[j][t] = lp.w2 * p + lp.b2;
      Eigen::VectorXd out = h + htilde[j][t];
      for (int tau = 0; tau < memory_rows && tau <= t; ++tau) {
        out.noalias() +=
            lp.mem.row(tau).transpose().cwiseProduct(htilde[j][t - tau]);
      }
      h = std::move(out);
    }
    h_final[t] = h;
    Eigen::VectorXd logits = params.w_mask * h + params.b_mask;
    outputs[t].mask.resize(logits.size());
    for (long i = 0; i < logits.size(); ++i) {
      outputs[t].mask[i] = sigmoid(logits[i]);
    }
    outputs[t].vad_prob = sigmoid(params.w_vad.dot(h) + params.b_vad);
  }

  BackwardResult result;
  result.loss = compute_loss(outputs, targets, loss_cfg);
  result.outputs = outputs;
  result.grads = zero_like(params);
  GradientSet& g = result.grads;

  const Eigen::MatrixXd weights = loss_weights(targets.psm, loss_cfg.alpha);
  const double inv_frames = 1.0 / num_frames;

  // head gradients and dL/dh at the top of the stack
  std::vector<Eigen::VectorXd> dh(features.size());
  for (int t = 0; t < num_frames; ++t) {
    const Eigen::VectorXd& mask = outputs[t].mask;
    Eigen::VectorXd dz(mask.size());
    for (long f = 0; f < mask.size(); ++f) {
      const double diff = mask[f] - targets.psm(t, f);
      dz[f] = inv_frames * 2.0 * weights(t, f) * diff * mask[f] *
              (1.0 - mask[f]);
    }
    const double p = outputs[t].vad_prob;
    double dq = 0.0;
    if (p > kProbEps && p < 1.0 - kProbEps) {
      const double label = targets.vad_label[static_cast<size_t>(t)];
      const double dldp = -label / p + (1.0 - label) / (1.0 - p);
      dq = loss_cfg.vad_loss_scale * inv_frames * dldp * p * (1.0 - p);
    }
    g.w_mask.noalias() += dz * h_final[t].transpose();
    g.b_mask += dz;
    g.w_vad.noalias() += dq * h_final[t];
    g.b_vad += dq;
    dh[t] = params.w_mask.transpose() * dz + params.w_vad * dq;
  }

  // layers, top down
  for (int j = num_layers - 1; j >= 0; --j) {
    const LayerParams& lp = params.layers[j];
    LayerParams& lg = g.layers[j];
    std::vector<Eigen::VectorXd> dh_prev(features.size());
    for (int t = 0; t < num_frames; ++t) {
      Eigen::VectorXd dhtilde = dh[t];
      for (int tau = 0; tau < memory_rows && t + tau < num_frames; ++tau) {
        dhtilde.noalias() +=
            lp.mem.row(tau).transpose().cwiseProduct(dh[t + tau]);
      }
      for (int tau = 0; tau < memory_rows && tau <= t; ++tau) {
        lg.mem.row(tau) +=
            dh[t].cwiseProduct(htilde[j][t - tau]).transpose();
      }
      const Eigen::VectorXd p_act = u[j][t].cwiseMax(0.0);
      lg.w2.noalias() += dhtilde * p_act.transpose();
      lg.b2 += dhtilde;
      Eigen::VectorXd du = lp.w2.transpose() * dhtilde;
      for (long i = 0; i < du.size(); ++i) {
        if (u[j][t][i] <= 0.0) du[i] = 0.0;
      }
      lg.w1.noalias() += du * hin[j][t].transpose();
      lg.b1 += du;
      dh_prev[t] = dh[t] + lp.w1.transpose() * du;
    }
    dh = std::move(dh_prev);
  }

  // input projection
  for (int t = 0; t < num_frames; ++t) {
    Eigen::VectorXd da0 = dh[t];
    for (long i = 0; i < da0.size(); ++i) {
      if (a0[t][i] <= 0.0) da0[i] = 0.0;
    }
    g.w_in.noalias() += da0 * features[t].transpose();
    g.b_in += da0;
  }

  detail::check_finite(g);
  return result;
}

struct TrainingExample {
  std::vector<Eigen::VectorXd> features;
  TrainingTargets targets;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  int steps = 500;
  int batch_size = 4;
  double clip_norm = 5.0;
  uint64_t seed = 1;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossBreakdown> curve;
};

// Mini-batch clipped gradient descent with a fixed step. Deterministic for a
// fixed seed: initialization, example order and accumulation order are all
// seeded or fixed.
inline TrainResult train_toy(const std::vector<TrainingExample>& dataset,
                             const ModelConfig& model_cfg,
                             const LossConfig& loss_cfg,
                             const TrainConfig& train_cfg) {
  if (dataset.empty()) fail(ErrorKind::Config, "training set is empty");
  for (const auto& ex : dataset) {
    if (ex.features.empty() ||
        ex.features[0].size() != model_cfg.feature_dim()) {
      fail(ErrorKind::Config, "training example does not match model config");
    }
  }
  std::mt19937_64 rng(train_cfg.seed);
  TrainResult result;
  result.params = random_params(model_cfg, rng);

  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();  // trigger shuffle on first use

  for (int step = 0; step < train_cfg.steps; ++step) {
    GradientSet grads = zero_params(model_cfg);
    LossBreakdown batch_loss;
    for (int b = 0; b < train_cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const TrainingExample& ex = dataset[order[cursor++]];
      BackwardResult bw = backward(ex.features, result.params, ex.targets,
                                   loss_cfg);
      detail::accumulate(grads, bw.grads);
      batch_loss.total += bw.loss.total;
      batch_loss.mask_loss += bw.loss.mask_loss;
      batch_loss.vad_loss += bw.loss.vad_loss;
    }
    const double inv_batch = 1.0 / train_cfg.batch_size;
    detail::scale(grads, inv_batch);
    batch_loss.total *= inv_batch;
    batch_loss.mask_loss *= inv_batch;
    batch_loss.vad_loss *= inv_batch;

    if (!std::isfinite(batch_loss.total) || batch_loss.total > 1e3) {
      fail(ErrorKind::Numeric,
           "training diverged (loss " + std::to_string(batch_loss.total) +
               "); use a smaller learning rate");
    }

    const double norm = detail::global_norm(grads);
    if (norm > train_cfg.clip_norm && norm > 0) {
      detail::scale(grads, train_cfg.clip_norm / norm);
    }
    detail::scale(grads, -train_cfg.learning_rate);
    detail::accumulate(result.params, grads);
    result.curve.push_back(batch_loss);
  }
  return result;
}

}  // namespace nn3a
