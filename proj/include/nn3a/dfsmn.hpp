// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nn3a/audio.hpp"
#include "nn3a/error.hpp"

namespace nn3a {

// Which spectral streams feed the model. DX is the study mode that skips the
// linear stage entirely: features come from mic and far end and the mask is
// applied to the mic spectrum instead of the error spectrum.
enum class InputSet { EX, EY, EYD, EYDX, DX };

inline std::string to_string(InputSet set) {
  switch (set) {
    case InputSet::EX: return "EX";
    case InputSet::EY: return "EY";
    case InputSet::EYD: return "EYD";
    case InputSet::EYDX: return "EYDX";
    case InputSet::DX: return "DX";
  }
  return "?";
}

inline InputSet input_set_from_string(const std::string& s) {
  if (s == "EX") return InputSet::EX;
  if (s == "EY") return InputSet::EY;
  if (s == "EYD") return InputSet::EYD;
  if (s == "EYDX") return InputSet::EYDX;
  if (s == "DX") return InputSet::DX;
  fail(ErrorKind::Config, "unknown input set: " + s);
}

inline bool uses_e(InputSet s) { return s != InputSet::DX; }
inline bool uses_y(InputSet s) {
  return s == InputSet::EY || s == InputSet::EYD || s == InputSet::EYDX;
}
inline bool uses_d(InputSet s) {
  return s == InputSet::EYD || s == InputSet::EYDX || s == InputSet::DX;
}
inline bool uses_x(InputSet s) {
  return s == InputSet::EX || s == InputSet::EYDX || s == InputSet::DX;
}
inline int stream_count(InputSet s) {
  return (uses_e(s) ? 1 : 0) + (uses_y(s) ? 1 : 0) + (uses_d(s) ? 1 : 0) +
         (uses_x(s) ? 1 : 0);
}
// True when the estimated mask multiplies the mic spectrum rather than the
// linear-stage error spectrum.
inline bool mask_on_mic(InputSet s) { return s == InputSet::DX; }

struct ModelConfig {
  InputSet input_set = InputSet::EX;
  int num_layers = 3;
  int hidden_dim = 64;
  int projection_dim = 16;
  int memory_order = 8;
  int num_bins = 257;

  int feature_dim() const { return stream_count(input_set) * num_bins; }
};

inline void validate(const ModelConfig& cfg) {
  if (cfg.num_layers < 1) fail(ErrorKind::Config, "model needs >= 1 layer");
  if (cfg.hidden_dim < 1 || cfg.projection_dim < 1) {
    fail(ErrorKind::Config, "model dims must be positive");
  }
  if (cfg.memory_order < 0) {
    fail(ErrorKind::Config, "memory order must be >= 0");
  }
  if (cfg.num_bins < 1) fail(ErrorKind::Config, "num_bins must be positive");
}

struct LayerParams {
  Eigen::MatrixXd w1;   // hidden -> projection
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;   // projection -> hidden
  Eigen::VectorXd b2;
  Eigen::MatrixXd mem;  // (memory_order+1) x hidden, row tau
};

struct ModelParams {
  Eigen::MatrixXd w_in;  // feature_dim -> hidden
  Eigen::VectorXd b_in;
  std::vector<LayerParams> layers;
  Eigen::MatrixXd w_mask;  // hidden -> num_bins
  Eigen::VectorXd b_mask;
  Eigen::VectorXd w_vad;   // hidden -> scalar
  double b_vad = 0.0;

  size_t parameter_count() const {
    size_t n = static_cast<size_t>(w_in.size() + b_in.size());
    for (const auto& l : layers) {
      n += static_cast<size_t>(l.w1.size() + l.b1.size() + l.w2.size() +
                               l.b2.size() + l.mem.size());
    }
    n += static_cast<size_t>(w_mask.size() + b_mask.size() + w_vad.size()) + 1;
    return n;
  }
};

inline ModelParams zero_params(const ModelConfig& cfg) {
  validate(cfg);
  ModelParams p;
  p.w_in = Eigen::MatrixXd::Zero(cfg.hidden_dim, cfg.feature_dim());
  p.b_in = Eigen::VectorXd::Zero(cfg.hidden_dim);
  p.layers.resize(static_cast<size_t>(cfg.num_layers));
  for (auto& l : p.layers) {
    l.w1 = Eigen::MatrixXd::Zero(cfg.projection_dim, cfg.hidden_dim);
    l.b1 = Eigen::VectorXd::Zero(cfg.projection_dim);
    l.w2 = Eigen::MatrixXd::Zero(cfg.hidden_dim, cfg.projection_dim);
    l.b2 = Eigen::VectorXd::Zero(cfg.hidden_dim);
    l.mem = Eigen::MatrixXd::Zero(cfg.memory_order + 1, cfg.hidden_dim);
  }
  p.w_mask = Eigen::MatrixXd::Zero(cfg.num_bins, cfg.hidden_dim);
  p.b_mask = Eigen::VectorXd::Zero(cfg.num_bins);
  p.w_vad = Eigen::VectorXd::Zero(cfg.hidden_dim);
  p.b_vad = 0.0;
  return p;
}

inline ModelParams random_params(const ModelConfig& cfg, std::mt19937_64& rng) {
  ModelParams p = zero_params(cfg);
  auto fill = [&rng](Eigen::MatrixXd& m, double fan_in, double fan_out) {
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    for (long i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  fill(p.w_in, p.w_in.cols(), p.w_in.rows());
  for (auto& l : p.layers) {
    fill(l.w1, l.w1.cols(), l.w1.rows());
    fill(l.w2, l.w2.cols(), l.w2.rows());
    std::uniform_real_distribution<double> mem_dist(-0.1, 0.1);
    for (long i = 0; i < l.mem.size(); ++i) l.mem.data()[i] = mem_dist(rng);
  }
  fill(p.w_mask, p.w_mask.cols(), p.w_mask.rows());
  Eigen::MatrixXd wv(cfg.hidden_dim, 1);
  fill(wv, cfg.hidden_dim, 1);
  p.w_vad = wv.col(0);
  return p;
}

// Streaming lookback of the last memory_order+1 projected vectors, newest
// row first. Zero-initialized, so lookback beyond the stream start sees
// zeros.
struct LayerState {
  Eigen::MatrixXd hist;
};

inline LayerState make_layer_state(const ModelConfig& cfg) {
  LayerState st;
  st.hist = Eigen::MatrixXd::Zero(cfg.memory_order + 1, cfg.hidden_dim);
  return st;
}

inline std::vector<LayerState> make_layer_states(const ModelConfig& cfg) {
  std::vector<LayerState> states;
  states.resize(static_cast<size_t>(cfg.num_layers));
  for (auto& s : states) s = make_layer_state(cfg);
  return states;
}

struct MaskVadOutput {
  Eigen::VectorXd mask;    // per-bin gain in [0,1]
  double vad_prob = 0.5;   // near-end speech probability
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct SignalFrames {
  const Eigen::VectorXcd* e = nullptr;
  const Eigen::VectorXcd* y = nullptr;
  const Eigen::VectorXcd* d = nullptr;
  const Eigen::VectorXcd* x = nullptr;
};

inline constexpr double kFeatureFloor = 1e-7;

// Concatenated log-magnitude features in fixed stream order, restricted to
// the configured input set.
inline Eigen::VectorXd assemble_features(const SignalFrames& frames,
                                         InputSet set, int num_bins) {
  const Eigen::VectorXcd* order[4] = {frames.e, frames.y, frames.d, frames.x};
  const bool used[4] = {uses_e(set), uses_y(set), uses_d(set), uses_x(set)};
  const char* names[4] = {"E", "Y", "D", "X"};

  Eigen::VectorXd features(stream_count(set) * num_bins);
  int off = 0;
  for (int s = 0; s < 4; ++s) {
    if (!used[s]) continue;
    if (order[s] == nullptr) {
      fail(ErrorKind::Config,
           std::string("input set ") + to_string(set) +
               " requires signal " + names[s] + " but it was not provided");
    }
    if (order[s]->size() != num_bins) {
      fail(ErrorKind::Shape, std::string("signal ") + names[s] +
                                 " has wrong number of bins");
    }
    for (int f = 0; f < num_bins; ++f) {
      features[off + f] = std::log(std::abs((*order[s])[f]) + kFeatureFloor);
    }
    off += num_bins;
  }
  return features;
}

// One memory layer step: low-rank projection of the input, then the residual
// sum of the input, the projection and the memory-weighted lookback.
inline Eigen::VectorXd dfsmn_layer(const Eigen::VectorXd& h_prev,
                                   LayerState& state, const LayerParams& p) {
  if (h_prev.size() != p.w1.cols()) {
    fail(ErrorKind::Shape, "layer input has wrong dimension");
  }
  Eigen::VectorXd u = (p.w1 * h_prev + p.b1).cwiseMax(0.0);
  Eigen::VectorXd htilde = p.w2 * u + p.b2;

  for (long i = state.hist.rows() - 1; i > 0; --i) {
    state.hist.row(i) = state.hist.row(i - 1);
  }
  state.hist.row(0) = htilde.transpose();

  Eigen::VectorXd out = h_prev + htilde;
  out.noalias() += p.mem.cwiseProduct(state.hist).colwise().sum().transpose();
  return out;
}

// Strictly causal inference for one frame.
inline MaskVadOutput model_forward(const Eigen::VectorXd& features,
                                   std::vector<LayerState>& states,
                                   const ModelParams& params) {
  if (features.size() != params.w_in.cols()) {
    fail(ErrorKind::Shape, "feature vector has wrong dimension");
  }
  if (states.size() != params.layers.size()) {
    fail(ErrorKind::Shape, "layer state count does not match model");
  }
  Eigen::VectorXd h = (params.w_in * features + params.b_in).cwiseMax(0.0);
  for (size_t j = 0; j < params.layers.size(); ++j) {
    h = dfsmn_layer(h, states[j], params.layers[j]);
    if (!h.allFinite()) {
      fail(ErrorKind::Numeric,
           "non-finite activations in layer " + std::to_string(j));
    }
  }
  MaskVadOutput out;
  Eigen::VectorXd logits = params.w_mask * h + params.b_mask;
  out.mask.resize(logits.size());
  for (long i = 0; i < logits.size(); ++i) out.mask[i] = sigmoid(logits[i]);
  out.vad_prob = sigmoid(params.w_vad.dot(h) + params.b_vad);
  return out;
}

inline SpectralFrame apply_mask(const SpectralFrame& frame,
                                const Eigen::VectorXd& mask) {
  if (frame.bins.size() != mask.size()) {
    fail(ErrorKind::Shape, "mask length does not match frame");
  }
  SpectralFrame out;
  out.frame_index = frame.frame_index;
  out.bins = frame.bins.cwiseProduct(mask.cast<std::complex<double>>());
  return out;
}

// --- weight file -----------------------------------------------------------
//
// Layout: 8-byte magic "NN3AWF01", little-endian u32 JSON header length, the
// JSON header, then row-major little-endian float32 tensor data. The header
// names every tensor with its shape and byte offset into the data section
// and records the model configuration, the framing geometry the model was
// trained for, and the feature definition version.

inline constexpr char kWeightMagic[8] = {'N', 'N', '3', 'A', 'W', 'F', '0', '1'};
inline constexpr int kFeatureVersion = 1;  // log-magnitude concatenation

struct ModelFile {
  ModelConfig config;
  int stft_win_len = 320;
  int stft_hop_len = 160;
  int stft_fft_len = 512;
  int feature_version = kFeatureVersion;
  ModelParams params;
};

namespace detail {

struct NamedTensor {
  std::string name;
  const Eigen::MatrixXd* mat = nullptr;
  const Eigen::VectorXd* vec = nullptr;
  const double* scalar = nullptr;

  long rows() const {
    if (mat) return mat->rows();
    if (vec) return vec->size();
    return 1;
  }
  long cols() const { return mat ? mat->cols() : 1; }
};

inline std::vector<NamedTensor> named_tensors(const ModelParams& p) {
  std::vector<NamedTensor> out;
  out.push_back({"w_in", &p.w_in, nullptr, nullptr});
  out.push_back({"b_in", nullptr, &p.b_in, nullptr});
  for (size_t j = 0; j < p.layers.size(); ++j) {
    const std::string prefix = "layer" + std::to_string(j) + ".";
    out.push_back({prefix + "w1", &p.layers[j].w1, nullptr, nullptr});
    out.push_back({prefix + "b1", nullptr, &p.layers[j].b1, nullptr});
    out.push_back({prefix + "w2", &p.layers[j].w2, nullptr, nullptr});
    out.push_back({prefix + "b2", nullptr, &p.layers[j].b2, nullptr});
    out.push_back({prefix + "mem", &p.layers[j].mem, nullptr, nullptr});
  }
  out.push_back({"w_mask", &p.w_mask, nullptr, nullptr});
  out.push_back({"b_mask", nullptr, &p.b_mask, nullptr});
  out.push_back({"w_vad", nullptr, &p.w_vad, nullptr});
  out.push_back({"b_vad", nullptr, nullptr, &p.b_vad});
  return out;
}

inline void append_f32(std::vector<unsigned char>& out, double v) {
  const float f = static_cast<float>(v);
  uint32_t raw;
  std::memcpy(&raw, &f, 4);
  out.push_back(static_cast<unsigned char>(raw & 0xFF));
  out.push_back(static_cast<unsigned char>((raw >> 8) & 0xFF));
  out.push_back(static_cast<unsigned char>((raw >> 16) & 0xFF));
  out.push_back(static_cast<unsigned char>((raw >> 24) & 0xFF));
}

inline double read_f32(const unsigned char* p) {
  uint32_t raw = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                 (static_cast<uint32_t>(p[2]) << 16) |
                 (static_cast<uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &raw, 4);
  return static_cast<double>(f);
}

}  // namespace detail

inline void save_params(const ModelFile& file, const std::string& path) {
  validate(file.config);
  const auto tensors = detail::named_tensors(file.params);

  nlohmann::json header;
  header["format_version"] = 1;
  header["feature_version"] = file.feature_version;
  header["model"] = {
      {"input_set", to_string(file.config.input_set)},
      {"num_layers", file.config.num_layers},
      {"hidden_dim", file.config.hidden_dim},
      {"projection_dim", file.config.projection_dim},
      {"memory_order", file.config.memory_order},
      {"num_bins", file.config.num_bins},
  };
  header["stft"] = {
      {"win_len", file.stft_win_len},
      {"hop_len", file.stft_hop_len},
      {"fft_len", file.stft_fft_len},
  };

  std::vector<unsigned char> data;
  nlohmann::json tensor_list = nlohmann::json::array();
  for (const auto& t : tensors) {
    nlohmann::json entry;
    entry["name"] = t.name;
    entry["rows"] = t.rows();
    entry["cols"] = t.cols();
    entry["offset"] = data.size();
    tensor_list.push_back(entry);
    if (t.mat) {
      for (long i = 0; i < t.mat->rows(); ++i) {
        for (long j = 0; j < t.mat->cols(); ++j) {
          detail::append_f32(data, (*t.mat)(i, j));
        }
      }
    } else if (t.vec) {
      for (long i = 0; i < t.vec->size(); ++i) {
        detail::append_f32(data, (*t.vec)(i));
      }
    } else {
      detail::append_f32(data, *t.scalar);
    }
  }
  header["tensors"] = tensor_list;

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write weight file: " + path);
  out.write(kWeightMagic, 8);
  const uint32_t len = static_cast<uint32_t>(header_str.size());
  unsigned char len_bytes[4] = {
      static_cast<unsigned char>(len & 0xFF),
      static_cast<unsigned char>((len >> 8) & 0xFF),
      static_cast<unsigned char>((len >> 16) & 0xFF),
      static_cast<unsigned char>((len >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(len_bytes), 4);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) fail(ErrorKind::Io, "short write: " + path);
}

inline ModelFile load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open weight file: " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 12 || std::memcmp(raw.data(), kWeightMagic, 8) != 0) {
    fail(ErrorKind::Format, "not a weight file: " + path);
  }
  const uint32_t header_len = static_cast<uint32_t>(raw[8]) |
                              (static_cast<uint32_t>(raw[9]) << 8) |
                              (static_cast<uint32_t>(raw[10]) << 16) |
                              (static_cast<uint32_t>(raw[11]) << 24);
  if (raw.size() < 12 + static_cast<size_t>(header_len)) {
    fail(ErrorKind::Format, "truncated weight file header: " + path);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.begin() + 12,
                                   raw.begin() + 12 + header_len);
  } catch (const std::exception& ex) {
    fail(ErrorKind::Format, std::string("bad weight file header: ") + ex.what());
  }
  if (header.value("format_version", -1) != 1) {
    fail(ErrorKind::Format, "unsupported weight file version");
  }

  ModelFile file;
  file.feature_version = header.value("feature_version", -1);
  if (file.feature_version != kFeatureVersion) {
    fail(ErrorKind::Format, "unsupported feature version " +
                                std::to_string(file.feature_version));
  }
  const auto& m = header.at("model");
  file.config.input_set = input_set_from_string(m.at("input_set"));
  file.config.num_layers = m.at("num_layers");
  file.config.hidden_dim = m.at("hidden_dim");
  file.config.projection_dim = m.at("projection_dim");
  file.config.memory_order = m.at("memory_order");
  file.config.num_bins = m.at("num_bins");
  validate(file.config);
  const auto& s = header.at("stft");
  file.stft_win_len = s.at("win_len");
  file.stft_hop_len = s.at("hop_len");
  file.stft_fft_len = s.at("fft_len");
  if (file.stft_fft_len / 2 + 1 != file.config.num_bins) {
    fail(ErrorKind::Format,
         "weight file header: num_bins inconsistent with fft_len");
  }

  file.params = zero_params(file.config);
  auto tensors = detail::named_tensors(file.params);
  const unsigned char* data = raw.data() + 12 + header_len;
  const size_t data_len = raw.size() - 12 - header_len;

  const auto& tensor_list = header.at("tensors");
  if (tensor_list.size() != tensors.size()) {
    fail(ErrorKind::Format, "weight file tensor count mismatch");
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& entry = tensor_list.at(i);
    const std::string name = entry.at("name");
    const long rows = entry.at("rows");
    const long cols = entry.at("cols");
    const size_t offset = entry.at("offset");
    auto& t = tensors[i];
    if (name != t.name || rows != t.rows() || cols != t.cols()) {
      fail(ErrorKind::Format, "weight file tensor mismatch at " + t.name +
                                  " (found " + name + " " +
                                  std::to_string(rows) + "x" +
                                  std::to_string(cols) + ")");
    }
    const size_t need = offset + static_cast<size_t>(rows) * cols * 4;
    if (need > data_len) {
      fail(ErrorKind::Format, "truncated weight file at tensor " + t.name);
    }
    const unsigned char* p = data + offset;
    if (t.mat) {
      auto* mat = const_cast<Eigen::MatrixXd*>(t.mat);
      for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) {
          (*mat)(r, c) = detail::read_f32(p);
          p += 4;
        }
      }
    } else if (t.vec) {
      auto* vec = const_cast<Eigen::VectorXd*>(t.vec);
      for (long r = 0; r < rows; ++r) {
        (*vec)(r) = detail::read_f32(p);
        p += 4;
      }
    } else {
      *const_cast<double*>(t.scalar) = detail::read_f32(p);
    }
  }
  return file;
}

}  // namespace nn3a
