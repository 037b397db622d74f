// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nn3a/audio.hpp"
#include "nn3a/error.hpp"

namespace nn3a {

namespace detail {

inline uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

inline void put_u16(std::vector<unsigned char>& out, uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
}

}  // namespace detail

// Mono RIFF/WAVE reader. Accepts 16-bit PCM and 32-bit IEEE float data
// (directly or wrapped in WAVE_FORMAT_EXTENSIBLE). PCM samples are scaled
// by 1/32768; float samples are taken as-is.
inline TimeSignal read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open wav file: " + path);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorKind::Format, "not a RIFF/WAVE file: " + path);
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  size_t data_off = 0, data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const char* id = reinterpret_cast<const char*>(data.data() + pos);
    uint32_t chunk_len = detail::read_u32(data.data() + pos + 4);
    size_t body = pos + 8;
    if (body + chunk_len > data.size()) {
      chunk_len = static_cast<uint32_t>(data.size() - body);
    }
    if (std::memcmp(id, "fmt ", 4) == 0 && chunk_len >= 16) {
      format = detail::read_u16(data.data() + body);
      channels = detail::read_u16(data.data() + body + 2);
      sample_rate = detail::read_u32(data.data() + body + 4);
      bits = detail::read_u16(data.data() + body + 14);
      if (format == 0xFFFE && chunk_len >= 40) {
        // extensible: actual format is the first word of the SubFormat GUID
        format = detail::read_u16(data.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);
  }

  if (!have_fmt || data_off == 0) {
    fail(ErrorKind::Format, "missing fmt/data chunk: " + path);
  }
  if (channels != 1) {
    fail(ErrorKind::Channel, "expected mono wav, got " +
                                 std::to_string(channels) + " channels: " + path);
  }

  TimeSignal sig;
  sig.sample_rate = static_cast<int>(sample_rate);
  if (format == 1 && bits == 16) {
    const size_t n = data_len / 2;
    sig.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      int16_t v = static_cast<int16_t>(
          detail::read_u16(data.data() + data_off + 2 * i));
      sig.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const size_t n = data_len / 4;
    sig.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t raw = detail::read_u32(data.data() + data_off + 4 * i);
      float f;
      std::memcpy(&f, &raw, 4);
      sig.samples[i] = static_cast<double>(f);
    }
  } else {
    fail(ErrorKind::Format, "unsupported wav encoding (format " +
                                std::to_string(format) + ", " +
                                std::to_string(bits) + " bit): " + path);
  }
  for (double v : sig.samples) {
    if (!std::isfinite(v)) fail(ErrorKind::Format, "non-finite sample in " + path);
  }
  return sig;
}

// Saturating PCM16 quantizer used for all wav output.
inline int16_t quantize_pcm16(double v) {
  double clamped = std::min(std::max(v, -1.0), 1.0 - 1.0 / 32768.0);
  return static_cast<int16_t>(std::lrint(clamped * 32768.0));
}

inline void write_wav(const std::string& path, const TimeSignal& signal) {
  const uint32_t n = static_cast<uint32_t>(signal.samples.size());
  const uint32_t data_bytes = n * 2;
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  auto put_tag = [&out](const char* tag) {
    out.insert(out.end(), tag, tag + 4);
  };
  put_tag("RIFF");
  detail::put_u32(out, 36 + data_bytes);
  put_tag("WAVE");
  put_tag("fmt ");
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<uint32_t>(signal.sample_rate));
  detail::put_u32(out, static_cast<uint32_t>(signal.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  put_tag("data");
  detail::put_u32(out, data_bytes);
  for (double v : signal.samples) {
    detail::put_u16(out, static_cast<uint16_t>(quantize_pcm16(v)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::Io, "cannot write wav file: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::Io, "short write: " + path);
}

}  // namespace nn3a
