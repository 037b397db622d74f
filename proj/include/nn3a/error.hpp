// Copyright 2026 The nn3a Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace nn3a {

// Error categories, grouped by the process exit code they map to:
//   2 -> configuration / shape problems
//   3 -> file and format problems
//   4 -> numeric problems (divergence, undefined metrics)
enum class ErrorKind {
  Config,
  Shape,
  Io,
  Format,
  Channel,
  Numeric,
  Metric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case ErrorKind::Config:
      case ErrorKind::Shape:
        return 2;
      case ErrorKind::Io:
      case ErrorKind::Format:
      case ErrorKind::Channel:
        return 3;
      case ErrorKind::Numeric:
      case ErrorKind::Metric:
        return 4;
    }
    return 1;
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace nn3a
