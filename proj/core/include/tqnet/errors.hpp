#pragma once

#include <stdexcept>
#include <string>

namespace tqnet {

// Base for every error raised by the library. `kind()` is a short stable tag
// used in machine-readable error lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& m) : Error("parameter", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

class TapeError : public Error {
 public:
  explicit TapeError(const std::string& m) : Error("tape", m) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& m) : Error("parse", m) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& m) : Error("checkpoint", m) {}
};

class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& m) : Error("degenerate", m) {}
};

class HarnessError : public Error {
 public:
  explicit HarnessError(const std::string& m) : Error("harness", m) {}
};

}  // namespace tqnet
