#pragma once

#include <stdexcept>
#include <string>

namespace dualspec {

// Coarse failure classes. The CLI maps each to a process exit code.
enum class ErrorKind { kUsage = 1, kData = 2, kNumeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Caller broke an API precondition (bad flag, missing artifact, reused tape).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

// Invalid configuration values.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

// Tensor or spectrogram extents that do not line up.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

// Input outside an operation's mathematical domain (empty signal, silent source).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

// File-level problems: malformed WAV, corrupt checkpoint, bad manifest line.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

// Non-finite values surfaced during training or inference.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

}  // namespace dualspec
