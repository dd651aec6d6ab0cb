#pragma once

#include <stdexcept>
#include <string>

namespace healnet {

// Base exception. `kind()` is a stable machine-readable class used by the CLI
// when reporting failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error("ShapeError", m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error("NumericError", m) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& m) : Error("ValueError", m) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& m) : Error("DataError", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("IoError", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};

class MissingArtifact : public Error {
 public:
  explicit MissingArtifact(const std::string& m) : Error("MissingArtifact", m) {}
};

}  // namespace healnet
