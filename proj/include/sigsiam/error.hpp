#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sigsiam {

/// Invalid shapes, settings or incompatible artifacts. Raised before any compute.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. `location()` is the 1-based line or row that failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t location)
      : std::runtime_error(what + " (line " + std::to_string(location) + ")"),
        location_(location) {}

  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sigsiam
