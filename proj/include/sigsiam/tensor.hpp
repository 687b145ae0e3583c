#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sigsiam/error.hpp"

namespace sigsiam {

enum class Mode { train, eval };

/// Dense (channel, position) feature map stored row-major.
struct Tensor2 {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(std::size_t c, std::size_t l, double fill = 0.0)
      : channels(c), length(l), data(c * l, fill) {}
  Tensor2(std::size_t c, std::size_t l, std::vector<double> values)
      : channels(c), length(l), data(std::move(values)) {
    if (data.size() != channels * length) {
      throw ConfigError("Tensor2: data size " + std::to_string(data.size()) +
                        " does not match " + std::to_string(channels) + "x" +
                        std::to_string(length));
    }
  }

  /// A single-channel map over a feature vector.
  static Tensor2 row(std::span<const double> values) {
    return Tensor2(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }

  double& at(std::size_t c, std::size_t i) { return data[c * length + i]; }
  double at(std::size_t c, std::size_t i) const { return data[c * length + i]; }

  std::size_t size() const noexcept { return data.size(); }
  bool same_shape(const Tensor2& other) const noexcept {
    return channels == other.channels && length == other.length;
  }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;
};

inline bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace sigsiam
