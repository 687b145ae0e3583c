#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sigsiam/error.hpp"
#include "sigsiam/layers.hpp"

namespace sigsiam {

/// How max-norm projection groups the values of a tensor.
enum class Constraint {
  none,
  per_row,  ///< one group per output unit (leading dimension)
  whole,    ///< the whole tensor is one group (bias vectors)
};

struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool regularized = false;
  Constraint constraint = Constraint::none;

  std::size_t size() const noexcept { return values.size(); }
  std::size_t group_size() const {
    if (constraint == Constraint::whole || shape.empty()) return values.size();
    return values.size() / shape.front();
  }
  std::span<double> span() noexcept { return values; }
  std::span<const double> span() const noexcept { return values; }

  friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

/// Ordered collection of named tensors. Order is insertion order and is the
/// order used for serialization, optimizer state and gradient reduction.
class ParamSet {
 public:
  ParamTensor& add(std::string name, std::vector<std::size_t> shape, bool regularized,
                   Constraint constraint) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter '" + name + "'");
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          std::multiplies<>());
    tensors_.push_back(ParamTensor{std::move(name), std::move(shape),
                                   std::vector<double>(n, 0.0), regularized, constraint});
    return tensors_.back();
  }

  const ParamTensor* find(std::string_view name) const {
    for (const auto& t : tensors_) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  ParamTensor* find(std::string_view name) {
    for (auto& t : tensors_) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  const ParamTensor& at(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw ConfigError("unknown parameter '" + std::string(name) + "'");
  }
  ParamTensor& at(std::string_view name) {
    if (auto* t = find(name)) return *t;
    throw ConfigError("unknown parameter '" + std::string(name) + "'");
  }

  /// Same names, shapes and flags; all values zero.
  ParamSet zeros_like() const {
    ParamSet z = *this;
    for (auto& t : z.tensors_) std::fill(t.values.begin(), t.values.end(), 0.0);
    return z;
  }

  bool same_layout(const ParamSet& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name != other.tensors_[i].name ||
          tensors_[i].shape != other.tensors_[i].shape) {
        return false;
      }
    }
    return true;
  }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  ParamTensor& operator[](std::size_t i) { return tensors_[i]; }
  const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<ParamTensor> tensors_;
};

enum class LrnPlacement { after_embedding, after_each_conv, off };
enum class HeadKind { contrastive, bce };

/// Shape and layer options of one CNN branch.
struct ArchSpec {
  std::size_t input_length = 100;
  std::size_t conv_channels = 16;
  std::size_t kernel_width = 3;
  std::size_t embedding_dim = 36;
  LrnPlacement lrn_placement = LrnPlacement::after_embedding;
  HeadKind head = HeadKind::contrastive;
  Activation embedding_activation = Activation::sigmoid;
  double dropout_rate = 0.5;
  LrnConfig lrn{};
  BatchNormConfig batchnorm{};

  std::size_t conv1_length() const { return input_length; }
  std::size_t pool1_length() const { return pooled_length(input_length); }
  std::size_t pool2_length() const { return pooled_length(pool1_length()); }
  std::size_t flatten_size() const { return conv_channels * pool2_length(); }

  void validate() const {
    if (input_length < 4) {
      throw ConfigError("input_length must be at least 4, got " + std::to_string(input_length));
    }
    if (conv_channels == 0) throw ConfigError("conv_channels must be positive");
    if (kernel_width == 0 || kernel_width % 2 == 0) {
      throw ConfigError("kernel_width must be odd, got " + std::to_string(kernel_width));
    }
    if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw ConfigError("dropout_rate must lie in [0, 1)");
    }
    if (lrn.n == 0 || lrn.n % 2 == 0) throw ConfigError("lrn window must be odd");
    if (!(batchnorm.momentum >= 0.0 && batchnorm.momentum < 1.0)) {
      throw ConfigError("batchnorm momentum must lie in [0, 1)");
    }
    if (!(batchnorm.epsilon > 0.0)) throw ConfigError("batchnorm epsilon must be positive");
  }

  friend bool operator==(const ArchSpec& a, const ArchSpec& b) {
    return a.input_length == b.input_length && a.conv_channels == b.conv_channels &&
           a.kernel_width == b.kernel_width && a.embedding_dim == b.embedding_dim &&
           a.lrn_placement == b.lrn_placement && a.head == b.head &&
           a.embedding_activation == b.embedding_activation &&
           a.dropout_rate == b.dropout_rate && a.lrn.k == b.lrn.k && a.lrn.n == b.lrn.n &&
           a.lrn.alpha == b.lrn.alpha && a.lrn.beta == b.lrn.beta &&
           a.batchnorm.momentum == b.batchnorm.momentum &&
           a.batchnorm.epsilon == b.batchnorm.epsilon;
  }
};

struct InitSpec {
  double low = -0.5;
  double high = 0.5;
  std::uint64_t seed = 0;
};

/// Trainable tensors of the shared branch plus batch-norm running statistics.
struct ModelParams {
  ArchSpec arch;
  ParamSet weights;
  std::vector<double> bn_running_mean;
  std::vector<double> bn_running_var;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

namespace param_names {
inline constexpr std::string_view conv1_kernel = "conv1.kernel";
inline constexpr std::string_view conv1_bias = "conv1.bias";
inline constexpr std::string_view conv2_kernel = "conv2.kernel";
inline constexpr std::string_view conv2_bias = "conv2.bias";
inline constexpr std::string_view dense1_kernel = "dense1.kernel";
inline constexpr std::string_view dense1_bias = "dense1.bias";
inline constexpr std::string_view bn_gamma = "bn.gamma";
inline constexpr std::string_view bn_beta = "bn.beta";
inline constexpr std::string_view dense2_kernel = "dense2.kernel";
inline constexpr std::string_view dense2_bias = "dense2.bias";
inline constexpr std::string_view head_kernel = "head.kernel";
inline constexpr std::string_view head_bias = "head.bias";
}  // namespace param_names

/// Empty (all-zero) parameter layout for an architecture.
inline ParamSet make_param_layout(const ArchSpec& arch) {
  arch.validate();
  namespace pn = param_names;
  const std::size_t c = arch.conv_channels;
  const std::size_t w = arch.kernel_width;
  const std::size_t e = arch.embedding_dim;
  ParamSet p;
  p.add(std::string(pn::conv1_kernel), {c, 1, w}, true, Constraint::per_row);
  p.add(std::string(pn::conv1_bias), {c}, true, Constraint::whole);
  p.add(std::string(pn::conv2_kernel), {c, c, w}, true, Constraint::per_row);
  p.add(std::string(pn::conv2_bias), {c}, true, Constraint::whole);
  p.add(std::string(pn::dense1_kernel), {e, arch.flatten_size()}, true, Constraint::per_row);
  p.add(std::string(pn::dense1_bias), {e}, true, Constraint::whole);
  p.add(std::string(pn::bn_gamma), {e}, false, Constraint::none);
  p.add(std::string(pn::bn_beta), {e}, false, Constraint::none);
  p.add(std::string(pn::dense2_kernel), {e, e}, true, Constraint::per_row);
  p.add(std::string(pn::dense2_bias), {e}, true, Constraint::whole);
  if (arch.head == HeadKind::bce) {
    p.add(std::string(pn::head_kernel), {1, e}, true, Constraint::per_row);
    p.add(std::string(pn::head_bias), {1}, true, Constraint::whole);
  }
  return p;
}

/// Kernels and biases are drawn i.i.d. uniform(low, high); batch-norm gamma
/// starts at 1 and beta at 0, running statistics at mean 0 / variance 1.
inline ModelParams init_params(const ArchSpec& arch, const InitSpec& init) {
  if (!(init.low < init.high)) {
    throw ConfigError("init range must satisfy low < high");
  }
  ModelParams m{arch, make_param_layout(arch), std::vector<double>(arch.embedding_dim, 0.0),
                std::vector<double>(arch.embedding_dim, 1.0)};
  std::mt19937_64 rng(init.seed);
  std::uniform_real_distribution<double> dist(init.low, init.high);
  for (auto& t : m.weights) {
    if (t.name == param_names::bn_gamma) {
      std::fill(t.values.begin(), t.values.end(), 1.0);
    } else if (t.name == param_names::bn_beta) {
      std::fill(t.values.begin(), t.values.end(), 0.0);
    } else {
      for (auto& v : t.values) v = dist(rng);
    }
  }
  return m;
}

/// Projects every constrained group onto the L2 ball of radius `max_norm`.
inline void apply_max_norm(ParamSet& params, double max_norm = 4.0) {
  if (!(max_norm > 0.0)) throw ConfigError("max_norm must be positive");
  for (auto& t : params) {
    if (t.constraint == Constraint::none || t.values.empty()) continue;
    const std::size_t g = t.group_size();
    for (std::size_t start = 0; start < t.values.size(); start += g) {
      double sq = 0.0;
      for (std::size_t i = start; i < start + g; ++i) sq += t.values[i] * t.values[i];
      const double norm = std::sqrt(sq);
      if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (std::size_t i = start; i < start + g; ++i) t.values[i] *= scale;
      }
    }
  }
}

/// Largest L2 norm over all constrained groups.
inline double max_group_norm(const ParamSet& params) {
  double worst = 0.0;
  for (const auto& t : params) {
    if (t.constraint == Constraint::none || t.values.empty()) continue;
    const std::size_t g = t.group_size();
    for (std::size_t start = 0; start < t.values.size(); start += g) {
      double sq = 0.0;
      for (std::size_t i = start; i < start + g; ++i) sq += t.values[i] * t.values[i];
      worst = std::max(worst, std::sqrt(sq));
    }
  }
  return worst;
}

}  // namespace sigsiam
