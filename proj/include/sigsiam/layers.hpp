#pragma once

// Forward and backward passes for the layers of the signature CNN branch.
// Every function is pure apart from the explicit RNG argument of dropout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sigsiam/error.hpp"
#include "sigsiam/tensor.hpp"

namespace sigsiam {

enum class Activation { relu, sigmoid, identity };

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
// Subgradient at 0 is taken as 0.
inline double relu_derivative(double x) { return x > 0.0 ? 1.0 : 0.0; }

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double sigmoid_derivative(double x) {
  const double y = sigmoid(x);
  return y * (1.0 - y);
}

inline double activate(Activation act, double x) {
  switch (act) {
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::identity: return x;
  }
  return x;
}

/// Derivative expressed through the activation's output, which is what the
/// backward passes keep around.
inline double activation_derivative_from_output(Activation act, double y) {
  switch (act) {
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// 1-D convolution, "same" zero padding, stride 1.
// Kernels are laid out [out_channel][in_channel][tap].

struct Conv1dGrads {
  std::vector<double> d_kernels;
  std::vector<double> d_bias;
  Tensor2 d_input;
};

namespace detail {

inline void check_conv_shapes(const Tensor2& input, std::span<const double> kernels,
                              std::size_t bias_size, std::size_t out_channels,
                              std::size_t width) {
  if (width == 0 || width % 2 == 0) {
    throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(width));
  }
  if (out_channels == 0) {
    throw ConfigError("conv1d: out_channels must be positive");
  }
  const std::size_t expected = out_channels * input.channels * width;
  if (kernels.size() != expected) {
    throw ConfigError("conv1d: kernel tensor has " + std::to_string(kernels.size()) +
                      " values, expected " + std::to_string(out_channels) + "x" +
                      std::to_string(input.channels) + "x" + std::to_string(width));
  }
  if (bias_size != out_channels) {
    throw ConfigError("conv1d: bias has " + std::to_string(bias_size) +
                      " values, expected " + std::to_string(out_channels));
  }
  if (input.data.size() != input.channels * input.length) {
    throw ConfigError("conv1d: malformed input tensor");
  }
}

}  // namespace detail

inline Tensor2 conv1d_forward(const Tensor2& input, std::span<const double> kernels,
                              std::span<const double> bias, std::size_t out_channels,
                              std::size_t width = 3) {
  detail::check_conv_shapes(input, kernels, bias.size(), out_channels, width);
  const std::size_t in_ch = input.channels;
  const std::size_t len = input.length;
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  Tensor2 out(out_channels, len);
  for (std::size_t o = 0; o < out_channels; ++o) {
    for (std::size_t i = 0; i < len; ++i) {
      double acc = bias[o];
      for (std::size_t c = 0; c < in_ch; ++c) {
        const double* k = &kernels[(o * in_ch + c) * width];
        for (std::size_t t = 0; t < width; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(t) - half;
          if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
          acc += k[t] * input.data[c * len + static_cast<std::size_t>(pos)];
        }
      }
      out.data[o * len + i] = acc;
    }
  }
  return out;
}

inline Conv1dGrads conv1d_backward(const Tensor2& input, std::span<const double> kernels,
                                   std::size_t out_channels, std::size_t width,
                                   const Tensor2& upstream) {
  detail::check_conv_shapes(input, kernels, out_channels, out_channels, width);
  if (upstream.channels != out_channels || upstream.length != input.length) {
    throw ConfigError("conv1d_backward: upstream gradient is " +
                      std::to_string(upstream.channels) + "x" + std::to_string(upstream.length) +
                      ", expected " + std::to_string(out_channels) + "x" +
                      std::to_string(input.length));
  }
  const std::size_t in_ch = input.channels;
  const std::size_t len = input.length;
  const auto half = static_cast<std::ptrdiff_t>(width / 2);

  Conv1dGrads g{std::vector<double>(kernels.size(), 0.0),
                std::vector<double>(out_channels, 0.0), Tensor2(in_ch, len)};
  for (std::size_t o = 0; o < out_channels; ++o) {
    for (std::size_t i = 0; i < len; ++i) {
      const double up = upstream.data[o * len + i];
      if (up == 0.0) continue;
      g.d_bias[o] += up;
      for (std::size_t c = 0; c < in_ch; ++c) {
        const std::size_t kbase = (o * in_ch + c) * width;
        for (std::size_t t = 0; t < width; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(t) - half;
          if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
          const std::size_t idx = c * len + static_cast<std::size_t>(pos);
          g.d_kernels[kbase + t] += up * input.data[idx];
          g.d_input.data[idx] += up * kernels[kbase + t];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Max pooling along positions, ceil mode: a trailing odd element forms its
// own window (equivalent to -inf padding).

struct PoolResult {
  Tensor2 output;
  /// Flat index into the pooled input for every output element.
  std::vector<std::size_t> argmax;
};

inline std::size_t pooled_length(std::size_t length, std::size_t pool_size = 2) {
  return (length + pool_size - 1) / pool_size;
}

inline PoolResult maxpool1d_forward(const Tensor2& input, std::size_t pool_size = 2) {
  if (pool_size == 0) throw ConfigError("maxpool1d: pool_size must be positive");
  if (input.data.size() != input.channels * input.length || input.length == 0) {
    throw ConfigError("maxpool1d: malformed input tensor");
  }
  const std::size_t out_len = pooled_length(input.length, pool_size);
  PoolResult r{Tensor2(input.channels, out_len), std::vector<std::size_t>(input.channels * out_len)};
  for (std::size_t c = 0; c < input.channels; ++c) {
    for (std::size_t j = 0; j < out_len; ++j) {
      const std::size_t begin = j * pool_size;
      const std::size_t end = std::min(begin + pool_size, input.length);
      std::size_t best = c * input.length + begin;
      for (std::size_t i = begin + 1; i < end; ++i) {
        const std::size_t idx = c * input.length + i;
        if (input.data[idx] > input.data[best]) best = idx;
      }
      r.output.data[c * out_len + j] = input.data[best];
      r.argmax[c * out_len + j] = best;
    }
  }
  return r;
}

inline Tensor2 maxpool1d_backward(const Tensor2& upstream, std::span<const std::size_t> argmax,
                                  std::size_t in_channels, std::size_t in_length) {
  if (argmax.size() != upstream.size()) {
    throw ConfigError("maxpool1d_backward: argmax/upstream size mismatch");
  }
  Tensor2 d(in_channels, in_length);
  for (std::size_t k = 0; k < argmax.size(); ++k) {
    if (argmax[k] >= d.data.size()) throw ConfigError("maxpool1d_backward: argmax out of range");
    d.data[argmax[k]] += upstream.data[k];
  }
  return d;
}

// ---------------------------------------------------------------------------
// Fully connected layer, weights laid out [out][in].

struct DenseGrads {
  std::vector<double> d_weights;
  std::vector<double> d_bias;
  std::vector<double> d_input;
};

inline std::vector<double> dense_forward(std::span<const double> input,
                                         std::span<const double> weights,
                                         std::span<const double> bias, Activation act) {
  const std::size_t n = input.size();
  const std::size_t m = bias.size();
  if (weights.size() != m * n) {
    throw ConfigError("dense: weight matrix has " + std::to_string(weights.size()) +
                      " values, expected " + std::to_string(m) + "x" + std::to_string(n));
  }
  std::vector<double> out(m);
  for (std::size_t o = 0; o < m; ++o) {
    double acc = bias[o];
    const double* w = &weights[o * n];
    for (std::size_t i = 0; i < n; ++i) acc += w[i] * input[i];
    out[o] = activate(act, acc);
  }
  return out;
}

/// `output` is the post-activation result of dense_forward on `input`.
inline DenseGrads dense_backward(std::span<const double> input, std::span<const double> weights,
                                 std::span<const double> output,
                                 std::span<const double> upstream, Activation act) {
  const std::size_t n = input.size();
  const std::size_t m = output.size();
  if (weights.size() != m * n || upstream.size() != m) {
    throw ConfigError("dense_backward: shape mismatch");
  }
  DenseGrads g{std::vector<double>(m * n, 0.0), std::vector<double>(m, 0.0),
               std::vector<double>(n, 0.0)};
  for (std::size_t o = 0; o < m; ++o) {
    const double delta = upstream[o] * activation_derivative_from_output(act, output[o]);
    g.d_bias[o] = delta;
    if (delta == 0.0) continue;
    const double* w = &weights[o * n];
    double* dw = &g.d_weights[o * n];
    for (std::size_t i = 0; i < n; ++i) {
      dw[i] = delta * input[i];
      g.d_input[i] += delta * w[i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Inverted dropout. The mask stores 0 or 1/(1-rate) per element.

struct DropoutResult {
  std::vector<double> output;
  std::vector<double> mask;
};

inline DropoutResult dropout_forward(std::span<const double> input, double rate, Mode mode,
                                     std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  DropoutResult r{std::vector<double>(input.begin(), input.end()),
                  std::vector<double>(input.size(), 1.0)};
  if (mode == Mode::eval || rate == 0.0) return r;
  const double scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.mask[i] = keep(rng) ? scale : 0.0;
    r.output[i] = input[i] * r.mask[i];
  }
  return r;
}

inline std::vector<double> dropout_backward(std::span<const double> upstream,
                                            std::span<const double> mask) {
  if (upstream.size() != mask.size()) throw ConfigError("dropout_backward: size mismatch");
  std::vector<double> d(upstream.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = upstream[i] * mask[i];
  return d;
}

// ---------------------------------------------------------------------------
// Batch normalization over a batch of feature vectors.

struct BatchNormConfig {
  double momentum = 0.9;
  double epsilon = 1e-5;
};

using Batch = std::vector<std::vector<double>>;

struct BatchNormCache {
  Mode mode = Mode::eval;
  Batch normalized;
  std::vector<double> inv_std;
  std::vector<double> batch_mean;
  /// Biased (population) batch variance.
  std::vector<double> batch_var;
};

struct BatchNormResult {
  Batch output;
  BatchNormCache cache;
};

struct BatchNormGrads {
  Batch d_input;
  std::vector<double> d_gamma;
  std::vector<double> d_beta;
};

inline BatchNormResult batchnorm_forward(const Batch& batch, std::span<const double> gamma,
                                         std::span<const double> beta,
                                         std::span<const double> running_mean,
                                         std::span<const double> running_var, Mode mode,
                                         const BatchNormConfig& cfg = {}) {
  const std::size_t n = batch.size();
  const std::size_t f = gamma.size();
  if (beta.size() != f || running_mean.size() != f || running_var.size() != f) {
    throw ConfigError("batchnorm: parameter sizes disagree");
  }
  for (const auto& row : batch) {
    if (row.size() != f) throw ConfigError("batchnorm: feature count mismatch");
  }
  if (mode == Mode::train && n < 2) {
    throw TrainingError("batchnorm: training mode needs a batch of at least 2, got " +
                        std::to_string(n));
  }

  BatchNormResult r;
  r.cache.mode = mode;
  r.cache.inv_std.assign(f, 0.0);
  r.cache.batch_mean.assign(f, 0.0);
  r.cache.batch_var.assign(f, 0.0);
  if (mode == Mode::train) {
    for (const auto& row : batch) {
      for (std::size_t j = 0; j < f; ++j) r.cache.batch_mean[j] += row[j];
    }
    for (std::size_t j = 0; j < f; ++j) r.cache.batch_mean[j] /= static_cast<double>(n);
    for (const auto& row : batch) {
      for (std::size_t j = 0; j < f; ++j) {
        const double d = row[j] - r.cache.batch_mean[j];
        r.cache.batch_var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < f; ++j) {
      r.cache.batch_var[j] /= static_cast<double>(n);
      r.cache.inv_std[j] = 1.0 / std::sqrt(r.cache.batch_var[j] + cfg.epsilon);
    }
  } else {
    for (std::size_t j = 0; j < f; ++j) {
      r.cache.batch_mean[j] = running_mean[j];
      r.cache.batch_var[j] = running_var[j];
      r.cache.inv_std[j] = 1.0 / std::sqrt(running_var[j] + cfg.epsilon);
    }
  }

  r.cache.normalized.assign(n, std::vector<double>(f));
  r.output.assign(n, std::vector<double>(f));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < f; ++j) {
      const double xh = (batch[s][j] - r.cache.batch_mean[j]) * r.cache.inv_std[j];
      r.cache.normalized[s][j] = xh;
      r.output[s][j] = gamma[j] * xh + beta[j];
    }
  }
  return r;
}

inline BatchNormGrads batchnorm_backward(const Batch& upstream, std::span<const double> gamma,
                                         const BatchNormCache& cache) {
  const std::size_t n = upstream.size();
  const std::size_t f = gamma.size();
  if (cache.normalized.size() != n) throw ConfigError("batchnorm_backward: batch size mismatch");

  BatchNormGrads g{Batch(n, std::vector<double>(f, 0.0)), std::vector<double>(f, 0.0),
                   std::vector<double>(f, 0.0)};
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < f; ++j) {
      g.d_beta[j] += upstream[s][j];
      g.d_gamma[j] += upstream[s][j] * cache.normalized[s][j];
    }
  }
  if (cache.mode == Mode::eval) {
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < f; ++j) {
        g.d_input[s][j] = upstream[s][j] * gamma[j] * cache.inv_std[j];
      }
    }
    return g;
  }
  // dx = gamma * inv_std / n * (n*dy - sum(dy) - xhat * sum(dy*xhat))
  const double nn = static_cast<double>(n);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < f; ++j) {
      g.d_input[s][j] = gamma[j] * cache.inv_std[j] / nn *
                        (nn * upstream[s][j] - g.d_beta[j] -
                         cache.normalized[s][j] * g.d_gamma[j]);
    }
  }
  return g;
}

/// Momentum update of running statistics. The running variance tracks the
/// unbiased batch variance.
inline void update_running_stats(std::span<double> running_mean, std::span<double> running_var,
                                 const BatchNormCache& cache, std::size_t batch_size,
                                 const BatchNormConfig& cfg = {}) {
  const double correction =
      batch_size > 1 ? static_cast<double>(batch_size) / static_cast<double>(batch_size - 1) : 1.0;
  for (std::size_t j = 0; j < running_mean.size(); ++j) {
    running_mean[j] = cfg.momentum * running_mean[j] + (1.0 - cfg.momentum) * cache.batch_mean[j];
    running_var[j] =
        cfg.momentum * running_var[j] + (1.0 - cfg.momentum) * cache.batch_var[j] * correction;
  }
}

// ---------------------------------------------------------------------------
// Local response normalization:
//   b_i = a_i / (k + alpha * sum_{j in window(i)} a_j^2)^beta
// For a Tensor2 the window runs across channels at a fixed position; for a
// plain vector it runs across neighbouring positions.

struct LrnConfig {
  double k = 2.0;
  std::size_t n = 5;
  double alpha = 1e-4;
  double beta = 0.75;
};

namespace detail {

inline void check_lrn(const LrnConfig& cfg) {
  if (cfg.n == 0 || cfg.n % 2 == 0) {
    throw ConfigError("lrn: window size must be odd, got " + std::to_string(cfg.n));
  }
}

// Window sums of squares over `count` elements spaced by `stride`.
inline std::vector<double> lrn_scales(const double* a, std::size_t count, std::size_t stride,
                                      const LrnConfig& cfg) {
  const std::size_t half = cfg.n / 2;
  std::vector<double> s(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(count - 1, i + half);
    double sq = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) sq += a[j * stride] * a[j * stride];
    s[i] = cfg.k + cfg.alpha * sq;
  }
  return s;
}

inline void lrn_forward_strided(const double* a, double* b, std::size_t count,
                                std::size_t stride, const LrnConfig& cfg) {
  const auto s = lrn_scales(a, count, stride, cfg);
  for (std::size_t i = 0; i < count; ++i) b[i * stride] = a[i * stride] * std::pow(s[i], -cfg.beta);
}

inline void lrn_backward_strided(const double* a, const double* up, double* d, std::size_t count,
                                 std::size_t stride, const LrnConfig& cfg) {
  const std::size_t half = cfg.n / 2;
  const auto s = lrn_scales(a, count, stride, cfg);
  // r_i = g_i * a_i * s_i^(-beta-1); d_j = g_j s_j^-beta - 2 alpha beta a_j sum_{i: j in win(i)} r_i
  std::vector<double> r(count);
  for (std::size_t i = 0; i < count; ++i) {
    r[i] = up[i * stride] * a[i * stride] * std::pow(s[i], -cfg.beta - 1.0);
  }
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t lo = j >= half ? j - half : 0;
    const std::size_t hi = std::min(count - 1, j + half);
    double acc = 0.0;
    for (std::size_t i = lo; i <= hi; ++i) acc += r[i];
    d[j * stride] = up[j * stride] * std::pow(s[j], -cfg.beta) -
                    2.0 * cfg.alpha * cfg.beta * a[j * stride] * acc;
  }
}

}  // namespace detail

inline std::vector<double> lrn_forward(std::span<const double> input, const LrnConfig& cfg = {}) {
  detail::check_lrn(cfg);
  std::vector<double> out(input.size());
  if (!input.empty()) detail::lrn_forward_strided(input.data(), out.data(), input.size(), 1, cfg);
  return out;
}

inline std::vector<double> lrn_backward(std::span<const double> input,
                                        std::span<const double> upstream,
                                        const LrnConfig& cfg = {}) {
  detail::check_lrn(cfg);
  if (input.size() != upstream.size()) throw ConfigError("lrn_backward: size mismatch");
  std::vector<double> d(input.size());
  if (!input.empty()) {
    detail::lrn_backward_strided(input.data(), upstream.data(), d.data(), input.size(), 1, cfg);
  }
  return d;
}

inline Tensor2 lrn_forward(const Tensor2& input, const LrnConfig& cfg = {}) {
  detail::check_lrn(cfg);
  Tensor2 out(input.channels, input.length);
  for (std::size_t p = 0; p < input.length; ++p) {
    detail::lrn_forward_strided(input.data.data() + p, out.data.data() + p, input.channels,
                                input.length, cfg);
  }
  return out;
}

inline Tensor2 lrn_backward(const Tensor2& input, const Tensor2& upstream,
                            const LrnConfig& cfg = {}) {
  detail::check_lrn(cfg);
  if (!input.same_shape(upstream)) throw ConfigError("lrn_backward: shape mismatch");
  Tensor2 d(input.channels, input.length);
  for (std::size_t p = 0; p < input.length; ++p) {
    detail::lrn_backward_strided(input.data.data() + p, upstream.data.data() + p,
                                 d.data.data() + p, input.channels, input.length, cfg);
  }
  return d;
}

}  // namespace sigsiam
