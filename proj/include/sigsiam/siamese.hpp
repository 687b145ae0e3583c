#pragma once

// One CNN branch shared by both halves of the Siamese pair, plus the
// contrastive and binary cross-entropy pair losses.
//
// Branch pipeline:
//   conv(C, w, same) -> relu [-> lrn] -> maxpool(2)
//   conv(C, w, same) -> relu [-> lrn] -> maxpool(2)
//   dropout -> flatten -> dense(E, sigmoid) -> batchnorm(E) -> dropout
//   -> dense(E, sigmoid|identity) [-> lrn]

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sigsiam/error.hpp"
#include "sigsiam/layers.hpp"
#include "sigsiam/params.hpp"
#include "sigsiam/tensor.hpp"

namespace sigsiam {

using Embedding = std::vector<double>;

struct LossConfig {
  double margin = 1.0;
  HeadKind mode = HeadKind::contrastive;
  /// Coefficient of the sum-of-squares penalty on regularized tensors.
  double l2 = 0.03;

  void validate() const {
    if (!(margin > 0.0)) throw ConfigError("margin must be positive");
    if (!(l2 >= 0.0)) throw ConfigError("l2 coefficient must be non-negative");
  }
};

/// Views into two feature vectors and the pair label (1 = genuine/genuine).
struct SignaturePair {
  std::span<const double> first;
  std::span<const double> second;
  int label = 1;
};

struct SampleTrace {
  Tensor2 input;
  Tensor2 conv1_act;
  Tensor2 conv1_out;
  PoolResult pool1;
  Tensor2 conv2_act;
  Tensor2 conv2_out;
  PoolResult pool2;
  std::vector<double> drop1_mask;
  std::vector<double> flat;
  std::vector<double> dense1_out;
  std::vector<double> drop2_mask;
  std::vector<double> drop2_out;
  std::vector<double> dense2_out;
  Embedding embedding;
};

struct BranchTrace {
  Mode mode = Mode::eval;
  std::vector<SampleTrace> samples;
  BatchNormCache bn;
  /// Smallest distance of any ReLU input or active max-pool decision from its kink.
  double kink_margin = std::numeric_limits<double>::infinity();
};

namespace detail {

inline Tensor2 relu_map(const Tensor2& pre, double& kink_margin) {
  Tensor2 out(pre.channels, pre.length);
  for (std::size_t i = 0; i < pre.data.size(); ++i) {
    kink_margin = std::min(kink_margin, std::abs(pre.data[i]));
    out.data[i] = relu(pre.data[i]);
  }
  return out;
}

inline void pool_margin(const Tensor2& in, std::size_t pool, double& kink_margin) {
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t j = 0; j * pool + 1 < in.length; j += 1) {
      const double a = in.at(c, j * pool);
      const double b = in.at(c, j * pool + 1);
      if (std::max(a, b) > 0.0) kink_margin = std::min(kink_margin, std::abs(a - b));
    }
  }
}

inline Tensor2 relu_backward_map(const Tensor2& act, const Tensor2& upstream) {
  Tensor2 d(act.channels, act.length);
  for (std::size_t i = 0; i < act.data.size(); ++i) {
    d.data[i] = act.data[i] > 0.0 ? upstream.data[i] : 0.0;
  }
  return d;
}

inline void add_into(std::vector<double>& acc, std::span<const double> g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

}  // namespace detail

/// Runs the branch over a batch. Batch normalization statistics in training
/// mode are shared across the whole batch.
inline BranchTrace forward_branch(const ModelParams& params,
                                  std::span<const std::span<const double>> inputs, Mode mode,
                                  std::mt19937_64& rng) {
  namespace pn = param_names;
  const ArchSpec& arch = params.arch;
  const ParamSet& w = params.weights;
  const bool lrn_conv = arch.lrn_placement == LrnPlacement::after_each_conv;
  const bool lrn_embed = arch.lrn_placement == LrnPlacement::after_embedding;

  BranchTrace trace;
  trace.mode = mode;
  trace.samples.resize(inputs.size());
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    if (inputs[s].size() != arch.input_length) {
      throw ConfigError("input length " + std::to_string(inputs[s].size()) +
                        " does not match architecture input length " +
                        std::to_string(arch.input_length));
    }
    SampleTrace& t = trace.samples[s];
    t.input = Tensor2::row(inputs[s]);
    const Tensor2 conv1_pre = conv1d_forward(t.input, w.at(pn::conv1_kernel).span(),
                                             w.at(pn::conv1_bias).span(), arch.conv_channels,
                                             arch.kernel_width);
    t.conv1_act = detail::relu_map(conv1_pre, trace.kink_margin);
    t.conv1_out = lrn_conv ? lrn_forward(t.conv1_act, arch.lrn) : t.conv1_act;
    detail::pool_margin(t.conv1_out, 2, trace.kink_margin);
    t.pool1 = maxpool1d_forward(t.conv1_out, 2);

    const Tensor2 conv2_pre = conv1d_forward(t.pool1.output, w.at(pn::conv2_kernel).span(),
                                             w.at(pn::conv2_bias).span(), arch.conv_channels,
                                             arch.kernel_width);
    t.conv2_act = detail::relu_map(conv2_pre, trace.kink_margin);
    t.conv2_out = lrn_conv ? lrn_forward(t.conv2_act, arch.lrn) : t.conv2_act;
    detail::pool_margin(t.conv2_out, 2, trace.kink_margin);
    t.pool2 = maxpool1d_forward(t.conv2_out, 2);

    auto drop1 = dropout_forward(t.pool2.output.data, arch.dropout_rate, mode, rng);
    t.flat = std::move(drop1.output);
    t.drop1_mask = std::move(drop1.mask);
    t.dense1_out = dense_forward(t.flat, w.at(pn::dense1_kernel).span(),
                                 w.at(pn::dense1_bias).span(), Activation::sigmoid);
  }

  Batch bn_in(inputs.size());
  for (std::size_t s = 0; s < inputs.size(); ++s) bn_in[s] = trace.samples[s].dense1_out;
  auto bn = batchnorm_forward(bn_in, w.at(pn::bn_gamma).span(), w.at(pn::bn_beta).span(),
                              params.bn_running_mean, params.bn_running_var, mode,
                              arch.batchnorm);
  trace.bn = std::move(bn.cache);

  for (std::size_t s = 0; s < inputs.size(); ++s) {
    SampleTrace& t = trace.samples[s];
    auto drop2 = dropout_forward(bn.output[s], arch.dropout_rate, mode, rng);
    t.drop2_out = std::move(drop2.output);
    t.drop2_mask = std::move(drop2.mask);
    t.dense2_out = dense_forward(t.drop2_out, w.at(pn::dense2_kernel).span(),
                                 w.at(pn::dense2_bias).span(), arch.embedding_activation);
    t.embedding = lrn_embed ? lrn_forward(t.dense2_out, arch.lrn) : t.dense2_out;
  }
  return trace;
}

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(embedding) for
/// every sample of the trace.
inline void backward_branch(const ModelParams& params, const BranchTrace& trace,
                            std::span<const std::vector<double>> d_embeddings, ParamSet& grads) {
  namespace pn = param_names;
  const ArchSpec& arch = params.arch;
  const ParamSet& w = params.weights;
  const bool lrn_conv = arch.lrn_placement == LrnPlacement::after_each_conv;
  const bool lrn_embed = arch.lrn_placement == LrnPlacement::after_embedding;
  const std::size_t n = trace.samples.size();
  if (d_embeddings.size() != n) throw ConfigError("backward_branch: gradient count mismatch");

  Batch d_bn_out(n);
  for (std::size_t s = 0; s < n; ++s) {
    const SampleTrace& t = trace.samples[s];
    const std::vector<double> d_dense2 =
        lrn_embed ? lrn_backward(t.dense2_out, d_embeddings[s], arch.lrn) : d_embeddings[s];
    auto g = dense_backward(t.drop2_out, w.at(pn::dense2_kernel).span(), t.dense2_out, d_dense2,
                            arch.embedding_activation);
    detail::add_into(grads.at(pn::dense2_kernel).values, g.d_weights);
    detail::add_into(grads.at(pn::dense2_bias).values, g.d_bias);
    d_bn_out[s] = dropout_backward(g.d_input, t.drop2_mask);
  }

  auto bn = batchnorm_backward(d_bn_out, w.at(pn::bn_gamma).span(), trace.bn);
  detail::add_into(grads.at(pn::bn_gamma).values, bn.d_gamma);
  detail::add_into(grads.at(pn::bn_beta).values, bn.d_beta);

  for (std::size_t s = 0; s < n; ++s) {
    const SampleTrace& t = trace.samples[s];
    auto g1 = dense_backward(t.flat, w.at(pn::dense1_kernel).span(), t.dense1_out,
                             bn.d_input[s], Activation::sigmoid);
    detail::add_into(grads.at(pn::dense1_kernel).values, g1.d_weights);
    detail::add_into(grads.at(pn::dense1_bias).values, g1.d_bias);

    Tensor2 d_pool2(arch.conv_channels, t.pool2.output.length,
                    dropout_backward(g1.d_input, t.drop1_mask));
    Tensor2 d_conv2_out =
        maxpool1d_backward(d_pool2, t.pool2.argmax, arch.conv_channels, t.conv2_out.length);
    Tensor2 d_conv2_act =
        lrn_conv ? lrn_backward(t.conv2_act, d_conv2_out, arch.lrn) : std::move(d_conv2_out);
    auto gc2 = conv1d_backward(t.pool1.output, w.at(pn::conv2_kernel).span(),
                               arch.conv_channels, arch.kernel_width,
                               detail::relu_backward_map(t.conv2_act, d_conv2_act));
    detail::add_into(grads.at(pn::conv2_kernel).values, gc2.d_kernels);
    detail::add_into(grads.at(pn::conv2_bias).values, gc2.d_bias);

    Tensor2 d_conv1_out =
        maxpool1d_backward(gc2.d_input, t.pool1.argmax, arch.conv_channels, t.conv1_out.length);
    Tensor2 d_conv1_act =
        lrn_conv ? lrn_backward(t.conv1_act, d_conv1_out, arch.lrn) : std::move(d_conv1_out);
    auto gc1 = conv1d_backward(t.input, w.at(pn::conv1_kernel).span(), arch.conv_channels,
                               arch.kernel_width,
                               detail::relu_backward_map(t.conv1_act, d_conv1_act));
    detail::add_into(grads.at(pn::conv1_kernel).values, gc1.d_kernels);
    detail::add_into(grads.at(pn::conv1_bias).values, gc1.d_bias);
  }
}

/// Embedding of a single signature. Training mode needs batch statistics and
/// therefore fails here; use forward_branch on a batch instead.
inline Embedding embed(const ModelParams& params, std::span<const double> x, Mode mode,
                       std::mt19937_64& rng) {
  const std::span<const double> one[] = {x};
  return std::move(forward_branch(params, one, mode, rng).samples.front().embedding);
}

inline Embedding embed(const ModelParams& params, std::span<const double> x) {
  std::mt19937_64 unused(0);
  return embed(params, x, Mode::eval, unused);
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("embedding dimensions differ");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sq += d * d;
  }
  return sq;
}

/// Euclidean distance between two embeddings.
inline double pair_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

/// y * d^2 + (1 - y) * max(0, m^2 - d^2), as a function of the distance d.
inline double contrastive_loss_from_distance(double distance, int label, double margin) {
  const double sq = distance * distance;
  return label == 1 ? sq : std::max(0.0, margin * margin - sq);
}

struct PairLoss {
  double loss = 0.0;
  std::vector<double> d_first;
  std::vector<double> d_second;
};

inline PairLoss contrastive_loss(std::span<const double> e1, std::span<const double> e2,
                                 int label, double margin) {
  if (!(margin > 0.0)) throw ConfigError("margin must be positive");
  if (label != 0 && label != 1) throw ConfigError("pair label must be 0 or 1");
  const double sq = squared_distance(e1, e2);
  PairLoss r;
  r.d_first.assign(e1.size(), 0.0);
  r.d_second.assign(e1.size(), 0.0);
  double coeff = 0.0;  // d(loss)/d(sq)
  if (label == 1) {
    r.loss = sq;
    coeff = 1.0;
  } else {
    const double gap = margin * margin - sq;
    r.loss = std::max(0.0, gap);
    coeff = gap > 0.0 ? -1.0 : 0.0;
  }
  for (std::size_t i = 0; i < e1.size(); ++i) {
    r.d_first[i] = coeff * 2.0 * (e1[i] - e2[i]);
    r.d_second[i] = -r.d_first[i];
  }
  return r;
}

struct HeadLoss {
  double loss = 0.0;
  /// Unclamped P(same writer).
  double probability = 0.5;
  std::vector<double> d_first;
  std::vector<double> d_second;
  std::vector<double> d_head_weights;
  double d_head_bias = 0.0;
};

inline constexpr double kProbabilityClamp = 1e-7;

/// p = sigmoid(w . |e1 - e2| + b); loss = -[y log p + (1-y) log(1-p)] with p
/// clamped to [1e-7, 1 - 1e-7]. The gradient is zero where the clamp is active.
inline HeadLoss bce_head_loss(std::span<const double> e1, std::span<const double> e2,
                              std::span<const double> head_weights, double head_bias, int label) {
  if (e1.size() != e2.size() || head_weights.size() != e1.size()) {
    throw ConfigError("bce head: dimension mismatch");
  }
  if (label != 0 && label != 1) throw ConfigError("pair label must be 0 or 1");
  const std::size_t n = e1.size();
  double z = head_bias;
  for (std::size_t i = 0; i < n; ++i) z += head_weights[i] * std::abs(e1[i] - e2[i]);

  HeadLoss r;
  r.probability = sigmoid(z);
  const double p = std::clamp(r.probability, kProbabilityClamp, 1.0 - kProbabilityClamp);
  r.loss = label == 1 ? -std::log(p) : -std::log(1.0 - p);
  const bool clamped = p != r.probability;
  const double dz = clamped ? 0.0 : r.probability - static_cast<double>(label);

  r.d_first.assign(n, 0.0);
  r.d_second.assign(n, 0.0);
  r.d_head_weights.assign(n, 0.0);
  r.d_head_bias = dz;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = e1[i] - e2[i];
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    r.d_head_weights[i] = dz * std::abs(diff);
    r.d_first[i] = dz * head_weights[i] * sign;
    r.d_second[i] = -r.d_first[i];
  }
  return r;
}

inline double l2_penalty(const ParamSet& params, double coeff) {
  double sq = 0.0;
  for (const auto& t : params) {
    if (!t.regularized) continue;
    for (double v : t.values) sq += v * v;
  }
  return coeff * sq;
}

struct BatchLoss {
  double loss = 0.0;
  double data_loss = 0.0;
  double reg_loss = 0.0;
  ParamSet grads;
  /// Batch-norm statistics of this batch, for the running-average update.
  BatchNormCache bn;
  std::size_t bn_batch_size = 0;
  double kink_margin = std::numeric_limits<double>::infinity();
  std::vector<double> pair_losses;
};

/// Mean per-pair loss over the batch plus the L2 penalty. Both halves of every
/// pair run through the same parameters; their gradients accumulate into one
/// ParamSet.
inline BatchLoss batch_loss(const ModelParams& params, std::span<const SignaturePair> pairs,
                            const LossConfig& cfg, Mode mode, std::mt19937_64& rng,
                            bool with_grads = true) {
  namespace pn = param_names;
  if (pairs.empty()) throw ProtocolError("batch_loss: empty batch");
  cfg.validate();
  if (cfg.mode != params.arch.head) {
    throw ConfigError("loss mode does not match the architecture's head");
  }

  std::vector<std::span<const double>> inputs;
  inputs.reserve(pairs.size() * 2);
  for (const auto& p : pairs) {
    if (p.label != 0 && p.label != 1) throw ConfigError("pair label must be 0 or 1");
    inputs.push_back(p.first);
    inputs.push_back(p.second);
  }
  const BranchTrace trace = forward_branch(params, inputs, mode, rng);

  BatchLoss r;
  r.kink_margin = trace.kink_margin;
  r.bn = trace.bn;
  r.bn_batch_size = inputs.size();
  if (with_grads) r.grads = params.weights.zeros_like();

  const double inv_b = 1.0 / static_cast<double>(pairs.size());
  std::vector<std::vector<double>> d_emb(inputs.size());
  r.pair_losses.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Embedding& e1 = trace.samples[2 * i].embedding;
    const Embedding& e2 = trace.samples[2 * i + 1].embedding;
    const int y = pairs[i].label;
    if (cfg.mode == HeadKind::contrastive) {
      auto pl = contrastive_loss(e1, e2, y, cfg.margin);
      if (y == 0) {
        const double sq = squared_distance(e1, e2);
        r.kink_margin = std::min(r.kink_margin, std::abs(cfg.margin * cfg.margin - sq));
      }
      r.pair_losses.push_back(pl.loss);
      d_emb[2 * i] = std::move(pl.d_first);
      d_emb[2 * i + 1] = std::move(pl.d_second);
    } else {
      const auto& hw = params.weights.at(pn::head_kernel).values;
      const double hb = params.weights.at(pn::head_bias).values.front();
      auto hl = bce_head_loss(e1, e2, hw, hb, y);
      for (std::size_t k = 0; k < e1.size(); ++k) {
        r.kink_margin = std::min(r.kink_margin, std::abs(e1[k] - e2[k]));
      }
      r.pair_losses.push_back(hl.loss);
      if (with_grads) {
        auto& ghw = r.grads.at(pn::head_kernel).values;
        for (std::size_t k = 0; k < ghw.size(); ++k) ghw[k] += inv_b * hl.d_head_weights[k];
        r.grads.at(pn::head_bias).values.front() += inv_b * hl.d_head_bias;
      }
      d_emb[2 * i] = std::move(hl.d_first);
      d_emb[2 * i + 1] = std::move(hl.d_second);
    }
    r.data_loss += r.pair_losses.back();
  }
  r.data_loss *= inv_b;
  r.reg_loss = l2_penalty(params.weights, cfg.l2);
  r.loss = r.data_loss + r.reg_loss;

  if (!with_grads) return r;
  for (auto& d : d_emb) {
    for (double& v : d) v *= inv_b;
  }
  backward_branch(params, trace, d_emb, r.grads);
  for (std::size_t k = 0; k < r.grads.size(); ++k) {
    const ParamTensor& t = params.weights[k];
    if (!t.regularized) continue;
    auto& g = r.grads[k].values;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * cfg.l2 * t.values[i];
  }
  return r;
}

}  // namespace sigsiam
