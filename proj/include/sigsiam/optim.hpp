#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sigsiam/error.hpp"
#include "sigsiam/params.hpp"
#include "sigsiam/siamese.hpp"

namespace sigsiam {

struct TrainConfig {
  double lr = 0.004;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Learning-rate decay: lr_t = lr / (1 + decay * t).
  double decay = 0.0;
  std::size_t batch_size = 36;
  std::size_t max_epochs = 400;
  std::size_t patience = 5;
  double min_delta = 0.0;
  std::uint64_t seed = 42;
  double validation_fraction = 0.1;
  double max_norm = 4.0;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(decay >= 0.0)) throw ConfigError("decay must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
    if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be non-negative");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation_fraction must lie in [0, 1)");
    }
    if (!(max_norm > 0.0)) throw ConfigError("max_norm must be positive");
  }
};

struct AdamState {
  ParamSet first_moment;
  ParamSet second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ParamSet& params) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0};
  }
};

/// One bias-corrected Adam update followed by max-norm projection.
/// Throws TrainingError naming the first parameter with a non-finite gradient.
inline void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state,
                      const TrainConfig& cfg) {
  if (!params.same_layout(grads)) throw ConfigError("adam_step: gradient layout mismatch");
  if (state.first_moment.size() == 0) state = AdamState::for_params(params);
  if (!params.same_layout(state.first_moment) || !params.same_layout(state.second_moment)) {
    throw ConfigError("adam_step: optimizer state layout mismatch");
  }
  for (const auto& g : grads) {
    if (!all_finite(g.values)) throw TrainingError("non-finite gradient in parameter '" + g.name + "'");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double lr = cfg.lr / (1.0 + cfg.decay * (t - 1.0));
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].values;
    const auto& g = grads[k].values;
    auto& m = state.first_moment[k].values;
    auto& v = state.second_moment[k].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
  apply_max_norm(params, cfg.max_norm);
}

enum class StopDecision { keep_going, stop };

/// Index of the best entry: an entry counts as an improvement only when it is
/// below the running best by more than `min_delta`.
inline std::size_t best_index(std::span<const double> history, double min_delta) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < history[best] - min_delta) best = i;
  }
  return best;
}

/// Stop once `patience` evaluations (at least one) have passed without improvement.
inline StopDecision early_stop_check(std::span<const double> history, std::size_t patience,
                                     double min_delta) {
  if (history.empty()) return StopDecision::keep_going;
  const std::size_t since_best = history.size() - 1 - best_index(history, min_delta);
  return since_best >= std::max<std::size_t>(patience, 1) ? StopDecision::stop
                                                          : StopDecision::keep_going;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  /// NaN when no validation split is used.
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  /// Loss watched by early stopping.
  double monitored_loss = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_monitored_loss = std::numeric_limits<double>::infinity();
  std::string stop_reason;

  /// Equality over everything except wall-clock time.
  bool same_trajectory(const TrainLog& other) const {
    if (epochs.size() != other.epochs.size() || best_epoch != other.best_epoch ||
        stop_reason != other.stop_reason) {
      return false;
    }
    auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    if (!same(best_monitored_loss, other.best_monitored_loss)) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const auto& a = epochs[i];
      const auto& b = other.epochs[i];
      if (a.epoch != b.epoch || !same(a.train_loss, b.train_loss) ||
          !same(a.val_loss, b.val_loss) || !same(a.monitored_loss, b.monitored_loss)) {
        return false;
      }
    }
    return true;
  }

  void write_csv(std::ostream& os) const {
    os << "epoch,train_loss,val_loss,seconds\n";
    os.precision(17);
    for (const auto& e : epochs) {
      os << e.epoch << ',' << e.train_loss << ',';
      if (!std::isnan(e.val_loss)) os << e.val_loss;
      os << ',' << e.seconds << '\n';
    }
  }
};

class DivergenceError : public TrainingError {
 public:
  DivergenceError(const std::string& what, std::size_t last_good_epoch, TrainLog log)
      : TrainingError(what), last_good_epoch_(last_good_epoch), log_(std::move(log)) {}
  std::size_t last_good_epoch() const noexcept { return last_good_epoch_; }
  const TrainLog& log() const noexcept { return log_; }

 private:
  std::size_t last_good_epoch_;
  TrainLog log_;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

/// Called after every optimizer step with the updated parameters and step count.
using StepHook = std::function<void(const ModelParams&, std::uint64_t)>;

/// Mean loss in evaluation mode (no dropout, running batch-norm statistics),
/// computed in fixed-size chunks so the value does not depend on batching.
inline double evaluate_loss(const ModelParams& params, std::span<const SignaturePair> pairs,
                            const LossConfig& loss) {
  if (pairs.empty()) throw ProtocolError("evaluate_loss: no pairs");
  std::mt19937_64 unused(0);
  constexpr std::size_t chunk = 256;
  double total = 0.0;
  for (std::size_t start = 0; start < pairs.size(); start += chunk) {
    const std::size_t n = std::min(chunk, pairs.size() - start);
    const auto r = batch_loss(params, pairs.subspan(start, n), loss, Mode::eval, unused, false);
    for (double l : r.pair_losses) total += l;
  }
  return total / static_cast<double>(pairs.size()) + l2_penalty(params.weights, loss.l2);
}

/// Minibatch Adam training with early stopping. Returns the parameters of the
/// best monitored epoch.
///
/// A validation subset of `validation_fraction` of the pairs (chosen by pair,
/// with the run seed) is held out and its evaluation-mode loss is monitored.
/// With no validation subset the evaluation-mode training loss is monitored.
/// Data order and dropout draw from separate generators. With lr == 0 the
/// model is frozen, including batch-norm running statistics.
inline TrainResult train(ModelParams params, std::span<const SignaturePair> pairs,
                         const TrainConfig& cfg, const LossConfig& loss,
                         const StepHook& on_step = {}) {
  using clock = std::chrono::steady_clock;
  cfg.validate();
  loss.validate();
  if (pairs.empty()) throw ProtocolError("train: empty training set");

  std::mt19937_64 split_rng(cfg.seed);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<SignaturePair> fit_set;
  std::vector<SignaturePair> val_set;
  const auto n_val = static_cast<std::size_t>(
      std::floor(cfg.validation_fraction * static_cast<double>(pairs.size())));
  if (n_val > 0 && n_val < pairs.size()) {
    std::shuffle(order.begin(), order.end(), split_rng);
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> fit_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(fit_idx.begin(), fit_idx.end());
    for (auto i : val_idx) val_set.push_back(pairs[i]);
    for (auto i : fit_idx) fit_set.push_back(pairs[i]);
  } else {
    fit_set.assign(pairs.begin(), pairs.end());
  }

  const bool frozen = cfg.lr == 0.0;
  AdamState adam = AdamState::for_params(params.weights);
  TrainResult result{params, {}};
  std::vector<double> history;
  std::vector<std::size_t> idx(fit_set.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<SignaturePair> batch;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = clock::now();
    std::shuffle(idx.begin(), idx.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, idx.size());
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(fit_set[idx[i]]);
      auto r = batch_loss(params, batch, loss, Mode::train, dropout_rng);
      if (!std::isfinite(r.loss)) {
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch) +
                                  "; last good epoch " + std::to_string(result.log.best_epoch),
                              result.log.best_epoch, result.log);
      }
      loss_sum += r.loss * static_cast<double>(batch.size());
      if (!frozen) {
        adam_step(params.weights, r.grads, adam, cfg);
        update_running_stats(params.bn_running_mean, params.bn_running_var, r.bn,
                             r.bn_batch_size, params.arch.batchnorm);
      }
      if (on_step) on_step(params, adam.step);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(fit_set.size());
    if (!val_set.empty()) {
      rec.val_loss = evaluate_loss(params, val_set, loss);
      rec.monitored_loss = rec.val_loss;
    } else {
      rec.monitored_loss = evaluate_loss(params, fit_set, loss);
    }
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    if (!std::isfinite(rec.monitored_loss)) {
      throw DivergenceError("monitored loss became non-finite in epoch " + std::to_string(epoch) +
                                "; last good epoch " + std::to_string(result.log.best_epoch),
                            result.log.best_epoch, result.log);
    }
    result.log.epochs.push_back(rec);
    history.push_back(rec.monitored_loss);

    if (best_index(history, cfg.min_delta) == history.size() - 1) {
      result.params = params;
      result.log.best_epoch = epoch;
      result.log.best_monitored_loss = rec.monitored_loss;
    }
    if (early_stop_check(history, cfg.patience, cfg.min_delta) == StopDecision::stop) {
      result.log.stop_reason = "early_stopping";
      return result;
    }
  }
  result.log.stop_reason = "max_epochs";
  return result;
}

}  // namespace sigsiam
