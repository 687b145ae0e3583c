#pragma once

// Pair scoring and verification metrics. Scores are "lower = more similar":
// a pair is predicted genuine/genuine when its score is below the threshold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sigsiam/error.hpp"
#include "sigsiam/params.hpp"
#include "sigsiam/siamese.hpp"

namespace sigsiam {

struct ScoredPair {
  double score = 0.0;
  int label = 1;

  friend bool operator==(const ScoredPair&, const ScoredPair&) = default;
};

/// Scores pairs in evaluation mode. Contrastive heads score by embedding
/// distance; the BCE head scores 1 - P(same writer). Each distinct input
/// vector is embedded once.
inline std::vector<ScoredPair> score_pairs(const ModelParams& params,
                                           std::span<const SignaturePair> pairs,
                                           const LossConfig& loss) {
  namespace pn = param_names;
  std::map<const double*, Embedding> cache;
  auto embedding_of = [&](std::span<const double> x) -> const Embedding& {
    auto it = cache.find(x.data());
    if (it == cache.end()) it = cache.emplace(x.data(), embed(params, x)).first;
    return it->second;
  };
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const Embedding& a = embedding_of(p.first);
    const Embedding& b = embedding_of(p.second);
    double score = 0.0;
    if (loss.mode == HeadKind::contrastive) {
      score = pair_distance(a, b);
    } else {
      const auto& hw = params.weights.at(pn::head_kernel).values;
      const double hb = params.weights.at(pn::head_bias).values.front();
      score = 1.0 - bce_head_loss(a, b, hw, hb, p.label).probability;
    }
    out.push_back({score, p.label});
  }
  return out;
}

inline double accuracy_at(std::span<const ScoredPair> scored, double threshold) {
  if (scored.empty()) throw EvalError("accuracy of an empty pair set");
  if (!std::isfinite(threshold)) throw EvalError("threshold must be finite");
  std::size_t correct = 0;
  for (const auto& s : scored) {
    const int predicted = s.score < threshold ? 1 : 0;
    if (predicted == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scored.size());
}

namespace detail {

inline void require_both_labels(std::span<const ScoredPair> scored) {
  bool pos = false, neg = false;
  for (const auto& s : scored) {
    if (!std::isfinite(s.score)) throw EvalError("non-finite score");
    (s.label == 1 ? pos : neg) = true;
  }
  if (!pos || !neg) throw EvalError("metric needs both genuine and forgery pairs");
}

}  // namespace detail

/// Candidate thresholds are the midpoints between adjacent distinct scores plus
/// min - 1 and max + 1. Returns the candidate with the highest accuracy,
/// preferring the smallest on ties.
inline double calibrate_threshold(std::span<const ScoredPair> scored) {
  detail::require_both_labels(scored);
  std::vector<ScoredPair> s(scored.begin(), scored.end());
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  const std::size_t n = s.size();
  std::size_t negatives = 0;
  for (const auto& p : s) negatives += p.label == 0 ? 1 : 0;

  // Below every score all pairs are predicted 0.
  std::size_t correct = negatives;
  std::size_t best_correct = correct;
  double best = s.front().score - 1.0;
  std::size_t i = 0;
  while (i < n) {
    const double v = s[i].score;
    while (i < n && s[i].score == v) {
      correct += s[i].label == 1 ? 1 : std::size_t{0};
      correct -= s[i].label == 0 ? 1 : std::size_t{0};
      ++i;
    }
    const double candidate = i < n ? 0.5 * (v + s[i].score) : v + 1.0;
    if (correct > best_correct) {
      best_correct = correct;
      best = candidate;
    }
  }
  return best;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct RocResult {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// ROC over thresholds at the sorted distinct scores. The first point uses the
/// smallest score as threshold (nothing accepted) and the last accepts every
/// pair. Tied scores move both rates in one step, which credits ties with 1/2
/// in the trapezoidal area.
inline RocResult roc_auc(std::span<const ScoredPair> scored) {
  detail::require_both_labels(scored);
  std::vector<ScoredPair> s(scored.begin(), scored.end());
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  double pos = 0.0, neg = 0.0;
  for (const auto& p : s) (p.label == 1 ? pos : neg) += 1.0;

  RocResult r;
  r.points.push_back({0.0, 0.0, s.front().score});
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    const double v = s[i].score;
    while (i < s.size() && s[i].score == v) {
      (s[i].label == 1 ? tp : fp) += 1;
      ++i;
    }
    const double thr =
        i < s.size() ? s[i].score : std::nextafter(v, std::numeric_limits<double>::infinity());
    RocPoint pt{static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, thr};
    const RocPoint& prev = r.points.back();
    r.auc += (pt.fpr - prev.fpr) * (pt.tpr + prev.tpr) * 0.5;
    r.points.push_back(pt);
  }
  r.points.back().fpr = 1.0;
  r.points.back().tpr = 1.0;
  return r;
}

/// Operating point where the false-positive and false-negative rates meet,
/// interpolated linearly between the bracketing ROC points.
inline double equal_error_rate(std::span<const RocPoint> roc) {
  if (roc.size() < 2) throw EvalError("equal error rate needs at least two ROC points");
  auto gap = [](const RocPoint& p) { return p.fpr - (1.0 - p.tpr); };
  for (std::size_t k = 0; k + 1 < roc.size(); ++k) {
    const double g0 = gap(roc[k]);
    const double g1 = gap(roc[k + 1]);
    if (g0 == 0.0) return roc[k].fpr;
    if (g0 < 0.0 && g1 >= 0.0) {
      const double a = -g0 / (g1 - g0);
      return roc[k].fpr + a * (roc[k + 1].fpr - roc[k].fpr);
    }
  }
  return roc.back().fpr;
}

struct EvalReport {
  std::size_t n_pairs = 0;
  std::size_t genuine_pairs = 0;
  std::size_t forgery_pairs = 0;
  double threshold = 0.5;
  /// "fixed" or "calibrated".
  std::string threshold_source = "fixed";
  double accuracy = 0.0;
  std::vector<RocPoint> roc;
  /// NaN when only one label is present.
  double auc = std::numeric_limits<double>::quiet_NaN();
  double eer = std::numeric_limits<double>::quiet_NaN();
  double mean_genuine_score = std::numeric_limits<double>::quiet_NaN();
  double mean_forgery_score = std::numeric_limits<double>::quiet_NaN();

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["n_pairs"] = n_pairs;
    j["counts"] = {{"genuine_genuine", genuine_pairs}, {"genuine_forgery", forgery_pairs}};
    j["threshold"] = threshold;
    j["threshold_source"] = threshold_source;
    j["accuracy"] = accuracy;
    j["auc"] = num(auc);
    j["eer"] = num(eer);
    j["mean_genuine_score"] = num(mean_genuine_score);
    j["mean_forgery_score"] = num(mean_forgery_score);
    return j;
  }

  static std::string csv_header() {
    return "n_pairs,genuine_pairs,forgery_pairs,threshold,threshold_source,accuracy,auc,eer";
  }

  std::string csv_row() const {
    auto num = [](double v) {
      if (!std::isfinite(v)) return std::string();
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.10g", v);
      return std::string(buf);
    };
    return std::to_string(n_pairs) + ',' + std::to_string(genuine_pairs) + ',' +
           std::to_string(forgery_pairs) + ',' + num(threshold) + ',' + threshold_source + ',' +
           num(accuracy) + ',' + num(auc) + ',' + num(eer);
  }

  void write_roc_csv(std::ostream& os) const {
    os << "fpr,tpr,threshold\n";
    os.precision(17);
    for (const auto& p : roc) os << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
  }
};

inline EvalReport make_report(std::span<const ScoredPair> scored, double threshold,
                              std::string threshold_source) {
  EvalReport r;
  r.n_pairs = scored.size();
  r.threshold = threshold;
  r.threshold_source = std::move(threshold_source);
  r.accuracy = accuracy_at(scored, threshold);
  double gs = 0.0, fs = 0.0;
  for (const auto& s : scored) {
    if (s.label == 1) {
      ++r.genuine_pairs;
      gs += s.score;
    } else {
      ++r.forgery_pairs;
      fs += s.score;
    }
  }
  if (r.genuine_pairs > 0) r.mean_genuine_score = gs / static_cast<double>(r.genuine_pairs);
  if (r.forgery_pairs > 0) r.mean_forgery_score = fs / static_cast<double>(r.forgery_pairs);
  if (r.genuine_pairs > 0 && r.forgery_pairs > 0) {
    auto roc = roc_auc(scored);
    r.auc = roc.auc;
    r.eer = equal_error_rate(roc.points);
    r.roc = std::move(roc.points);
  }
  return r;
}

}  // namespace sigsiam
