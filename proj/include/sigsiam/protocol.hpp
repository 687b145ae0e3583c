#pragma once

// Writer-independent pair construction: genuine/genuine and genuine/forgery
// pairs per writer, K-of-M train/test splits and class balancing.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sigsiam/error.hpp"
#include "sigsiam/ingest.hpp"
#include "sigsiam/siamese.hpp"

namespace sigsiam {

enum class PairKind { genuine_genuine, genuine_forgery };

struct SampleRef {
  std::size_t writer = 0;
  SignatureLabel kind = SignatureLabel::genuine;
  std::size_t index = 0;

  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct PairRecord {
  SampleRef first;
  SampleRef second;
  int label = 1;
  PairKind kind = PairKind::genuine_genuine;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

struct PairSet {
  std::vector<PairRecord> pairs;

  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count_if(
        pairs.begin(), pairs.end(), [label](const PairRecord& p) { return p.label == label; }));
  }
  std::size_t size() const noexcept { return pairs.size(); }
  std::set<std::size_t> writers() const {
    std::set<std::size_t> w;
    for (const auto& p : pairs) {
      w.insert(p.first.writer);
      w.insert(p.second.writer);
    }
    return w;
  }
};

enum class ForgeryScheme {
  index_skip,  ///< genuine i with forgery j for every j != i
  full_cross,  ///< every genuine with every forgery
};

enum class WriterSelection { first_k, seeded_random };
enum class TestMode { with_forgery, genuine_only };

struct SplitSpec {
  std::size_t train_writers = 1;
  WriterSelection selection = WriterSelection::first_k;
  std::uint64_t seed = 7;
  TestMode test_mode = TestMode::with_forgery;
  bool balance = true;
  ForgeryScheme forgery_scheme = ForgeryScheme::index_skip;
  /// Drop genuine/forgery pairs from the training side as well in genuine_only mode.
  bool exclude_forgery_train = false;
};

/// All unordered genuine combinations, C(n, 2) pairs labelled 1.
inline std::vector<PairRecord> genuine_pairs(const Dataset& ds, std::size_t writer) {
  const std::size_t n = ds.writers.at(writer).genuine.size();
  if (n < 2) {
    throw ProtocolError("writer '" + ds.writers[writer].id + "' has " + std::to_string(n) +
                        " genuine samples; at least 2 are needed");
  }
  std::vector<PairRecord> out;
  out.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      out.push_back({{writer, SignatureLabel::genuine, i},
                     {writer, SignatureLabel::genuine, j},
                     1,
                     PairKind::genuine_genuine});
    }
  }
  return out;
}

inline std::vector<PairRecord> forgery_pairs(const Dataset& ds, std::size_t writer,
                                             ForgeryScheme scheme) {
  const auto& w = ds.writers.at(writer);
  if (w.genuine.empty() || w.forgery.empty()) {
    throw ProtocolError("writer '" + w.id + "' needs at least one genuine and one forgery sample");
  }
  std::vector<PairRecord> out;
  for (std::size_t i = 0; i < w.genuine.size(); ++i) {
    for (std::size_t j = 0; j < w.forgery.size(); ++j) {
      if (scheme == ForgeryScheme::index_skip && i == j) continue;
      out.push_back({{writer, SignatureLabel::genuine, i},
                     {writer, SignatureLabel::forgery, j},
                     0,
                     PairKind::genuine_forgery});
    }
  }
  if (out.empty()) {
    throw ProtocolError("writer '" + w.id + "' yields no genuine/forgery pairs under index_skip");
  }
  return out;
}

/// Training-side writer indices in dataset order.
inline std::vector<std::size_t> select_train_writers(const Dataset& ds, const SplitSpec& spec) {
  const std::size_t m = ds.writers.size();
  if (spec.train_writers < 1 || spec.train_writers + 1 > m) {
    throw ProtocolError("train writer count K=" + std::to_string(spec.train_writers) +
                        " must satisfy 1 <= K <= M-1 with M=" + std::to_string(m));
  }
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (spec.selection == WriterSelection::seeded_random) {
    std::mt19937_64 rng(spec.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
  }
  idx.resize(spec.train_writers);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Split {
  std::vector<std::size_t> train_writers;
  std::vector<std::size_t> test_writers;
  PairSet train;
  PairSet test;
};

/// Builds the train and test pair sets for a split. With balancing on, the
/// larger of each writer's two pair kinds (normally genuine/forgery) is
/// subsampled, seeded per writer, down to the size of the smaller.
inline Split build_split(const Dataset& ds, const SplitSpec& spec) {
  Split s;
  s.train_writers = select_train_writers(ds, spec);
  for (std::size_t w = 0; w < ds.writers.size(); ++w) {
    if (!std::binary_search(s.train_writers.begin(), s.train_writers.end(), w)) {
      s.test_writers.push_back(w);
    }
  }

  auto subsample = [&](std::vector<PairRecord>& v, std::size_t keep, std::size_t w) {
    std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + w + 1);
    std::shuffle(v.begin(), v.end(), rng);
    v.resize(keep);
    std::sort(v.begin(), v.end(), [](const PairRecord& a, const PairRecord& b) {
      return std::pair(a.first.index, a.second.index) < std::pair(b.first.index, b.second.index);
    });
  };
  auto emit = [&](std::size_t w, bool with_forgery, PairSet& into) {
    auto gg = genuine_pairs(ds, w);
    std::vector<PairRecord> gf;
    if (with_forgery) {
      gf = forgery_pairs(ds, w, spec.forgery_scheme);
      if (spec.balance && gf.size() > gg.size()) subsample(gf, gg.size(), w);
      if (spec.balance && gg.size() > gf.size()) subsample(gg, gf.size(), w);
    }
    into.pairs.insert(into.pairs.end(), gg.begin(), gg.end());
    into.pairs.insert(into.pairs.end(), gf.begin(), gf.end());
  };

  const bool genuine_only = spec.test_mode == TestMode::genuine_only;
  for (auto w : s.train_writers) emit(w, !(genuine_only && spec.exclude_forgery_train), s.train);
  for (auto w : s.test_writers) emit(w, !genuine_only, s.test);
  return s;
}

inline bool verify_writer_disjointness(const PairSet& train, const PairSet& test) {
  const auto a = train.writers();
  for (auto w : test.writers()) {
    if (a.count(w) != 0) return false;
  }
  return true;
}

inline const FeatureVector& resolve(const Dataset& ds, const SampleRef& r) {
  const auto& w = ds.writers.at(r.writer);
  return (r.kind == SignatureLabel::genuine ? w.genuine : w.forgery).at(r.index);
}

/// Views into `ds`; the dataset must outlive the returned pairs.
inline std::vector<SignaturePair> materialize(const Dataset& ds, const PairSet& set) {
  std::vector<SignaturePair> out;
  out.reserve(set.size());
  for (const auto& p : set.pairs) {
    out.push_back({resolve(ds, p.first).values, resolve(ds, p.second).values, p.label});
  }
  return out;
}

/// writer1,sample1,writer2,sample2,label
inline void write_pairs_csv(std::ostream& os, const Dataset& ds, const PairSet& set) {
  os << "writer1,sample1,writer2,sample2,label\n";
  for (const auto& p : set.pairs) {
    const auto& a = resolve(ds, p.first);
    const auto& b = resolve(ds, p.second);
    os << a.writer_id << ',' << a.sample_id << ',' << b.writer_id << ',' << b.sample_id << ','
       << p.label << '\n';
  }
}

}  // namespace sigsiam
