#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sigsiam/error.hpp"

namespace sigsiam {

enum class SignatureLabel { genuine, forgery };

inline std::string_view to_string(SignatureLabel l) {
  return l == SignatureLabel::genuine ? "genuine" : "forgery";
}

struct TrajectorySample {
  std::int64_t x = 0;
  std::int64_t y = 0;
  /// Milliseconds.
  std::int64_t t = 0;
  bool pen_down = true;
  std::int64_t azimuth = 0;
  std::int64_t altitude = 0;
  std::int64_t pressure = 0;

  friend bool operator==(const TrajectorySample&, const TrajectorySample&) = default;
};

struct SignatureTrajectory {
  std::vector<TrajectorySample> samples;
  std::string writer_id;
  std::string sample_id;
  SignatureLabel label = SignatureLabel::genuine;

  friend bool operator==(const SignatureTrajectory&, const SignatureTrajectory&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

inline std::vector<std::string_view> split_char(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<std::int64_t> parse_int(std::string_view tok) {
  std::int64_t v = 0;
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end || tok.empty()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view tok) {
  tok = trim(tok);
  if (tok.empty()) return std::nullopt;
  double v = 0.0;
  if (tok.front() == '+') tok.remove_prefix(1);
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses the SVC-2004 text layout: a point count on the first line, then one
/// "x y timestamp button azimuth altitude pressure" line per point. A nonzero
/// button status means the pen is down. Blank lines are skipped.
inline SignatureTrajectory parse_svc_trajectory(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> count;
  SignatureTrajectory traj;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto tokens = detail::split_ws(body);
    if (!count) {
      if (tokens.size() != 1) throw ParseError("expected a single point count", line_no);
      const auto n = detail::parse_int(tokens[0]);
      if (!n || *n < 0) throw ParseError("invalid point count '" + std::string(tokens[0]) + "'", line_no);
      count = static_cast<std::size_t>(*n);
      traj.samples.reserve(*count);
      continue;
    }
    if (traj.samples.size() == *count) {
      throw ParseError("more points than the declared count " + std::to_string(*count), line_no);
    }
    if (tokens.size() != 7) {
      throw ParseError("expected 7 fields, found " + std::to_string(tokens.size()), line_no);
    }
    std::int64_t v[7];
    for (std::size_t k = 0; k < 7; ++k) {
      const auto p = detail::parse_int(tokens[k]);
      if (!p) throw ParseError("non-numeric token '" + std::string(tokens[k]) + "'", line_no);
      v[k] = *p;
    }
    TrajectorySample s{v[0], v[1], v[2], v[3] != 0, v[4], v[5], v[6]};
    if (!traj.samples.empty() && s.t < traj.samples.back().t) {
      throw ParseError("timestamps must be non-decreasing", line_no);
    }
    traj.samples.push_back(s);
  }
  if (!count) throw ParseError("empty trajectory file", line_no + 1);
  if (traj.samples.size() != *count) {
    throw ParseError("declared " + std::to_string(*count) + " points but found " +
                         std::to_string(traj.samples.size()) + "; point " +
                         std::to_string(traj.samples.size() + 1) + " is missing",
                     line_no + 1);
  }
  if (traj.samples.size() < 2) throw ParseError("a trajectory needs at least 2 points", line_no);
  return traj;
}

inline SignatureTrajectory parse_svc_trajectory(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_svc_trajectory(in);
}

inline void write_svc_trajectory(std::ostream& os, const SignatureTrajectory& traj) {
  os << traj.samples.size() << '\n';
  for (const auto& s : traj.samples) {
    os << s.x << ' ' << s.y << ' ' << s.t << ' ' << (s.pen_down ? 1 : 0) << ' ' << s.azimuth
       << ' ' << s.altitude << ' ' << s.pressure << '\n';
  }
}

// ---------------------------------------------------------------------------

struct FeatureVector {
  std::vector<double> values;
  std::string writer_id;
  std::string sample_id;
  SignatureLabel label = SignatureLabel::genuine;
};

struct WriterSamples {
  std::string id;
  std::vector<FeatureVector> genuine;
  std::vector<FeatureVector> forgery;
};

/// Per-writer genuine and forgery vectors. Writers keep first-appearance order.
struct Dataset {
  std::string name;
  std::size_t feature_length = 0;
  std::vector<WriterSamples> writers;

  WriterSamples& writer(const std::string& id) {
    for (auto& w : writers) {
      if (w.id == id) return w;
    }
    writers.push_back(WriterSamples{id, {}, {}});
    return writers.back();
  }

  void add(FeatureVector v) {
    if (v.values.size() != feature_length) {
      throw ConfigError("feature vector of length " + std::to_string(v.values.size()) +
                        " in a dataset of length " + std::to_string(feature_length));
    }
    auto& w = writer(v.writer_id);
    (v.label == SignatureLabel::genuine ? w.genuine : w.forgery).push_back(std::move(v));
  }

  std::size_t genuine_count() const {
    std::size_t n = 0;
    for (const auto& w : writers) n += w.genuine.size();
    return n;
  }
  std::size_t forgery_count() const {
    std::size_t n = 0;
    for (const auto& w : writers) n += w.forgery.size();
    return n;
  }
};

inline std::optional<SignatureLabel> parse_label(std::string_view s) {
  if (s == "genuine") return SignatureLabel::genuine;
  if (s == "forgery") return SignatureLabel::forgery;
  return std::nullopt;
}

/// Reads "writer_id,sample_id,label,f1..fL" rows (header first). Row numbers in
/// errors are 1-based file lines.
inline Dataset load_feature_csv(std::istream& in, std::size_t expected_length,
                                std::string name = "features") {
  Dataset ds{std::move(name), expected_length, {}};
  std::string line;
  std::size_t row = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++row;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto cells = detail::split_char(body, ',');
    if (!header_seen) {
      header_seen = true;
      if (cells.size() < 3 || detail::trim(cells[0]) != "writer_id") {
        throw ParseError("missing header 'writer_id,sample_id,label,...'", row);
      }
      if (cells.size() != expected_length + 3) {
        throw ParseError("header declares " + std::to_string(cells.size() - 3) +
                             " features, expected " + std::to_string(expected_length),
                         row);
      }
      continue;
    }
    if (cells.size() != expected_length + 3) {
      throw ParseError("row has " + std::to_string(cells.size() < 3 ? 0 : cells.size() - 3) +
                           " feature values, expected " + std::to_string(expected_length),
                       row);
    }
    const auto label = parse_label(detail::trim(cells[2]));
    if (!label) throw ParseError("unknown label '" + std::string(cells[2]) + "'", row);
    FeatureVector v;
    v.writer_id = std::string(detail::trim(cells[0]));
    v.sample_id = std::string(detail::trim(cells[1]));
    if (v.writer_id.empty()) throw ParseError("empty writer id", row);
    v.label = *label;
    v.values.reserve(expected_length);
    for (std::size_t k = 3; k < cells.size(); ++k) {
      const auto x = detail::parse_double(cells[k]);
      if (!x || !std::isfinite(*x)) {
        throw ParseError("invalid feature value '" + std::string(cells[k]) + "'", row);
      }
      v.values.push_back(*x);
    }
    ds.add(std::move(v));
  }
  if (!header_seen) throw ParseError("empty feature file", row + 1);
  return ds;
}

inline void write_feature_header(std::ostream& os, std::size_t length) {
  os << "writer_id,sample_id,label";
  for (std::size_t k = 1; k <= length; ++k) os << ",f" << k;
  os << '\n';
}

inline void write_feature_row(std::ostream& os, const FeatureVector& v) {
  os << v.writer_id << ',' << v.sample_id << ',' << to_string(v.label);
  char buf[32];
  for (double x : v.values) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    os << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
  }
  os << '\n';
}

/// Writers in dataset order; genuine samples before forgeries.
inline void write_feature_csv(std::ostream& os, const Dataset& ds) {
  write_feature_header(os, ds.feature_length);
  for (const auto& w : ds.writers) {
    for (const auto& v : w.genuine) write_feature_row(os, v);
    for (const auto& v : w.forgery) write_feature_row(os, v);
  }
}

// ---------------------------------------------------------------------------

struct SynthSpec {
  std::size_t writers = 20;
  std::size_t genuine_per_writer = 20;
  std::size_t forgery_per_writer = 20;
  std::size_t feature_length = 47;
  double separation = 10.0;
  std::uint64_t seed = 1;
};

/// Gaussian writer prototypes with unit-variance sample noise. Forgeries are
/// displaced from their writer's prototype by `separation` along one unit
/// direction shared by all writers (drawn once from the seed), which models a
/// systematic difference between skilled forgeries and genuine signing.
inline Dataset synth_dataset(const SynthSpec& spec) {
  if (!(spec.separation >= 0.0)) throw ConfigError("separation must be non-negative");
  if (spec.feature_length == 0) throw ConfigError("feature_length must be positive");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> direction(spec.feature_length);
  double norm = 0.0;
  while (norm == 0.0) {
    norm = 0.0;
    for (auto& d : direction) {
      d = normal(rng);
      norm += d * d;
    }
    norm = std::sqrt(norm);
  }
  for (auto& d : direction) d /= norm;

  Dataset ds{"synthetic", spec.feature_length, {}};
  char buf[32];
  for (std::size_t w = 0; w < spec.writers; ++w) {
    std::snprintf(buf, sizeof buf, "w%03zu", w + 1);
    const std::string wid = buf;
    std::vector<double> proto(spec.feature_length);
    for (auto& p : proto) p = normal(rng);
    auto draw = [&](SignatureLabel label, std::size_t idx) {
      FeatureVector v;
      v.writer_id = wid;
      std::snprintf(buf, sizeof buf, "%c%02zu", label == SignatureLabel::genuine ? 'g' : 'f', idx + 1);
      v.sample_id = buf;
      v.label = label;
      v.values.resize(spec.feature_length);
      const double shift = label == SignatureLabel::forgery ? spec.separation : 0.0;
      for (std::size_t k = 0; k < spec.feature_length; ++k) {
        v.values[k] = proto[k] + shift * direction[k] + normal(rng);
      }
      ds.add(std::move(v));
    };
    for (std::size_t i = 0; i < spec.genuine_per_writer; ++i) draw(SignatureLabel::genuine, i);
    for (std::size_t i = 0; i < spec.forgery_per_writer; ++i) draw(SignatureLabel::forgery, i);
    if (spec.genuine_per_writer + spec.forgery_per_writer == 0) ds.writer(wid);
  }
  return ds;
}

// ---------------------------------------------------------------------------

/// Per-feature z-score statistics.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

inline constexpr double kStdFloor = 1e-8;

/// Statistics over every vector (genuine and forgery) of the listed writers.
inline NormStats fit_norm_stats(const Dataset& ds, std::span<const std::size_t> writer_indices) {
  if (writer_indices.empty()) throw ConfigError("normalization needs at least one training writer");
  const std::size_t L = ds.feature_length;
  NormStats st{std::vector<double>(L, 0.0), std::vector<double>(L, 0.0)};
  std::size_t n = 0;
  auto each = [&](auto&& fn) {
    for (auto wi : writer_indices) {
      if (wi >= ds.writers.size()) throw ConfigError("writer index out of range");
      for (const auto& v : ds.writers[wi].genuine) fn(v.values);
      for (const auto& v : ds.writers[wi].forgery) fn(v.values);
    }
  };
  each([&](const std::vector<double>& x) {
    ++n;
    for (std::size_t k = 0; k < L; ++k) st.mean[k] += x[k];
  });
  if (n == 0) throw ConfigError("normalization writers contain no samples");
  for (auto& m : st.mean) m /= static_cast<double>(n);
  each([&](const std::vector<double>& x) {
    for (std::size_t k = 0; k < L; ++k) {
      const double d = x[k] - st.mean[k];
      st.std[k] += d * d;
    }
  });
  for (auto& s : st.std) s = std::sqrt(s / static_cast<double>(n));
  return st;
}

inline void apply_norm_stats(std::span<double> values, const NormStats& st) {
  if (values.size() != st.mean.size()) throw ConfigError("normalization length mismatch");
  for (std::size_t k = 0; k < values.size(); ++k) {
    values[k] = (values[k] - st.mean[k]) / std::max(st.std[k], kStdFloor);
  }
}

inline Dataset apply_norm_stats(Dataset ds, const NormStats& st) {
  for (auto& w : ds.writers) {
    for (auto& v : w.genuine) apply_norm_stats(v.values, st);
    for (auto& v : w.forgery) apply_norm_stats(v.values, st);
  }
  return ds;
}

/// Fits on the training writers and transforms every writer with those statistics.
inline std::pair<Dataset, NormStats> normalize(const Dataset& ds,
                                               std::span<const std::size_t> train_writers) {
  NormStats st = fit_norm_stats(ds, train_writers);
  return {apply_norm_stats(ds, st), std::move(st)};
}

inline void write_norm_stats_csv(std::ostream& os, const NormStats& st) {
  os << "index,mean,std\n";
  char a[32], b[32];
  for (std::size_t k = 0; k < st.mean.size(); ++k) {
    auto pa = std::to_chars(a, a + sizeof a, st.mean[k]).ptr;
    auto pb = std::to_chars(b, b + sizeof b, st.std[k]).ptr;
    os << k << ',' << std::string_view(a, static_cast<std::size_t>(pa - a)) << ','
       << std::string_view(b, static_cast<std::size_t>(pb - b)) << '\n';
  }
}

inline NormStats read_norm_stats_csv(std::istream& in) {
  NormStats st;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto body = detail::trim(line);
    if (body.empty() || row == 1) continue;
    const auto cells = detail::split_char(body, ',');
    if (cells.size() != 3) throw ParseError("expected index,mean,std", row);
    const auto idx = detail::parse_int(detail::trim(cells[0]));
    const auto m = detail::parse_double(cells[1]);
    const auto s = detail::parse_double(cells[2]);
    if (!idx || !m || !s || static_cast<std::size_t>(*idx) != st.mean.size()) {
      throw ParseError("malformed normalization row", row);
    }
    st.mean.push_back(*m);
    st.std.push_back(*s);
  }
  return st;
}

}  // namespace sigsiam
