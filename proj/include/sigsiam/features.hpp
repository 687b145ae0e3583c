#pragma once

// Global (whole-signature) features computed from a pen trajectory.
//
// A recipe lists per-sample channels, the statistics taken over each channel,
// and whole-trajectory extras. The output vector is ordered channel-major in
// declaration order (every statistic of the first channel, then the next
// channel, ...), followed by the extras in declaration order.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sigsiam/error.hpp"
#include "sigsiam/ingest.hpp"

#include <nlohmann/json.hpp>

namespace sigsiam {

/// Per-sample signals after collapsing repeated timestamps. Time is in seconds
/// relative to the first sample; derivatives are per second.
struct Kinematics {
  std::vector<double> t;
  std::vector<double> x, y, pressure, azimuth, altitude;
  std::vector<bool> pen_down;
  std::vector<double> vx, vy, speed, ax, ay, accel_mag;

  std::size_t size() const noexcept { return t.size(); }
};

namespace detail {

/// Central differences inside, one-sided differences at both ends.
inline std::vector<double> derivative(std::span<const double> v, std::span<const double> t) {
  const std::size_t n = v.size();
  std::vector<double> d(n);
  d[0] = (v[1] - v[0]) / (t[1] - t[0]);
  d[n - 1] = (v[n - 1] - v[n - 2]) / (t[n - 1] - t[n - 2]);
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1]);
  return d;
}

}  // namespace detail

inline Kinematics derive_kinematics(const SignatureTrajectory& traj) {
  Kinematics k;
  for (const auto& s : traj.samples) {
    if (!traj.samples.empty() && !k.t.empty() &&
        static_cast<double>(s.t - traj.samples.front().t) / 1000.0 == k.t.back()) {
      continue;  // repeated timestamp, keep the first sample
    }
    k.t.push_back(static_cast<double>(s.t - traj.samples.front().t) / 1000.0);
    k.x.push_back(static_cast<double>(s.x));
    k.y.push_back(static_cast<double>(s.y));
    k.pressure.push_back(static_cast<double>(s.pressure));
    k.azimuth.push_back(static_cast<double>(s.azimuth));
    k.altitude.push_back(static_cast<double>(s.altitude));
    k.pen_down.push_back(s.pen_down);
  }
  if (k.size() < 3) {
    throw FeatureError("trajectory has " + std::to_string(k.size()) +
                       " distinct timestamps; at least 3 are needed");
  }
  for (std::size_t i = 1; i < k.size(); ++i) {
    if (k.t[i] < k.t[i - 1]) throw FeatureError("timestamps must be non-decreasing");
  }
  k.vx = detail::derivative(k.x, k.t);
  k.vy = detail::derivative(k.y, k.t);
  k.ax = detail::derivative(k.vx, k.t);
  k.ay = detail::derivative(k.vy, k.t);
  k.speed.resize(k.size());
  k.accel_mag.resize(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) {
    k.speed[i] = std::hypot(k.vx[i], k.vy[i]);
    k.accel_mag[i] = std::hypot(k.ax[i], k.ay[i]);
  }
  return k;
}

inline constexpr std::array<std::string_view, 11> kChannelNames = {
    "x", "y", "pressure", "azimuth", "altitude", "vx", "vy", "speed", "ax", "ay", "accel_mag"};
inline constexpr std::array<std::string_view, 8> kStatisticNames = {
    "min", "max", "mean", "std", "median", "range", "first", "last"};
inline constexpr std::array<std::string_view, 12> kExtraNames = {
    "duration",      "sample_count",        "pen_down_ratio",      "stroke_count",
    "path_length",   "width",               "height",              "aspect_ratio",
    "mean_speed_pen_down", "max_speed_time_fraction", "vx_sign_changes", "vy_sign_changes"};

/// Period of the azimuth channel; its mean and std are circular.
inline constexpr double kAzimuthPeriod = 360.0;

class FeatureRecipe {
 public:
  FeatureRecipe(std::string name, std::vector<std::string> channels,
                std::vector<std::string> statistics, std::vector<std::string> extras,
                std::size_t target_length)
      : name_(std::move(name)),
        channels_(std::move(channels)),
        statistics_(std::move(statistics)),
        extras_(std::move(extras)),
        target_length_(target_length) {
    auto check = [](const auto& names, const auto& known, std::string_view what) {
      for (const auto& n : names) {
        if (std::find(known.begin(), known.end(), n) == known.end()) {
          throw ConfigError("unknown " + std::string(what) + " '" + n + "' in feature recipe");
        }
        if (std::count(names.begin(), names.end(), n) > 1) {
          throw ConfigError("duplicate " + std::string(what) + " '" + n + "' in feature recipe");
        }
      }
    };
    check(channels_, kChannelNames, "channel");
    check(statistics_, kStatisticNames, "statistic");
    check(extras_, kExtraNames, "extra");
    const std::size_t produced = channels_.size() * statistics_.size() + extras_.size();
    if (produced != target_length_ || target_length_ == 0) {
      throw ConfigError("feature recipe '" + name_ + "' yields " + std::to_string(produced) +
                        " features but declares target_length " + std::to_string(target_length_));
    }
  }

  /// Five channels x eight statistics + seven extras.
  static FeatureRecipe svc47() {
    return FeatureRecipe("svc47", {"x", "y", "pressure", "speed", "accel_mag"},
                         {kStatisticNames.begin(), kStatisticNames.end()},
                         {"duration", "sample_count", "pen_down_ratio", "stroke_count",
                          "path_length", "aspect_ratio", "mean_speed_pen_down"},
                         47);
  }

  /// Eleven channels x eight statistics + twelve extras.
  static FeatureRecipe generic100() {
    return FeatureRecipe("generic100", {kChannelNames.begin(), kChannelNames.end()},
                         {kStatisticNames.begin(), kStatisticNames.end()},
                         {kExtraNames.begin(), kExtraNames.end()}, 100);
  }

  static FeatureRecipe by_name(std::string_view name) {
    if (name == "svc47") return svc47();
    if (name == "generic100") return generic100();
    throw ConfigError("unknown feature recipe '" + std::string(name) + "'");
  }

  /// {"name": ..., "channels": [...], "statistics": [...], "extras": [...], "target_length": N}
  static FeatureRecipe from_json(const nlohmann::json& j) {
    try {
      return FeatureRecipe(j.value("name", std::string("custom")),
                           j.at("channels").get<std::vector<std::string>>(),
                           j.at("statistics").get<std::vector<std::string>>(),
                           j.value("extras", std::vector<std::string>{}),
                           j.at("target_length").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed feature recipe: ") + e.what());
    }
  }

  nlohmann::json to_json() const {
    return {{"name", name_},
            {"channels", channels_},
            {"statistics", statistics_},
            {"extras", extras_},
            {"target_length", target_length_}};
  }

  /// "channel.statistic" names followed by extra names, in output order.
  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    for (const auto& c : channels_) {
      for (const auto& s : statistics_) out.push_back(c + "." + s);
    }
    out.insert(out.end(), extras_.begin(), extras_.end());
    return out;
  }

  const std::string& name() const noexcept { return name_; }
  const std::vector<std::string>& channels() const noexcept { return channels_; }
  const std::vector<std::string>& statistics() const noexcept { return statistics_; }
  const std::vector<std::string>& extras() const noexcept { return extras_; }
  std::size_t target_length() const noexcept { return target_length_; }

 private:
  std::string name_;
  std::vector<std::string> channels_;
  std::vector<std::string> statistics_;
  std::vector<std::string> extras_;
  std::size_t target_length_;
};

namespace detail {

inline const std::vector<double>& channel(const Kinematics& k, std::string_view name) {
  if (name == "x") return k.x;
  if (name == "y") return k.y;
  if (name == "pressure") return k.pressure;
  if (name == "azimuth") return k.azimuth;
  if (name == "altitude") return k.altitude;
  if (name == "vx") return k.vx;
  if (name == "vy") return k.vy;
  if (name == "speed") return k.speed;
  if (name == "ax") return k.ax;
  if (name == "ay") return k.ay;
  return k.accel_mag;
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double std_of(std::span<const double> v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline double median_of(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  return n % 2 == 1 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

// Circular mean in [0, period) and circular standard deviation sqrt(-2 ln R).
inline std::pair<double, double> circular_stats(std::span<const double> v, double period) {
  const double to_rad = 2.0 * std::numbers::pi / period;
  double c = 0.0, s = 0.0;
  for (double x : v) {
    c += std::cos(x * to_rad);
    s += std::sin(x * to_rad);
  }
  c /= static_cast<double>(v.size());
  s /= static_cast<double>(v.size());
  double mean = std::atan2(s, c) / to_rad;
  if (mean < 0.0) mean += period;
  if (mean >= period) mean = 0.0;
  const double r = std::clamp(std::hypot(c, s), 1e-12, 1.0);
  return {mean, std::sqrt(-2.0 * std::log(r)) / to_rad};
}

inline double statistic(std::span<const double> v, std::string_view stat, bool circular) {
  if (stat == "min") return *std::min_element(v.begin(), v.end());
  if (stat == "max") return *std::max_element(v.begin(), v.end());
  if (stat == "mean") return circular ? circular_stats(v, kAzimuthPeriod).first : mean_of(v);
  if (stat == "std") return circular ? circular_stats(v, kAzimuthPeriod).second : std_of(v);
  if (stat == "median") return median_of(v);
  if (stat == "range") {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi - *lo;
  }
  if (stat == "first") return v.front();
  return v.back();
}

inline std::size_t sign_changes(std::span<const double> v) {
  std::size_t n = 0;
  int prev = 0;
  for (double x : v) {
    const int s = x > 0.0 ? 1 : (x < 0.0 ? -1 : 0);
    if (s == 0) continue;
    if (prev != 0 && s != prev) ++n;
    prev = s;
  }
  return n;
}

inline double extra(const Kinematics& k, std::string_view name) {
  const std::size_t n = k.size();
  const double duration = k.t.back() - k.t.front();
  std::vector<std::size_t> down;
  for (std::size_t i = 0; i < n; ++i) {
    if (k.pen_down[i]) down.push_back(i);
  }
  // Spatial extras fall back to every sample when the pen never touches down.
  std::vector<std::size_t> spatial = down;
  if (spatial.empty()) {
    spatial.resize(n);
    for (std::size_t i = 0; i < n; ++i) spatial[i] = i;
  }
  auto extent = [&](const std::vector<double>& c) {
    double lo = c[spatial.front()], hi = lo;
    for (auto i : spatial) {
      lo = std::min(lo, c[i]);
      hi = std::max(hi, c[i]);
    }
    return hi - lo;
  };

  if (name == "duration") return duration;
  if (name == "sample_count") return static_cast<double>(n);
  if (name == "pen_down_ratio") return static_cast<double>(down.size()) / static_cast<double>(n);
  if (name == "stroke_count") {
    std::size_t strokes = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (k.pen_down[i] && (i == 0 || !k.pen_down[i - 1])) ++strokes;
    }
    return static_cast<double>(strokes);
  }
  if (name == "path_length") {
    double len = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      if (k.pen_down[i] && k.pen_down[i - 1]) len += std::hypot(k.x[i] - k.x[i - 1], k.y[i] - k.y[i - 1]);
    }
    return len;
  }
  if (name == "width") return extent(k.x);
  if (name == "height") return extent(k.y);
  if (name == "aspect_ratio") return extent(k.x) / std::max(extent(k.y), 1.0);
  if (name == "mean_speed_pen_down") {
    double s = 0.0;
    for (auto i : spatial) s += k.speed[i];
    return s / static_cast<double>(spatial.size());
  }
  if (name == "max_speed_time_fraction") {
    const auto it = std::max_element(k.speed.begin(), k.speed.end());
    const auto i = static_cast<std::size_t>(it - k.speed.begin());
    return duration > 0.0 ? (k.t[i] - k.t.front()) / duration : 0.0;
  }
  if (name == "vx_sign_changes") return static_cast<double>(sign_changes(k.vx));
  return static_cast<double>(sign_changes(k.vy));
}

}  // namespace detail

inline FeatureVector extract_globals(const SignatureTrajectory& traj, const FeatureRecipe& recipe) {
  const Kinematics k = derive_kinematics(traj);
  FeatureVector out;
  out.writer_id = traj.writer_id;
  out.sample_id = traj.sample_id;
  out.label = traj.label;
  out.values.reserve(recipe.target_length());
  for (const auto& c : recipe.channels()) {
    const auto& series = detail::channel(k, c);
    for (const auto& s : recipe.statistics()) {
      out.values.push_back(detail::statistic(series, s, c == "azimuth"));
    }
  }
  for (const auto& e : recipe.extras()) out.values.push_back(detail::extra(k, e));
  for (double v : out.values) {
    if (!std::isfinite(v)) throw FeatureError("non-finite feature value for " + traj.sample_id);
  }
  return out;
}

}  // namespace sigsiam
