#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "sigsiam/features.hpp"

using namespace sigsiam;

namespace {

SignatureTrajectory loop_trajectory(std::size_t n = 80) {
  SignatureTrajectory tr;
  tr.writer_id = "U1";
  tr.sample_id = "S1";
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 0.15 * static_cast<double>(i);
    TrajectorySample s{};
    s.x = static_cast<std::int64_t>(std::lround(500 + 200 * std::cos(a) + 3 * static_cast<double>(i)));
    s.y = static_cast<std::int64_t>(std::lround(400 + 90 * std::sin(2 * a)));
    s.t = static_cast<std::int64_t>(10 * i);
    s.pen_down = !(i >= 30 && i < 36);
    s.azimuth = static_cast<std::int64_t>((350 + 3 * i) % 360);
    s.altitude = 40 + static_cast<std::int64_t>(i % 7);
    s.pressure = s.pen_down ? 200 + static_cast<std::int64_t>(i % 13) * 5 : 0;
    tr.samples.push_back(s);
  }
  return tr;
}

SignatureTrajectory reversed(const SignatureTrajectory& tr) {
  SignatureTrajectory r = tr;
  const auto t_end = tr.samples.back().t;
  for (std::size_t i = 0; i < tr.samples.size(); ++i) {
    r.samples[i] = tr.samples[tr.samples.size() - 1 - i];
    r.samples[i].t = t_end - r.samples[i].t;
  }
  return r;
}

void expect_close(double a, double b, const std::string& what) {
  EXPECT_LE(std::abs(a - b), 1e-9 * std::max({1.0, std::abs(a), std::abs(b)})) << what;
}

}  // namespace

TEST(Kinematics, QuadraticPathHasConstantAcceleration) {
  SignatureTrajectory tr;
  for (std::int64_t i = 0; i < 12; ++i) tr.samples.push_back({i * i, 0, 10 * i, true, 0, 0, 1});
  const auto k = derive_kinematics(tr);
  ASSERT_EQ(k.size(), 12u);
  EXPECT_DOUBLE_EQ(k.t[3], 0.03);
  for (std::size_t i = 1; i + 1 < 12; ++i) EXPECT_NEAR(k.vx[i], 200.0 * static_cast<double>(i), 1e-8);
  EXPECT_NEAR(k.vx[0], 100.0, 1e-9);
  for (std::size_t i = 2; i + 2 < 12; ++i) EXPECT_NEAR(k.ax[i], 2e4, 1e-6) << i;
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(k.vy[i], 0.0);
    EXPECT_NEAR(k.speed[i], std::abs(k.vx[i]), 1e-12);
  }
}

TEST(Kinematics, RepeatedTimestampsKeepTheFirstSample) {
  SignatureTrajectory tr;
  tr.samples = {{0, 0, 0, true, 0, 0, 1}, {5, 0, 0, true, 0, 0, 1}, {1, 0, 10, true, 0, 0, 1},
                {2, 0, 20, true, 0, 0, 1}, {9, 0, 20, true, 0, 0, 1}};
  const auto k = derive_kinematics(tr);
  ASSERT_EQ(k.size(), 3u);
  EXPECT_EQ(k.x, (std::vector<double>{0, 1, 2}));
  for (double v : k.vx) EXPECT_NEAR(v, 100.0, 1e-9);
}

TEST(Kinematics, TooFewDistinctTimestampsThrow) {
  SignatureTrajectory tr;
  tr.samples = {{0, 0, 0, true, 0, 0, 1}, {1, 0, 10, true, 0, 0, 1}, {2, 0, 10, true, 0, 0, 1}};
  EXPECT_THROW(derive_kinematics(tr), FeatureError);
}

TEST(Recipe, BuiltinLengths) {
  EXPECT_EQ(FeatureRecipe::svc47().feature_names().size(), 47u);
  EXPECT_EQ(FeatureRecipe::generic100().feature_names().size(), 100u);
  EXPECT_EQ(extract_globals(loop_trajectory(), FeatureRecipe::svc47()).values.size(), 47u);
  EXPECT_EQ(extract_globals(loop_trajectory(), FeatureRecipe::generic100()).values.size(), 100u);
  EXPECT_THROW(FeatureRecipe::by_name("svc48"), ConfigError);
}

TEST(Recipe, ValidationRejectsBadRecipes) {
  EXPECT_THROW(FeatureRecipe("r", {"x"}, {"mean"}, {}, 2), ConfigError);
  EXPECT_THROW(FeatureRecipe("r", {"x", "x"}, {"mean"}, {}, 2), ConfigError);
  EXPECT_THROW(FeatureRecipe("r", {"jerk"}, {"mean"}, {}, 1), ConfigError);
  EXPECT_THROW(FeatureRecipe("r", {"x"}, {"kurtosis"}, {}, 1), ConfigError);
  EXPECT_THROW(FeatureRecipe("r", {}, {}, {"loops"}, 1), ConfigError);
  EXPECT_THROW(FeatureRecipe::from_json(nlohmann::json{{"channels", {"x"}}}), ConfigError);
  const auto j = FeatureRecipe::svc47().to_json();
  EXPECT_EQ(FeatureRecipe::from_json(j).feature_names(), FeatureRecipe::svc47().feature_names());
}

TEST(Features, KnownValuesOnSmallTrajectory) {
  SignatureTrajectory tr;
  tr.samples = {{0, 0, 0, true, 0, 0, 10}, {3, 4, 100, true, 0, 0, 20}, {6, 8, 200, false, 0, 0, 0},
                {6, 10, 300, true, 0, 0, 30}};
  const FeatureRecipe r("r", {"pressure"}, {"min", "max", "mean", "median", "range", "first", "last"},
                        {"duration", "sample_count", "pen_down_ratio", "stroke_count", "path_length",
                         "width", "height"},
                        14);
  const auto f = extract_globals(tr, r).values;
  const std::vector<double> want{0, 30, 15, 15, 30, 10, 30, 0.3, 4, 0.75, 2, 5, 6, 10};
  ASSERT_EQ(f.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) expect_close(f[i], want[i], r.feature_names()[i]);
}

TEST(Features, AzimuthStatisticsAreCircular) {
  const std::vector<double> v{350, 10};
  EXPECT_NEAR(detail::statistic(v, "mean", true), 0.0, 1e-9);
  EXPECT_NEAR(detail::statistic(v, "mean", false), 180.0, 1e-12);
  const std::vector<double> same{42, 42, 42};
  EXPECT_NEAR(detail::statistic(same, "std", true), 0.0, 1e-4);
}

TEST(Features, TranslationLeavesMotionFeaturesUnchanged) {
  const auto tr = loop_trajectory();
  auto moved = tr;
  for (auto& s : moved.samples) {
    s.x += 1234;
    s.y -= 77;
  }
  const auto recipe = FeatureRecipe::generic100();
  const auto a = extract_globals(tr, recipe).values;
  const auto b = extract_globals(moved, recipe).values;
  const auto names = recipe.feature_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& n = names[i];
    if (n.starts_with("x.") || n.starts_with("y.")) {
      if (n.ends_with(".std") || n.ends_with(".range")) expect_close(a[i], b[i], n);
      continue;
    }
    expect_close(a[i], b[i], n);
  }
}

TEST(Features, TimeReversalSwapsFirstAndLast) {
  const auto tr = loop_trajectory();
  const auto recipe = FeatureRecipe::svc47();
  const auto a = extract_globals(tr, recipe).values;
  const auto b = extract_globals(reversed(tr), recipe).values;
  const auto names = recipe.feature_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& n = names[i];
    if (n.ends_with(".first")) {
      expect_close(a[i], b[i + 1], n);
    } else if (n.ends_with(".last")) {
      expect_close(a[i], b[i - 1], n);
    } else {
      expect_close(a[i], b[i], n);
    }
  }
}

TEST(Features, IdentityCarriesThrough) {
  auto tr = loop_trajectory();
  tr.label = SignatureLabel::forgery;
  const auto f = extract_globals(tr, FeatureRecipe::svc47());
  EXPECT_EQ(f.writer_id, "U1");
  EXPECT_EQ(f.sample_id, "S1");
  EXPECT_EQ(f.label, SignatureLabel::forgery);
}
