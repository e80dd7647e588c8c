#include <random>
#include <set>

#include <gtest/gtest.h>

#include "ctxstrata/calibration.hpp"
#include "ctxstrata/folds.hpp"
#include "ctxstrata/metrics.hpp"
#include "oracles.hpp"

using namespace ctxstrata;

TEST(Pava, MonotoneInputIsItsOwnFit) {
  std::vector<double> s{0.1, 0.2, 0.3, 0.4};
  std::vector<int> t{0, 0, 1, 1};
  auto m = fit_pava(s, t);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(m(s[i]), t[i]);
}

TEST(Pava, ThreeViolatorsPoolIntoOneBlock) {
  std::vector<double> s{1, 2, 3};
  std::vector<int> t{1, 0, 0};
  auto m = fit_pava(s, t);
  auto expect = oracle::isotonic_blocks({1, 2, 3}, {1, 0, 0}, {1, 1, 1});
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(m(s[i]), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(m(s[i]), expect[i], 1e-15);
  }
}

TEST(Pava, SinglePointIsConstant) {
  std::vector<double> s{0.4};
  std::vector<int> t{1};
  auto m = fit_pava(s, t);
  EXPECT_EQ(m(0.0), 1.0);
  EXPECT_EQ(m(0.4), 1.0);
  EXPECT_EQ(m(1.0), 1.0);
}

TEST(Pava, TiedScoresArePooled) {
  std::vector<double> s{0.5, 0.5, 0.5, 0.9};
  std::vector<int> t{1, 0, 0, 1};
  auto m = fit_pava(s, t);
  ASSERT_EQ(m.breakpoints().size(), 2u);
  EXPECT_NEAR(m(0.5), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(m(0.9), 1.0);
}

TEST(Pava, MatchesBlockPartitionOracle) {
  std::mt19937_64 rng(17);
  for (int k = 0; k < 300; ++k) {
    std::size_t n = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
    std::vector<double> x(n), t(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(i) * 0.1;
      t[i] = std::uniform_real_distribution<double>(0, 1)(rng);
      w[i] = std::uniform_real_distribution<double>(0.2, 2)(rng);
    }
    std::shuffle(x.begin(), x.end(), rng);
    auto m = fit_pava(x, t, w);
    auto expect = oracle::isotonic_blocks(x, t, w);
    auto xs = x;
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(m(xs[i]), expect[i], 1e-10);
  }
}

TEST(Pava, RejectsBadInput) {
  std::vector<double> s{0.1, 0.2}, t{0, 1}, w{1, 0};
  EXPECT_THROW(fit_pava(s, t, w), Error);
  std::vector<double> empty;
  EXPECT_THROW(fit_pava(empty, empty, empty), Error);
}

TEST(IsotonicMap, InterpolatesAndClamps) {
  IsotonicMap m({0.2, 0.6}, {0.1, 0.5});
  EXPECT_EQ(m(0.0), 0.1);
  EXPECT_EQ(m(1.0), 0.5);
  EXPECT_NEAR(m(0.4), 0.3, 1e-15);
  EXPECT_THROW(IsotonicMap({0.2, 0.1}, {0.0, 0.1}), Error);
  EXPECT_THROW(IsotonicMap({0.1, 0.2}, {0.5, 0.1}), Error);
  auto back = isotonic_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.breakpoints(), m.breakpoints());
  EXPECT_EQ(back.values(), m.values());
}

TEST(IsotonicMap, StrictlyIncreasingMapPreservesAuroc) {
  std::mt19937_64 rng(3);
  IsotonicMap m({0.0, 0.3, 0.7, 1.0}, {0.05, 0.2, 0.6, 0.95});
  std::vector<int> y(300);
  std::vector<double> s(300), c(300);
  for (std::size_t i = 0; i < y.size(); ++i) {
    s[i] = std::uniform_real_distribution<double>(0, 1)(rng);
    y[i] = std::bernoulli_distribution(s[i])(rng);
    c[i] = m(s[i]);
  }
  EXPECT_EQ(auroc(y, s).value, auroc(y, c).value);
}

TEST(Folds, GroupsStayTogetherAndPositivesBalance) {
  std::mt19937_64 rng(9);
  std::vector<std::string> groups;
  std::vector<int> targets;
  for (int g = 0; g < 200; ++g) {
    int size = std::uniform_int_distribution<int>(1, 4)(rng);
    for (int j = 0; j < size; ++j) {
      groups.push_back("g" + std::to_string(g));
      targets.push_back(std::bernoulli_distribution(0.3)(rng));
    }
  }
  auto fold = group_stratified_folds(groups, targets, 5, 1);
  std::map<std::string, std::set<int>> seen;
  std::vector<int> pos(5, 0);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    seen[groups[i]].insert(fold[i]);
    pos[static_cast<std::size_t>(fold[i])] += targets[i];
  }
  for (const auto& [_, f] : seen) EXPECT_EQ(f.size(), 1u);
  auto [lo, hi] = std::minmax_element(pos.begin(), pos.end());
  EXPECT_LE(*hi - *lo, 4);
  EXPECT_EQ(group_stratified_folds(groups, targets, 5, 1), fold);
}

TEST(Folds, SubjectOwningAllPositivesStaysInOneFold) {
  std::vector<std::string> groups{"a", "a", "a", "b", "c", "d", "e", "f"};
  std::vector<int> targets{1, 1, 1, 0, 0, 0, 0, 0};
  auto fold = group_stratified_folds(groups, targets, 5, 0);
  EXPECT_EQ(fold[0], fold[1]);
  EXPECT_EQ(fold[1], fold[2]);
}

TEST(Folds, FewerGroupsThanFolds) {
  std::vector<std::string> groups{"a", "b", "c", "d"};
  std::vector<int> targets{1, 0, 1, 0};
  try {
    group_stratified_folds(groups, targets, 5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_groups);
  }
}

TEST(CalibrateCv, WellCalibratedDataStaysNearIdentity) {
  std::mt19937_64 rng(2000);
  std::vector<CalibrationSample> samples;
  for (int i = 0; i < 2000; ++i) {
    double s = std::uniform_real_distribution<double>(0, 1)(rng);
    samples.push_back({"p" + std::to_string(i), s, std::bernoulli_distribution(s)(rng) ? 1 : 0});
  }
  auto m = calibrate_cv(samples, 5, 1);
  // Mean over records; the step fit's pointwise maximum is noise-dominated.
  double mean_gap = 0.0;
  for (const auto& s : samples) mean_gap += std::abs(m(s.score) - s.score) / samples.size();
  EXPECT_LT(mean_gap, 0.05);
  auto v = m.values();
  EXPECT_TRUE(std::is_sorted(v.begin(), v.end()));
}

TEST(CalibrateCv, SingleClassIsDegenerate) {
  std::vector<CalibrationSample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back({"p" + std::to_string(i), 0.1 * i, 0});
  try {
    calibrate_cv(samples);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_target);
  }
}

TEST(CalibrateCv, FourSubjectsFiveFolds) {
  std::vector<CalibrationSample> samples{{"a", 0.1, 0}, {"b", 0.2, 1}, {"c", 0.3, 0}, {"d", 0.4, 1}};
  try {
    calibrate_cv(samples, 5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::insufficient_groups);
  }
}
