#include <gtest/gtest.h>

#include <cmath>

#include "groupdiff/diffusion.hpp"
#include "groupdiff/error.hpp"

using namespace groupdiff;

TEST(Schedule, Invariants) {
  for (const auto& s : {NoiseSchedule::scaled_linear(100), NoiseSchedule::linear(100, 1e-4, 0.02),
                        NoiseSchedule::scaled_linear(1000)}) {
    for (std::size_t t = 0; t < s.steps(); ++t) {
      EXPECT_GT(s.betas[t], 0.0);
      EXPECT_LT(s.betas[t], 1.0);
      if (t > 0) EXPECT_LT(s.alpha_bars[t], s.alpha_bars[t - 1]);
    }
  }
  EXPECT_THROW(NoiseSchedule::from_betas({0.1, 1.0}), ValidationError);
  EXPECT_THROW(NoiseSchedule::from_betas({}), ValidationError);
}

TEST(ForwardNoising, AlphaBarOneIsClean) {
  Rng rng(1);
  const Tensor x0 = randn({2, 3}, rng), eps = randn({2, 3}, rng);
  EXPECT_TRUE(bitwise_equal(noise_with_alpha_bar(x0, eps, 1.0), x0));
  EXPECT_TRUE(bitwise_equal(noise_with_alpha_bar(x0, eps, 0.0), eps));
}

TEST(ForwardNoising, LastStepIsNearlyPureNoise) {
  Rng rng(2);
  const auto s = NoiseSchedule::scaled_linear(100);
  const Tensor x0 = randn({4, 4}, rng), eps = randn({4, 4}, rng);
  const Tensor xt = forward_noising(x0, 99, eps, s);
  EXPECT_LE(max_abs_diff(xt, eps), 0.02);
}

TEST(ForwardNoising, LinearScheduleCumulativeProductOracle) {
  const auto s = NoiseSchedule::linear(100, 1e-4, 0.02);
  double ab = 1.0;
  for (int i = 0; i <= 10; ++i) ab *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 99.0);
  EXPECT_NEAR(s.alpha_bars[10], ab, 1e-15);
  const Tensor x0{{3}, {1.0, -0.5, 2.0}}, eps{{3}, {0.3, 0.3, -1.0}};
  const Tensor xt = forward_noising(x0, 10, eps, s);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(xt[i], std::sqrt(ab) * x0[i] + std::sqrt(1 - ab) * eps[i], 1e-14);
}

TEST(ForwardNoising, PerRowTimestepsAndErrors) {
  const auto s = NoiseSchedule::scaled_linear(10);
  const Tensor x0{{2, 2}, {1, 1, 1, 1}}, eps{{2, 2}, {0, 0, 0, 0}};
  const std::vector<int> t{0, 9};
  const Tensor xt = forward_noising(x0, t, eps, s);
  EXPECT_DOUBLE_EQ(xt[0], std::sqrt(s.alpha_bars[0]));
  EXPECT_DOUBLE_EQ(xt[3], std::sqrt(s.alpha_bars[9]));
  EXPECT_THROW(forward_noising(x0, 10, eps, s), ValidationError);
  EXPECT_THROW(forward_noising(x0, -1, eps, s), ValidationError);
  EXPECT_THROW(forward_noising(x0, 1, Tensor(Shape{3}), s), DimensionError);
}

TEST(GroupTimesteps, ZeroDeviationMeansIdentical) {
  const auto s = NoiseSchedule::scaled_linear(100);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto t = sample_group_timesteps(4, {0, 0.1}, s, rng);
    for (int v : t) EXPECT_EQ(v, t[0]);
  }
}

TEST(GroupTimesteps, DeviationBoundOverTenThousandGroups) {
  const auto s = NoiseSchedule::scaled_linear(100);
  Rng rng(4);
  int widest = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto t = sample_group_timesteps(8, {50, 0.1}, s, rng);
    for (int v : t) {
      ASSERT_GE(v, 0);
      ASSERT_LT(v, 100);
      widest = std::max(widest, std::abs(v - t[0]));
    }
  }
  EXPECT_LE(widest, 50);
  EXPECT_GE(widest, 45);
}

TEST(GroupTimesteps, WideDeviationCoversRangeUniformly) {
  const auto s = NoiseSchedule::scaled_linear(100);
  Rng rng(5);
  std::vector<double> counts(100, 0.0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_group_timesteps(2, {100, 0.1}, s, rng)[1])];
  double chi2 = 0.0;
  const double expected = draws / 100.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 148.2);  // 99 dof, p = 0.001
}

TEST(GroupLoss, Examples) {
  Rng rng(6);
  const Tensor e = randn({3, 4}, rng);
  EXPECT_EQ(group_loss(e, e), 0.0);
  const Tensor pred{{2, 2}, {0, 0, 1, 1}}, target{{2, 2}, {1, 1, 1, 1}};
  EXPECT_DOUBLE_EQ(group_loss(pred, target), 1.0);
  EXPECT_THROW(group_loss(pred, Tensor(Shape{2, 3})), DimensionError);
}

TEST(GroupLoss, SingleMemberIsPlainMse) {
  Rng rng(7);
  const Tensor a = randn({1, 5}, rng), b = randn({1, 5}, rng);
  double mse = 0;
  for (std::size_t i = 0; i < 5; ++i) mse += (a[i] - b[i]) * (a[i] - b[i]) / 5.0;
  EXPECT_NEAR(group_loss(a, b), mse, 1e-15);
}

TEST(GroupLoss, AdditiveOverMembers) {
  Rng rng(8);
  const Tensor a = randn({5, 3}, rng), b = randn({5, 3}, rng);
  const auto split = [](const Tensor& t, std::size_t lo, std::size_t hi) {
    return Tensor(Shape{hi - lo, 3}, std::vector<double>(t.data() + lo * 3, t.data() + hi * 3));
  };
  EXPECT_NEAR(group_loss(a, b), group_loss(split(a, 0, 2), split(b, 0, 2)) + group_loss(split(a, 2, 5), split(b, 2, 5)),
              1e-12);
}

TEST(LabelDropout, Extremes) {
  Rng rng(9);
  const std::vector<int> labels{1, 2, 3};
  const auto keep = label_dropout(labels, 0.0, 8, rng);
  EXPECT_EQ(keep.labels, labels);
  EXPECT_FALSE(keep.dropped);
  const auto drop = label_dropout(labels, 1.0, 8, rng);
  EXPECT_EQ(drop.labels, (std::vector<int>{8, 8, 8}));
  EXPECT_TRUE(drop.dropped);
  EXPECT_THROW(label_dropout(labels, 1.5, 8, rng), ValidationError);
}

TEST(LabelDropout, RateAndAllOrNone) {
  Rng rng(10);
  const std::vector<int> labels{0, 1, 2, 3};
  int dropped = 0;
  for (int i = 0; i < 100000; ++i) {
    const auto r = label_dropout(labels, 0.1, 8, rng);
    const auto nulls = std::count(r.labels.begin(), r.labels.end(), 8);
    ASSERT_TRUE(nulls == 0 || nulls == 4);
    dropped += r.dropped;
  }
  EXPECT_NEAR(dropped / 100000.0, 0.1, 0.005);
}

TEST(GroupBatch, ValidatesDeviationAndLabels) {
  GroupBatch b;
  b.images = Tensor(Shape{2, 2, 2, 3});
  b.noise = Tensor(Shape{2, 2, 2, 3});
  b.labels = {0, 1};
  b.timesteps = {10, 25};
  EXPECT_NO_THROW(b.validate(15, 100, 8));
  EXPECT_THROW(b.validate(14, 100, 8), ValidationError);
  b.labels = {0, 9};
  EXPECT_THROW(b.validate(15, 100, 8), ValidationError);
}
