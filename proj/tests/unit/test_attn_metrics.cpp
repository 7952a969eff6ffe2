#include <gtest/gtest.h>

#include <cmath>

#include "groupdiff/attn_metrics.hpp"
#include "groupdiff/error.hpp"
#include "test_support.hpp"

using namespace groupdiff;
using groupdiff::testing::tiny_model;

namespace {

AttentionBlockSums make_block(std::size_t n, std::vector<double> mass, std::size_t step = 0, std::size_t layer = 0) {
  AttentionBlockSums b;
  b.n = n;
  b.mass = std::move(mass);
  b.step = step;
  b.layer = layer;
  return b;
}

// Random row-stochastic heads × (n·L)² weights.
std::vector<double> random_weights(std::size_t n, std::size_t L, std::size_t heads, Rng& rng) {
  const std::size_t S = n * L;
  std::vector<double> w(heads * S * S);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t r = 0; r < heads * S; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < S; ++c) total += (w[r * S + c] = u(rng));
    for (std::size_t c = 0; c < S; ++c) w[r * S + c] /= total;
  }
  return w;
}

}  // namespace

TEST(BlockSums, MatchesDoubleLoop) {
  Rng rng(3);
  const std::size_t n = 3, L = 4, heads = 2, S = n * L;
  const auto w = random_weights(n, L, heads, rng);
  const auto b = block_sums(w, n, L, heads);
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double expect = 0.0;
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t a = 0; a < L; ++a)
          for (std::size_t c = 0; c < L; ++c) expect += w[h * S * S + (i * L + a) * S + (j * L + c)];
      expect /= static_cast<double>(L * heads);
      EXPECT_NEAR(b.at(i, j), expect, 1e-12);
      row += b.at(i, j);
    }
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
}

TEST(BlockSums, IdentityAndUniform) {
  const std::size_t n = 2, L = 3, S = n * L;
  std::vector<double> eye(S * S, 0.0), flat(S * S, 1.0 / S);
  for (std::size_t i = 0; i < S; ++i) eye[i * S + i] = 1.0;
  const auto a = block_sums(eye, n, L);
  EXPECT_EQ(a.mass, (std::vector<double>{1, 0, 0, 1}));
  const auto b = block_sums(flat, n, L);
  for (double v : b.mass) EXPECT_NEAR(v, 0.5, 1e-12);
}

TEST(BlockSums, RejectsNonStochasticRows) {
  std::vector<double> w(4, 0.3);
  EXPECT_THROW(block_sums(w, 1, 2), NumericError);
  EXPECT_THROW(block_sums(w, 2, 2), DimensionError);
}

TEST(CrossScore, Examples) {
  EXPECT_NEAR(*cross_sample_score(std::vector<double>{0.4, 0.1, 0.1}), 0.5, 1e-12);
  EXPECT_EQ(*cross_sample_score(std::vector<double>{0.3}), 0.0);
  EXPECT_EQ(*cross_sample_score(std::vector<double>{0.0, 0.0}), 0.0);
  EXPECT_FALSE(cross_sample_score(std::vector<double>{}).has_value());
}

TEST(CrossScore, BoundedAndScaleInvariant) {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(5), q(5);
    for (std::size_t i = 0; i < p.size(); ++i) q[i] = 3.5 * (p[i] = u(rng));
    const double s = *cross_sample_score(p);
    EXPECT_GE(s, 0.0);
    EXPECT_LT(s, 1.0);
    EXPECT_NEAR(*cross_sample_score(q), s, 1e-12);
  }
}

TEST(CrossStats, PerImage) {
  const auto b = make_block(3, {0.5, 0.4, 0.1, 0.2, 0.6, 0.2, 0.3, 0.3, 0.4});
  const auto st = cross_stats(b);
  ASSERT_EQ(st.size(), 3u);
  EXPECT_DOUBLE_EQ(st[0].p_self, 0.5);
  EXPECT_NEAR(st[0].p_cross_mean, 0.25, 1e-12);
  EXPECT_DOUBLE_EQ(st[0].p_cross_max, 0.4);
  EXPECT_NEAR(*st[0].s_cross, 0.375, 1e-12);
  EXPECT_NEAR(*st[1].s_cross, 0.0, 1e-12);
  EXPECT_FALSE(cross_stats(make_block(1, {1.0}))[0].s_cross.has_value());
}

TEST(Aggregate, PairsScoreZeroAndOrdersMatter) {
  std::vector<AttentionBlockSums> recs{make_block(2, {0.7, 0.3, 0.4, 0.6})};
  EXPECT_EQ(aggregate_s_cross(recs), 0.0);
  EXPECT_THROW(aggregate_s_cross(std::vector<AttentionBlockSums>{}), ValidationError);
  EXPECT_THROW(aggregate_s_cross(std::vector<AttentionBlockSums>{make_block(1, {1.0})}), ValidationError);

  // Two records whose peaks sit on different members: averaging first flattens them.
  std::vector<AttentionBlockSums> r{make_block(3, {0.4, 0.6, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0}),
                                    make_block(3, {0.4, 0.0, 0.6, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0}, 1)};
  const double avg_first = aggregate_s_cross(r, ScoreAggregation::kAverageThenScore);
  const double score_first = aggregate_s_cross(r, ScoreAggregation::kScoreThenAverage);
  EXPECT_NEAR(avg_first, 0.0 / 3.0, 1e-12);
  EXPECT_NEAR(score_first, 0.5 / 3.0, 1e-12);
}

TEST(Aggregate, GroupLevel) {
  std::vector<AttentionBlockSums> r{make_block(3, {0.2, 0.8, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0})};
  // P_mean averaged = (0.4 + 0 + 0)/3, P_max averaged = 0.8/3 → S = 0.5.
  EXPECT_NEAR(aggregate_s_cross(r, ScoreAggregation::kAverageThenScore, ScoreLevel::kGroup), 0.5, 1e-12);
  EXPECT_NEAR(aggregate_s_cross(r, ScoreAggregation::kAverageThenScore, ScoreLevel::kImage), 0.5 / 3.0, 1e-12);
}

TEST(Profiles, StepAndLayerAverages) {
  std::vector<AttentionBlockSums> r{make_block(2, {0.6, 0.4, 0.2, 0.8}, 0, 0),
                                    make_block(2, {1.0, 0.0, 0.0, 1.0}, 0, 1),
                                    make_block(2, {1.0, 0.0, 0.0, 1.0}, 1, 0)};
  const auto sp = step_profile(r);
  EXPECT_EQ(sp.steps, (std::vector<std::size_t>{0, 1}));
  EXPECT_NEAR(sp.p_cross_mean[0], 0.15, 1e-12);
  EXPECT_NEAR(sp.p_cross_max[0], 0.15, 1e-12);
  EXPECT_EQ(sp.p_cross_mean[1], 0.0);
  const auto lp = layer_profile(r);
  EXPECT_EQ(lp.layers, (std::vector<std::size_t>{0, 1}));
  EXPECT_NEAR(lp.p_cross_mean[0], 0.15, 1e-12);
  EXPECT_EQ(lp.p_cross_mean[1], 0.0);
}

TEST(Correlation, HandOracle) {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 1, 4, 3, 5};
  // cov = 8/4, var = 10/4 each → r = 0.8; ranks equal the values → same for Spearman.
  EXPECT_NEAR(pearson(x, y), 0.8, 1e-12);
  EXPECT_NEAR(spearman(x, y), 0.8, 1e-12);
  const std::vector<double> z{1, 4, 9, 16, 25};
  EXPECT_NEAR(spearman(x, z), 1.0, 1e-12);
  EXPECT_LT(pearson(x, z), 1.0);
  const std::vector<double> ties{1, 1, 2, 2, 3};
  EXPECT_NEAR(spearman(ties, ties), 1.0, 1e-12);
}

TEST(Correlation, FidCorrelationSign) {
  std::vector<std::pair<double, double>> up{{0.1, 1.0}, {0.2, 2.0}, {0.3, 3.0}};
  std::vector<std::pair<double, double>> down{{0.1, 3.0}, {0.2, 2.0}, {0.3, 1.0}};
  EXPECT_NEAR(fid_correlation(up), 1.0, 1e-12);
  EXPECT_NEAR(fid_correlation(down), -1.0, 1e-12);
  EXPECT_THROW(fid_correlation(std::vector<std::pair<double, double>>{{0.1, 1.0}, {0.2, 2.0}}), ValidationError);
  EXPECT_THROW(fid_correlation(std::vector<std::pair<double, double>>{{0.1, 1.0}, {0.1, 2.0}, {0.1, 3.0}}),
               NumericError);
}

TEST(CrossCondition, BaselineMembersAreIsolated) {
  const Denoiser d(tiny_model(2), 21, Denoiser::Init::kRandom);
  SamplerPlan p;
  p.mode = SamplerMode::kBaseline;
  p.steps = 4;
  p.group_size = 3;
  p.class_label = 0;
  p.seed = 2;
  const auto res = cross_condition_probe(p, 2, d, NoiseSchedule::scaled_linear(50));
  ASSERT_EQ(res.anchor_delta.size(), 3u);
  EXPECT_GT(res.anchor_delta[0], 0.0);
  EXPECT_EQ(res.anchor_delta[1], 0.0);
  EXPECT_EQ(res.anchor_delta[2], 0.0);
}

TEST(CrossCondition, GroupedMembersInfluenceAnchor) {
  const Denoiser d(tiny_model(2), 22, Denoiser::Init::kRandom);
  SamplerPlan p;
  p.mode = SamplerMode::kGroupDiffF;
  p.steps = 4;
  p.group_size = 3;
  p.class_label = 0;
  p.seed = 2;
  const auto res = cross_condition_probe(p, 2, d, NoiseSchedule::scaled_linear(50));
  EXPECT_GT(res.anchor_delta[1], 0.0);
  EXPECT_GT(res.anchor_delta[2], 0.0);
  ASSERT_EQ(res.ranking.size(), 2u);
  EXPECT_GE(res.attention_from_anchor[res.ranking[0]], res.attention_from_anchor[res.ranking[1]]);
}
