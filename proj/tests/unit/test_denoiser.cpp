#include <gtest/gtest.h>

#include <numeric>

#include "attention_oracle.hpp"
#include "groupdiff/diffusion.hpp"
#include "groupdiff/denoiser.hpp"
#include "groupdiff/error.hpp"
#include "groupdiff/grad_check.hpp"
#include "groupdiff/tolerances.hpp"
#include "test_support.hpp"

using namespace groupdiff;
using groupdiff::testing::brute_group_attention;
using groupdiff::testing::tiny_model;

namespace {

Tensor rows_of(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t per = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = rows.size();
  Tensor out(s);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(t.data() + rows[i] * per, t.data() + (rows[i] + 1) * per, out.data() + i * per);
  }
  return out;
}

}  // namespace

TEST(Patchify, SinglePatchIsFlattenedImage) {
  Rng rng(1);
  const Tensor img = randn({1, 4, 4, 3}, rng);
  const Tensor p = patchify(img, 4);
  ASSERT_EQ(p.shape(), (Shape{1, 1, 48}));
  EXPECT_EQ(p.storage(), img.storage());
}

TEST(Patchify, RasterOrderPatches) {
  Tensor img(Shape{1, 4, 4, 1});
  std::iota(img.values().begin(), img.values().end(), 0.0);
  const Tensor p = patchify(img, 2);
  ASSERT_EQ(p.shape(), (Shape{1, 4, 4}));
  // Patch (0,1) covers pixels (0,2) (0,3) (1,2) (1,3).
  EXPECT_EQ(std::vector<double>(p.data() + 4, p.data() + 8), (std::vector<double>{2, 3, 6, 7}));
  EXPECT_EQ(std::vector<double>(p.data() + 8, p.data() + 12), (std::vector<double>{8, 9, 12, 13}));
}

TEST(Patchify, RoundTripIsBitwiseAndDivisibilityChecked) {
  Rng rng(2);
  const Tensor img = randn({3, 8, 8, 3}, rng);
  EXPECT_TRUE(bitwise_equal(unpatchify(patchify(img, 4), 4, 8, 3), img));
  EXPECT_TRUE(bitwise_equal(unpatchify(patchify(img, 2), 2, 8, 3), img));
  EXPECT_THROW(patchify(img, 3), DimensionError);
}

TEST(SampleEmbedding, ZeroTableIsIdentity) {
  Rng rng(3);
  const Tensor h = randn({2, 3, 4}, rng);
  EXPECT_TRUE(bitwise_equal(add_sample_embedding(h, Tensor(Shape{4, 4})), h));
}

TEST(SampleEmbedding, SingleMemberUsesSlotZero) {
  Rng rng(4);
  const Tensor h = randn({1, 3, 2}, rng), table{{2, 2}, {0.5, -1.0, 9.0, 9.0}};
  const Tensor out = add_sample_embedding(h, table);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(out.at({0, l, 0}), h.at({0, l, 0}) + 0.5);
    EXPECT_EQ(out.at({0, l, 1}), h.at({0, l, 1}) - 1.0);
  }
}

TEST(SampleEmbedding, TwoMembersDirectConstruction) {
  const Tensor out = add_sample_embedding(Tensor(Shape{2, 3, 1}), Tensor{{2, 1}, {1.0, 2.0}});
  EXPECT_EQ(out, (Tensor{{2, 3, 1}, {1, 1, 1, 2, 2, 2}}));
}

TEST(SampleEmbedding, TooManyMembers) {
  EXPECT_THROW(add_sample_embedding(Tensor(Shape{3, 1, 1}), Tensor(Shape{2, 1})), DimensionError);
}

TEST(GroupAttention, SingleMemberOnEqualsOff) {
  Rng rng(5);
  const Tensor q = randn({3, 4, 6}, rng), k = randn({3, 4, 6}, rng), v = randn({3, 4, 6}, rng);
  const Tensor on = group_attention(q, k, v, {2, 1, true}), off = group_attention(q, k, v, {2, 1, false});
  EXPECT_LE(max_abs_diff(on, off), 1e-9);
}

TEST(GroupAttention, OffMatchesPerImageAttentionBitwise) {
  Rng rng(6);
  const Tensor q = randn({4, 5, 3}, rng), k = randn({4, 5, 3}, rng), v = randn({4, 5, 3}, rng);
  const Tensor out = group_attention(q, k, v, {1, 2, false});
  for (std::size_t b = 0; b < 4; ++b) {
    const std::size_t row[] = {b};
    const auto slice = [&](const Tensor& t) { return rows_of(t, row).reshaped({5, 3}); };
    const Tensor ref = scaled_dot_attention(slice(q), slice(k), slice(v));
    EXPECT_TRUE(bitwise_equal(rows_of(out, row).reshaped({5, 3}), ref));
  }
}

TEST(GroupAttention, CraftedTwoByTwoOracle) {
  // N=2, L=2, C=1: four tokens with scores q_i·k_j.
  const Tensor q{{2, 2, 1}, {1.0, 0.0, -1.0, 2.0}};
  const Tensor k{{2, 2, 1}, {0.5, 1.0, -0.5, 0.0}};
  const Tensor v{{2, 2, 1}, {1.0, 2.0, 3.0, 4.0}};
  const Tensor out = group_attention(q, k, v, {1, 2, true});
  const double kv[4] = {0.5, 1.0, -0.5, 0.0}, vv[4] = {1, 2, 3, 4}, qv[4] = {1.0, 0.0, -1.0, 2.0};
  for (int i = 0; i < 4; ++i) {
    double z = 0, acc = 0;
    for (int j = 0; j < 4; ++j) {
      const double w = std::exp(qv[i] * kv[j]);
      z += w;
      acc += w * vv[j];
    }
    EXPECT_NEAR(out[static_cast<std::size_t>(i)], acc / z, 1e-12);
  }
}

TEST(GroupAttention, RandomInstancesMatchBruteForce) {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(uniform_int(rng, 0, 2));
    const std::size_t l = 1 + static_cast<std::size_t>(uniform_int(rng, 0, 3));
    const std::size_t heads = 1 + static_cast<std::size_t>(uniform_int(rng, 0, 1));
    const std::size_t c = heads * (1 + static_cast<std::size_t>(uniform_int(rng, 0, 3)));
    const std::size_t groups = 1 + static_cast<std::size_t>(uniform_int(rng, 0, 1));
    const Shape s{groups * n, l, c};
    const Tensor q = randn(s, rng), k = randn(s, rng), v = randn(s, rng);
    std::vector<AttentionBlockSums> cap;
    const Tensor out = group_attention(q, k, v, {heads, n, true}, &cap);
    EXPECT_LE(max_abs_diff(out, brute_group_attention(q, k, v, heads, n)), 1e-9);
    ASSERT_EQ(cap.size(), groups);
    for (const auto& b : cap) {
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < n; ++j) row += b.at(i, j);
        EXPECT_NEAR(row, 1.0, tol::kBlockRowSum);
      }
    }
  }
}

TEST(GroupAttention, CaptureIsIdentityWhenOff) {
  Rng rng(8);
  const Tensor q = randn({3, 2, 2}, rng);
  std::vector<AttentionBlockSums> cap;
  group_attention(q, q, q, {1, 3, false}, &cap);
  ASSERT_EQ(cap.size(), 1u);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(cap[0].at(i, j), i == j ? 1.0 : 0.0);
  }
}

TEST(GroupAttention, RejectsNonFinite) {
  Tensor q(Shape{2, 2, 2}, 0.1);
  q[3] = NAN;
  EXPECT_THROW(group_attention(q, q, q, {1, 2, true}), NumericError);
}

class DenoiserTest : public ::testing::Test {
 protected:
  ModelConfig cfg = tiny_model(2, 8, 2);
  Rng rng{9};
  Tensor images(std::size_t b) { return randn({b, cfg.image_size, cfg.image_size, cfg.channels}, rng); }
};

TEST_F(DenoiserTest, ZeroHeadPredictsZero) {
  const Denoiser d(cfg, 1);
  EXPECT_TRUE(d.output_head_is_zero());
  ForwardOptions fo;
  fo.group_size = 2;
  fo.group_on = true;
  const std::vector<int> t{3, 40}, c{0, 3};
  const auto r = d.forward(images(2), t, c, fo);
  for (double v : r.eps.values()) EXPECT_EQ(v, 0.0);
}

TEST_F(DenoiserTest, SingleMemberGroupEqualsBaseline) {
  const Denoiser d(cfg, 2, Denoiser::Init::kRandom);
  const Tensor x = images(3);
  const std::vector<int> t{1, 50, 99}, c{0, 1, 2};
  ForwardOptions grouped;
  grouped.group_size = 1;
  grouped.group_on = true;
  const auto a = d.forward(x, t, c, grouped);
  const auto b = d.forward(x, t, c, ForwardOptions{});
  EXPECT_LE(max_abs_diff(a.eps, b.eps), 1e-9);
}

TEST_F(DenoiserTest, OutputShapeAndDeterminism) {
  const Denoiser d(cfg, 3, Denoiser::Init::kRandom);
  const Tensor x = images(4);
  const std::vector<int> t{1, 2, 3, 4}, c{0, 0, 1, 3};
  ForwardOptions fo;
  fo.group_size = 2;
  fo.group_on = true;
  const auto a = d.forward(x, t, c, fo), b = d.forward(x, t, c, fo);
  EXPECT_EQ(a.eps.shape(), x.shape());
  EXPECT_TRUE(bitwise_equal(a.eps, b.eps));
}

TEST_F(DenoiserTest, PermutationEquivariantWithPermutedSlots) {
  Denoiser d(cfg, 4, Denoiser::Init::kRandom);
  const Tensor x = images(3);
  const std::vector<int> t{5, 9, 70}, c{0, 1, 2};
  ForwardOptions fo;
  fo.group_size = 3;
  fo.group_on = true;
  const auto base = d.forward(x, t, c, fo);

  const std::size_t perm[] = {2, 0, 1};
  Denoiser p = d;
  Tensor& slots = p.parameter("slots");
  const Tensor orig = d.parameter("slots");
  const std::size_t width = slots.dim(1);
  for (std::size_t i = 0; i < 3; ++i) {
    std::copy(orig.data() + perm[i] * width, orig.data() + (perm[i] + 1) * width, slots.data() + i * width);
  }
  const std::vector<int> tp{t[2], t[0], t[1]}, cp{c[2], c[0], c[1]};
  const auto out = p.forward(rows_of(x, perm), tp, cp, fo);
  EXPECT_LE(max_abs_diff(out.eps, rows_of(base.eps, perm)), 1e-9);
}

TEST_F(DenoiserTest, IsolationWithGroupAttentionOff) {
  const Denoiser d(cfg, 5, Denoiser::Init::kRandom);
  Tensor x = images(3);
  const std::vector<int> t{5, 9, 70}, c{0, 1, 2};
  ForwardOptions fo;
  fo.group_size = 3;
  const auto a = d.forward(x, t, c, fo);
  const std::size_t per = x.numel() / 3;
  for (std::size_t i = per; i < x.numel(); ++i) x[i] += 0.3;
  const auto b = d.forward(x, t, c, fo);
  const std::size_t first[] = {0};
  EXPECT_TRUE(bitwise_equal(rows_of(a.eps, first), rows_of(b.eps, first)));
}

TEST_F(DenoiserTest, CapturedBlocksAreRowStochastic) {
  const Denoiser d(cfg, 6, Denoiser::Init::kRandom);
  ForwardOptions fo;
  fo.group_size = 3;
  fo.group_on = true;
  fo.capture.enabled = true;
  const std::vector<int> t(6, 10), c(6, 1);
  const auto r = d.forward(images(6), t, c, fo);
  ASSERT_EQ(r.attention.size(), cfg.depth * 2);
  for (const auto& b : r.attention) {
    for (std::size_t i = 0; i < 3; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < 3; ++j) row += b.at(i, j);
      EXPECT_NEAR(row, 1.0, tol::kBlockRowSum);
    }
  }
}

TEST_F(DenoiserTest, GroupLossGradientCheck) {
  // Depth 1, C = 8, N = 2, group loss against fixed noise.
  const ModelConfig c1 = tiny_model(1, 8, 2);
  const Denoiser d(c1, 7, Denoiser::Init::kRandom);
  const Tensor x = randn({2, c1.image_size, c1.image_size, c1.channels}, rng);
  const Tensor target = patchify(randn(x.shape(), rng), c1.patch);
  const std::vector<int> t{10, 30}, labels{1, 2};
  ForwardOptions fo;
  fo.group_size = 2;
  fo.group_on = true;
  std::vector<Tensor> params;
  for (const auto& p : d.parameters()) params.push_back(p.value);
  const double err = grad_check(
      [&](std::span<const ag::Var> p) { return ag::group_mse(d.forward_graph(p, x, t, labels, fo), target); }, params,
      {1e-4, 12});
  EXPECT_LE(err, tol::kGradCheck);
}

TEST_F(DenoiserTest, InputValidation) {
  const Denoiser d(cfg, 8);
  const std::vector<int> t{1, 2}, c{0, 1};
  ForwardOptions fo;
  fo.group_size = 2;
  EXPECT_THROW(d.forward(images(3), std::vector<int>{1, 2, 3}, std::vector<int>{0, 0, 0}, fo), DimensionError);
  fo.group_size = 8;
  EXPECT_THROW(d.forward(images(8), std::vector<int>(8, 1), std::vector<int>(8, 0), fo), DimensionError);
  fo.group_size = 1;
  EXPECT_THROW(d.forward(images(2), t, std::vector<int>{0, 9}, fo), ValidationError);
}

TEST_F(DenoiserTest, CheckpointRoundTrip) {
  const Denoiser d(cfg, 10, Denoiser::Init::kRandom);
  const auto dir = groupdiff::testing::scratch_dir("denoiser");
  d.save((dir / "m.gdf").string());
  const Denoiser back = Denoiser::load((dir / "m.gdf").string());
  EXPECT_EQ(back.config(), cfg);
  ASSERT_EQ(back.parameters().size(), d.parameters().size());
  for (std::size_t i = 0; i < d.parameters().size(); ++i) {
    EXPECT_EQ(back.parameters()[i].name, d.parameters()[i].name);
    EXPECT_TRUE(bitwise_equal(back.parameters()[i].value, d.parameters()[i].value));
  }
}

TEST(ModelConfig, ValidationAndStrictJson) {
  ModelConfig c = tiny_model();
  c.hidden = 9;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_model();
  c.patch = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_EQ(model_config_from_json(model_config_to_json(tiny_model())), tiny_model());
  EXPECT_THROW(model_config_from_json("{\"depth\": 2, \"dpth\": 3}"), ValidationError);
}
