#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dcag/guidance.hpp"
#include "dcag/guidance_config.hpp"
#include "dcag/random.hpp"
#include "oracles.hpp"

namespace dcag {
namespace {

// Tokens [1,0] and [0,1] with one head of width 2.
Tensor two_token_block() { return Tensor({2, 1, 2}, {1.0, 0.0, 0.0, 1.0}); }

JointQKV random_qkv(Rng& rng, std::size_t txt, std::size_t img, std::size_t heads, std::size_t dh) {
  const std::size_t s = txt + img;
  return JointQKV{random_normal({s, heads, dh}, rng), random_normal({s, heads, dh}, rng),
                  random_normal({s, heads, dh}, rng), txt, s};
}

TEST(DecomposeTest, IdenticalTokensHaveZeroDelta) {
  Tensor block({5, 2, 2});
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t c = 0; c < 4; ++c) block[t * 4 + c] = 0.25 * static_cast<double>(c) - 0.3;
  }
  const BiasDelta bd = decompose(block);
  EXPECT_EQ(bd.delta, Tensor({5, 2, 2}));
  EXPECT_EQ(bd.bias, block.slice_rows(0, 1));
}

TEST(DecomposeTest, TwoTokenHandComputation) {
  const BiasDelta bd = decompose(two_token_block());
  EXPECT_EQ(bd.bias, Tensor({1, 1, 2}, {0.5, 0.5}));
  EXPECT_EQ(bd.delta, Tensor({2, 1, 2}, {0.5, -0.5, -0.5, 0.5}));
}

TEST(DecomposeTest, EmptyBlockIsDomainError) { EXPECT_THROW(decompose(Tensor({0, 1, 2})), DomainError); }

TEST(DecomposeTest, ReconstructionIsBitwiseAndDeltaHasZeroMean) {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t s = 1 + rng.next_u64() % 40, h = 1 + rng.next_u64() % 4, dh = 2 * (1 + rng.next_u64() % 8);
    // Mix of magnitudes so bias and tokens differ by many orders.
    const Tensor block = random_normal({s, h, dh}, rng, std::pow(10.0, rng.uniform(-6, 6)));
    const BiasDelta bd = decompose(block);
    EXPECT_TRUE(bitwise_equal(reconstruct(bd), block));
    for (std::size_t c = 0; c < h * dh; ++c) {
      double mean = 0.0;
      for (std::size_t t = 0; t < s; ++t) mean += bd.delta[t * h * dh + c];
      mean /= static_cast<double>(s);
      EXPECT_LE(std::abs(mean), 1e-12 * std::max(1.0, max_abs(block)));
    }
  }
}

TEST(RescaleTest, Examples) {
  const BiasDelta bd = decompose(two_token_block());
  EXPECT_TRUE(bitwise_equal(rescale(bd, 1.0, 1.0), two_token_block()));
  EXPECT_EQ(rescale(bd, 1.0, 0.0), Tensor({2, 1, 2}, {0.5, 0.5, 0.5, 0.5}));
  EXPECT_EQ(rescale(bd, 1.0, 2.0), Tensor({2, 1, 2}, {1.5, -0.5, -0.5, 1.5}));
  EXPECT_EQ(rescale(bd, 2.0, 1.0), Tensor({2, 1, 2}, {1.5, 0.5, 0.5, 1.5}));
}

TEST(GuidanceConfigTest, ValidationAndDefaults) {
  EXPECT_TRUE(GuidanceConfig::identity().is_identity());
  EXPECT_DOUBLE_EQ(GuidanceConfig::recommended().delta_k, 1.10);
  EXPECT_DOUBLE_EQ(GuidanceConfig::recommended().delta_v, 1.15);
  EXPECT_THROW(GuidanceConfig::with_scales(0.0, 1.0).validate(), ConfigError);
  EXPECT_THROW(GuidanceConfig::with_scales(1.0, -2.0).validate(), ConfigError);
  EXPECT_THROW(GuidanceConfig::with_scales(1.0, INFINITY).validate(), ConfigError);
  GuidanceConfig cfg;
  cfg.token_range = TokenRange{4, 4};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.guided_layers = {1, 3};
  EXPECT_TRUE(cfg.guides_layer(3));
  EXPECT_FALSE(cfg.guides_layer(2));
  EXPECT_TRUE(GuidanceConfig::identity().guides_layer(99));
}

TEST(ApplyDcagTest, IdentityConfigIsBitwiseNoOp) {
  Rng rng(30);
  for (int trial = 0; trial < 50; ++trial) {
    const JointQKV qkv = random_qkv(rng, 3, 10, 2, 4);
    const JointQKV out = apply_dcag(qkv, GuidanceConfig::identity());
    EXPECT_TRUE(bitwise_equal(out.q, qkv.q));
    EXPECT_TRUE(bitwise_equal(out.k, qkv.k));
    EXPECT_TRUE(bitwise_equal(out.v, qkv.v));
  }
}

TEST(ApplyDcagTest, KeyOnlyLeavesValuesAndTextRowsUntouched) {
  Rng rng(31);
  const JointQKV qkv = random_qkv(rng, 4, 9, 2, 4);
  const JointQKV out = apply_dcag(qkv, GuidanceConfig::with_scales(1.1, 1.0));
  EXPECT_TRUE(bitwise_equal(out.v, qkv.v));
  EXPECT_TRUE(bitwise_equal(out.q, qkv.q));
  EXPECT_TRUE(bitwise_equal(out.k.slice_rows(0, 4), qkv.k.slice_rows(0, 4)));
  EXPECT_FALSE(bitwise_equal(out.k, qkv.k));
}

TEST(ApplyDcagTest, RangeMismatchIsConfigError) {
  Rng rng(32);
  const JointQKV qkv = random_qkv(rng, 4, 9, 1, 2);
  GuidanceConfig cfg;
  cfg.token_range = TokenRange{3, 13};
  EXPECT_THROW(apply_dcag(qkv, cfg), ConfigError);
  cfg.token_range = TokenRange{4, 13};
  EXPECT_NO_THROW(apply_dcag(qkv, cfg));
}

TEST(ApplyDcagTest, SingleImageTokenMakesScalesNoOps) {
  Rng rng(33);
  const JointQKV qkv = random_qkv(rng, 3, 1, 2, 4);
  const JointQKV out = apply_dcag(qkv, GuidanceConfig::with_scales(1.7, 2.5));
  EXPECT_TRUE(bitwise_equal(out.k, qkv.k));
  EXPECT_TRUE(bitwise_equal(out.v, qkv.v));
}

TEST(ApplyDcagTest, TwoTokenValueChannelClosedForm) {
  // Image-only two-token sequence, one head, d_h = 2.
  const Tensor q({2, 1, 2}, {0.3, -1.2, 0.8, 0.5});
  const Tensor k({2, 1, 2}, {1.0, 0.4, -0.6, 0.9});
  const Tensor v({2, 1, 2}, {2.0, -1.0, 0.5, 3.0});
  const JointQKV qkv{q, k, v, 0, 2};
  const Tensor out = attention_output(apply_dcag(qkv, GuidanceConfig::with_scales(1.0, 2.0)));

  const double vbar[2] = {(2.0 + 0.5) / 2, (-1.0 + 3.0) / 2};
  for (std::size_t i = 0; i < 2; ++i) {
    const double l0 = (q(i, 0, 0) * k(0, 0, 0) + q(i, 0, 1) * k(0, 0, 1)) / std::sqrt(2.0);
    const double l1 = (q(i, 0, 0) * k(1, 0, 0) + q(i, 0, 1) * k(1, 0, 1)) / std::sqrt(2.0);
    const double a0 = 1.0 / (1.0 + std::exp(l1 - l0)), a1 = 1.0 - a0;
    for (std::size_t c = 0; c < 2; ++c) {
      const double expected = a0 * (vbar[c] + 2.0 * (v(0, 0, c) - vbar[c])) + a1 * (vbar[c] + 2.0 * (v(1, 0, c) - vbar[c]));
      EXPECT_NEAR(out(i, c), expected, 1e-14);
    }
  }
}

TEST(GuidedAttentionTest, IdentityEqualsUnguidedBitwise) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const StreamBatch x = StreamBatch::random(4, 16, 32, rng);
    const LayerWeights w = LayerWeights::random(32, 4, rng);
    const StreamBatch a = guided_attention(x, w, GuidanceConfig::identity());
    const StreamBatch b = unguided_attention(x, w);
    EXPECT_TRUE(bitwise_equal(a.txt, b.txt));
    EXPECT_TRUE(bitwise_equal(a.img, b.img));
  }
}

TEST(GuidedAttentionTest, ValueOnlyKeepsAttentionWeights) {
  Rng rng(40);
  const StreamBatch x = StreamBatch::random(4, 16, 32, rng);
  const LayerWeights w = LayerWeights::random(32, 4, rng);
  const JointQKV base = project_qkv(x, w);
  const Tensor a0 = attention_weights(base);
  for (double dv : {0.5, 1.15, 2.0}) {
    const Tensor a1 = attention_weights(apply_dcag(base, GuidanceConfig::with_scales(1.0, dv)));
    EXPECT_LE(max_abs_diff(a0, a1), 1e-12);
  }
}

TEST(GuidedAttentionTest, KeyOnlyMatchesIndependentImplementation) {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const StreamBatch x = StreamBatch::random(5, 12, 32, rng);
    const LayerWeights w = LayerWeights::random(32, 4, rng);
    const StreamBatch out = guided_attention(x, w, GuidanceConfig::with_scales(1.1, 1.0));
    const Tensor ref = oracle::key_only_layer(x, w, 1.1);
    EXPECT_LE(max_abs_diff(out.txt, ref.slice_rows(0, 5)), 1e-12);
    EXPECT_LE(max_abs_diff(out.img, ref.slice_rows(5, 17)), 1e-12);
  }
}

TEST(GuidanceInvariantTest, LogitDifferencesScaleWithDeltaK) {
  Rng rng(50);
  for (int trial = 0; trial < 20; ++trial) {
    const JointQKV qkv = random_qkv(rng, 6, 18, 2, 8);
    const double dk = rng.uniform(0.5, 2.0);
    const Tensor pre = attention_logits(qkv.q, qkv.k);
    const Tensor post = attention_logits(qkv.q, apply_dcag(qkv, GuidanceConfig::with_scales(dk, 1.0)).k);
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t i = 0; i < 24; ++i) {
        for (std::size_t a = 6; a < 24; ++a) {
          for (std::size_t b = a + 1; b < 24; ++b) {
            const double want = dk * (pre(h, i, a) - pre(h, i, b));
            const double got = post(h, i, a) - post(h, i, b);
            EXPECT_NEAR(got, want, 1e-10 * std::max(1.0, std::abs(want)));
          }
        }
      }
    }
  }
}

TEST(GuidanceInvariantTest, BiasScaleCancelsInImageOnlyAttention) {
  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    const JointQKV qkv = random_qkv(rng, 0, 16, 2, 8);
    GuidanceConfig cfg = GuidanceConfig::with_scales(1.3, 1.0);
    const Tensor w1 = attention_weights(apply_dcag(qkv, cfg));
    cfg.lambda_k = rng.uniform(0.2, 3.0);
    const Tensor w2 = attention_weights(apply_dcag(qkv, cfg));
    EXPECT_LE(max_abs_diff(w1, w2), 1e-12);
  }
}

TEST(GuidanceInvariantTest, BiasScaleShiftsTextImageBalanceInJointAttention) {
  // Text-token logits carry no image bias term, so lambda_k is observable here.
  Rng rng(52);
  const JointQKV qkv = random_qkv(rng, 6, 16, 2, 8);
  GuidanceConfig cfg;
  const Tensor w1 = attention_weights(apply_dcag(qkv, cfg));
  cfg.lambda_k = 2.0;
  const Tensor w2 = attention_weights(apply_dcag(qkv, cfg));
  EXPECT_GT(max_abs_diff(w1, w2), 1e-6);
}

TEST(GuidanceInvariantTest, OutputIsAffineInDeltaV) {
  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    const JointQKV qkv = random_qkv(rng, 4, 20, 4, 8);
    const auto output_at = [&](double dv) {
      JointQKV g = qkv;
      rescale_token_range(g.v, {g.image_begin, g.image_end}, 1.0, dv);
      return attention_output(g);
    };
    const Tensor o0 = output_at(0.0), o1 = output_at(1.0);
    const double scale = std::max(1.0, max_abs(o1));
    for (double dv : {0.5, 1.5, 2.0, 3.0}) {
      EXPECT_LE(max_abs_diff(output_at(dv), axpby(1.0, o0, dv, subtract(o1, o0))), 1e-10 * scale);
    }
  }
}

TEST(GuidanceInvariantTest, ChannelsAreOrthogonal) {
  Rng rng(54);
  const JointQKV qkv = random_qkv(rng, 5, 14, 2, 8);
  const Tensor w = attention_weights(apply_dcag(qkv, GuidanceConfig::with_scales(1.2, 1.0)));
  for (double dv : {0.7, 1.15, 3.0}) {
    EXPECT_TRUE(bitwise_equal(w, attention_weights(apply_dcag(qkv, GuidanceConfig::with_scales(1.2, dv)))));
  }
  for (double dk : {0.7, 1.05, 1.2}) {
    EXPECT_TRUE(bitwise_equal(qkv.v, apply_dcag(qkv, GuidanceConfig::with_scales(dk, 1.0)).v));
  }
}

TEST(GuidanceConfigTextTest, RoundTripsThroughText) {
  Rng rng(60);
  for (int trial = 0; trial < 50; ++trial) {
    GuidanceConfig cfg = GuidanceConfig::with_scales(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0));
    cfg.lambda_k = rng.uniform(0.5, 2.0);
    cfg.lambda_v = rng.uniform(0.5, 2.0);
    if (trial % 2) cfg.token_range = TokenRange{trial + 0u, trial + 10u};
    if (trial % 3) cfg.guided_layers = {0u, static_cast<std::size_t>(trial), 57u};
    EXPECT_EQ(parse_guidance_config(to_text(cfg)), cfg);
  }
}

TEST(GuidanceConfigTextTest, ParsesCommentsAndDefaults) {
  const GuidanceConfig cfg = parse_guidance_config(
      "# recommended\n"
      "delta_k = 1.10\n"
      "  delta_v=1.15   # value channel\n"
      "\n"
      "token_range = 8 : 72\n"
      "guided_layers = 0, 2,5\n");
  EXPECT_DOUBLE_EQ(cfg.delta_k, 1.10);
  EXPECT_DOUBLE_EQ(cfg.delta_v, 1.15);
  EXPECT_EQ(cfg.lambda_k, 1.0);
  EXPECT_EQ(cfg.token_range, (TokenRange{8, 72}));
  EXPECT_EQ(cfg.guided_layers, (std::set<std::size_t>{0, 2, 5}));
  EXPECT_TRUE(parse_guidance_config("").is_identity());
}

TEST(GuidanceConfigTextTest, RejectsMalformedInput) {
  EXPECT_THROW(parse_guidance_config("delta_k 1.1\n"), ConfigError);
  EXPECT_THROW(parse_guidance_config("delta_k = abc\n"), ConfigError);
  EXPECT_THROW(parse_guidance_config("delta_k = 1.1\ndelta_k = 1.2\n"), ConfigError);
  EXPECT_THROW(parse_guidance_config("delta_q = 1.1\n"), ConfigError);
  EXPECT_THROW(parse_guidance_config("delta_v = 0\n"), ConfigError);
  EXPECT_THROW(parse_guidance_config("token_range = 5\n"), ConfigError);
  EXPECT_THROW(parse_guidance_config("guided_layers = 1,,2\n"), ConfigError);
}

TEST(GuidanceConfigTextTest, MissingFileNamesPath) {
  const auto path = std::filesystem::temp_directory_path() / "dcag_no_such_config.cfg";
  try {
    load_guidance_config(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
  }
}

}  // namespace
}  // namespace dcag
