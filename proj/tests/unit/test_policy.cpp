#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "duppo/env.hpp"
#include "duppo/error.hpp"
#include "duppo/policy.hpp"
#include "test_support.hpp"

using namespace duppo;
using namespace duppo::testing;

namespace {

const PolicyDims kSmall{19, 4, 4, 8};

PolicyParameters zero_params(PolicyDims dims = {}) { return PolicyParameters(dims); }

TokenSequence random_context(RngStream& rng, std::size_t max_len = 12) {
  TokenSequence c(1 + rng.below(max_len));
  for (auto& id : c) id = static_cast<TokenId>(rng.below(18));
  return c;
}

double sum_exp(const std::vector<double>& lp) {
  double s = 0.0;
  for (double x : lp) s += std::exp(x);
  return s;
}

}  // namespace

TEST(Logits, ZeroParamsGiveUniform) {
  const auto p = zero_params();
  const auto z = logits(p, ids("3 + 4 ="));
  for (double x : z) EXPECT_EQ(x, 0.0);
  const auto lp = log_distribution(p, ids("3 + 4 ="), PolicyMode::Normal, think());
  for (double x : lp) EXPECT_DOUBLE_EQ(x, std::log(1.0 / 19.0));
}

TEST(Logits, DeterministicAndWindowed) {
  const auto p = init_parameters({}, 5);
  const auto ctx = ids("1 + 2 + 3 + 4 = W H 5 B");
  EXPECT_EQ(logits(p, ctx), logits(p, ctx));
  const TokenSequence suffix(ctx.end() - 8, ctx.end());
  EXPECT_EQ(logits(p, ctx), logits(p, suffix));
  const TokenSequence other_prefix = [&] {
    auto c = ctx;
    c[0] = 9;
    c[1] = 9;
    return c;
  }();
  EXPECT_EQ(logits(p, ctx), logits(p, other_prefix));
}

TEST(Logits, ShortContextsArePadded) {
  const auto w = context_window(ids("3 ="), 4);
  EXPECT_EQ(w, (std::vector<TokenId>{tok::kPad, tok::kPad, 3, tok::kEquals}));
  const auto p = init_parameters({}, 6);
  TokenSequence padded = {tok::kPad, tok::kPad, tok::kPad, tok::kPad, tok::kPad, tok::kPad, 3, tok::kEquals};
  EXPECT_EQ(logits(p, ids("3 =")), logits(p, padded));
}

TEST(LogDistribution, RectifiedZeroParams) {
  const auto p = zero_params();
  const auto lp = log_distribution(p, ids("3 + 4 ="), PolicyMode::Rectified, think());
  for (TokenId v = 0; v < 19; ++v) {
    if (think().contains(v)) {
      EXPECT_EQ(lp[v], -std::numeric_limits<double>::infinity());
    } else {
      EXPECT_DOUBLE_EQ(lp[v], std::log(1.0 / 16.0));
    }
  }
}

TEST(LogDistribution, NormalizationMaskExactnessAndShift) {
  RngStream rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = init_parameters({}, 100 + trial, 0.3 + 0.01 * trial);
    const auto ctx = random_context(rng);
    const auto n = log_distribution(p, ctx, PolicyMode::Normal, think());
    const auto r = log_distribution(p, ctx, PolicyMode::Rectified, think());
    EXPECT_NEAR(sum_exp(n), 1.0, 1e-12);
    EXPECT_NEAR(sum_exp(r), 1.0, 1e-12);
    double shift = std::numeric_limits<double>::quiet_NaN();
    for (TokenId v = 0; v < 19; ++v) {
      if (think().contains(v)) {
        EXPECT_EQ(std::exp(r[v]), 0.0);
        continue;
      }
      if (std::isnan(shift)) shift = r[v] - n[v];
      EXPECT_NEAR(r[v] - n[v], shift, 1e-12);
    }
  }
}

TEST(LogSoftmax, StableAtExtremeScale) {
  std::vector<double> z = {1e300, 0.0, -1e300};
  const auto lp = log_softmax(z, 1.0);
  EXPECT_EQ(lp[0], 0.0);
  EXPECT_TRUE(std::isinf(lp[2]) || lp[2] < -1e299);
  std::vector<double> big(19, 800.0);
  const auto lb = log_softmax(big, 1.0);
  for (double x : lb) EXPECT_NEAR(x, std::log(1.0 / 19.0), 1e-12);
}

TEST(LogSoftmax, AllMaskedIsDegenerate) {
  std::vector<double> z(19, -std::numeric_limits<double>::infinity());
  z[tok::kWait] = 0.0;
  EXPECT_THROW(log_softmax(z, 1.0, &think()), DegenerateDistributionError);
}

TEST(SampleToken, RectifiedNeverThinks) {
  const auto p = init_parameters({}, 8, 1.0);
  RngStream rng(1);
  const auto ctx = ids("3 + 4 = W");
  int thinking = 0;
  for (int i = 0; i < 10000; ++i) thinking += think().contains(sample_token(p, ctx, PolicyMode::Rectified, think(), rng));
  EXPECT_EQ(thinking, 0);
}

TEST(SampleToken, FixedSeedFixedSequence) {
  const auto p = init_parameters({}, 8, 1.0);
  const auto ctx = ids("3 + 4 =");
  RngStream a(77), b(77);
  for (int i = 0; i < 200; ++i) {
    EXPECT_EQ(sample_token(p, ctx, PolicyMode::Normal, think(), a),
              sample_token(p, ctx, PolicyMode::Normal, think(), b));
  }
}

TEST(SampleToken, ConsumesOneUniformAndGreedyConsumesNone) {
  const auto p = init_parameters({}, 8, 1.0);
  const auto ctx = ids("3 + 4 =");
  RngStream r(5), ref(5);
  sample_token(p, ctx, PolicyMode::Normal, think(), r);
  ref();
  EXPECT_EQ(r.state(), ref.state());
  const auto before = r.state();
  const auto g = sample_token(p, ctx, PolicyMode::Normal, think(), r, 0.0);
  EXPECT_EQ(r.state(), before);
  EXPECT_EQ(g, argmax(logits(p, ctx)));
}

TEST(SampleToken, EmpiricalMatchesModelOnWarmupModel) {
  RngStream corpus_rng(3);
  const auto corpus = generate_warmup_corpus(corpus_rng, 800, 0.9);
  WarmupOptions opt;
  opt.epochs = 6;
  const auto trained = warmup_train(init_parameters({}, 4), corpus, opt).params;

  RngStream rng(12);
  for (const char* text : {"3 + 4 =", "3 + 4 = W", "5 + 9 = W H"}) {
    const auto ctx = ids(text);
    const auto lp = log_distribution(trained, ctx, PolicyMode::Normal, think());
    double mass = 0.0;
    for (TokenId id : think().ids()) mass += std::exp(lp[id]);
    const int n = 20000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += think().contains(sample_token(trained, ctx, PolicyMode::Normal, think(), rng));
    const double sigma = std::sqrt(n * mass * (1.0 - mass));
    EXPECT_NEAR(hits, n * mass, 3.0 * sigma + 1.0) << text;
  }
}

TEST(LogProbAndGrad, ZeroParamsClosedForm) {
  const auto p = zero_params();
  const TokenId token = 7;
  const auto r = log_prob_and_grad(p, ids("3 + 4 ="), token);
  EXPECT_DOUBLE_EQ(r.log_prob, std::log(1.0 / 19.0));
  for (TokenId v = 0; v < 19; ++v) {
    EXPECT_NEAR(r.grad.output_bias[v], (v == token ? 1.0 : 0.0) - 1.0 / 19.0, 1e-15);
  }
}

TEST(LogProbAndGrad, MatchesFiniteDifferences) {
  RngStream rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    const auto p = init_parameters(kSmall, 200 + trial, 0.5);
    const auto ctx = random_context(rng);
    const auto token = static_cast<TokenId>(rng.below(19));
    const auto analytic = log_prob_and_grad(p, ctx, token).grad;
    const auto numeric = finite_difference(p, [&](const PolicyParameters& q) {
      return log_softmax(logits(q, ctx), 1.0)[token];
    });
    worst = std::max(worst, max_relative_error(analytic, numeric));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(LogProbAndGrad, TemperatureScalesGradient) {
  const auto p = init_parameters(kSmall, 9, 0.5);
  const auto ctx = ids("2 + 2 = W");
  const auto analytic = log_prob_and_grad(p, ctx, tok::kHowever, 0.6).grad;
  const auto numeric = finite_difference(p, [&](const PolicyParameters& q) {
    return log_softmax(logits(q, ctx), 0.6)[tok::kHowever];
  });
  EXPECT_LT(max_relative_error(analytic, numeric), 1e-5);
}

TEST(LogProbAndGrad, ScoreIdentityExactSummation) {
  RngStream rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = init_parameters({}, 300 + trial, 0.7);
    const auto ctx = random_context(rng);
    const auto lp = log_softmax(logits(p, ctx), 1.0);
    ParameterGradient expected(p.dims);
    for (TokenId t = 0; t < 19; ++t) {
      const auto g = log_prob_and_grad(p, ctx, t).grad;
      const double w = std::exp(lp[t]);
      for (std::size_t i = 0; i < g.size(); ++i) expected[i] += w * g[i];
    }
    for (std::size_t i = 0; i < expected.size(); ++i) ASSERT_NEAR(expected[i], 0.0, 1e-10) << i;
  }
}

TEST(PolicyParameters, InitIsSeededAndFinite) {
  const auto a = init_parameters({}, 1);
  EXPECT_EQ(a, init_parameters({}, 1));
  EXPECT_FALSE(a == init_parameters({}, 2));
  EXPECT_TRUE(a.all_finite());
  EXPECT_TRUE(a.shapes_consistent());
  for (double b : a.hidden_bias) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(a.size(), 19u * 8 + 64u * 32 + 32 + 32u * 19 + 19);
}

TEST(Checkpoint, RoundTripBitExact) {
  const auto p = init_parameters(kSmall, 14);
  std::stringstream ss;
  write_policy(ss, p);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 5), "DUPPO");
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 0);
  EXPECT_EQ(bytes.size(), 5 + 2 + 16 + 8 * p.size());
  const auto q = read_policy(ss);
  EXPECT_EQ(q, p);
  EXPECT_EQ(q.dims, kSmall);
}

TEST(Checkpoint, LittleEndianFloatLayout) {
  PolicyParameters p(kSmall);
  p.embedding[0] = 1.0;
  std::stringstream ss;
  write_policy(ss, p);
  const std::string bytes = ss.str();
  // 1.0 = 0x3FF0000000000000, least significant byte first.
  const unsigned char expected[8] = {0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
  for (int i = 0; i < 8; ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[23 + i]), expected[i]);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("NOTAPOLICY");
  EXPECT_THROW(read_policy(bad), IoError);
  const auto p = init_parameters(kSmall, 1);
  std::stringstream ss;
  write_policy(ss, p);
  std::string truncated = ss.str().substr(0, 40);
  std::stringstream tr(truncated);
  EXPECT_THROW(read_policy(tr), IoError);
  std::string wrong_version = ss.str();
  wrong_version[5] = 9;
  std::stringstream wv(wrong_version);
  EXPECT_THROW(read_policy(wv), IoError);
}

TEST(Checkpoint, FileErrorsNameThePath) {
  try {
    load_policy("/nonexistent/dir/policy.ckpt");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/policy.ckpt"), std::string::npos);
  }
}
