#include <gtest/gtest.h>

#include <random>

#include "decode_oracle.hpp"
#include "test_support.hpp"

using namespace nacap;
using support::random_tensor;
using support::tiny_config;

namespace {

Tensor& P(ModelParams& p, const std::string& name) { return p.tensor(p.index(name)); }

void zero(ModelParams& p, const std::string& name) {
  auto& t = P(p, name);
  std::fill(t.values.begin(), t.values.end(), 0.0);
}

bool is_control(TokenId t) { return t == kPad || t == kBos || t == kEos; }

}  // namespace

TEST(DecodeMode, ParseAndPrint) {
  for (auto m : {DecodeMode::fnic_nondeterministic, DecodeMode::fnic_deterministic, DecodeMode::autoregressive,
                 DecodeMode::naic}) {
    EXPECT_EQ(parse_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_mode("beam"), ConfigError);
}

TEST(PredictLength, BiasPeakAndTieToShorter) {
  auto c = tiny_config();
  auto p = ModelParams::initialize(c, 1);
  zero(p, "length.weight");
  auto& b = P(p, "length.bias");
  std::fill(b.values.begin(), b.values.end(), 0.0);
  b.values[4] = 3.0;
  std::mt19937_64 rng(2);
  RegionFeatureSet r{random_tensor(rng, {3, c.d_in})};
  EXPECT_EQ(predict_length(p, r).n, 5u);
  b.values[4] = 0.0;
  b.values[2] = b.values[3] = 1.0;
  EXPECT_EQ(predict_length(p, r).n, 3u);
}

TEST(Generate, ArchitectureMismatchIsConfigError) {
  auto p = ModelParams::initialize(tiny_config(Architecture::naic), 1);
  std::mt19937_64 rng(2);
  EXPECT_THROW(generate(p, random_tensor(rng, {2, 5}), DecodeMode::fnic_deterministic), ConfigError);
}

TEST(Generate, RiggedAlignerEosAndUniformDecoder) {
  auto c = tiny_config();
  auto p = ModelParams::initialize(c, 3);
  zero(p, "aligner.out.weight");
  P(p, "aligner.out.bias").values[kEos] = 50.0;
  zero(p, "decoder.out.weight");
  zero(p, "decoder.out.bias");
  std::mt19937_64 rng(4);
  RegionFeatureSet r{random_tensor(rng, {3, c.d_in})};
  for (auto mode : {DecodeMode::fnic_deterministic, DecodeMode::fnic_nondeterministic}) {
    auto a = generate(p, r.features, mode), b = generate(p, r.features, mode);
    EXPECT_TRUE(a.coarse.empty());
    // Uniform rows tie everywhere; the lowest emittable id is EOS.
    EXPECT_TRUE(a.tokens.empty());
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.decoder_passes, 1u);
    // With EOS suppressed the tie goes to UNK at every position.
    DecodeOptions fixed;
    fixed.fixed_length = 3;
    EXPECT_EQ(generate(p, r.features, mode, fixed).tokens, (std::vector<TokenId>{kUnk, kUnk, kUnk}));
  }
}

TEST(Generate, FnicEqualsEnumeratedArgmax) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = tiny_config(Architecture::fnic, 5);
    c.n_max = 3;
    auto p = ModelParams::initialize(c, 40 + trial);
    support::scale_params(p, 1.5);
    Tensor x = random_tensor(rng, {2, c.d_in});
    for (bool nondet : {false, true}) {
            const DecodeMode mode = nondet ? DecodeMode::fnic_nondeterministic : DecodeMode::fnic_deterministic;
      auto got = generate(p, x, mode);
      auto probs = oracle::na_output_probs(p, x, mode);
      EXPECT_EQ(got.tokens, oracle::enumerate_best(probs)) << "trial " << trial;
      EXPECT_EQ(got.decoder_passes, 1u);
    }
  }
}

TEST(Generate, NaicEqualsEnumeratedArgmax) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto c = tiny_config(Architecture::naic, 5);
    c.n_max = 3;
    auto p = ModelParams::initialize(c, 70 + trial);
    support::scale_params(p, 1.5);
    Tensor x = random_tensor(rng, {2, c.d_in});
    auto got = generate(p, x, DecodeMode::naic);
    auto probs = oracle::na_output_probs(p, x, DecodeMode::naic);
    EXPECT_EQ(got.tokens, oracle::enumerate_best(probs));
    EXPECT_EQ(got.decoder_passes, 1u);
    EXPECT_EQ(got.tokens, generate(p, x, DecodeMode::naic).tokens);
  }
}

TEST(Generate, NaicRiggedUniformDecoder) {
  auto c = tiny_config(Architecture::naic);
  auto p = ModelParams::initialize(c, 3);
  zero(p, "decoder.out.weight");
  zero(p, "decoder.out.bias");
  std::mt19937_64 rng(4);
  Tensor x = random_tensor(rng, {3, c.d_in});
  EXPECT_TRUE(generate(p, x, DecodeMode::naic).tokens.empty());
  DecodeOptions fixed;
  fixed.fixed_length = 2;
  EXPECT_EQ(generate(p, x, DecodeMode::naic, fixed).tokens, (std::vector<TokenId>{kUnk, kUnk}));
}

TEST(Generate, AutoregressiveGreedyEqualsStepwiseConditionals) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    auto c = tiny_config(Architecture::at, 5);
    c.n_max = 2;
    auto p = ModelParams::initialize(c, 90 + trial);
    support::scale_params(p, 1.5);
    Tensor x = random_tensor(rng, {2, c.d_in});

    const auto expected = oracle::at_stepwise_greedy(p, x);
    auto got = generate(p, x, DecodeMode::autoregressive);
    EXPECT_EQ(got.tokens, expected) << "trial " << trial;
    const bool hit_cap = expected.size() == c.n_max;
    EXPECT_EQ(got.decoder_passes, expected.size() + (hit_cap ? 0 : 1));
  }
}

TEST(Generate, AutoregressiveImmediateEosAndPassCounts) {
  auto c = tiny_config(Architecture::at);
  auto p = ModelParams::initialize(c, 11);
  zero(p, "decoder.out.weight");
  auto& b = P(p, "decoder.out.bias");
  std::fill(b.values.begin(), b.values.end(), 0.0);
  b.values[kEos] = 50.0;
  std::mt19937_64 rng(12);
  Tensor x = random_tensor(rng, {3, c.d_in});
  auto empty = generate(p, x, DecodeMode::autoregressive);
  EXPECT_TRUE(empty.tokens.empty());
  EXPECT_EQ(empty.decoder_passes, 1u);

  auto q = ModelParams::initialize(c, 11);
  zero(q, "decoder.out.weight");
  zero(q, "decoder.out.bias");
  DecodeOptions fixed;
  fixed.fixed_length = 6;
  auto forced = generate(q, x, DecodeMode::autoregressive, fixed);
  EXPECT_EQ(forced.tokens.size(), 6u);
  EXPECT_EQ(forced.decoder_passes, 6u);

  std::mt19937_64 rng2(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto r = ModelParams::initialize(c, 200 + trial);
    support::scale_params(r, 1.5);
    auto out = generate(r, random_tensor(rng2, {3, c.d_in}), DecodeMode::autoregressive);
    if (out.tokens.size() < c.n_max) {
      EXPECT_EQ(out.decoder_passes, out.tokens.size() + 1);
    } else {
      EXPECT_EQ(out.decoder_passes, c.n_max);
    }
  }
}

TEST(Generate, OneHotQCollapsesToDeterministic) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    auto c = tiny_config();
    auto p = ModelParams::initialize(c, 300 + trial);
    support::scale_params(p, 1.3);
    Tensor x = random_tensor(rng, {3, c.d_in});
    DecodeOptions one_hot;
    one_hot.one_hot_q = true;
    auto det = generate(p, x, DecodeMode::fnic_deterministic);
    auto nd = generate(p, x, DecodeMode::fnic_nondeterministic, one_hot);
    ASSERT_EQ(det.tokens, nd.tokens) << "trial " << trial;
    ASSERT_EQ(det.token_probs, nd.token_probs) << "trial " << trial;
  }
}

TEST(Generate, AllModesDeterministicAndWellFormed) {
  std::mt19937_64 rng(15);
  Tensor x = random_tensor(rng, {3, 5});
  std::vector<std::pair<DecodeMode, ModelParams>> models = {
      {DecodeMode::fnic_nondeterministic, ModelParams::initialize(tiny_config(Architecture::fnic), 1)},
      {DecodeMode::fnic_deterministic, ModelParams::initialize(tiny_config(Architecture::fnic), 1)},
      {DecodeMode::autoregressive, ModelParams::initialize(tiny_config(Architecture::at), 1)},
      {DecodeMode::naic, ModelParams::initialize(tiny_config(Architecture::naic), 1)}};
  for (auto& [mode, p] : models) {
    auto a = generate(p, x, mode), b = generate(p, x, mode);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.token_probs, b.token_probs);
    EXPECT_GT(a.wall_time_ns, 0);
    EXPECT_EQ(a.mode, mode);
    EXPECT_EQ(a.tokens.size(), a.token_probs.size());
    for (TokenId t : a.tokens) EXPECT_FALSE(is_control(t));
  }
}
