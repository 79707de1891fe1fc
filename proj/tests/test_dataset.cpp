#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_support.hpp"

using namespace nacap;

namespace {

// Independent filter-by-membership oracle.
std::vector<int> filter_oracle(const std::vector<int>& t, const std::set<int>& l) {
  std::vector<int> out;
  std::copy_if(t.begin(), t.end(), std::back_inserter(out), [&](int x) { return l.count(x) > 0; });
  return out;
}

bool is_subsequence(const std::vector<int>& sub, const std::vector<int>& seq) {
  std::size_t i = 0;
  for (std::size_t j = 0; j < seq.size() && i < sub.size(); ++j)
    if (seq[j] == sub[i]) ++i;
  return i == sub.size();
}

GrammarConfig one_object_grammar() {
  GrammarConfig g;
  g.objects = {"ball"};
  g.attributes = {"red"};
  g.settings = {"grass"};
  g.relations = {};
  g.templates = {"a {0} on the {setting}"};
  g.min_objects = g.max_objects = 1;
  g.regions = 3;
  g.d_in = 4;
  return g;
}

}  // namespace

TEST(GenerateScene, DeterministicInSeed) {
  auto g = GrammarConfig::desk();
  auto a = generate_scene(7, g), b = generate_scene(7, g);
  EXPECT_EQ(a.regions, b.regions);
  EXPECT_EQ(a.captions, b.captions);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(generate_scene(8, g).regions, a.regions);
}

TEST(GenerateScene, SingleTemplateInstantiation) {
  auto s = generate_scene(3, one_object_grammar());
  ASSERT_FALSE(s.captions.empty());
  for (const auto& c : s.captions) EXPECT_EQ(c, "a red ball on the grass");
  EXPECT_EQ(s.regions.k(), 3u);
  EXPECT_EQ(s.regions.d_in(), 4u);
}

TEST(GenerateScene, EveryLabelEventuallyMentioned) {
  auto g = GrammarConfig::desk();
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    for (const auto& c : generate_scene(seed, g).captions) {
      for (const auto& label : g.objects)
        if ((" " + c + " ").find(" " + label + " ") != std::string::npos) seen.insert(label);
    }
  }
  EXPECT_EQ(seen.size(), g.objects.size());
}

TEST(GenerateScene, CaptionsMentionObjectsAndCountsInRange) {
  auto g = GrammarConfig::desk();
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto s = generate_scene(seed, g);
    EXPECT_GE(s.captions.size(), g.min_captions);
    EXPECT_LE(s.captions.size(), g.max_captions);
    EXPECT_GE(s.scene.objects.size(), g.min_objects);
    EXPECT_LE(s.scene.objects.size(), g.max_objects);
    for (double x : s.regions.features.values) EXPECT_TRUE(std::isfinite(x));
    for (const auto& c : s.captions)
      for (const auto& o : s.scene.objects) EXPECT_NE(c.find(o.label), std::string::npos) << c;
  }
}

TEST(GenerateScene, EmptyLabelSetIsConfigError) {
  auto g = GrammarConfig::desk();
  g.objects.clear();
  EXPECT_THROW(generate_scene(1, g), ConfigError);
}

TEST(ExtractOrderedWords, Examples) {
  std::set<std::string> labels = {"dog", "ball"};
  auto t = tokenize("a dog chases a ball");
  EXPECT_EQ(extract_ordered_words(std::span<const std::string>(t), labels),
            (std::vector<std::string>{"dog", "ball"}));
  std::set<std::string> only_ball = {"ball"};
  auto t2 = tokenize("a ball hits a ball");
  EXPECT_EQ(extract_ordered_words(std::span<const std::string>(t2), only_ball),
            (std::vector<std::string>{"ball", "ball"}));
}

TEST(ExtractOrderedWords, ControlTokensNeverIncluded) {
  std::set<TokenId> labels = {kBos, kEos, kPad, 7};
  std::vector<TokenId> t = {kBos, 7, kPad, 9, 7, kEos};
  EXPECT_EQ(extract_ordered_words(std::span<const TokenId>(t), labels), (std::vector<TokenId>{7, 7}));
}

TEST(ExtractOrderedWords, RandomizedOracleSubsequenceIdempotence) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(0, 20), tok(0, 12), nl(0, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> t(len(rng));
    for (int& x : t) x = tok(rng);
    std::set<int> labels;
    for (int i = nl(rng); i > 0; --i) labels.insert(tok(rng));
    auto out = extract_ordered_words(std::span<const int>(t), labels);
    ASSERT_EQ(out, filter_oracle(t, labels));
    ASSERT_TRUE(is_subsequence(out, t));
    ASSERT_EQ(extract_ordered_words(std::span<const int>(out), labels), out);
  }
}

TEST(LabelTokens, SplitsMultiWordLabels) {
  std::vector<std::string> labels = {"fire hydrant", "Dog"};
  EXPECT_EQ(label_tokens(labels), (std::set<std::string>{"dog", "fire", "hydrant"}));
}

TEST(Corpus, RoundTripHundredRecords) {
  auto corpus = generate_corpus(5, 100, GrammarConfig::desk());
  std::stringstream ss;
  write_corpus(ss, corpus);
  EXPECT_EQ(read_corpus(ss), corpus);
}

TEST(Corpus, RandomizedRoundTripProperty) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 1e3);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  for (int trial = 0; trial < 1000; ++trial) {
    CorpusRecord r;
    r.scene_id = "s\"" + std::to_string(trial) + "\\é";
    const std::size_t k = dim(rng), d = dim(rng);
    r.features = support::random_tensor(rng, {k, d}, std::abs(n(rng)) + 1e-300);
    r.labels = {"fire hydrant", "x"};
    r.captions.assign(dim(rng), "cap " + std::to_string(trial));
    Corpus c = {r};
    std::stringstream ss;
    write_corpus(ss, c);
    ASSERT_EQ(read_corpus(ss), c);
  }
}

TEST(Corpus, KeyOrderDoesNotMatter) {
  std::stringstream ss(R"({"captions":["a dog"],"labels":["dog"],"features":[[1,2],[3,4]],"scene_id":"x"})"
                       "\n");
  auto c = read_corpus(ss);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].scene_id, "x");
  EXPECT_EQ(c[0].features, Tensor::matrix(2, 2, {1, 2, 3, 4}));
}

TEST(Corpus, TruncatedFileNamesLineAndByteOffset) {
  auto corpus = generate_corpus(1, 3, GrammarConfig::desk());
  std::stringstream ss;
  write_corpus(ss, corpus);
  std::string text = ss.str();
  const std::size_t second_line = text.find('\n') + 1;
  text.resize(second_line + 40);
  std::stringstream cut(text);
  try {
    read_corpus(cut);
    FAIL() << "expected a format error";
  } catch (const CorpusFormatError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_GE(e.byte_offset(), second_line);
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos) << e.what();
  }
}

TEST(Corpus, MissingKeyAndRaggedRowsRejected) {
  std::stringstream missing(R"({"scene_id":"x","features":[[1]],"labels":[]})");
  EXPECT_THROW(read_corpus(missing), CorpusFormatError);
  std::stringstream ragged(R"({"scene_id":"x","features":[[1],[2,3]],"labels":[],"captions":[]})");
  EXPECT_THROW(read_corpus(ragged), CorpusFormatError);
}

TEST(MakeExamples, CoarseIsOrderedLabelSubsequenceOfTarget) {
  auto corpus = generate_corpus(9, 200, GrammarConfig::desk());
  auto caps = tokenized_captions(corpus);
  Vocabulary v = build_vocabulary(caps, 1);
  ExampleSet set = make_examples(corpus, v);
  ASSERT_FALSE(set.examples.empty());
  for (const auto& ex : set.examples) {
    ASSERT_EQ(ex.target.back(), kEos);
    ASSERT_FALSE(ex.coarse.empty());
    ASSERT_LE(ex.coarse.size(), ex.target.size());
    std::vector<int> c(ex.coarse.begin(), ex.coarse.end()), t(ex.target.begin(), ex.target.end());
    ASSERT_TRUE(is_subsequence(c, t));
  }
}

TEST(MakeExamples, EmptyCoarseDroppedAndCounted) {
  CorpusRecord r{"s", Tensor::matrix(1, 1, {0.5}), {"cat"}, {"a dog", "a cat"}};
  Corpus c = {r};
  auto caps = tokenized_captions(c);
  Vocabulary v = build_vocabulary(caps, 1);
  auto dropped = make_examples(c, v, true);
  EXPECT_EQ(dropped.examples.size(), 1u);
  EXPECT_EQ(dropped.dropped_empty_coarse, 1u);
  EXPECT_EQ(make_examples(c, v, false).examples.size(), 2u);
}
