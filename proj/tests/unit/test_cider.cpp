#include <gtest/gtest.h>

#include <algorithm>

#include "caplevel/cider.hpp"
#include "oracles/cider_oracle.hpp"
#include "support.hpp"

using namespace caplevel;
using testing_support::random_tokens;

namespace {

const std::vector<TokenSeq>& mini_corpus() {
  static const std::vector<TokenSeq> docs = {tokenize("a dog runs"), tokenize("a cat runs"),
                                             tokenize("a dog sleeps"), tokenize("a bird sings")};
  return docs;
}

CiderModel mini_model() { return build_idf(std::span<const TokenSeq>(mini_corpus())); }

double score(const TokenSeq& c, std::vector<TokenSeq> refs, const CiderModel& m) {
  return cider_d(c, std::span<const TokenSeq>(refs), m);
}

std::vector<TokenSeq> random_corpus(SplitMix64& rng, std::size_t n) {
  std::vector<TokenSeq> docs;
  for (std::size_t i = 0; i < n; ++i) docs.push_back(random_tokens(rng, 3, 12));
  return docs;
}

}  // namespace

TEST(Tokenize, Rules) {
  EXPECT_EQ(tokenize("A dog, running!"), (TokenSeq{"a", "dog", "running"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("it's 2 dogs"), (TokenSeq{"it's", "2", "dogs"}));
  EXPECT_EQ(tokenize("  Two\tcats--on\na MAT.  "), (TokenSeq{"two", "cats", "on", "a", "mat"}));
  EXPECT_EQ(tokenize("caf\xc3\xa9 au lait"), (TokenSeq{"caf", "au", "lait"}));
}

TEST(Ngrams, Counting) {
  const auto p = ngram_profile({"a", "b", "a"}, 2);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0], (NgramCounts{{"a", 2}, {"b", 1}}));
  EXPECT_EQ(p[1], (NgramCounts{{"a b", 1}, {"b a", 1}}));
  for (const auto& m : ngram_profile({}, 4)) EXPECT_TRUE(m.empty());
  const auto one = ngram_profile({"a"}, 4);
  EXPECT_EQ(one[0], (NgramCounts{{"a", 1}}));
  EXPECT_TRUE(one[1].empty() && one[2].empty() && one[3].empty());
  EXPECT_THROW(ngram_profile({"a"}, 0), error);
}

TEST(NgramsProperty, CountTotals) {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_tokens(rng, 0, 10);
    const auto p = ngram_profile(t, 4);
    for (std::size_t n = 1; n <= 4; ++n) {
      int total = 0;
      for (const auto& [g, c] : p[n - 1]) {
        EXPECT_GE(c, 1);
        total += c;
      }
      EXPECT_EQ(total, static_cast<int>(t.size() >= n ? t.size() - n + 1 : 0));
    }
  }
}

TEST(Idf, DocFrequencies) {
  std::vector<TokenSeq> docs = {tokenize("a dog"), tokenize("the dog dog")};
  const auto m = build_idf(std::span<const TokenSeq>(docs));
  EXPECT_EQ(m.doc_freq[0].at("dog"), 2);
  EXPECT_EQ(m.num_docs, 2u);
  // unseen gram floors to doc_freq 1
  EXPECT_DOUBLE_EQ(m.idf(0, "zebra"), std::log(2.0));
  EXPECT_DOUBLE_EQ(m.idf(0, "dog"), 0.0);
  try {
    build_idf(std::span<const TokenSeq>());
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::empty_corpus);
  }
}

TEST(Idf, MiniCorpusHandCount) {
  const auto m = mini_model();
  EXPECT_EQ(m.num_docs, 4u);
  EXPECT_EQ(m.doc_freq[0], (NgramCounts{{"a", 4}, {"bird", 1}, {"cat", 1}, {"dog", 2},
                                        {"runs", 2}, {"sings", 1}, {"sleeps", 1}}));
  EXPECT_EQ(m.doc_freq[1], (NgramCounts{{"a bird", 1}, {"a cat", 1}, {"a dog", 2}, {"bird sings", 1},
                                        {"cat runs", 1}, {"dog runs", 1}, {"dog sleeps", 1}}));
  EXPECT_EQ(m.doc_freq[2], (NgramCounts{{"a bird sings", 1}, {"a cat runs", 1}, {"a dog runs", 1},
                                        {"a dog sleeps", 1}}));
  EXPECT_TRUE(m.doc_freq[3].empty());
}

TEST(Cider, MiniCorpusFrozenValue) {
  const auto m = mini_model();
  const double got = score(tokenize("a dog runs"), {tokenize("a cat runs"), tokenize("a dog sleeps")}, m);
  EXPECT_NEAR(got, 1.040569415042095, 1e-9);
  oracle::CiderCorpus oc{mini_corpus(), 4, 6.0, {}};
  EXPECT_NEAR(got, oracle::cider_d(tokenize("a dog runs"), {tokenize("a cat runs"), tokenize("a dog sleeps")}, oc),
              1e-12);
}

TEST(Cider, IdenticalFourTokens) {
  std::vector<TokenSeq> docs = {tokenize("a dog runs on grass"), tokenize("a cat sits"),
                                tokenize("the bird sings loudly")};
  const auto m = build_idf(std::span<const TokenSeq>(docs));
  EXPECT_NEAR(score(docs[0], {docs[0]}, m), 10.0, 1e-9);
  // three tokens have no 4-grams, so one order in four contributes nothing
  EXPECT_NEAR(score(tokenize("a dog runs"), {tokenize("a dog runs")}, mini_model()), 7.5, 1e-9);
}

TEST(Cider, NoSharedUnigram) {
  EXPECT_EQ(score(tokenize("a dog runs"), {tokenize("the bird sings")}, mini_model()), 0.0);
  EXPECT_EQ(score(TokenSeq{}, {tokenize("a dog runs")}, mini_model()), 0.0);
  EXPECT_EQ(score(tokenize("a dog runs"), {TokenSeq{}}, mini_model()), 0.0);
}

TEST(Cider, EmptyRefs) {
  try {
    score(tokenize("a dog"), {}, mini_model());
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::empty_refs);
  }
}

TEST(CiderProperty, Ceiling) {
  SplitMix64 rng(32);
  const auto docs = random_corpus(rng, 50);
  const auto m = build_idf(std::span<const TokenSeq>(docs));
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_tokens(rng, 4, 15);
    EXPECT_NEAR(score(x, {x}, m), 10.0, 1e-9);
  }
}

TEST(CiderProperty, RefPermutationInvariance) {
  SplitMix64 rng(33);
  const auto docs = random_corpus(rng, 50);
  const auto m = build_idf(std::span<const TokenSeq>(docs));
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_tokens(rng, 1, 12);
    std::vector<TokenSeq> refs;
    for (std::size_t i = 0, n = 2 + rng.below(4); i < n; ++i) refs.push_back(random_tokens(rng, 1, 12));
    const double base = score(c, refs, m);
    for (int s = 0; s < 5; ++s) {
      for (std::size_t i = refs.size(); i > 1; --i) std::swap(refs[i - 1], refs[rng.below(i)]);
      EXPECT_EQ(score(c, refs, m), base);
    }
  }
}

TEST(CiderProperty, PaddingNeverIncreasesScore) {
  SplitMix64 rng(34);
  const auto docs = random_corpus(rng, 50);
  const auto m = build_idf(std::span<const TokenSeq>(docs));
  for (int trial = 0; trial < 50; ++trial) {
    const auto ref = random_tokens(rng, 1, 12);
    auto cand = rng.below(2) ? ref : random_tokens(rng, ref.size(), 12);
    double prev = score(cand, {ref}, m);
    for (int pad = 0; pad < 10; ++pad) {
      cand.push_back("zzpad" + std::to_string(pad % 3));
      const double next = score(cand, {ref}, m);
      EXPECT_LE(next, prev + 1e-12);
      prev = next;
    }
  }
}

TEST(CiderProperty, Bounds) {
  SplitMix64 rng(35);
  const auto docs = random_corpus(rng, 20);
  const auto m = build_idf(std::span<const TokenSeq>(docs));
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TokenSeq> refs;
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) refs.push_back(random_tokens(rng, 0, 6));
    const double s = score(random_tokens(rng, 0, 6), refs, m);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 10.0);
  }
}

TEST(CiderProperty, OracleAgreement) {
  SplitMix64 rng(36);
  const auto docs = random_corpus(rng, 50);
  const auto m = build_idf(std::span<const TokenSeq>(docs));
  oracle::CiderCorpus oc{docs, 4, 6.0, {}};
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = rng.below(3) == 0 ? docs[rng.below(docs.size())] : random_tokens(rng, 1, 14);
    std::vector<TokenSeq> refs;
    for (std::size_t i = 0, n = 1 + rng.below(5); i < n; ++i)
      refs.push_back(rng.below(2) ? docs[rng.below(docs.size())] : random_tokens(rng, 1, 14));
    EXPECT_NEAR(score(c, refs, m), oracle::cider_d(c, refs, oc), 1e-9);
  }
}

TEST(CiderProperty, OtherOrdersAndSigma) {
  SplitMix64 rng(37);
  const auto docs = random_corpus(rng, 30);
  for (int n : {1, 2, 3, 5}) {
    const auto m = build_idf(std::span<const TokenSeq>(docs), n, 3.0);
    oracle::CiderCorpus oc{docs, n, 3.0, {}};
    for (int trial = 0; trial < 20; ++trial) {
      const auto c = random_tokens(rng, 1, 10);
      std::vector<TokenSeq> refs{random_tokens(rng, 1, 10), docs[rng.below(docs.size())]};
      EXPECT_NEAR(score(c, refs, m), oracle::cider_d(c, refs, oc), 1e-9);
    }
  }
}
