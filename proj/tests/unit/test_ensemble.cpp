#include <gtest/gtest.h>

#include <algorithm>

#include "caplevel/ensemble.hpp"
#include "oracles/cider_oracle.hpp"
#include "support.hpp"

using namespace caplevel;

namespace {

std::string image_name(std::size_t i) { return "img" + std::to_string(100 + i); }

std::vector<PredictionSet> make_sets(const std::vector<std::vector<std::string>>& caps) {
  std::vector<PredictionSet> sets;
  for (std::size_t s = 0; s < caps.size(); ++s) {
    PredictionSet ps{"run" + std::to_string(s), {}};
    for (std::size_t i = 0; i < caps[s].size(); ++i) ps.captions[image_name(i)] = caps[s][i];
    sets.push_back(std::move(ps));
  }
  return sets;
}

errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const error& e) {
    return e.code();
  }
  return errc::internal;
}

/// Checks consensus_select against the exhaustive oracle on every image.
void expect_matches_oracle(const std::vector<PredictionSet>& sets, std::size_t workers) {
  const auto model = consensus_idf(sets);
  const auto result = consensus_select(sets, model, workers);
  auto sorted = sets;
  std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.run_id < b.run_id; });
  oracle::CiderCorpus corpus;
  for (const auto& s : sets)
    for (const auto& [img, text] : s.captions) corpus.docs.push_back(tokenize(text));
  ASSERT_EQ(result.images.size(), sorted.front().captions.size());
  for (const auto& ic : result.images) {
    std::vector<oracle::Tokens> cands;
    for (const auto& s : sorted) cands.push_back(tokenize(s.captions.at(ic.image_id)));
    std::vector<double> want;
    oracle::consensus_argmax(cands, corpus, &want);
    double top = *std::max_element(want.begin(), want.end());
    std::size_t first = 0;
    while (want[first] < top - 1e-9) ++first;
    ASSERT_EQ(ic.scores.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      EXPECT_EQ(ic.scores[i].run_id, sorted[i].run_id);
      EXPECT_NEAR(ic.scores[i].score, want[i], 1e-9);
      EXPECT_LE(ic.scores[i].score, ic.score);
    }
    // first run whose oracle score is within rounding of the max
    EXPECT_EQ(ic.run_id, sorted[first].run_id) << ic.image_id;
    EXPECT_EQ(ic.caption, sorted[first].captions.at(ic.image_id));
  }
}

}  // namespace

TEST(Consensus, TwoIdenticalSetsTieToFirstRun) {
  auto sets = make_sets({{"a dog runs on the grass", "a red ball"}, {"a dog runs on the grass", "a red ball"}});
  sets[0].run_id = "zeta";
  sets[1].run_id = "alpha";
  const auto r = consensus_select(sets, consensus_idf(sets));
  ASSERT_EQ(r.images.size(), 2u);
  for (const auto& ic : r.images) {
    EXPECT_EQ(ic.run_id, "alpha");
    EXPECT_EQ(ic.scores[0].score, ic.scores[1].score);
  }
  EXPECT_NEAR(r.images[0].score, 10.0, 1e-9);
}

TEST(Consensus, ThreeWithIdenticalPair) {
  const std::vector<std::string> same = {"a man rides a horse on the beach"};
  const std::vector<std::string> other = {"two cats sleep near water"};
  const auto sets = make_sets({other, same, same});
  const auto model = consensus_idf(sets);
  const auto r = consensus_select(sets, model);
  EXPECT_EQ(r.images[0].run_id, "run1");
  EXPECT_EQ(r.images[0].caption, same[0]);
  // (10 + 0) / 2 for each member of the pair, 0 for the outlier
  EXPECT_NEAR(r.images[0].score, 5.0, 1e-9);
  EXPECT_EQ(r.images[0].scores[0].score, 0.0);
  expect_matches_oracle(sets, 1);
}

TEST(Consensus, TooFewSets) {
  const auto one = make_sets({{"a dog"}});
  EXPECT_EQ(code_of([&] { consensus_select(one, consensus_idf(one)); }), errc::too_few_sets);
  EXPECT_EQ(code_of([&] { consensus_select({}, consensus_idf(make_sets({{"x"}}))); }), errc::too_few_sets);
}

TEST(Consensus, CoverageMismatchListsImages) {
  auto sets = make_sets({{"a dog", "a cat", "a bird"}, {"a dog", "a cat", "a bird"}});
  sets[1].captions.erase(image_name(1));
  sets[1].captions.erase(image_name(2));
  try {
    consensus_select(sets, consensus_idf(sets));
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::coverage_mismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("run1 missing [img101, img102]"), std::string::npos) << msg;
  }
}

TEST(Consensus, RejectsEmptyCaptionAndDuplicateRun) {
  auto sets = make_sets({{"a dog"}, {" "}});
  EXPECT_EQ(code_of([&] { consensus_select(sets, consensus_idf(make_sets({{"a dog"}}))); }), errc::empty_text);
  auto dup = make_sets({{"a dog"}, {"a cat"}});
  dup[1].run_id = dup[0].run_id;
  EXPECT_EQ(code_of([&] { consensus_select(dup, consensus_idf(dup)); }), errc::invalid_argument);
}

TEST(Filter, Threshold) {
  const auto sets = make_sets({{"x"}, {"y"}, {"z"}});
  const std::map<std::string, double> scores{{"run0", 230.98}, {"run1", 150.0}, {"run2", 220.0}};
  const auto kept = filter_sets(sets, scores);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].run_id, "run0");
  EXPECT_TRUE(filter_sets(sets, scores, 300.0).empty());
  const auto both = filter_sets(make_sets({{"x"}, {"y"}}), {{"run0", 227.16}, {"run1", 230.98}});
  EXPECT_EQ(both.size(), 2u);
  EXPECT_EQ(code_of([&] { filter_sets(sets, {{"run0", 1.0}}); }), errc::missing_score);
}

TEST(Filter, RecordsToSets) {
  std::vector<CaptionRecord> recs = {{"img1", "a", "x y", "", {}}, {"img2", "a", "z", "", {}},
                                     {"img1", "b", "x", "", {}}};
  const auto sets = prediction_sets_from_records(recs);
  ASSERT_EQ(sets.size(), 2u);
  EXPECT_EQ(sets[0].run_id, "a");
  EXPECT_EQ(sets[0].captions.size(), 2u);
  EXPECT_EQ(sets[1].captions.at("img1"), "x");
}

TEST(ConsensusProperty, ExhaustiveOracle) {
  SplitMix64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng.below(3);
    expect_matches_oracle(make_sets(testing_support::consensus_captions(rng, 20, n)), 1 + rng.below(4));
  }
}

TEST(ConsensusProperty, SetOrderInvariance) {
  SplitMix64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    auto sets = make_sets(testing_support::consensus_captions(rng, 10, 2 + rng.below(4)));
    const auto model = consensus_idf(sets);
    const auto base = consensus_select(sets, model);
    for (int s = 0; s < 3; ++s) {
      for (std::size_t i = sets.size(); i > 1; --i) std::swap(sets[i - 1], sets[rng.below(i)]);
      const auto r = consensus_select(sets, consensus_idf(sets));
      for (std::size_t i = 0; i < r.images.size(); ++i) {
        EXPECT_EQ(r.images[i].run_id, base.images[i].run_id);
        EXPECT_EQ(r.images[i].score, base.images[i].score);
      }
    }
  }
}

TEST(ConsensusProperty, DuplicateOfWinnerKeepsCaption) {
  SplitMix64 rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    auto sets = make_sets(testing_support::consensus_captions(rng, 20, 2 + rng.below(4)));
    const auto before = consensus_select(sets, consensus_idf(sets));
    for (const auto& ic : before.images) {
      auto grown = sets;
      for (auto& s : grown)
        if (s.run_id == ic.run_id) {
          PredictionSet copy = s;
          copy.run_id = "zz-copy";
          grown.push_back(copy);
          break;
        }
      const auto after = consensus_select(grown, consensus_idf(grown));
      const auto it = std::find_if(after.images.begin(), after.images.end(),
                                   [&](const auto& x) { return x.image_id == ic.image_id; });
      EXPECT_EQ(it->caption, ic.caption) << "trial " << trial << " " << ic.image_id;
    }
  }
}

TEST(ConsensusProperty, WorkerCountIrrelevant) {
  SplitMix64 rng(44);
  const auto sets = make_sets(testing_support::consensus_captions(rng, 30, 4));
  const auto model = consensus_idf(sets);
  const auto a = consensus_select(sets, model, 1);
  const auto b = consensus_select(sets, model, 8);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].run_id, b.images[i].run_id);
    EXPECT_EQ(a.images[i].score, b.images[i].score);
  }
}
