#pragma once

// CIDEr consensus selection: each run's caption for an image is scored with
// CIDEr-D against the captions of all other runs for that image, and the
// highest scoring caption wins (ties go to the smallest run_id).

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "caplevel/cider.hpp"
#include "caplevel/corpus.hpp"
#include "caplevel/error.hpp"
#include "caplevel/parallel.hpp"

namespace caplevel {

inline constexpr double kDefaultEnsembleThreshold = 220.0;

struct PredictionSet {
  std::string run_id;
  std::map<std::string, std::string> captions;  ///< image_id -> caption
};

struct RunScore {
  std::string run_id;
  double score = 0.0;
};

struct ImageConsensus {
  std::string image_id;
  std::string run_id;   ///< winning run
  std::string caption;  ///< winning caption
  double score = 0.0;
  std::vector<RunScore> scores;  ///< every run, ascending run_id
};

struct ConsensusResult {
  std::vector<ImageConsensus> images;  ///< ascending image_id
};

/// score[i] = CIDEr-D of candidate i against all other candidates.
inline std::vector<double> consensus_scores(std::span<const WeightedProfile> candidates,
                                            const CiderModel& model) {
  if (candidates.size() < 2) {
    throw error(errc::too_few_sets, "consensus needs at least two candidates");
  }
  std::vector<double> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::vector<double> terms;
    terms.reserve(candidates.size() - 1);
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (j != i) terms.push_back(cider_pair_sum(candidates[i], candidates[j], model.sigma));
    }
    const double denom =
        static_cast<double>(model.max_n) * static_cast<double>(candidates.size() - 1);
    out[i] = std::clamp(10.0 * canonical_sum(std::move(terms)) / denom, 0.0, 10.0);
  }
  return out;
}

/// IDF over every caption of every set.
inline CiderModel consensus_idf(const std::vector<PredictionSet>& sets, int max_n = kCiderOrder,
                                double sigma = kCiderSigma) {
  std::vector<TokenSeq> docs;
  for (const auto& s : sets) {
    for (const auto& [image, text] : s.captions) docs.push_back(tokenize(text));
  }
  return build_idf(std::span<const TokenSeq>(docs), max_n, sigma);
}

namespace detail {

inline void validate_sets(const std::vector<PredictionSet>& sets) {
  if (sets.size() < 2) {
    throw error(errc::too_few_sets, std::to_string(sets.size()) + " prediction set(s), need >= 2");
  }
  std::set<std::string> runs;
  std::set<std::string> images;
  for (const auto& s : sets) {
    if (!runs.insert(s.run_id).second) {
      throw error(errc::invalid_argument, "duplicate run_id " + s.run_id);
    }
    for (const auto& [image, text] : s.captions) {
      if (is_blank(text)) throw error(errc::empty_text, "run " + s.run_id + " image " + image);
      images.insert(image);
    }
  }
  std::string missing;
  for (const auto& s : sets) {
    std::string list;
    for (const auto& image : images) {
      if (!s.captions.contains(image)) list += (list.empty() ? "" : ", ") + image;
    }
    if (!list.empty()) missing += (missing.empty() ? "" : "; ") + s.run_id + " missing [" + list + "]";
  }
  if (!missing.empty()) throw error(errc::coverage_mismatch, missing);
}

}  // namespace detail

inline ConsensusResult consensus_select(std::vector<PredictionSet> sets, const CiderModel& model,
                                        std::size_t workers = 1) {
  detail::validate_sets(sets);
  std::sort(sets.begin(), sets.end(),
            [](const auto& a, const auto& b) { return a.run_id < b.run_id; });

  ConsensusResult result;
  for (const auto& [image, text] : sets.front().captions) {
    result.images.emplace_back().image_id = image;
  }
  parallel_for(result.images.size(), workers, [&](std::size_t k) {
    ImageConsensus& ic = result.images[k];
    std::vector<WeightedProfile> profiles;
    profiles.reserve(sets.size());
    for (const auto& s : sets) profiles.push_back(weigh(tokenize(s.captions.at(ic.image_id)), model));
    const auto scores = consensus_scores(std::span<const WeightedProfile>(profiles), model);
    std::size_t best = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      ic.scores.push_back({sets[i].run_id, scores[i]});
      if (scores[i] > scores[best]) best = i;
    }
    ic.run_id = sets[best].run_id;
    ic.caption = sets[best].captions.at(ic.image_id);
    ic.score = scores[best];
  });
  return result;
}

/// Keeps sets whose score is strictly above `threshold`.
inline std::vector<PredictionSet> filter_sets(const std::vector<PredictionSet>& sets,
                                              const std::map<std::string, double>& scores,
                                              double threshold = kDefaultEnsembleThreshold) {
  std::vector<PredictionSet> kept;
  for (const auto& s : sets) {
    auto it = scores.find(s.run_id);
    if (it == scores.end()) throw error(errc::missing_score, s.run_id);
    if (it->second > threshold) kept.push_back(s);
  }
  return kept;
}

/// Groups caption records into prediction sets keyed by caption_id (the run).
inline std::vector<PredictionSet> prediction_sets_from_records(
    const std::vector<CaptionRecord>& records) {
  std::map<std::string, PredictionSet> by_run;
  for (const auto& r : records) {
    auto& s = by_run[r.caption_id];
    s.run_id = r.caption_id;
    if (!s.captions.emplace(r.image_id, r.text).second) {
      throw error(errc::duplicate_caption_id,
                  "run " + r.caption_id + " has two captions for " + r.image_id);
    }
  }
  std::vector<PredictionSet> out;
  for (auto& [run, s] : by_run) out.push_back(std::move(s));
  return out;
}

}  // namespace caplevel
