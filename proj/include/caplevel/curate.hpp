#pragma once

// Curated dataset construction from re-ranked caption pools.
//
// Per image, the top-n re-ranked captions form the foundation. Ranks 1..k
// become leveled ground-truth examples, ranks k+1..n form the image's mini
// knowledge base, which supplies the retrieval prompts of each example.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "caplevel/cider.hpp"
#include "caplevel/corpus.hpp"
#include "caplevel/ensemble.hpp"
#include "caplevel/error.hpp"
#include "caplevel/parallel.hpp"
#include "caplevel/random.hpp"
#include "caplevel/rerank.hpp"

namespace caplevel {

enum class CaptionLevel { best_match = 1, high_quality = 2, low_quality = 3, noise = 4 };

inline constexpr std::size_t kLevelCount = 4;

inline constexpr std::array<std::string_view, kLevelCount> kLevelStrings = {
    "best match", "high quality", "low quality", "noise"};

inline std::string_view level_string(CaptionLevel level) noexcept {
  return kLevelStrings[static_cast<std::size_t>(level) - 1];
}

inline std::optional<CaptionLevel> parse_level(std::string_view s) noexcept {
  for (std::size_t i = 0; i < kLevelCount; ++i) {
    if (kLevelStrings[i] == s) return static_cast<CaptionLevel>(i + 1);
  }
  return std::nullopt;
}

/// Rank 1 is the best match; ranks beyond the fourth level are rejected.
inline CaptionLevel level_for_rank(std::size_t rank) {
  if (rank < 1 || rank > kLevelCount) {
    throw error(errc::invalid_argument, "no caption level for rank " + std::to_string(rank));
  }
  return static_cast<CaptionLevel>(rank);
}

enum class TemplateMode { finetune, inference };

inline constexpr std::string_view kTemplatePrefix = "What does the image describe? ";
inline constexpr std::string_view kTemplateSuffix = " caption is";
inline constexpr std::string_view kPromptJoiner = ". ";

/// "What does the image describe? {p1. p2}, the {level} caption is". An empty
/// prompt list drops "{prompts}, " and a missing level drops " {level}".
/// Inference always uses the best match level.
inline std::string render_template(std::span<const std::string> prompts,
                                   std::optional<CaptionLevel> level, TemplateMode mode) {
  if (mode == TemplateMode::inference) {
    if (level && *level != CaptionLevel::best_match) {
      throw error(errc::invalid_argument, "inference templates are fixed at the best match level");
    }
    level = CaptionLevel::best_match;
  }
  std::string out(kTemplatePrefix);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (i > 0) out += kPromptJoiner;
    out += prompts[i];
  }
  if (!prompts.empty()) out += ", ";
  out += "the";
  if (level) {
    out += ' ';
    out += level_string(*level);
  }
  out += kTemplateSuffix;
  return out;
}

struct ParsedTemplate {
  std::vector<std::string> prompts;
  std::optional<CaptionLevel> level;
};

/// Inverse of render_template for prompts free of ". " and ", the ".
inline std::optional<ParsedTemplate> parse_template(std::string_view s) {
  if (!s.starts_with(kTemplatePrefix) || !s.ends_with(kTemplateSuffix)) return std::nullopt;
  s.remove_prefix(kTemplatePrefix.size());
  s.remove_suffix(kTemplateSuffix.size());

  ParsedTemplate out;
  std::string_view body;
  bool matched = false;
  for (std::size_t i = 0; i < kLevelCount && !matched; ++i) {
    const std::string tail = "the " + std::string(kLevelStrings[i]);
    if (s.ends_with(tail)) {
      out.level = static_cast<CaptionLevel>(i + 1);
      body = s.substr(0, s.size() - tail.size());
      matched = true;
    }
  }
  if (!matched) {
    if (!s.ends_with("the")) return std::nullopt;
    body = s.substr(0, s.size() - 3);
  }
  if (body.empty()) return out;
  if (!body.ends_with(", ")) return std::nullopt;
  body.remove_suffix(2);
  for (;;) {
    const auto pos = body.find(kPromptJoiner);
    out.prompts.emplace_back(body.substr(0, pos));
    if (pos == std::string_view::npos) break;
    body.remove_prefix(pos + kPromptJoiner.size());
  }
  return out;
}

enum class Split { train, val };

inline std::string_view split_string(Split s) noexcept { return s == Split::train ? "train" : "val"; }

struct SplitRatio {
  unsigned train = 10;
  unsigned val = 1;

  friend bool operator==(const SplitRatio&, const SplitRatio&) = default;
};

/// Parses "10:1".
inline SplitRatio parse_split_ratio(std::string_view s) {
  const auto colon = s.find(':');
  auto bad = [&] { return error(errc::invalid_argument, "split ratio \"" + std::string(s) + "\""); };
  if (colon == std::string_view::npos) throw bad();
  SplitRatio r;
  try {
    std::size_t used = 0;
    const std::string a(s.substr(0, colon));
    const std::string b(s.substr(colon + 1));
    const long t = std::stol(a, &used);
    if (used != a.size()) throw bad();
    const long v = std::stol(b, &used);
    if (used != b.size()) throw bad();
    if (t < 1 || v < 1) throw bad();
    r.train = static_cast<unsigned>(t);
    r.val = static_cast<unsigned>(v);
  } catch (const std::logic_error&) {
    throw bad();
  }
  return r;
}

/// Image-level split. Images are ordered by a seeded per-image hash and the
/// first round(N·val/(train+val)) of that order go to validation, so the
/// global ratio is exact up to rounding and an image's assignment depends
/// only on its own hash rank.
inline std::map<std::string, Split> assign_splits(std::vector<std::string> image_ids,
                                                  SplitRatio ratio, std::uint64_t seed) {
  std::sort(image_ids.begin(), image_ids.end());
  image_ids.erase(std::unique(image_ids.begin(), image_ids.end()), image_ids.end());
  std::vector<std::pair<std::uint64_t, std::string>> keyed;
  keyed.reserve(image_ids.size());
  for (auto& id : image_ids) keyed.emplace_back(stream_key(seed, "split", id), std::move(id));
  std::sort(keyed.begin(), keyed.end());

  const std::uint64_t total = std::uint64_t{ratio.train} + ratio.val;
  const std::uint64_t n = keyed.size();
  const std::uint64_t n_val = (2 * n * ratio.val + total) / (2 * total);
  std::map<std::string, Split> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    out.emplace(std::move(keyed[i].second), i < n_val ? Split::val : Split::train);
  }
  return out;
}

struct KbEntry {
  std::string caption_id;
  std::string text;
  std::size_t rank = 0;  ///< 1-based rank in the re-ranked pool

  friend bool operator==(const KbEntry&, const KbEntry&) = default;
};

/// image_id -> knowledge base captions in rank order.
using KnowledgeBase = std::map<std::string, std::vector<KbEntry>>;

/// Draws p distinct knowledge base entries without replacement from a stream
/// keyed on (seed, image_id, example rank). Returned in draw order.
inline std::vector<std::string> sample_prompts(const KnowledgeBase& kb, const std::string& image_id,
                                               std::size_t p, std::uint64_t seed,
                                               std::size_t example_rank) {
  auto it = kb.find(image_id);
  const std::size_t size = it == kb.end() ? 0 : it->second.size();
  if (p > size) {
    throw error(errc::prompt_count_too_large, "p=" + std::to_string(p) + " but " + image_id +
                                                  " has " + std::to_string(size) + " KB entries");
  }
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SplitMix64 rng(stream_key(seed, "prompt", image_id, example_rank));
  std::vector<std::string> out;
  out.reserve(p);
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(size - i));
    std::swap(idx[i], idx[j]);
    out.push_back(it->second[idx[i]].text);
  }
  return out;
}

struct CuratedExample {
  std::string image_id;
  std::string caption_id;
  std::size_t rank = 0;
  std::string ground_truth;
  CaptionLevel level = CaptionLevel::best_match;
  std::vector<std::string> prompts;
  Split split = Split::train;
  std::string rendered_template;

  friend bool operator==(const CuratedExample&, const CuratedExample&) = default;
};

struct CurateParams {
  std::size_t top_n = 10;
  std::size_t top_k = 4;
  std::size_t prompts = 3;
  SplitRatio split_ratio;
  std::uint64_t seed = 0;

  void validate() const {
    if (top_k < 1 || top_k > kLevelCount) {
      throw error(errc::invalid_argument,
                  "top_k must be in [1, 4], got " + std::to_string(top_k));
    }
    if (top_n <= top_k) throw error(errc::invalid_argument, "top_n must exceed top_k");
    if (prompts > top_n - top_k) {
      throw error(errc::prompt_count_too_large,
                  "prompts=" + std::to_string(prompts) + " exceeds knowledge base size " +
                      std::to_string(top_n - top_k));
    }
    if (split_ratio.train < 1 || split_ratio.val < 1) {
      throw error(errc::invalid_argument, "split ratio parts must be positive");
    }
  }
};

struct SkippedImage {
  std::string image_id;
  std::string reason;
};

struct CuratedDataset {
  std::vector<CuratedExample> examples;  ///< image_id order, then rank
  KnowledgeBase kb;
  std::vector<SkippedImage> skipped;
};

/// `rankings[i]` is the re-ranked order of `pools[i]`.
inline CuratedDataset build_dataset(std::span<const CandidatePool> pools,
                                    std::span<const RankedList> rankings,
                                    const CurateParams& params, std::size_t workers = 1) {
  params.validate();
  if (pools.size() != rankings.size()) {
    throw error(errc::dim_mismatch, "pools and rankings differ in length");
  }
  CuratedDataset out;
  std::vector<std::size_t> usable;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (pools[i].size() < params.top_n) {
      out.skipped.push_back({pools[i].image_id, "PoolTooSmall: " + std::to_string(pools[i].size()) +
                                                    " candidates < top_n " +
                                                    std::to_string(params.top_n)});
      continue;
    }
    if (rankings[i].order.size() != pools[i].size()) {
      throw error(errc::dim_mismatch, "ranking size mismatch for " + pools[i].image_id);
    }
    usable.push_back(i);
    ids.push_back(pools[i].image_id);
  }
  const auto splits = assign_splits(ids, params.split_ratio, params.seed);

  for (std::size_t i : usable) {
    const auto top = select_top(rankings[i], pools[i], params.top_n);
    auto& entries = out.kb[pools[i].image_id];
    for (std::size_t r = params.top_k; r < params.top_n; ++r) {
      entries.push_back({top[r].caption_id, top[r].text, r + 1});
    }
  }

  std::vector<std::vector<CuratedExample>> per_image(usable.size());
  parallel_for(usable.size(), workers, [&](std::size_t u) {
    const std::size_t i = usable[u];
    const auto& pool = pools[i];
    const auto top = select_top(rankings[i], pool, params.top_k);
    const Split split = splits.at(pool.image_id);
    for (std::size_t r = 0; r < params.top_k; ++r) {
      CuratedExample ex;
      ex.image_id = pool.image_id;
      ex.caption_id = top[r].caption_id;
      ex.rank = r + 1;
      ex.ground_truth = top[r].text;
      ex.level = level_for_rank(r + 1);
      ex.prompts = sample_prompts(out.kb, pool.image_id, params.prompts, params.seed, r + 1);
      ex.split = split;
      ex.rendered_template = render_template(ex.prompts, ex.level, TemplateMode::finetune);
      per_image[u].push_back(std::move(ex));
    }
  });
  for (auto& v : per_image) {
    for (auto& ex : v) out.examples.push_back(std::move(ex));
  }
  return out;
}

enum class OrderMode { cider, retrieval };

inline std::string_view order_mode_string(OrderMode m) noexcept {
  return m == OrderMode::cider ? "cider" : "retrieval";
}

inline OrderMode parse_order_mode(std::string_view s) {
  if (s == "cider") return OrderMode::cider;
  if (s == "retrieval") return OrderMode::retrieval;
  throw error(errc::invalid_argument, "order mode must be cider or retrieval, got " + std::string(s));
}

/// Per-image foundation captions in retrieval order.
struct Foundation {
  std::string image_id;
  std::vector<std::string> captions;
};

inline CiderModel foundation_idf(std::span<const Foundation> foundation, int max_n = kCiderOrder,
                                 double sigma = kCiderSigma) {
  std::vector<TokenSeq> docs;
  for (const auto& f : foundation) {
    for (const auto& c : f.captions) docs.push_back(tokenize(c));
  }
  return build_idf(std::span<const TokenSeq>(docs), max_n, sigma);
}

/// Top-j captions per image. Retrieval mode keeps the foundation order;
/// cider mode orders by consensus score (CIDEr-D of each caption against the
/// rest of the image's foundation), ties by retrieval rank.
inline std::map<std::string, std::vector<std::string>> select_inference_prompts(
    std::span<const Foundation> foundation, std::size_t j, OrderMode mode, const CiderModel& model,
    std::size_t workers = 1) {
  for (const auto& f : foundation) {
    if (j > f.captions.size()) {
      throw error(errc::depth_too_small, f.image_id + " has " + std::to_string(f.captions.size()) +
                                             " foundation captions, need " + std::to_string(j));
    }
  }
  std::vector<std::vector<std::string>> picked(foundation.size());
  parallel_for(foundation.size(), workers, [&](std::size_t i) {
    const auto& caps = foundation[i].captions;
    std::vector<std::size_t> order(caps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (mode == OrderMode::cider && caps.size() >= 2) {
      std::vector<WeightedProfile> profiles;
      profiles.reserve(caps.size());
      for (const auto& c : caps) profiles.push_back(weigh(tokenize(c), model));
      const auto scores = consensus_scores(std::span<const WeightedProfile>(profiles), model);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    }
    for (std::size_t r = 0; r < j; ++r) picked[i].push_back(caps[order[r]]);
  });
  std::map<std::string, std::vector<std::string>> out;
  for (std::size_t i = 0; i < foundation.size(); ++i) {
    out.emplace(foundation[i].image_id, std::move(picked[i]));
  }
  return out;
}

}  // namespace caplevel
