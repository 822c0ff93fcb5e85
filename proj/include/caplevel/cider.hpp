#pragma once

// CIDEr-D: TF-IDF weighted n-gram cosine similarity (n = 1..N) with
// clipped candidate weights and a Gaussian length penalty, averaged over
// references and orders, scaled by 10.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "caplevel/error.hpp"

namespace caplevel {

using TokenSeq = std::vector<std::string>;

/// Lowercases, maps every character outside [a-z0-9'] to a space and splits
/// on whitespace runs. Non-ASCII bytes are separators.
inline TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::string cur;
  for (char raw : text) {
    char c = raw;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'';
    if (keep) {
      cur.push_back(c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// N-gram key: tokens joined by single spaces (tokens never contain one).
using NgramCounts = std::map<std::string, int>;

/// Index n-1 holds the n-gram counts.
using NgramProfile = std::vector<NgramCounts>;

inline NgramProfile ngram_profile(const TokenSeq& tokens, int max_n) {
  if (max_n < 1) throw error(errc::invalid_argument, "n-gram order must be >= 1");
  NgramProfile profile(static_cast<std::size_t>(max_n));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string key;
    for (int n = 1; n <= max_n && i + static_cast<std::size_t>(n) <= tokens.size(); ++n) {
      if (n > 1) key.push_back(' ');
      key += tokens[i + static_cast<std::size_t>(n) - 1];
      ++profile[static_cast<std::size_t>(n) - 1][key];
    }
  }
  return profile;
}

inline constexpr int kCiderOrder = 4;
inline constexpr double kCiderSigma = 6.0;

struct CiderModel {
  int max_n = kCiderOrder;
  double sigma = kCiderSigma;
  std::vector<NgramCounts> doc_freq;  ///< index n-1: n-gram -> #docs containing it
  std::size_t num_docs = 0;

  /// log(num_docs / max(df, 1))
  double idf(std::size_t order_index, const std::string& gram) const {
    const auto& df = doc_freq[order_index];
    auto it = df.find(gram);
    const double d = it == df.end() ? 1.0 : std::max(1.0, static_cast<double>(it->second));
    return std::log(static_cast<double>(num_docs)) - std::log(d);
  }
};

inline CiderModel build_idf(std::span<const TokenSeq> docs, int max_n = kCiderOrder,
                            double sigma = kCiderSigma) {
  if (docs.empty()) throw error(errc::empty_corpus, "IDF corpus has no documents");
  if (!(sigma > 0.0)) throw error(errc::invalid_argument, "sigma must be positive");
  CiderModel m;
  m.max_n = max_n;
  m.sigma = sigma;
  m.num_docs = docs.size();
  m.doc_freq.resize(static_cast<std::size_t>(max_n));
  for (const auto& d : docs) {
    const auto profile = ngram_profile(d, max_n);
    for (std::size_t n = 0; n < profile.size(); ++n) {
      for (const auto& [gram, count] : profile[n]) ++m.doc_freq[n][gram];
    }
  }
  return m;
}

/// TF-IDF vectors of one sentence, ready for repeated scoring.
struct WeightedProfile {
  std::vector<std::map<std::string, double>> weights;
  std::vector<double> norms;
  std::size_t length = 0;  ///< token count
};

inline WeightedProfile weigh(const TokenSeq& tokens, const CiderModel& model) {
  WeightedProfile w;
  w.length = tokens.size();
  const auto profile = ngram_profile(tokens, model.max_n);
  w.weights.resize(profile.size());
  w.norms.assign(profile.size(), 0.0);
  for (std::size_t n = 0; n < profile.size(); ++n) {
    double sq = 0.0;
    for (const auto& [gram, count] : profile[n]) {
      const double v = static_cast<double>(count) * model.idf(n, gram);
      w.weights[n].emplace(gram, v);
      sq += v * v;
    }
    w.norms[n] = std::sqrt(sq);
  }
  return w;
}

/// Per-order clipped cosine of candidate against one reference, times the
/// length penalty, summed over orders.
inline double cider_pair_sum(const WeightedProfile& cand, const WeightedProfile& ref,
                             double sigma) {
  const double delta = static_cast<double>(cand.length) - static_cast<double>(ref.length);
  const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
  double total = 0.0;
  for (std::size_t n = 0; n < cand.weights.size(); ++n) {
    if (cand.norms[n] == 0.0 || ref.norms[n] == 0.0) continue;
    double num = 0.0;
    for (const auto& [gram, v] : cand.weights[n]) {
      auto it = ref.weights[n].find(gram);
      if (it == ref.weights[n].end()) continue;
      num += std::min(v, it->second) * it->second;
    }
    total += penalty * num / (cand.norms[n] * ref.norms[n]);
  }
  return total;
}

/// Sum of the values in ascending order, so the result depends only on the
/// multiset of terms. Keeps equal candidates exactly tied.
inline double canonical_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum;
}

inline double cider_d(const WeightedProfile& cand, std::span<const WeightedProfile> refs,
                      const CiderModel& model) {
  if (refs.empty()) throw error(errc::empty_refs, "CIDEr-D needs at least one reference");
  std::vector<double> terms;
  terms.reserve(refs.size());
  for (const auto& r : refs) terms.push_back(cider_pair_sum(cand, r, model.sigma));
  const double sum = canonical_sum(std::move(terms));
  const double score =
      10.0 * sum / (static_cast<double>(model.max_n) * static_cast<double>(refs.size()));
  return std::clamp(score, 0.0, 10.0);
}

inline double cider_d(const TokenSeq& candidate, std::span<const TokenSeq> refs,
                      const CiderModel& model) {
  if (refs.empty()) throw error(errc::empty_refs, "CIDEr-D needs at least one reference");
  const WeightedProfile cand = weigh(candidate, model);
  std::vector<WeightedProfile> ref_profiles;
  ref_profiles.reserve(refs.size());
  for (const auto& r : refs) ref_profiles.push_back(weigh(r, model));
  return cider_d(cand, std::span<const WeightedProfile>(ref_profiles), model);
}

}  // namespace caplevel
