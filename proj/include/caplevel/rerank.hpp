#pragma once

// Adaption re-ranking of a caption pool against its image query:
//
//   S    = M_c · q                      query-candidate cosine similarity
//   M_s  = diag(S) · M_c                similarity-weighted candidates
//   u1   = leading left singular vector of M_s
//   q*   = normalize(u1ᵀ · M_c)         principal re-ranking query
//   S*   = λ·cos(q*, c) + (1−λ)·Jaccard_k-reciprocal(q*, c)
//
// The k-reciprocal part runs on the similarity table over {q*} ∪ candidates,
// with q* as element 0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "caplevel/corpus.hpp"
#include "caplevel/error.hpp"
#include "caplevel/matrix.hpp"
#include "caplevel/numerics.hpp"

namespace caplevel {

struct RerankParams {
  std::size_t k1 = 20;   ///< k-reciprocal neighborhood size
  std::size_t k2 = 6;    ///< local query expansion size
  double lambda = 0.3;   ///< weight of the cosine term in the final score
  double svd_tol = kDefaultSvdTol;
  std::size_t svd_max_iter = kDefaultSvdMaxIter;

  void validate() const {
    if (k2 < 1 || k2 > k1) {
      throw error(errc::invalid_argument, "require 1 <= k2 <= k1 (k1=" + std::to_string(k1) +
                                              ", k2=" + std::to_string(k2) + ")");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw error(errc::invalid_argument, "lambda must lie in [0, 1]");
    }
    if (!(svd_tol > 0.0) || svd_max_iter < 1) {
      throw error(errc::invalid_argument, "svd_tol must be > 0 and svd_max_iter >= 1");
    }
  }

  /// Neighborhood sizes fitted to a pool of `m` >= 2 candidates.
  RerankParams clamped(std::size_t m) const {
    RerankParams p = *this;
    if (p.k1 >= m) p.k1 = m - 1;
    p.k2 = std::min(p.k2, p.k1);
    return p;
  }

  friend bool operator==(const RerankParams&, const RerankParams&) = default;
};

struct RankedList {
  std::vector<std::size_t> order;  ///< candidate indices, best first
  std::vector<double> scores;      ///< final score per candidate index
  bool fallback = false;           ///< true when ordered by raw query similarity

  double score_at_rank(std::size_t rank) const { return scores[order[rank]]; }
};

/// Sorts candidate indices by descending score, ascending index on ties.
inline RankedList rank_by_score(std::vector<double> scores, bool fallback = false) {
  RankedList r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  r.scores = std::move(scores);
  r.fallback = fallback;
  return r;
}

/// Full neighbor ranking of every element in a square similarity table.
class NeighborIndex {
 public:
  explicit NeighborIndex(const Matrix<double>& table) : n_(table.rows()), rank_(n_, n_) {
    if (table.rows() != table.cols()) {
      throw error(errc::dim_mismatch, "similarity table must be square");
    }
    lists_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      auto& l = lists_[i];
      l.reserve(n_ - 1);
      for (std::size_t j = 0; j < n_; ++j) {
        if (j != i) l.push_back(j);
      }
      std::stable_sort(l.begin(), l.end(),
                       [&](std::size_t a, std::size_t b) { return table(i, a) > table(i, b); });
      for (std::size_t r = 0; r < l.size(); ++r) rank_(i, l[r]) = r;
      rank_(i, i) = n_;
    }
  }

  std::size_t size() const noexcept { return n_; }

  /// The k most similar elements to i, excluding i, best first.
  std::span<const std::size_t> knn(std::size_t i, std::size_t k) const {
    check(i, k);
    return {lists_[i].data(), k};
  }

  /// True when `j` is among the k nearest neighbors of `i`.
  bool in_knn(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return rank_(i, j) < k;
  }

  /// R(i,k) = { j in knn(i,k) : i in knn(j,k) }, ascending.
  std::vector<std::size_t> reciprocal(std::size_t i, std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t j : knn(i, k)) {
      if (in_knn(j, i, k)) out.push_back(j);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// R(i,k) expanded by every R(j,⌈k/2⌉), j in R(i,k), that shares at least
  /// two thirds of its members with R(i,k). Ascending.
  std::vector<std::size_t> expanded(std::size_t i, std::size_t k) const {
    const auto base = reciprocal(i, k);
    const std::size_t half = (k + 1) / 2;
    std::vector<std::size_t> out = base;
    for (std::size_t j : base) {
      const auto sub = reciprocal(j, half);
      std::size_t common = 0;
      for (std::size_t x : sub) {
        if (std::binary_search(base.begin(), base.end(), x)) ++common;
      }
      if (3 * common >= 2 * sub.size()) out.insert(out.end(), sub.begin(), sub.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

 private:
  void check(std::size_t i, std::size_t k) const {
    if (i >= n_) throw error(errc::invalid_argument, "element " + std::to_string(i) + " out of range");
    if (k >= n_) {
      throw error(errc::k_too_large,
                  "k=" + std::to_string(k) + " with " + std::to_string(n_) + " elements");
    }
  }

  std::size_t n_;
  std::vector<std::vector<std::size_t>> lists_;
  Matrix<std::size_t> rank_;
};

inline std::vector<std::size_t> knn(const Matrix<double>& table, std::size_t i, std::size_t k) {
  NeighborIndex idx(table);
  auto s = idx.knn(i, k);
  return {s.begin(), s.end()};
}

inline std::vector<std::size_t> k_reciprocal_set(const Matrix<double>& table, std::size_t i,
                                                 std::size_t k) {
  return NeighborIndex(table).expanded(i, k);
}

/// Jaccard similarity between the neighborhood encoding of `query_index` and
/// that of every element (entry `query_index` itself included). Encodings
/// weight j by exp(sim(i,j)) over the expanded k1-reciprocal set, then are
/// averaged over knn(i,k2).
inline std::vector<double> jaccard_similarity(const Matrix<double>& table, std::size_t query_index,
                                              const RerankParams& params) {
  params.validate();
  const NeighborIndex idx(table);
  const std::size_t n = idx.size();
  if (params.k1 >= n) {
    throw error(errc::k_too_large,
                "k1=" + std::to_string(params.k1) + " with " + std::to_string(n) + " elements");
  }
  if (query_index >= n) throw error(errc::invalid_argument, "query index out of range");

  Matrix<double> enc(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : idx.expanded(i, params.k1)) enc(i, j) = std::exp(table(i, j));
  }

  Matrix<double> expanded_enc(n, n);
  const double inv = 1.0 / static_cast<double>(params.k2);
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = expanded_enc.row(i);
    for (std::size_t j : idx.knn(i, params.k2)) {
      auto src = enc.row(j);
      for (std::size_t m = 0; m < n; ++m) dst[m] += src[m];
    }
    for (double& x : dst) x *= inv;
  }

  std::vector<double> out(n, 0.0);
  auto q = expanded_enc.row(query_index);
  for (std::size_t j = 0; j < n; ++j) {
    auto c = expanded_enc.row(j);
    double mins = 0.0;
    double maxs = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      mins += std::min(q[m], c[m]);
      maxs += std::max(q[m], c[m]);
    }
    out[j] = maxs > 0.0 ? mins / maxs : 0.0;
  }
  return out;
}

/// Cosine table over {q*} ∪ candidates, q* at index 0.
template <typename T>
Matrix<double> similarity_table(std::span<const double> query_star, const Matrix<T>& candidates) {
  const std::size_t n = candidates.rows() + 1;
  Matrix<double> table(n, n);
  table(0, 0) = dot(query_star, query_star);
  for (std::size_t i = 0; i < candidates.rows(); ++i) {
    const double s = dot(candidates.row(i), query_star);
    table(0, i + 1) = s;
    table(i + 1, 0) = s;
    for (std::size_t j = i; j < candidates.rows(); ++j) {
      const double c = dot(candidates.row(i), candidates.row(j));
      table(i + 1, j + 1) = c;
      table(j + 1, i + 1) = c;
    }
  }
  return table;
}

/// Re-ranks candidate rows against a query. Throws ZeroMatrix or
/// ZeroNormResult when the weighted candidates carry no principal direction.
template <typename Q, typename T>
RankedList adaption_rerank(std::span<const Q> query, const Matrix<T>& candidates,
                           const RerankParams& params) {
  params.validate();
  if (candidates.rows() == 0) throw error(errc::invalid_argument, "empty candidate pool");
  const SimilarityVector s = similarity_vector(query, candidates);
  if (candidates.rows() == 1) return rank_by_score(s);

  const Matrix<double> weighted = weighted_candidates(candidates, std::span<const double>(s));
  const PrincipalDecomposition pd =
      leading_left_singular(weighted, params.svd_tol, params.svd_max_iter);
  const std::vector<double> query_star = rerank_query(pd, candidates);

  const Matrix<double> table = similarity_table(std::span<const double>(query_star), candidates);
  const RerankParams p = params.clamped(candidates.rows());
  const std::vector<double> jac = jaccard_similarity(table, 0, p);

  std::vector<double> scores(candidates.rows());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = p.lambda * table(0, i + 1) + (1.0 - p.lambda) * jac[i + 1];
  }
  return rank_by_score(std::move(scores));
}

/// Pool form. Degenerate pools surface as RerankDegenerate(image_id).
inline RankedList adaption_rerank(const CandidatePool& pool, const EmbeddingMatrix& embeddings,
                                  const RerankParams& params) {
  const auto rows = pool.candidate_rows();
  const EmbeddingMatrix candidates = gather_rows(embeddings, std::span<const std::size_t>(rows));
  try {
    return adaption_rerank(embeddings.row(pool.query_row), candidates, params);
  } catch (const error& e) {
    if (e.code() == errc::zero_matrix || e.code() == errc::zero_norm_result) {
      throw error(errc::rerank_degenerate, pool.image_id + " (" + e.what() + ")");
    }
    throw;
  }
}

/// As adaption_rerank, but a degenerate pool falls back to ordering by the
/// raw query similarity with `fallback` set.
inline RankedList rerank_or_fallback(const CandidatePool& pool, const EmbeddingMatrix& embeddings,
                                     const RerankParams& params) {
  try {
    return adaption_rerank(pool, embeddings, params);
  } catch (const error& e) {
    if (e.code() != errc::rerank_degenerate) throw;
  }
  const auto rows = pool.candidate_rows();
  const EmbeddingMatrix candidates = gather_rows(embeddings, std::span<const std::size_t>(rows));
  return rank_by_score(similarity_vector(embeddings.row(pool.query_row), candidates), true);
}

inline std::vector<CaptionRecord> select_top(const RankedList& r, const CandidatePool& pool,
                                             std::size_t n) {
  if (n > pool.size()) {
    throw error(errc::n_too_large,
                "n=" + std::to_string(n) + " > pool size " + std::to_string(pool.size()));
  }
  std::vector<CaptionRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(pool.candidates[r.order[i]]);
  return out;
}

}  // namespace caplevel
