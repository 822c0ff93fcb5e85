#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "caplevel/error.hpp"
#include "caplevel/matrix.hpp"
#include "caplevel/random.hpp"

namespace caplevel {

/// Query-candidate similarities, one entry per candidate row.
using SimilarityVector = std::vector<double>;

/// Dominant left singular pair of a matrix.
struct PrincipalDecomposition {
  std::vector<double> u1;  ///< unit norm, largest-|entry| positive
  double sigma1 = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

inline constexpr double kDefaultSvdTol = 1e-10;
inline constexpr std::size_t kDefaultSvdMaxIter = 1000;

/// values[i] = <candidates.row(i), query>. Cosine similarity for unit rows.
template <typename Q, typename T>
SimilarityVector similarity_vector(std::span<const Q> query, const Matrix<T>& candidates) {
  if (query.size() != candidates.cols()) {
    throw error(errc::dim_mismatch, "query dim " + std::to_string(query.size()) +
                                        " vs candidate dim " + std::to_string(candidates.cols()));
  }
  SimilarityVector s(candidates.rows());
  for (std::size_t i = 0; i < candidates.rows(); ++i) s[i] = dot(candidates.row(i), query);
  return s;
}

/// Row i scaled by s[i]: the candidates masked by the column-broadcast similarity.
template <typename T>
Matrix<double> weighted_candidates(const Matrix<T>& candidates, std::span<const double> s) {
  if (s.size() != candidates.rows()) {
    throw error(errc::dim_mismatch, "weights " + std::to_string(s.size()) + " vs rows " +
                                        std::to_string(candidates.rows()));
  }
  Matrix<double> out(candidates.rows(), candidates.cols());
  for (std::size_t i = 0; i < candidates.rows(); ++i) {
    auto src = candidates.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = s[i] * static_cast<double>(src[j]);
  }
  return out;
}

namespace detail {

/// Flips the sign so the entry with the largest magnitude (first on ties) is positive.
inline void fix_sign(std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (!v.empty() && v[best] < 0.0) {
    for (double& x : v) x = -x;
  }
}

inline double normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
  return n;
}

}  // namespace detail

/// Leading left singular vector and value of `m`, by power iteration on the
/// Gram matrix m·mᵀ. Iteration stops once the sine of the angle between
/// successive iterates drops below `tol`, or after `max_iter` steps; the
/// result records which.
template <typename T>
PrincipalDecomposition leading_left_singular(const Matrix<T>& m, double tol = kDefaultSvdTol,
                                             std::size_t max_iter = kDefaultSvdMaxIter) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw error(errc::invalid_argument, "leading_left_singular on an empty matrix");
  }
  if (!(tol > 0.0)) throw error(errc::invalid_argument, "tol must be positive");

  bool all_zero = true;
  for (T x : m.data()) {
    if (std::abs(static_cast<double>(x)) > 1e-12) {
      all_zero = false;
      break;
    }
  }
  if (all_zero) throw error(errc::zero_matrix, "all entries within 1e-12 of zero");

  const std::size_t rows = m.rows();
  Matrix<double> gram(rows, rows);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = i; j < rows; ++j) {
      const double g = dot(m.row(i), m.row(j));
      gram(i, j) = g;
      gram(j, i) = g;
    }
  }

  // Fixed-seed start vector: deterministic, and almost surely not orthogonal
  // to the dominant eigenvector (a structured start such as e_j can be).
  SplitMix64 rng(0x5eed5eed5eed5eedULL);
  std::vector<double> u(rows);
  for (double& x : u) x = 0.5 + rng.uniform();
  detail::normalize(u);

  PrincipalDecomposition out;
  std::vector<double> next(rows);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    for (std::size_t i = 0; i < rows; ++i) next[i] = dot(gram.row(i), std::span<const double>(u));
    if (detail::normalize(next) == 0.0) {
      throw error(errc::zero_matrix, "Gram iterate vanished");
    }
    double proj = 0.0;
    for (std::size_t i = 0; i < rows; ++i) proj += next[i] * u[i];
    double sin2 = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const double r = next[i] - proj * u[i];
      sin2 += r * r;
    }
    u.swap(next);
    out.iterations = it;
    if (std::sqrt(sin2) < tol) {
      out.converged = true;
      break;
    }
  }

  detail::fix_sign(u);
  // sigma1 = ||mᵀ u||
  std::vector<double> mt_u(m.cols(), 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) mt_u[j] += u[i] * static_cast<double>(r[j]);
  }
  double s2 = 0.0;
  for (double x : mt_u) s2 += x * x;
  out.sigma1 = std::sqrt(s2);
  out.u1 = std::move(u);
  return out;
}

/// Principal direction of the candidate rows, u1ᵀ·candidates, L2-normalized.
template <typename T>
std::vector<double> rerank_query(const PrincipalDecomposition& pd, const Matrix<T>& candidates) {
  if (pd.u1.size() != candidates.rows()) {
    throw error(errc::dim_mismatch, "u1 length " + std::to_string(pd.u1.size()) + " vs rows " +
                                        std::to_string(candidates.rows()));
  }
  std::vector<double> q(candidates.cols(), 0.0);
  for (std::size_t i = 0; i < candidates.rows(); ++i) {
    auto r = candidates.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) q[j] += pd.u1[i] * static_cast<double>(r[j]);
  }
  if (detail::normalize(q) <= 1e-12) {
    throw error(errc::zero_norm_result, "u1ᵀ·candidates has zero norm");
  }
  return q;
}

}  // namespace caplevel
