#pragma once

// Shared generators for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "caplevel/cider.hpp"
#include "caplevel/matrix.hpp"
#include "caplevel/random.hpp"
#include "oracles/jacobi.hpp"

namespace testing_support {

using caplevel::Matrix;
using caplevel::SplitMix64;

inline std::vector<double> gaussian_vector(SplitMix64& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

inline void unitize(std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (double& x : v) x /= s;
}

inline Matrix<double> gaussian_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols) {
  Matrix<double> m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline oracle::Dense to_dense(const Matrix<double>& m) {
  oracle::Dense d(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) d[i][j] = m(i, j);
  return d;
}

/// Synthetic pool: unit query and M unit candidates scattered around it with
/// noise of random scale, so similarities are spread out.
struct SyntheticPool {
  std::vector<double> query;
  Matrix<double> candidates;
};

inline SyntheticPool synthetic_pool(SplitMix64& rng, std::size_t m, std::size_t d,
                                    double min_noise = 0.3, double max_noise = 2.3) {
  SyntheticPool p;
  p.query = gaussian_vector(rng, d);
  unitize(p.query);
  p.candidates = Matrix<double>(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    const double noise = min_noise + (max_noise - min_noise) * rng.uniform();
    std::vector<double> c(d);
    for (std::size_t j = 0; j < d; ++j) c[j] = p.query[j] + noise * rng.normal() / std::sqrt(double(d));
    unitize(c);
    for (std::size_t j = 0; j < d; ++j) p.candidates(i, j) = c[j];
  }
  return p;
}

/// Pool whose candidates sit at cosine uniform in [0, max_cos] from the
/// query, with random residual directions orthogonal to it.
inline SyntheticPool separated_pool(SplitMix64& rng, std::size_t m, std::size_t d, double max_cos) {
  SyntheticPool p;
  p.query = gaussian_vector(rng, d);
  unitize(p.query);
  p.candidates = Matrix<double>(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    auto r = gaussian_vector(rng, d);
    double proj = 0;
    for (std::size_t j = 0; j < d; ++j) proj += r[j] * p.query[j];
    for (std::size_t j = 0; j < d; ++j) r[j] -= proj * p.query[j];
    unitize(r);
    const double a = max_cos * rng.uniform();
    const double b = std::sqrt(1 - a * a);
    for (std::size_t j = 0; j < d; ++j) p.candidates(i, j) = a * p.query[j] + b * r[j];
  }
  return p;
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix.
inline Matrix<double> random_orthogonal(SplitMix64& rng, std::size_t d) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < d) {
    auto v = gaussian_vector(rng, d);
    for (const auto& b : basis) {
      double p = 0;
      for (std::size_t i = 0; i < d; ++i) p += v[i] * b[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * b[i];
    }
    double n = 0;
    for (double x : v) n += x * x;
    if (n < 1e-8) continue;
    unitize(v);
    basis.push_back(std::move(v));
  }
  Matrix<double> q(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) q(i, j) = basis[i][j];
  return q;
}

inline std::vector<double> rotate(const std::vector<double>& v, const Matrix<double>& q) {
  std::vector<double> out(q.cols(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < q.cols(); ++j) out[j] += v[i] * q(i, j);
  return out;
}

inline Matrix<double> rotate(const Matrix<double>& m, const Matrix<double>& q) {
  Matrix<double> out(m.rows(), q.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.row(r).begin(), m.row(r).end());
    const auto rr = rotate(row, q);
    for (std::size_t j = 0; j < q.cols(); ++j) out(r, j) = rr[j];
  }
  return out;
}

/// Symmetric table of cosines of n random unit vectors in a low dimension,
/// with a unit diagonal. Low dimension keeps neighborhoods structured.
inline Matrix<double> random_table(SplitMix64& rng, std::size_t n, std::size_t d = 4) {
  std::vector<std::vector<double>> v;
  for (std::size_t i = 0; i < n; ++i) {
    v.push_back(gaussian_vector(rng, d));
    unitize(v.back());
  }
  Matrix<double> t(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += v[i][k] * v[j][k];
      t(i, j) = s;
    }
  return t;
}

inline std::vector<std::vector<double>> to_rows(const Matrix<double>& t) {
  std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t(i, j);
  return out;
}

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "a",     "the",   "dog",   "cat",    "man",   "woman", "runs",  "sits",  "on",
      "in",    "grass", "beach", "red",    "small", "big",   "ball",  "with",  "street",
      "park",  "bench", "water", "jumps",  "two",   "near",  "table", "white", "black"};
  return words;
}

inline caplevel::TokenSeq random_tokens(SplitMix64& rng, std::size_t min_len, std::size_t max_len) {
  const auto& w = vocabulary();
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  caplevel::TokenSeq t;
  for (std::size_t i = 0; i < len; ++i) t.push_back(w[rng.below(w.size())]);
  return t;
}

inline std::string join(const caplevel::TokenSeq& t) {
  std::string s;
  for (const auto& x : t) {
    if (!s.empty()) s += ' ';
    s += x;
  }
  return s;
}

/// Captions for `images` images from `sets` runs. Each image has a base
/// sentence; runs perturb a few of its words, and sometimes copy another
/// run's caption outright so exact ties occur.
inline std::vector<std::vector<std::string>> consensus_captions(SplitMix64& rng, std::size_t images,
                                                                std::size_t sets) {
  const auto& w = vocabulary();
  std::vector<std::vector<std::string>> out(sets, std::vector<std::string>(images));
  for (std::size_t img = 0; img < images; ++img) {
    const auto base = random_tokens(rng, 5, 10);
    for (std::size_t s = 0; s < sets; ++s) {
      if (s > 0 && rng.below(4) == 0) {
        out[s][img] = out[rng.below(s)][img];
        continue;
      }
      auto t = base;
      for (std::size_t edits = rng.below(4); edits > 0; --edits) t[rng.below(t.size())] = w[rng.below(w.size())];
      if (rng.below(3) == 0) t.push_back(w[rng.below(w.size())]);
      out[s][img] = join(t);
    }
  }
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("caplevel-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
