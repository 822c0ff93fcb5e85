#pragma once

// Ingestion and validation of embeddings, caption records and query maps.
//
// Embedding file layout (all little-endian):
//   "EMB1" | u32 rows | u32 dim | rows*dim f32, row-major
//
// Caption file: UTF-8, one JSON object per line with string fields image_id,
// caption_id, text, optional string source and optional non-negative integer
// embedding_row.
//
// Query file: one JSON object per line, {"image_id": str, "query_row": int}.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "caplevel/error.hpp"
#include "caplevel/io.hpp"
#include "caplevel/matrix.hpp"

namespace caplevel {

inline constexpr std::array<char, 4> kEmbeddingMagic = {'E', 'M', 'B', '1'};
inline constexpr std::size_t kEmbeddingHeaderBytes = 12;

namespace detail {

inline std::uint32_t read_u32_le(const unsigned char* p) noexcept {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void append_u32_le(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<char>((v >> shift) & 0xffU));
  }
}

inline bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

}  // namespace detail

/// Rescales each row to unit L2 norm. Rows already within 1e-6 of unit norm
/// are left untouched, which makes normalization idempotent on float data.
inline void normalize_rows(EmbeddingMatrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    const double n = norm2(std::span<const float>(r));
    if (!(n > 1e-12)) {
      throw error(errc::zero_norm_row, "row " + std::to_string(i));
    }
    if (std::abs(n - 1.0) <= 1e-6) continue;
    for (float& x : r) x = static_cast<float>(static_cast<double>(x) / n);
  }
}

/// Parses an embedding file image and normalizes every row.
inline EmbeddingMatrix parse_embeddings(std::string_view bytes) {
  static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kEmbeddingMagic.size() ||
      std::memcmp(p, kEmbeddingMagic.data(), kEmbeddingMagic.size()) != 0) {
    throw error(errc::bad_magic, "expected \"EMB1\" at byte offset 0");
  }
  if (bytes.size() < kEmbeddingHeaderBytes) {
    throw error(errc::truncated_file,
                "header ends at byte offset " + std::to_string(bytes.size()));
  }
  const std::uint32_t rows = detail::read_u32_le(p + 4);
  const std::uint32_t dim = detail::read_u32_le(p + 8);
  if (rows == 0 || dim == 0) {
    throw error(errc::bad_header, "rows=" + std::to_string(rows) + " dim=" + std::to_string(dim));
  }
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * dim;
  const std::uint64_t expected = kEmbeddingHeaderBytes + count * 4;
  if (bytes.size() < expected) {
    throw error(errc::truncated_file, "declared " + std::to_string(rows) + "x" +
                                          std::to_string(dim) + " needs " +
                                          std::to_string(expected) + " bytes, data ends at offset " +
                                          std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw error(errc::trailing_data, "unexpected bytes after offset " + std::to_string(expected));
  }

  std::vector<float> data(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::size_t offset = kEmbeddingHeaderBytes + k * 4;
    const float v = std::bit_cast<float>(detail::read_u32_le(p + offset));
    if (!std::isfinite(v)) {
      throw error(errc::non_finite_value, "row " + std::to_string(k / dim) + " at byte offset " +
                                              std::to_string(offset));
    }
    data[k] = v;
  }
  EmbeddingMatrix m(rows, dim, std::move(data));
  normalize_rows(m);
  return m;
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(read_file(path));
}

inline std::string serialize_embeddings(const EmbeddingMatrix& m) {
  std::string out(kEmbeddingMagic.begin(), kEmbeddingMagic.end());
  out.reserve(kEmbeddingHeaderBytes + m.data().size() * 4);
  detail::append_u32_le(out, static_cast<std::uint32_t>(m.rows()));
  detail::append_u32_le(out, static_cast<std::uint32_t>(m.cols()));
  for (float v : m.data()) detail::append_u32_le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  atomic_write_file(path, serialize_embeddings(m));
}

struct CaptionRecord {
  std::string image_id;
  std::string caption_id;
  std::string text;
  std::string source;
  std::optional<std::size_t> embedding_row;

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

inline json to_json(const CaptionRecord& r) {
  json j = {{"image_id", r.image_id}, {"caption_id", r.caption_id}, {"text", r.text}};
  if (!r.source.empty()) j["source"] = r.source;
  if (r.embedding_row) j["embedding_row"] = *r.embedding_row;
  return j;
}

namespace detail {

inline std::string required_string(const json& obj, const char* field, std::size_t line_no) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) {
    throw error(errc::malformed_line, "line " + std::to_string(line_no) + ": field \"" + field +
                                          "\" missing or not a string");
  }
  return it->get<std::string>();
}

inline std::size_t required_index(const json& obj, const char* field, std::size_t line_no) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_number_integer() ||
      (it->is_number_integer() && !it->is_number_unsigned() && it->get<std::int64_t>() < 0)) {
    throw error(errc::malformed_line, "line " + std::to_string(line_no) + ": field \"" + field +
                                          "\" missing or not a non-negative integer");
  }
  return it->get<std::size_t>();
}

}  // namespace detail

inline std::vector<CaptionRecord> parse_captions(std::istream& in) {
  std::vector<CaptionRecord> out;
  std::set<std::pair<std::string, std::string>> seen;
  for_each_jsonl(in, "captions", [&](std::size_t line_no, const json& obj) {
    CaptionRecord r;
    r.image_id = detail::required_string(obj, "image_id", line_no);
    r.caption_id = detail::required_string(obj, "caption_id", line_no);
    r.text = detail::required_string(obj, "text", line_no);
    if (obj.contains("source")) r.source = detail::required_string(obj, "source", line_no);
    if (obj.contains("embedding_row")) {
      r.embedding_row = detail::required_index(obj, "embedding_row", line_no);
    }
    if (detail::is_blank(r.text)) {
      throw error(errc::empty_text, "line " + std::to_string(line_no) + " (" + r.image_id + ", " +
                                        r.caption_id + ")");
    }
    if (!seen.emplace(r.image_id, r.caption_id).second) {
      throw error(errc::duplicate_caption_id, "line " + std::to_string(line_no) + " (" +
                                                  r.image_id + ", " + r.caption_id + ")");
    }
    out.push_back(std::move(r));
  });
  return out;
}

inline std::vector<CaptionRecord> load_captions(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return parse_captions(in);
}

inline void write_captions(const std::filesystem::path& path,
                           const std::vector<CaptionRecord>& records) {
  std::vector<json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) lines.push_back(to_json(r));
  atomic_write_file(path, to_jsonl(lines));
}

using QueryMap = std::map<std::string, std::size_t>;

inline QueryMap parse_queries(std::istream& in) {
  QueryMap out;
  for_each_jsonl(in, "queries", [&](std::size_t line_no, const json& obj) {
    auto id = detail::required_string(obj, "image_id", line_no);
    auto row = detail::required_index(obj, "query_row", line_no);
    if (!out.emplace(id, row).second) {
      throw error(errc::malformed_line,
                  "line " + std::to_string(line_no) + ": duplicate query for " + id);
    }
  });
  return out;
}

inline QueryMap load_queries(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return parse_queries(in);
}

struct CandidatePool {
  std::string image_id;
  std::size_t query_row = 0;
  std::vector<CaptionRecord> candidates;

  std::size_t size() const noexcept { return candidates.size(); }

  std::vector<std::size_t> candidate_rows() const {
    std::vector<std::size_t> rows;
    rows.reserve(candidates.size());
    for (const auto& c : candidates) rows.push_back(*c.embedding_row);
    return rows;
  }

  friend bool operator==(const CandidatePool&, const CandidatePool&) = default;
};

/// Groups captions into one pool per image, sorted by image_id, with
/// candidates kept in input order.
inline std::vector<CandidatePool> assemble_pools(const std::vector<CaptionRecord>& captions,
                                                 const QueryMap& queries,
                                                 const EmbeddingMatrix& embeddings) {
  std::map<std::string, CandidatePool> by_image;
  for (const auto& c : captions) {
    auto q = queries.find(c.image_id);
    if (q == queries.end()) throw error(errc::missing_query, c.image_id);
    if (q->second >= embeddings.rows()) {
      throw error(errc::row_out_of_range, "query row " + std::to_string(q->second) + " for " +
                                              c.image_id + " >= " +
                                              std::to_string(embeddings.rows()));
    }
    if (!c.embedding_row) {
      throw error(errc::row_out_of_range,
                  "(" + c.image_id + ", " + c.caption_id + ") has no embedding_row");
    }
    if (*c.embedding_row >= embeddings.rows()) {
      throw error(errc::row_out_of_range, "(" + c.image_id + ", " + c.caption_id + ") row " +
                                              std::to_string(*c.embedding_row) + " >= " +
                                              std::to_string(embeddings.rows()));
    }
    auto& pool = by_image[c.image_id];
    pool.image_id = c.image_id;
    pool.query_row = q->second;
    pool.candidates.push_back(c);
  }
  std::vector<CandidatePool> out;
  out.reserve(by_image.size());
  for (auto& [id, pool] : by_image) out.push_back(std::move(pool));
  return out;
}

}  // namespace caplevel
