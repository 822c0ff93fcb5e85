#pragma once

// Deterministic synthetic corpora: per-image query embeddings, candidate
// embeddings scattered around the query at increasing noise levels, and
// template captions that drift further from the image's "true" scene as the
// noise grows.

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "caplevel/corpus.hpp"
#include "caplevel/io.hpp"
#include "caplevel/random.hpp"

namespace caplevel {

struct FixtureSpec {
  std::size_t images = 5;
  std::size_t candidates = 60;
  std::size_t dim = 32;
  std::size_t degenerate_images = 0;  ///< trailing images whose query is orthogonal to every candidate
  std::uint64_t seed = 1;
};

struct Fixture {
  EmbeddingMatrix embeddings;
  std::vector<CaptionRecord> captions;
  QueryMap queries;
};

namespace detail {

inline constexpr std::array<const char*, 12> kSubjects = {
    "dog", "cat", "man", "woman", "child", "bird", "horse", "car", "train", "boat", "cow", "girl"};
inline constexpr std::array<const char*, 10> kAdjectives = {
    "small", "large", "brown", "white", "black", "young", "old", "red", "happy", "wet"};
inline constexpr std::array<const char*, 10> kVerbs = {
    "running", "sitting", "standing", "walking", "jumping", "sleeping", "eating", "playing",
    "waiting", "resting"};
inline constexpr std::array<const char*, 10> kPlaces = {
    "grass", "beach", "street", "field", "table", "snow", "road", "water", "park", "bench"};

struct Scene {
  std::size_t adj, subject, verb, place;
};

inline std::string scene_text(const Scene& s) {
  return std::string("a ") + kAdjectives[s.adj] + " " + kSubjects[s.subject] + " " +
         kVerbs[s.verb] + " on the " + kPlaces[s.place];
}

}  // namespace detail

inline Fixture make_fixture(const FixtureSpec& spec) {
  using namespace detail;
  SplitMix64 rng(mix64(spec.seed));
  const std::size_t per_image = spec.candidates + 1;
  Fixture fx;
  fx.embeddings = EmbeddingMatrix(spec.images * per_image, spec.dim);

  for (std::size_t img = 0; img < spec.images; ++img) {
    char id_buf[32];
    std::snprintf(id_buf, sizeof id_buf, "img%04zu", img);
    const std::string image_id = id_buf;
    const std::size_t qrow = img * per_image;
    fx.queries[image_id] = qrow;
    const bool degenerate = img + spec.degenerate_images >= spec.images;

    auto q = fx.embeddings.row(qrow);
    if (degenerate) {
      q[0] = 1.0f;
    } else {
      for (float& x : q) x = static_cast<float>(rng.normal());
    }

    const Scene truth{rng.below(kAdjectives.size()), rng.below(kSubjects.size()),
                      rng.below(kVerbs.size()), rng.below(kPlaces.size())};
    for (std::size_t c = 0; c < spec.candidates; ++c) {
      const std::size_t row = qrow + 1 + c;
      auto r = fx.embeddings.row(row);
      const double noise = 0.2 + 3.0 * static_cast<double>(c) / static_cast<double>(spec.candidates);
      for (std::size_t d = 0; d < spec.dim; ++d) {
        r[d] = static_cast<float>(static_cast<double>(q[d]) + noise * rng.normal());
      }
      if (degenerate) r[0] = 0.0f;

      // Caption quality follows the noise level: each slot keeps the true
      // value with probability decreasing in c.
      const double keep = 1.0 - 0.8 * static_cast<double>(c) / static_cast<double>(spec.candidates);
      Scene s = truth;
      if (rng.uniform() > keep) s.adj = rng.below(kAdjectives.size());
      if (rng.uniform() > keep) s.subject = rng.below(kSubjects.size());
      if (rng.uniform() > keep) s.verb = rng.below(kVerbs.size());
      if (rng.uniform() > keep) s.place = rng.below(kPlaces.size());

      CaptionRecord rec;
      rec.image_id = image_id;
      rec.caption_id = "c" + std::to_string(c);
      rec.text = scene_text(s);
      rec.source = c % 3 == 0 ? "ofa" : (c % 3 == 1 ? "blip2" : "mplug");
      rec.embedding_row = row;
      fx.captions.push_back(std::move(rec));
    }
  }
  normalize_rows(fx.embeddings);
  return fx;
}

struct FixturePaths {
  std::filesystem::path embeddings;
  std::filesystem::path captions;
  std::filesystem::path queries;
};

inline FixturePaths write_fixture(const Fixture& fx, const std::filesystem::path& dir) {
  FixturePaths p{dir / "embeddings.emb", dir / "captions.jsonl", dir / "queries.jsonl"};
  write_embeddings(p.embeddings, fx.embeddings);
  write_captions(p.captions, fx.captions);
  std::vector<json> q;
  for (const auto& [image, row] : fx.queries) q.push_back({{"image_id", image}, {"query_row", row}});
  atomic_write_file(p.queries, to_jsonl(q));
  return p;
}

}  // namespace caplevel
