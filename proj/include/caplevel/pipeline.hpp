#pragma once

// Stage runners shared by the command line tool and the integration tests.
// Each runner loads and validates all of its inputs before producing any
// output, and returns the output files in memory; commit() then writes them
// atomically followed by the run manifest.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <openssl/evp.h>

#include "caplevel/cider.hpp"
#include "caplevel/corpus.hpp"
#include "caplevel/curate.hpp"
#include "caplevel/ensemble.hpp"
#include "caplevel/error.hpp"
#include "caplevel/io.hpp"
#include "caplevel/parallel.hpp"
#include "caplevel/rerank.hpp"
#include "caplevel/version.hpp"

namespace caplevel {

namespace fs = std::filesystem;

inline constexpr const char* kWorkersEnv = "CAPLEVEL_WORKERS";

inline std::size_t default_workers() {
  if (const char* env = std::getenv(kWorkersEnv)) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
    }
    throw error(errc::config_error, std::string(kWorkersEnv) + " must be a positive integer");
  }
  return 1;
}

struct RunConfig {
  fs::path embeddings;
  fs::path captions;
  fs::path queries;
  fs::path rankings;  ///< optional precomputed ranking manifest
  fs::path output_dir;
  RerankParams rerank;
  CurateParams curate;
  OrderMode order_mode = OrderMode::cider;
  int cider_n = kCiderOrder;
  double cider_sigma = kCiderSigma;
  double ensemble_threshold = kDefaultEnsembleThreshold;
  std::size_t workers = 1;
};

inline json to_json(const RunConfig& c) {
  return json{
      {"embeddings", c.embeddings.string()},
      {"captions", c.captions.string()},
      {"queries", c.queries.string()},
      {"rankings", c.rankings.string()},
      {"output_dir", c.output_dir.string()},
      {"rerank",
       {{"k1", c.rerank.k1},
        {"k2", c.rerank.k2},
        {"lambda", c.rerank.lambda},
        {"svd_tol", c.rerank.svd_tol},
        {"svd_max_iter", c.rerank.svd_max_iter}}},
      {"curate",
       {{"top_n", c.curate.top_n},
        {"top_k", c.curate.top_k},
        {"prompts", c.curate.prompts},
        {"split_ratio", std::to_string(c.curate.split_ratio.train) + ":" +
                            std::to_string(c.curate.split_ratio.val)},
        {"seed", c.curate.seed},
        {"order_mode", order_mode_string(c.order_mode)}}},
      {"cider", {{"n", c.cider_n}, {"sigma", c.cider_sigma}}},
      {"ensemble", {{"threshold", c.ensemble_threshold}}},
      {"workers", c.workers},
  };
}

namespace detail {

template <typename T>
void read_field(const json& obj, const std::string& section, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, fs::path>) {
      out = it->template get<std::string>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
      out = it->template get<T>();
    } else {
      out = it->template get<T>();
    }
  } catch (const std::exception& e) {
    throw error(errc::config_error, section + key + ": " + e.what());
  }
}

inline void reject_unknown(const json& obj, const std::string& section,
                           std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw error(errc::config_error, section + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw error(errc::config_error, "unknown key " + section + key);
  }
}

}  // namespace detail

/// Overlays the keys present in `j` onto `base`.
inline RunConfig config_from_json(const json& j, RunConfig base = {}) {
  using detail::read_field;
  detail::reject_unknown(j, "",
                         {"embeddings", "captions", "queries", "rankings", "output_dir", "rerank",
                          "curate", "cider", "ensemble", "workers"});
  read_field(j, "", "embeddings", base.embeddings);
  read_field(j, "", "captions", base.captions);
  read_field(j, "", "queries", base.queries);
  read_field(j, "", "rankings", base.rankings);
  read_field(j, "", "output_dir", base.output_dir);
  read_field(j, "", "workers", base.workers);
  if (auto it = j.find("rerank"); it != j.end()) {
    detail::reject_unknown(*it, "rerank.", {"k1", "k2", "lambda", "svd_tol", "svd_max_iter"});
    read_field(*it, "rerank.", "k1", base.rerank.k1);
    read_field(*it, "rerank.", "k2", base.rerank.k2);
    read_field(*it, "rerank.", "lambda", base.rerank.lambda);
    read_field(*it, "rerank.", "svd_tol", base.rerank.svd_tol);
    read_field(*it, "rerank.", "svd_max_iter", base.rerank.svd_max_iter);
  }
  if (auto it = j.find("curate"); it != j.end()) {
    detail::reject_unknown(*it, "curate.",
                           {"top_n", "top_k", "prompts", "split_ratio", "seed", "order_mode"});
    read_field(*it, "curate.", "top_n", base.curate.top_n);
    read_field(*it, "curate.", "top_k", base.curate.top_k);
    read_field(*it, "curate.", "prompts", base.curate.prompts);
    read_field(*it, "curate.", "seed", base.curate.seed);
    std::string ratio;
    read_field(*it, "curate.", "split_ratio", ratio);
    if (!ratio.empty()) base.curate.split_ratio = parse_split_ratio(ratio);
    std::string mode;
    read_field(*it, "curate.", "order_mode", mode);
    if (!mode.empty()) base.order_mode = parse_order_mode(mode);
  }
  if (auto it = j.find("cider"); it != j.end()) {
    detail::reject_unknown(*it, "cider.", {"n", "sigma"});
    read_field(*it, "cider.", "n", base.cider_n);
    read_field(*it, "cider.", "sigma", base.cider_sigma);
  }
  if (auto it = j.find("ensemble"); it != j.end()) {
    detail::reject_unknown(*it, "ensemble.", {"threshold"});
    read_field(*it, "ensemble.", "threshold", base.ensemble_threshold);
  }
  return base;
}

inline RunConfig load_config(const fs::path& path, RunConfig base = {}) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw error(errc::config_error, path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

/// Which inputs a command needs.
struct Requirements {
  bool embeddings = false;
  bool captions = false;
  bool queries = false;
  bool output_dir = false;
};

/// Parameter ranges plus existence of every required path. Rankings, when
/// given, stand in for embeddings and queries.
inline void validate_config(const RunConfig& c, const Requirements& req) {
  c.rerank.validate();
  c.curate.validate();
  if (c.cider_n < 1) throw error(errc::config_error, "cider.n must be >= 1");
  if (!(c.cider_sigma > 0.0)) throw error(errc::config_error, "cider.sigma must be > 0");
  if (c.workers < 1) throw error(errc::config_error, "workers must be >= 1");

  auto require = [](const fs::path& p, const char* what) {
    if (p.empty()) throw error(errc::config_error, std::string(what) + " path not set");
    if (!fs::exists(p)) throw error(errc::io_error, std::string(what) + " not found: " + p.string());
  };
  const bool have_rankings = !c.rankings.empty();
  if (have_rankings) require(c.rankings, "rankings");
  if (req.embeddings && !have_rankings) require(c.embeddings, "embeddings");
  if (req.queries && !have_rankings) require(c.queries, "queries");
  if (req.captions) require(c.captions, "captions");
  if (req.output_dir && c.output_dir.empty()) {
    throw error(errc::config_error, "output_dir not set");
  }
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw error(errc::internal, "SHA-256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

struct RunManifest {
  std::string command;
  json config;
  std::map<std::string, std::string> inputs;   ///< path -> sha256
  std::map<std::string, std::string> outputs;  ///< file name -> sha256
  std::map<std::string, std::size_t> counts;
  std::vector<SkippedImage> skipped;
  std::vector<std::pair<std::string, double>> stage_seconds;

  json to_json() const {
    json skipped_json = json::array();
    for (const auto& s : skipped) skipped_json.push_back({{"image_id", s.image_id}, {"reason", s.reason}});
    json stages = json::array();
    for (const auto& [name, secs] : stage_seconds) stages.push_back({{"stage", name}, {"seconds", secs}});
    return json{{"tool", "caplevel"},   {"version", kVersion}, {"command", command},
                {"config", config},     {"inputs", inputs},    {"outputs", outputs},
                {"counts", counts},     {"skipped", skipped_json}, {"stages", stages}};
  }
};

/// Output files of a run, held in memory until commit().
struct RunOutput {
  std::map<std::string, std::string> files;  ///< file name -> content
  RunManifest manifest;
};

class StageTimer {
 public:
  StageTimer(RunManifest& m, std::string name)
      : manifest_(m), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start_;
    manifest_.stage_seconds.emplace_back(name_, d.count());
  }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  RunManifest& manifest_;
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

/// Writes every output file, then the manifest, each via temp-file rename.
inline void commit(RunOutput& run, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [name, content] : run.files) {
    run.manifest.outputs[name] = sha256_hex(content);
  }
  for (const auto& [name, content] : run.files) atomic_write_file(dir / name, content);
  atomic_write_file(dir / "run_manifest.json", run.manifest.to_json().dump(2) + "\n");
}

struct LoadedCorpus {
  EmbeddingMatrix embeddings;
  std::vector<CaptionRecord> captions;
  std::vector<CandidatePool> pools;
};

namespace detail {

inline std::string digest_file(const fs::path& p) { return sha256_hex(read_file(p)); }

}  // namespace detail

inline LoadedCorpus load_corpus(const RunConfig& c, RunManifest& manifest) {
  StageTimer t(manifest, "load");
  LoadedCorpus out;
  out.embeddings = load_embeddings(c.embeddings);
  out.captions = load_captions(c.captions);
  const QueryMap queries = load_queries(c.queries);
  out.pools = assemble_pools(out.captions, queries, out.embeddings);
  for (const auto* p : {&c.embeddings, &c.captions, &c.queries}) {
    manifest.inputs[p->string()] = detail::digest_file(*p);
  }
  manifest.counts["captions"] = out.captions.size();
  manifest.counts["images"] = out.pools.size();
  return out;
}

inline std::vector<RankedList> rerank_pools(const std::vector<CandidatePool>& pools,
                                            const EmbeddingMatrix& embeddings,
                                            const RerankParams& params, std::size_t workers) {
  std::vector<RankedList> out(pools.size());
  parallel_for(pools.size(), workers, [&](std::size_t i) {
    out[i] = rerank_or_fallback(pools[i], embeddings, params);
  });
  return out;
}

/// One record per (image_id, rank), sorted by image then rank (1-based).
inline std::string ranking_manifest(const std::vector<CandidatePool>& pools,
                                    const std::vector<RankedList>& rankings) {
  std::vector<json> lines;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    const auto& r = rankings[i];
    for (std::size_t rank = 0; rank < r.order.size(); ++rank) {
      lines.push_back({{"image_id", pools[i].image_id},
                       {"rank", rank + 1},
                       {"caption_id", pools[i].candidates[r.order[rank]].caption_id},
                       {"score", r.score_at_rank(rank)},
                       {"fallback", r.fallback}});
    }
  }
  return to_jsonl(lines);
}

/// Pools built from captions alone (no embedding checks), sorted by image_id.
inline std::vector<CandidatePool> group_captions(const std::vector<CaptionRecord>& captions) {
  std::map<std::string, CandidatePool> by_image;
  for (const auto& c : captions) {
    auto& p = by_image[c.image_id];
    p.image_id = c.image_id;
    p.candidates.push_back(c);
  }
  std::vector<CandidatePool> out;
  for (auto& [id, p] : by_image) out.push_back(std::move(p));
  return out;
}

/// Reads a ranking manifest back into per-pool rankings. Every pool must be
/// ranked completely, and nothing else may be ranked.
inline std::vector<RankedList> parse_ranking_manifest(std::istream& in,
                                                      const std::vector<CandidatePool>& pools) {
  std::map<std::string, std::size_t> pool_index;
  for (std::size_t i = 0; i < pools.size(); ++i) pool_index[pools[i].image_id] = i;
  std::vector<std::map<std::size_t, std::pair<std::string, double>>> ranks(pools.size());
  std::vector<bool> fallback(pools.size(), false);
  for_each_jsonl(in, "rankings", [&](std::size_t line_no, const json& obj) {
    const auto image = detail::required_string(obj, "image_id", line_no);
    const auto caption = detail::required_string(obj, "caption_id", line_no);
    const auto rank = detail::required_index(obj, "rank", line_no);
    auto score = obj.find("score");
    if (score == obj.end() || !score->is_number()) {
      throw error(errc::malformed_line, "rankings line " + std::to_string(line_no) + ": score");
    }
    auto it = pool_index.find(image);
    if (it == pool_index.end()) throw error(errc::coverage_mismatch, "ranked image " + image + " has no captions");
    if (!ranks[it->second].emplace(rank, std::make_pair(caption, score->get<double>())).second) {
      throw error(errc::malformed_line, "rankings line " + std::to_string(line_no) + ": duplicate rank");
    }
    if (obj.value("fallback", false)) fallback[it->second] = true;
  });

  std::vector<RankedList> out(pools.size());
  for (std::size_t i = 0; i < pools.size(); ++i) {
    const auto& pool = pools[i];
    std::map<std::string, std::size_t> cand;
    for (std::size_t c = 0; c < pool.size(); ++c) cand[pool.candidates[c].caption_id] = c;
    if (ranks[i].size() != pool.size()) {
      throw error(errc::coverage_mismatch, pool.image_id + ": " + std::to_string(ranks[i].size()) +
                                               " ranked of " + std::to_string(pool.size()));
    }
    RankedList& r = out[i];
    r.scores.assign(pool.size(), 0.0);
    r.fallback = fallback[i];
    std::size_t expect = 1;
    std::set<std::size_t> used;
    for (const auto& [rank, entry] : ranks[i]) {
      auto c = cand.find(entry.first);
      if (rank != expect++ || c == cand.end() || !used.insert(c->second).second) {
        throw error(errc::coverage_mismatch, pool.image_id + ": ranking is not a permutation");
      }
      r.order.push_back(c->second);
      r.scores[c->second] = entry.second;
    }
  }
  return out;
}

inline void note_fallbacks(const std::vector<CandidatePool>& pools,
                           const std::vector<RankedList>& rankings, RunManifest& manifest) {
  std::size_t fallbacks = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    if (rankings[i].fallback) {
      ++fallbacks;
      manifest.skipped.push_back(
          {pools[i].image_id, "RerankDegenerate: ordered by query similarity"});
    }
  }
  manifest.counts["fallback_images"] = fallbacks;
}

inline RunOutput run_rerank(RunConfig c) {
  c.rankings.clear();
  validate_config(c, {.embeddings = true, .captions = true, .queries = true});
  RunOutput run;
  run.manifest.command = "rerank";
  run.manifest.config = to_json(c);
  const LoadedCorpus corpus = load_corpus(c, run.manifest);
  std::vector<RankedList> rankings;
  {
    StageTimer t(run.manifest, "rerank");
    rankings = rerank_pools(corpus.pools, corpus.embeddings, c.rerank, c.workers);
  }
  note_fallbacks(corpus.pools, rankings, run.manifest);
  run.files["rankings.jsonl"] = ranking_manifest(corpus.pools, rankings);
  return run;
}

namespace detail {

/// Pools and rankings from either a ranking manifest or an inline re-rank.
inline std::pair<std::vector<CandidatePool>, std::vector<RankedList>> ranked_pools(
    const RunConfig& c, RunOutput& run) {
  if (!c.rankings.empty()) {
    std::vector<CandidatePool> pools;
    std::vector<RankedList> rankings;
    {
      StageTimer t(run.manifest, "load");
      const auto captions = load_captions(c.captions);
      pools = group_captions(captions);
      std::istringstream in(read_file(c.rankings));
      rankings = parse_ranking_manifest(in, pools);
      for (const auto* p : {&c.captions, &c.rankings}) {
        run.manifest.inputs[p->string()] = digest_file(*p);
      }
      run.manifest.counts["captions"] = captions.size();
      run.manifest.counts["images"] = pools.size();
    }
    return {std::move(pools), std::move(rankings)};
  }
  LoadedCorpus corpus = load_corpus(c, run.manifest);
  std::vector<RankedList> rankings;
  {
    StageTimer t(run.manifest, "rerank");
    rankings = rerank_pools(corpus.pools, corpus.embeddings, c.rerank, c.workers);
  }
  note_fallbacks(corpus.pools, rankings, run.manifest);
  run.files["rankings.jsonl"] = ranking_manifest(corpus.pools, rankings);
  return {std::move(corpus.pools), std::move(rankings)};
}

inline std::vector<Foundation> foundation_of(const std::vector<CandidatePool>& pools,
                                             const std::vector<RankedList>& rankings,
                                             std::size_t top_n) {
  std::vector<Foundation> out;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (pools[i].size() < top_n) continue;
    Foundation f{pools[i].image_id, {}};
    for (const auto& rec : select_top(rankings[i], pools[i], top_n)) f.captions.push_back(rec.text);
    out.push_back(std::move(f));
  }
  return out;
}

inline std::string inference_manifest(const std::map<std::string, std::vector<std::string>>& prompts,
                                      const std::map<std::string, Split>* splits) {
  std::vector<json> lines;
  for (const auto& [image, texts] : prompts) {
    json rec = {{"image_id", image},
                {"prompts", texts},
                {"level", level_string(CaptionLevel::best_match)},
                {"template", render_template(texts, CaptionLevel::best_match, TemplateMode::inference)}};
    if (splits) rec["split"] = split_string(splits->at(image));
    lines.push_back(std::move(rec));
  }
  return to_jsonl(lines);
}

}  // namespace detail

inline RunOutput run_build_dataset(RunConfig c) {
  validate_config(c, {.embeddings = true, .captions = true, .queries = true});
  RunOutput run;
  run.manifest.command = "build-dataset";
  run.manifest.config = to_json(c);
  auto [pools, rankings] = detail::ranked_pools(c, run);

  CuratedDataset ds;
  {
    StageTimer t(run.manifest, "curate");
    ds = build_dataset(pools, rankings, c.curate, c.workers);
  }
  std::map<std::string, std::vector<std::string>> inference;
  {
    StageTimer t(run.manifest, "inference_prompts");
    const auto foundation = detail::foundation_of(pools, rankings, c.curate.top_n);
    if (!foundation.empty()) {
      const CiderModel model = foundation_idf(foundation, c.cider_n, c.cider_sigma);
      inference = select_inference_prompts(foundation, c.curate.prompts, c.order_mode, model, c.workers);
    }
  }

  std::vector<json> examples;
  std::vector<json> templates;
  std::map<std::string, Split> splits;
  std::set<std::string> train_images;
  std::set<std::string> val_images;
  for (const auto& ex : ds.examples) {
    splits[ex.image_id] = ex.split;
    (ex.split == Split::train ? train_images : val_images).insert(ex.image_id);
    examples.push_back({{"image_id", ex.image_id},
                        {"caption_id", ex.caption_id},
                        {"rank", ex.rank},
                        {"level", level_string(ex.level)},
                        {"split", split_string(ex.split)},
                        {"ground_truth", ex.ground_truth},
                        {"prompts", ex.prompts},
                        {"template", ex.rendered_template}});
    templates.push_back({{"image_id", ex.image_id},
                         {"caption_id", ex.caption_id},
                         {"split", split_string(ex.split)},
                         {"template", ex.rendered_template},
                         {"target", ex.ground_truth}});
  }
  std::vector<json> kb;
  std::size_t kb_entries = 0;
  for (const auto& [image, entries] : ds.kb) {
    for (const auto& e : entries) {
      kb.push_back({{"image_id", image}, {"rank", e.rank}, {"caption_id", e.caption_id}, {"text", e.text}});
      ++kb_entries;
    }
  }
  run.files["examples.jsonl"] = to_jsonl(examples);
  run.files["templates.jsonl"] = to_jsonl(templates);
  run.files["kb.jsonl"] = to_jsonl(kb);
  run.files["inference_prompts.jsonl"] = detail::inference_manifest(inference, &splits);
  run.manifest.skipped.insert(run.manifest.skipped.end(), ds.skipped.begin(), ds.skipped.end());
  run.manifest.counts["examples"] = ds.examples.size();
  run.manifest.counts["kb_entries"] = kb_entries;
  run.manifest.counts["train_images"] = train_images.size();
  run.manifest.counts["val_images"] = val_images.size();
  run.manifest.counts["skipped_images"] = ds.skipped.size();
  return run;
}

inline RunOutput run_render_prompts(RunConfig c) {
  validate_config(c, {.embeddings = true, .captions = true, .queries = true});
  RunOutput run;
  run.manifest.command = "render-prompts";
  run.manifest.config = to_json(c);
  auto [pools, rankings] = detail::ranked_pools(c, run);
  StageTimer t(run.manifest, "inference_prompts");
  const auto foundation = detail::foundation_of(pools, rankings, c.curate.top_n);
  for (const auto& p : pools) {
    if (p.size() < c.curate.top_n) {
      run.manifest.skipped.push_back({p.image_id, "PoolTooSmall: " + std::to_string(p.size()) +
                                                      " candidates < top_n " +
                                                      std::to_string(c.curate.top_n)});
    }
  }
  std::map<std::string, std::vector<std::string>> inference;
  if (!foundation.empty()) {
    const CiderModel model = foundation_idf(foundation, c.cider_n, c.cider_sigma);
    inference = select_inference_prompts(foundation, c.curate.prompts, c.order_mode, model, c.workers);
  }
  run.files["inference_prompts.jsonl"] = detail::inference_manifest(inference, nullptr);
  run.manifest.counts["images"] = inference.size();
  return run;
}

struct ScoreReport {
  std::vector<std::pair<std::string, double>> per_image;  ///< ascending image_id
  double mean = 0.0;
};

/// CIDEr-D of one candidate caption per image against that image's
/// references. IDF comes from `idf_docs` when given, else from the references.
inline ScoreReport score_captions(const std::vector<CaptionRecord>& candidates,
                                  const std::vector<CaptionRecord>& references,
                                  const std::vector<CaptionRecord>* idf_docs, int max_n,
                                  double sigma, std::size_t workers = 1) {
  std::map<std::string, std::string> cand;
  for (const auto& c : candidates) {
    if (!cand.emplace(c.image_id, c.text).second) {
      throw error(errc::duplicate_caption_id, "more than one candidate for " + c.image_id);
    }
  }
  std::map<std::string, std::vector<TokenSeq>> refs;
  for (const auto& r : references) refs[r.image_id].push_back(tokenize(r.text));
  std::vector<TokenSeq> docs;
  for (const auto& d : idf_docs ? *idf_docs : references) docs.push_back(tokenize(d.text));
  const CiderModel model = build_idf(std::span<const TokenSeq>(docs), max_n, sigma);

  std::string missing;
  for (const auto& [image, text] : cand) {
    if (!refs.contains(image)) missing += (missing.empty() ? "" : ", ") + image;
  }
  if (!missing.empty()) throw error(errc::empty_refs, "no references for [" + missing + "]");

  ScoreReport report;
  for (const auto& [image, text] : cand) report.per_image.emplace_back(image, 0.0);
  parallel_for(report.per_image.size(), workers, [&](std::size_t i) {
    auto& [image, score] = report.per_image[i];
    const auto& r = refs.at(image);
    score = cider_d(tokenize(cand.at(image)), std::span<const TokenSeq>(r), model);
  });
  double sum = 0.0;
  for (const auto& [image, s] : report.per_image) sum += s;
  report.mean = report.per_image.empty() ? 0.0 : sum / static_cast<double>(report.per_image.size());
  return report;
}

inline std::string score_manifest(const ScoreReport& r) {
  std::vector<json> lines;
  for (const auto& [image, s] : r.per_image) lines.push_back({{"image_id", image}, {"cider", s}});
  lines.push_back({{"summary", {{"images", r.per_image.size()},
                                {"mean_cider", r.mean},
                                {"mean_cider_x100", r.mean * 100.0}}}});
  return to_jsonl(lines);
}

/// Reads {"run_id": str, "score": number} lines.
inline std::map<std::string, double> parse_run_scores(std::istream& in) {
  std::map<std::string, double> out;
  for_each_jsonl(in, "scores", [&](std::size_t line_no, const json& obj) {
    const auto run = detail::required_string(obj, "run_id", line_no);
    auto s = obj.find("score");
    if (s == obj.end() || !s->is_number()) {
      throw error(errc::malformed_line, "scores line " + std::to_string(line_no) + ": score");
    }
    if (!out.emplace(run, s->get<double>()).second) {
      throw error(errc::malformed_line, "scores line " + std::to_string(line_no) + ": duplicate run " + run);
    }
  });
  return out;
}

inline std::string consensus_manifest(const ConsensusResult& r) {
  std::vector<json> lines;
  for (const auto& ic : r.images) {
    json scores = json::object();
    for (const auto& rs : ic.scores) scores[rs.run_id] = rs.score;
    lines.push_back({{"image_id", ic.image_id},
                     {"run_id", ic.run_id},
                     {"caption", ic.caption},
                     {"score", ic.score},
                     {"scores", scores}});
  }
  return to_jsonl(lines);
}

/// Optional score filter, then consensus selection. IDF over the surviving
/// sets unless `idf_docs` is given.
inline ConsensusResult run_consensus(std::vector<PredictionSet> sets,
                                     const std::map<std::string, double>* run_scores,
                                     double threshold, const std::vector<CaptionRecord>* idf_docs,
                                     int max_n, double sigma, std::size_t workers = 1) {
  if (run_scores) sets = filter_sets(sets, *run_scores, threshold);
  CiderModel model;
  if (idf_docs) {
    std::vector<TokenSeq> docs;
    for (const auto& d : *idf_docs) docs.push_back(tokenize(d.text));
    model = build_idf(std::span<const TokenSeq>(docs), max_n, sigma);
  } else {
    detail::validate_sets(sets);
    model = consensus_idf(sets, max_n, sigma);
  }
  return consensus_select(std::move(sets), model, workers);
}

}  // namespace caplevel
