// caplevel: command line front end for re-ranking, dataset curation,
// prompt rendering, CIDEr-D scoring and consensus ensembling.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "caplevel/pipeline.hpp"

namespace {

using namespace caplevel;
namespace fs = std::filesystem;

/// Flags shared by the corpus-driven subcommands. Each is applied on top of
/// the config file only when given on the command line.
struct CorpusFlags {
  std::string config;
  std::string embeddings, captions, queries, rankings, out_dir;
  std::size_t k1 = 0, k2 = 0, top_n = 0, top_k = 0, prompts = 0, workers = 0;
  double lambda = 0.0;
  std::string split_ratio, order_mode;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> opts;

  void attach(CLI::App* sub, bool curate) {
    sub->add_option("--config", config, "Run config (JSON); flags override it")->check(CLI::ExistingFile);
    opts.push_back(sub->add_option("--embeddings", embeddings, "Embedding file (EMB1)"));
    opts.push_back(sub->add_option("--captions", captions, "Caption records (JSONL)"));
    opts.push_back(sub->add_option("--queries", queries, "Query rows (JSONL)"));
    opts.push_back(sub->add_option("--out-dir", out_dir, "Output directory"));
    opts.push_back(sub->add_option("--k1", k1, "k-reciprocal neighborhood size"));
    opts.push_back(sub->add_option("--k2", k2, "Local query expansion size"));
    opts.push_back(sub->add_option("--lambda", lambda, "Cosine weight in the final score"));
    opts.push_back(sub->add_option("--workers", workers, "Worker threads"));
    if (curate) {
      opts.push_back(sub->add_option("--rankings", rankings, "Precomputed ranking manifest"));
      opts.push_back(sub->add_option("--top-n", top_n, "Foundation depth per image"));
      opts.push_back(sub->add_option("--top-k", top_k, "Leveled ground truths per image"));
      opts.push_back(sub->add_option("--prompts", prompts, "Knowledge base prompts per template"));
      opts.push_back(sub->add_option("--split-ratio", split_ratio, "train:val image ratio"));
      opts.push_back(sub->add_option("--seed", seed, "Run seed"));
      opts.push_back(sub->add_option("--order-mode", order_mode, "Inference prompt order")
                         ->check(CLI::IsMember({"cider", "retrieval"})));
    }
  }

  bool given(const char* name) const {
    for (auto* o : opts) {
      if (o->check_lname(name) && o->count() > 0) return true;
    }
    return false;
  }

  RunConfig resolve() const {
    RunConfig c;
    c.workers = default_workers();
    if (!config.empty()) c = load_config(config, c);
    if (given("embeddings")) c.embeddings = embeddings;
    if (given("captions")) c.captions = captions;
    if (given("queries")) c.queries = queries;
    if (given("rankings")) c.rankings = rankings;
    if (given("out-dir")) c.output_dir = out_dir;
    if (given("k1")) c.rerank.k1 = k1;
    if (given("k2")) c.rerank.k2 = k2;
    if (given("lambda")) c.rerank.lambda = lambda;
    if (given("workers")) c.workers = workers;
    if (given("top-n")) c.curate.top_n = top_n;
    if (given("top-k")) c.curate.top_k = top_k;
    if (given("prompts")) c.curate.prompts = prompts;
    if (given("split-ratio")) c.curate.split_ratio = parse_split_ratio(split_ratio);
    if (given("seed")) c.curate.seed = seed;
    if (given("order-mode")) c.order_mode = parse_order_mode(order_mode);
    return c;
  }
};

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content;
  } else {
    atomic_write_file(out_path, content);
  }
}

void report(const RunOutput& run, const fs::path& dir) {
  std::cerr << run.manifest.command << ": wrote";
  for (const auto& [name, content] : run.files) std::cerr << ' ' << (dir / name).string();
  std::cerr << '\n';
  for (const auto& [key, n] : run.manifest.counts) std::cerr << "  " << key << ": " << n << '\n';
  for (const auto& s : run.manifest.skipped) std::cerr << "  skipped " << s.image_id << ": " << s.reason << '\n';
}

int run_dir_command(const CorpusFlags& flags, RunOutput (*runner)(RunConfig)) {
  const RunConfig c = flags.resolve();
  if (c.output_dir.empty()) throw error(errc::config_error, "--out-dir (or output_dir) is required");
  RunOutput run = runner(c);
  commit(run, c.output_dir);
  report(run, c.output_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caplevel: caption re-ranking, curation and CIDEr-D consensus toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CorpusFlags rerank_flags;
  auto* rerank = app.add_subcommand("rerank", "Adaption re-ranking of every image's caption pool");
  rerank_flags.attach(rerank, false);

  CorpusFlags dataset_flags;
  auto* dataset = app.add_subcommand("build-dataset", "Curated examples, knowledge base and templates");
  dataset_flags.attach(dataset, true);

  CorpusFlags render_flags;
  auto* render = app.add_subcommand("render-prompts", "Inference templates from the foundation captions");
  render_flags.attach(render, true);

  std::string score_cands, score_refs, score_idf, score_out, score_config;
  int score_n = kCiderOrder;
  double score_sigma = kCiderSigma;
  std::size_t score_workers = 0;
  auto* score = app.add_subcommand("score", "CIDEr-D of candidate captions against references");
  score->add_option("--config", score_config, "Run config (JSON)")->check(CLI::ExistingFile);
  score->add_option("--candidates", score_cands, "One caption record per image")->required();
  score->add_option("--references", score_refs, "Reference caption records")->required();
  score->add_option("--idf-corpus", score_idf, "Caption records to take IDF from instead of the references");
  auto* score_n_opt = score->add_option("--cider-n", score_n, "Max n-gram order");
  auto* score_sigma_opt = score->add_option("--sigma", score_sigma, "Length penalty width");
  auto* score_workers_opt = score->add_option("--workers", score_workers, "Worker threads");
  score->add_option("--out", score_out, "Output file (default stdout)");

  std::vector<std::string> ens_preds;
  std::string ens_scores, ens_idf, ens_out, ens_config;
  double ens_threshold = kDefaultEnsembleThreshold;
  int ens_n = kCiderOrder;
  double ens_sigma = kCiderSigma;
  std::size_t ens_workers = 0;
  auto* ensemble = app.add_subcommand("ensemble", "CIDEr consensus over prediction sets");
  ensemble->add_option("--config", ens_config, "Run config (JSON)")->check(CLI::ExistingFile);
  ensemble->add_option("--predictions", ens_preds, "Prediction files (caption_id = run_id)")
      ->required()
      ->expected(1, -1);
  ensemble->add_option("--scores", ens_scores, "Per-run corpus scores (JSONL run_id, score)");
  auto* ens_threshold_opt =
      ensemble->add_option("--threshold", ens_threshold, "Keep runs scoring strictly above this");
  ensemble->add_option("--idf-corpus", ens_idf, "Caption records to take IDF from");
  auto* ens_n_opt = ensemble->add_option("--cider-n", ens_n, "Max n-gram order");
  auto* ens_sigma_opt = ensemble->add_option("--sigma", ens_sigma, "Length penalty width");
  auto* ens_workers_opt = ensemble->add_option("--workers", ens_workers, "Worker threads");
  ensemble->add_option("--out", ens_out, "Output file (default stdout)");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate-config", "Check a run config and the paths it names");
  validate->add_option("config", validate_path, "Config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(exit_status::config);
  }

  try {
    if (*rerank) return run_dir_command(rerank_flags, &run_rerank);
    if (*dataset) return run_dir_command(dataset_flags, &run_build_dataset);
    if (*render) return run_dir_command(render_flags, &run_render_prompts);

    if (*score) {
      RunConfig c;
      c.workers = default_workers();
      if (!score_config.empty()) c = load_config(score_config, c);
      if (score_n_opt->count()) c.cider_n = score_n;
      if (score_sigma_opt->count()) c.cider_sigma = score_sigma;
      if (score_workers_opt->count()) c.workers = score_workers;
      const auto cands = load_captions(score_cands);
      const auto refs = load_captions(score_refs);
      std::vector<CaptionRecord> idf;
      if (!score_idf.empty()) idf = load_captions(score_idf);
      const auto rep = score_captions(cands, refs, score_idf.empty() ? nullptr : &idf, c.cider_n,
                                      c.cider_sigma, c.workers);
      emit(score_out, score_manifest(rep));
      return 0;
    }

    if (*ensemble) {
      RunConfig c;
      c.workers = default_workers();
      if (!ens_config.empty()) c = load_config(ens_config, c);
      if (ens_threshold_opt->count()) c.ensemble_threshold = ens_threshold;
      if (ens_n_opt->count()) c.cider_n = ens_n;
      if (ens_sigma_opt->count()) c.cider_sigma = ens_sigma;
      if (ens_workers_opt->count()) c.workers = ens_workers;
      std::vector<CaptionRecord> records;
      for (const auto& p : ens_preds) {
        auto part = load_captions(p);
        records.insert(records.end(), part.begin(), part.end());
      }
      auto sets = prediction_sets_from_records(records);
      std::map<std::string, double> run_scores;
      if (!ens_scores.empty()) {
        std::istringstream in(read_file(ens_scores));
        run_scores = parse_run_scores(in);
      }
      std::vector<CaptionRecord> idf;
      if (!ens_idf.empty()) idf = load_captions(ens_idf);
      const auto result =
          run_consensus(std::move(sets), ens_scores.empty() ? nullptr : &run_scores,
                        c.ensemble_threshold, ens_idf.empty() ? nullptr : &idf, c.cider_n,
                        c.cider_sigma, c.workers);
      emit(ens_out, consensus_manifest(result));
      return 0;
    }

    if (*validate) {
      const RunConfig c = load_config(validate_path);
      validate_config(c, {});
      for (const auto* p : {&c.embeddings, &c.captions, &c.queries, &c.rankings}) {
        if (!p->empty() && !fs::exists(*p)) throw error(errc::io_error, "not found: " + p->string());
      }
      std::cout << to_json(c).dump(2) << '\n';
      return 0;
    }
  } catch (const error& e) {
    std::cerr << "caplevel: " << e.what() << '\n';
    return static_cast<int>(exit_status_for(e.code()));
  } catch (const fs::filesystem_error& e) {
    std::cerr << "caplevel: IOError: " << e.what() << '\n';
    return static_cast<int>(exit_status::io);
  } catch (const std::exception& e) {
    std::cerr << "caplevel: internal error: " << e.what() << '\n';
    return static_cast<int>(exit_status::internal);
  }
  return static_cast<int>(exit_status::internal);
}
