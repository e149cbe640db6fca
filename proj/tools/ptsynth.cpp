#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ptsynth/analysis.hpp"
#include "ptsynth/clo.hpp"
#include "ptsynth/dedup.hpp"
#include "ptsynth/emb_io.hpp"
#include "ptsynth/error.hpp"
#include "ptsynth/parallel.hpp"
#include "ptsynth/pipeline.hpp"
#include "ptsynth/pseudo.hpp"
#include "ptsynth/retrieval.hpp"
#include "ptsynth/theory.hpp"
#include "ptsynth/vocab.hpp"

using namespace ptsynth;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Everything a flag can set; unset flags leave the config file's value alone.
struct Flags {
  std::string config;
  std::optional<std::string> images, vocabulary, templates, vocab_embeddings, out, provider, schedule;
  std::optional<std::size_t> k, m, t, batch_n, schedule_total, gaussian_draws, encode_batch;
  std::optional<double> xi, lambda, tau, score_floor;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::vector<std::string> deny;
  bool iterative = false, exhaustive = false, stream = false;
};

void add_pipeline_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "TOML config; flags override it")->check(CLI::ExistingFile);
  app->add_option("--images", f.images, "image embeddings (EMB1)");
  app->add_option("--vocabulary", f.vocabulary, "category -> words JSON");
  app->add_option("--templates", f.templates, "prompt templates JSON");
  app->add_option("--vocab-embeddings", f.vocab_embeddings, "precomputed word embeddings (EMB1)");
  app->add_option("--provider", f.provider, "synthetic | synthetic:<lexicon.emb> | endpoint:<addr>");
  app->add_option("--k", f.k, "words kept per category");
  app->add_option("--m", f.m, "captions kept per image");
  app->add_flag("--iterative", f.iterative, "two-stage caption synthesis (default)");
  app->add_flag("--exhaustive", f.exhaustive, "score every full-template caption");
  app->add_option("--score-floor", f.score_floor, "drop captions scoring below this");
  app->add_option("--encode-batch", f.encode_batch, "captions per provider call");
  app->add_option("--xi", f.xi, "Gaussian perturbation level (default 3)");
  app->add_option("--t", f.t, "refinement steps (default 10)");
  app->add_option("--lambda", f.lambda, "refinement step size (default 0.01)");
  app->add_option("--tau", f.tau, "softmax temperature (default 0.5)");
  app->add_option("--batch-n", f.batch_n, "refinement batch size (default 64)");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--schedule", f.schedule, "Gaussian mixing schedule")->check(CLI::IsMember({"linear", "step"}));
  app->add_option("--schedule-total", f.schedule_total, "length of the mixed stream");
  app->add_option("--gaussian-draws", f.gaussian_draws, "Gaussian pairs per image");
  app->add_option("--deny", f.deny, "words or categories to drop");
  app->add_flag("--stream", f.stream, "also write the mixed training stream");
  app->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  app->add_option("--out", f.out, "output path");
}

PipelineConfig resolve(const Flags& f) {
  PipelineConfig cfg;
  if (!f.config.empty()) cfg = load_pipeline_config(f.config);
  if (f.images) cfg.images = *f.images;
  if (f.vocabulary) cfg.vocabulary = *f.vocabulary;
  if (f.templates) cfg.templates = *f.templates;
  if (f.vocab_embeddings) cfg.vocab_embeddings = *f.vocab_embeddings;
  if (f.out) cfg.output = *f.out;
  if (f.provider) cfg.provider = *f.provider;
  if (f.k) cfg.retrieval.k = *f.k;
  if (f.m) cfg.retrieval.m = *f.m;
  if (f.iterative && f.exhaustive) throw Error(ErrorCode::InvalidArgument, "--iterative and --exhaustive conflict");
  if (f.iterative) cfg.retrieval.iterative = true;
  if (f.exhaustive) cfg.retrieval.iterative = false;
  if (f.score_floor) cfg.retrieval.score_floor = *f.score_floor;
  if (f.encode_batch) cfg.retrieval.batch_size = *f.encode_batch;
  if (f.xi) cfg.perturb.xi = *f.xi;
  if (f.t) cfg.clo.steps = *f.t;
  if (f.lambda) cfg.clo.lambda = *f.lambda;
  if (f.tau) cfg.clo.tau = *f.tau;
  if (f.batch_n) cfg.batch_n = *f.batch_n;
  if (f.seed) cfg.seed = *f.seed;
  if (f.schedule) cfg.schedule.kind = *f.schedule == "step" ? ScheduleKind::Step : ScheduleKind::Linear;
  if (f.schedule_total) cfg.schedule.total_iters = *f.schedule_total;
  if (f.gaussian_draws) cfg.gaussian_draws = *f.gaussian_draws;
  if (!f.deny.empty()) cfg.filters.deny = f.deny;
  if (f.stream) cfg.emit_stream = true;
  if (f.threads) cfg.threads = *f.threads;
  cfg.perturb.seed = cfg.seed;
  return cfg;
}

void need(const fs::path& p, const char* flag) {
  if (p.empty()) throw Error(ErrorCode::InvalidArgument, std::string(flag) + " is required");
}

// Writes to --out when given, else stdout.
class Sink {
 public:
  explicit Sink(const std::optional<std::string>& path) {
    if (path && *path != "-") {
      file_.open(*path, std::ios::binary);
      if (!file_) throw Error(ErrorCode::IoError, "cannot write " + *path);
    }
  }
  std::ostream& out() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

FeatureMatrix load_images(const PipelineConfig& cfg) {
  need(cfg.images, "--images");
  return normalize_rows(load_embeddings(cfg.images));
}

Vocabulary load_embedded_vocab(const PipelineConfig& cfg, EncoderProvider& provider) {
  need(cfg.vocabulary, "--vocabulary");
  auto vocab = load_vocabulary(cfg.vocabulary, cfg.filters);
  if (cfg.vocab_embeddings) {
    attach_embeddings(vocab, load_embeddings(*cfg.vocab_embeddings));
  } else {
    embed_vocabulary(vocab, provider);
  }
  return vocab;
}

int cmd_ingest(const std::vector<std::string>& files, const std::optional<std::string>& pretrain,
               const std::optional<std::string>& downstream, bool any_hash,
               const std::optional<std::string>& out) {
  json report = json::array();
  for (const auto& f : files) {
    auto m = load_embeddings(f);
    double lo = INFINITY, hi = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      lo = std::min(lo, m.row_norm(r));
      hi = std::max(hi, m.row_norm(r));
    }
    report.push_back({{"file", f}, {"rows", m.rows()}, {"dim", m.dim()}, {"unit_flag", m.unit_normalized()},
                      {"min_norm", m.rows() ? lo : 0.0}, {"max_norm", hi}});
  }
  json result{{"files", report}};
  if (pretrain || downstream) {
    if (!pretrain || !downstream) {
      throw Error(ErrorCode::InvalidArgument, "--pretrain-hashes and --downstream-hashes go together");
    }
    auto d = dedup_corpus(load_hash_source(*pretrain), load_hash_source(*downstream),
                          any_hash ? DedupRule::AnyHash : DedupRule::BothHashes);
    result["dedup"] = {{"rule", any_hash ? "any" : "both"}, {"retained", d.retained.size()},
                       {"dropped", d.dropped}};
    if (out) {
      if (files.size() != 1) throw Error(ErrorCode::InvalidArgument, "--out filters exactly one embedding file");
      auto m = load_embeddings(files[0]);
      std::vector<float> data;
      std::vector<std::string> ids;
      for (std::size_t r = 0; r < m.rows(); ++r) {
        if (std::binary_search(d.dropped.begin(), d.dropped.end(), m.id(r))) continue;
        auto row = m.row(r);
        data.insert(data.end(), row.begin(), row.end());
        ids.push_back(m.id(r));
      }
      result["written"] = ids.size();
      save_embeddings(FeatureMatrix(m.dim(), std::move(data), std::move(ids), m.unit_normalized()), *out);
    }
  }
  std::cout << result.dump(2) << "\n";
  return 0;
}

int cmd_retrieve_words(const Flags& f) {
  auto cfg = resolve(f);
  const auto images = load_images(cfg);
  auto provider = make_provider(cfg.provider, images.dim(), cfg.seed);
  const auto vocab = load_embedded_vocab(cfg, *provider);
  Sink sink(f.out);
  for (std::size_t i = 0; i < images.rows(); ++i) {
    json words = image_to_words(images.row(i), vocab, cfg.retrieval.k);
    sink.out() << json{{"image_id", images.id(i)}, {"words", words}}.dump() << "\n";
  }
  return 0;
}

int cmd_synth_captions(const Flags& f) {
  auto cfg = resolve(f);
  cfg.retrieval.validate();
  const auto images = load_images(cfg);
  auto provider = make_provider(cfg.provider, images.dim(), cfg.seed);
  const auto vocab = load_embedded_vocab(cfg, *provider);
  const auto templates = cfg.templates ? load_templates(*cfg.templates)
                                       : std::vector<PromptTemplate>{coco_template(), relation_template()};
  std::optional<TwoStageTemplates> two;
  std::vector<PromptTemplate> widest;
  if (cfg.retrieval.iterative) {
    two = select_two_stage(templates);
  } else {
    std::size_t w = 0;
    for (const auto& t : templates) w = std::max(w, t.category_count());
    for (const auto& t : templates) if (t.category_count() == w) widest.push_back(t);
  }

  std::vector<std::vector<PseudoCaption>> caps(images.rows());
  std::vector<EncodeStats> stats(images.rows());
  parallel_for(images.rows(), cfg.threads, [&](std::size_t i) {
    CachingEncoder enc(*provider, cfg.retrieval.batch_size);
    caps[i] = two ? two_stage_synthesis(images.row(i), vocab, *two, enc, cfg.retrieval)
                  : exhaustive_synthesis(images.row(i), vocab, widest, enc, cfg.retrieval);
    stats[i] = enc.stats();
  });

  Sink sink(f.out);
  EncodeStats total;
  for (std::size_t i = 0; i < images.rows(); ++i) {
    json list = json::array();
    for (const auto& c : caps[i]) list.push_back({{"text", c.text}, {"score", *c.score}});
    sink.out() << json{{"image_id", images.id(i)}, {"captions", list}, {"encoded", stats[i].requested}}.dump()
               << "\n";
    total += stats[i];
  }
  std::cerr << "captions encoded " << total.requested << ", provider texts " << total.computed
            << ", calls " << total.calls << "\n";
  return 0;
}

int cmd_clo_refine(const Flags& f, const std::string& texts_path, const std::optional<std::string>& trace_path) {
  auto cfg = resolve(f);
  cfg.clo.validate();
  if (!f.out) throw Error(ErrorCode::InvalidArgument, "--out is required");
  const auto images = load_images(cfg);
  const auto texts = normalize_rows(load_embeddings(texts_path));
  const auto pairing = pairing_from_ids(texts);
  if (texts.dim() != images.dim()) throw Error(ErrorCode::DimMismatch, "texts and images differ in dim");

  std::vector<float> out_data;
  std::ofstream trace;
  if (trace_path) {
    trace.open(*trace_path);
    if (!trace) throw Error(ErrorCode::IoError, "cannot write " + *trace_path);
    trace << "batch,step,objective,mean_diag_cos\n";
  }
  double before = 0, after = 0, acc_before = 0, acc_after = 0;
  for (std::size_t start = 0, b = 0; start < texts.rows(); start += cfg.batch_n, ++b) {
    const std::size_t end = std::min(texts.rows(), start + cfg.batch_n);
    std::vector<float> td, id;
    std::vector<std::string> tids;
    for (std::size_t r = start; r < end; ++r) {
      auto row = images.find(pairing[r]);
      if (!row) throw Error(ErrorCode::UnknownImageId, "no image '" + pairing[r] + "'");
      td.insert(td.end(), texts.row(r).begin(), texts.row(r).end());
      id.insert(id.end(), images.row(*row).begin(), images.row(*row).end());
      tids.push_back(texts.id(r));
    }
    FeatureMatrix tb(texts.dim(), std::move(td), tids, true), ib(images.dim(), std::move(id), tids, true);
    std::vector<CloTraceRow> rows;
    auto refined = clo_refine(tb, ib, cfg.clo, trace_path ? &rows : nullptr, cfg.threads);
    const double w = static_cast<double>(end - start);
    before += w * mean_diagonal_cosine(tb, ib);
    after += w * mean_diagonal_cosine(refined, ib);
    acc_before += w * in_batch_retrieval_accuracy(tb, ib);
    acc_after += w * in_batch_retrieval_accuracy(refined, ib);
    for (const auto& t : rows) trace << b << "," << t.step << "," << t.objective << "," << t.mean_diag_cos << "\n";
    out_data.insert(out_data.end(), refined.data().begin(), refined.data().end());
  }
  save_embeddings(FeatureMatrix(texts.dim(), std::move(out_data), texts.ids(), cfg.clo.renormalize), *f.out);
  const double n = std::max<double>(1, static_cast<double>(texts.rows()));
  std::cout << json{{"texts", texts.rows()},
                    {"mean_diag_cos_before", before / n},
                    {"mean_diag_cos_after", after / n},
                    {"in_batch_acc_before", acc_before / n},
                    {"in_batch_acc_after", acc_after / n}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_run(const Flags& f) {
  auto cfg = resolve(f);
  auto r = run_pipeline(cfg);
  auto m = r.manifest;
  m.erase("config");
  std::cout << m.dump(2) << "\n";
  return 0;
}

int cmd_perturb(const Flags& f, std::size_t draws) {
  auto cfg = resolve(f);
  cfg.perturb.validate();
  if (!f.out) throw Error(ErrorCode::InvalidArgument, "--out is required");
  const auto images = load_images(cfg);
  std::vector<float> data(images.rows() * draws * images.dim());
  std::vector<std::string> ids(images.rows() * draws);
  parallel_for(images.rows(), cfg.threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < draws; ++j) {
      auto v = gaussian_pseudo_feature(images.id(i), images.row(i), cfg.perturb, j);
      std::ranges::copy(v.values(), data.begin() + static_cast<std::ptrdiff_t>((i * draws + j) * images.dim()));
      ids[i * draws + j] = images.id(i) + "#" + std::to_string(j);
    }
  });
  save_embeddings(FeatureMatrix(images.dim(), std::move(data), std::move(ids), true), *f.out);
  std::cerr << "wrote " << images.rows() * draws << " features\n";
  return 0;
}

int cmd_analyze(const std::string& images_path, const std::string& texts_path, std::size_t bins,
                std::size_t samples, std::uint64_t seed, const std::optional<std::string>& out_dir) {
  const auto images = normalize_rows(load_embeddings(images_path));
  const auto texts = normalize_rows(load_embeddings(texts_path));
  auto r = similarity_histograms(images, texts, pairing_from_ids(texts), bins, samples, seed);
  if (out_dir) {
    fs::create_directories(*out_dir);
    for (auto [name, h] : {std::pair{"image_text", &r.image_text}, {"text_text_paired", &r.text_text_paired},
                           {"text_text_unpaired", &r.text_text_unpaired}}) {
      std::ofstream out(fs::path(*out_dir) / (std::string(name) + ".csv"));
      if (!out) throw Error(ErrorCode::IoError, "cannot write into " + *out_dir);
      write_histogram_csv(out, *h);
    }
  }
  std::cout << report_summary_json(r) << "\n";
  return 0;
}

int cmd_verify(std::size_t trials, std::uint64_t seed, bool constructions, bool verbose) {
  auto reports = run_theorem_trials(seed, trials, constructions);
  std::size_t held = 0;
  double worst_ratio = 0, worst_residual = 0, worst_fd = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    held += r.holds;
    worst_ratio = std::max(worst_ratio, r.grad_norm / r.bound);
    worst_residual = std::max(worst_residual, r.decomposition_residual);
    worst_fd = std::max(worst_fd, std::abs(r.grad_norm - r.grad_norm_fd) / std::max(1e-6, r.grad_norm_fd));
    if (verbose) {
      std::printf("%4zu n=%-3zu P=%-5zu tau=%.3f |grad|=%.6g bound=%.6g sigma=%.4g %s\n", i, r.n, r.params,
                  r.tau, r.grad_norm, r.bound, r.sigma, r.holds ? "ok" : "VIOLATED");
    }
  }
  std::cout << json{{"trials", reports.size()},
                    {"held", held},
                    {"max_grad_over_bound", worst_ratio},
                    {"max_identity_residual", worst_residual},
                    {"max_fd_rel_diff", worst_fd}}
                   .dump(2)
            << "\n";
  return held == reports.size() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-free text-to-image pretraining data tools"};
  app.require_subcommand(1);

  std::vector<std::string> ingest_files;
  std::optional<std::string> pretrain, downstream, ingest_out;
  bool any_hash = false;
  auto* ingest = app.add_subcommand("ingest", "validate EMB1 files and deduplicate against a downstream set");
  ingest->add_option("files", ingest_files, "embedding files")->required();
  ingest->add_option("--pretrain-hashes", pretrain, "image directory or hash manifest");
  ingest->add_option("--downstream-hashes", downstream, "image directory or hash manifest");
  ingest->add_flag("--any-hash", any_hash, "drop on an MD5 or SHA256 match instead of both");
  ingest->add_option("--out", ingest_out, "write the retained rows here");

  Flags words_f, synth_f, clo_f, run_f, perturb_f;
  auto* words = app.add_subcommand("retrieve-words", "top-K vocabulary words per image");
  add_pipeline_flags(words, words_f);
  auto* synth = app.add_subcommand("synth-captions", "compose and score pseudo captions");
  add_pipeline_flags(synth, synth_f);
  std::string clo_texts;
  std::optional<std::string> clo_trace;
  auto* clo = app.add_subcommand("clo-refine", "refine text features against their images");
  add_pipeline_flags(clo, clo_f);
  clo->add_option("--texts", clo_texts, "text features, ids '<image_id>#k'")->required();
  clo->add_option("--trace", clo_trace, "per-step CSV");
  auto* run = app.add_subcommand("run", "full pipeline");
  add_pipeline_flags(run, run_f);
  std::size_t draws = 1;
  auto* perturb = app.add_subcommand("perturb", "Gaussian pseudo text features");
  add_pipeline_flags(perturb, perturb_f);
  perturb->add_option("--draws", draws, "features per image");

  std::string an_images, an_texts;
  std::size_t bins = kDefaultBins, samples = kDefaultUnpairedSamples;
  std::uint64_t an_seed = 0;
  std::optional<std::string> an_out;
  auto* analyze = app.add_subcommand("analyze-sim", "cosine similarity histograms");
  analyze->add_option("--images", an_images)->required();
  analyze->add_option("--texts", an_texts, "ids '<image_id>#k'")->required();
  analyze->add_option("--bins", bins);
  analyze->add_option("--samples", samples, "unpaired text pairs to sample");
  analyze->add_option("--seed", an_seed);
  analyze->add_option("--out", an_out, "directory for the CSV histograms");

  std::size_t trials = 100;
  std::uint64_t th_seed = 0;
  bool no_constructions = false, verbose = false;
  auto* verify = app.add_subcommand("verify-theorem", "check the gradient bound on toy generators");
  verify->add_option("--trials", trials);
  verify->add_option("--seed", th_seed);
  verify->add_flag("--no-constructions", no_constructions, "random instances only");
  verify->add_flag("-v,--verbose", verbose);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) return cmd_ingest(ingest_files, pretrain, downstream, any_hash, ingest_out);
    if (*words) return cmd_retrieve_words(words_f);
    if (*synth) return cmd_synth_captions(synth_f);
    if (*clo) return cmd_clo_refine(clo_f, clo_texts, clo_trace);
    if (*run) return cmd_run(run_f);
    if (*perturb) return cmd_perturb(perturb_f, draws);
    if (*analyze) return cmd_analyze(an_images, an_texts, bins, samples, an_seed, an_out);
    if (*verify) return cmd_verify(trials, th_seed, !no_constructions, verbose);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
