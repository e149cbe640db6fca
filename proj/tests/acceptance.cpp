// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>

#include <json.hpp>

#include "ptsynth/analysis.hpp"
#include "ptsynth/clo.hpp"
#include "ptsynth/emb_io.hpp"
#include "ptsynth/embedding.hpp"
#include "ptsynth/pipeline.hpp"
#include "ptsynth/pseudo.hpp"
#include "ptsynth/retrieval.hpp"
#include "ptsynth/synthetic_world.hpp"
#include "ptsynth/theory.hpp"
#include "support/oracles.hpp"

using namespace ptsynth;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = limit_s <= 0 || s < limit_s;
  const bool pass = o.ok && in_time;
  failures += !pass;
  std::printf("criterion %2d %-28s %s  %s  [%.2fs", id, name, pass ? "PASS" : "FAIL", o.detail.c_str(), s);
  if (limit_s > 0) std::printf(" / limit %.0fs", limit_s);
  std::printf("]\n");
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<std::vector<double>> rows_d(const FeatureMatrix& m) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    std::vector<double> v(r.begin(), r.end());
    const double n = static_cast<double>(oracle::norm(v));
    for (auto& x : v) x /= n;
    out.push_back(std::move(v));
  }
  return out;
}

Outcome gradient_check() {
  oracle::Rng rng(20240601);
  const double taus[] = {0.2, 0.5, 1.0};
  double worst = 0;
  int bad = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 31, dim = 2 + rng() % 127;
    const double tau = taus[t % 3];
    auto f = oracle::random_matrix(rng, n, dim, true);
    auto h = oracle::unit_vec_d(rng, dim);
    const std::size_t i = rng() % n;
    auto got = clo_gradient(h, ImageBatch(f), i, tau);
    auto fd = oracle::fd_gradient(h, rows_d(f), i, tau, 1e-4);
    long double diff = 0, ref = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      diff += (got[d] - fd[d]) * (got[d] - fd[d]);
      ref += fd[d] * fd[d];
    }
    const double rel = static_cast<double>(std::sqrt(diff / ref));
    worst = std::max(worst, rel);
    bad += !(rel < 1e-4);
  }
  return {bad == 0, fmt("200 instances, max rel err %.2e (< 1e-4)", worst)};
}

ToyInstance theory_instance(int t) {
  const std::size_t sizes[] = {2, 4, 8, 16};
  const double taus[] = {0.2, 0.5, 1.0};
  const std::size_t n = sizes[t % 4];
  const double tau = taus[(t / 4) % 3];
  const std::uint64_t seed = 777000 + static_cast<std::uint64_t>(t);
  if (t == 0) return equal_similarity_instance(seed, n, 16, 16, tau);
  if (t == 1) return identical_batch_instance(seed, n, 16, 16, tau);
  return random_instance(seed, n, 16, 16, tau);
}

Outcome theorem_bound() {
  int held = 0;
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    auto r = theorem_check(theory_instance(t));
    const bool ok = r.holds && r.grad_norm <= r.bound + 1e-6 * r.bound;
    held += ok;
    worst = std::max(worst, r.grad_norm / r.bound);
  }
  return {held == 100, fmt("%d/100 held, max |grad|/bound %.3f", held, worst)};
}

Outcome proof_identity() {
  double worst = 0;
  int bad = 0;
  const double sigma0 = sigma_of(alignment_entries(theory_instance(0)), theory_instance(0).texts.rows);
  for (int t = 0; t < 100; ++t) {
    const double res = proof_identity_check(theory_instance(t));
    worst = std::max(worst, res);
    bad += !(res < 1e-4);
  }
  return {bad == 0 && sigma0 < 1e-9,
          fmt("100 instances, max residual %.2e (< 1e-4), equal-similarity sigma %.1e", worst, sigma0)};
}

Outcome count_identity() {
  std::map<std::string, std::vector<std::string>> cats;
  for (const char* c : {"Noun", "Verb", "Adjective", "NumeralQuantifier"}) {
    for (int i = 0; i < 6; ++i) cats[c].push_back(std::string(c) + "_" + std::to_string(i));
  }
  SyntheticEncoder enc(64, 5);
  Vocabulary vocab(cats);
  embed_vocabulary(vocab, enc);
  oracle::Rng rng(4);
  const auto two = make_two_stage(relation_template(), coco_template());
  std::string detail;
  bool ok = true;
  for (std::size_t k = 1; k <= 4; ++k) {
    auto img = oracle::unit_vec(rng, 64);
    RetrievalConfig cfg;
    cfg.k = k;
    cfg.m = 1;
    CachingEncoder a(enc), b(enc);
    two_stage_synthesis(img, vocab, two, a, cfg);
    exhaustive_synthesis(img, vocab, {coco_template()}, b, cfg);
    const auto want_two = (k + 1) * oracle::ipow(k, 3), want_ex = oracle::ipow(k, 6);
    ok = ok && a.stats().requested == want_two && b.stats().requested == want_ex;
    detail += fmt("K=%zu %zu/%zu ", k, a.stats().requested, b.stats().requested);
  }
  return {ok, detail + "(two-stage/exhaustive)"};
}

Outcome retrieval_oracle() {
  oracle::Rng rng(99);
  auto corpus = oracle::random_matrix(rng, 10000, 512, false);
  auto queries = oracle::random_matrix(rng, 1000, 512, false);
  constexpr std::size_t k = 10;
  auto got = top_k_batch(queries, corpus, k);
  std::vector<long double> norms(corpus.rows());
  for (std::size_t r = 0; r < corpus.rows(); ++r) norms[r] = oracle::norm(corpus.row(r));
  std::vector<int> mismatch(1000, 0);
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t q = w; q < 1000; q += workers) {
          auto want = oracle::brute_top_k(queries.row(q), corpus, k, &norms);
          mismatch[q] = want != got[q].indices;
        }
      });
    }
  }
  int bad = 0;
  for (int m : mismatch) bad += m;
  return {bad == 0, fmt("%d/1000 queries differ (N=10000, D=512, k=%zu)", bad, k)};
}

Outcome perturbation_contract() {
  oracle::Rng rng(6);
  auto f = oracle::random_matrix(rng, 1, 512, false);
  const auto img = f.row(0);
  auto exact = gaussian_pseudo_feature("img", img, {0.0, 1}, 0);
  const bool identity = std::ranges::equal(exact.values(), normalize(img).values());
  double worst_norm = 0;
  double means[3];
  const double xis[] = {0.5, 1.0, 3.0};
  const auto unit = normalize(img);
  for (int x = 0; x < 3; ++x) {
    long double s = 0;
    for (std::uint64_t d = 0; d < 10000; ++d) {
      auto h = gaussian_pseudo_feature("img", img, {xis[x], 1}, d);
      worst_norm = std::max(worst_norm, std::abs(static_cast<double>(oracle::norm(h.values())) - 1.0));
      s += oracle::dot(h.values(), unit.values());
    }
    means[x] = static_cast<double>(s / 10000);
  }
  const bool ok = identity && worst_norm <= 1e-6 && means[0] > means[1] && means[1] > means[2];
  return {ok, fmt("xi=0 exact %s, max |norm-1| %.1e, mean cos %.4f > %.4f > %.4f", identity ? "yes" : "no",
                  worst_norm, means[0], means[1], means[2])};
}

// Top caption features from the retrieval path for a 64-image clustered world.
std::pair<FeatureMatrix, FeatureMatrix> caption_batch(std::uint64_t seed) {
  auto world = make_synthetic_world({.dim = 128, .clusters = 4, .images_per_cluster = 16, .seed = seed});
  SyntheticEncoder enc(128, seed, world.lexicon);
  Vocabulary vocab(world.vocabulary);
  embed_vocabulary(vocab, enc);
  const auto two = make_two_stage(relation_template(), coco_template());
  RetrievalConfig cfg;
  cfg.k = 2;
  cfg.m = 1;
  std::vector<float> data;
  for (std::size_t i = 0; i < world.images.rows(); ++i) {
    CachingEncoder ce(enc);
    auto caps = two_stage_synthesis(world.images.row(i), vocab, two, ce, cfg);
    data.insert(data.end(), caps[0].embedding->values().begin(), caps[0].embedding->values().end());
  }
  return {world.images, FeatureMatrix(128, std::move(data), world.images.ids(), true)};
}

double mean_self_alignment(const FeatureMatrix& texts, const FeatureMatrix& images, double tau) {
  auto a = alignment(images, texts, tau);
  double s = 0;
  for (std::size_t i = 0; i < a.n; ++i) s += a.at(i, i);
  return s / static_cast<double>(a.n);
}

Outcome clo_efficacy() {
  int ok = 0;
  double gain_cos = INFINITY, gain_align = INFINITY;
  for (int t = 0; t < 20; ++t) {
    auto [images, h0] = caption_batch(500 + t);
    CloConfig cfg;  // T=10, lambda=0.01, tau=0.5
    auto h = clo_refine(h0, images, cfg);
    const double dc = mean_diagonal_cosine(h, images) - mean_diagonal_cosine(h0, images);
    const double da = mean_self_alignment(h, images, cfg.tau) - mean_self_alignment(h0, images, cfg.tau);
    const bool acc = in_batch_retrieval_accuracy(h, images) >= in_batch_retrieval_accuracy(h0, images);
    ok += dc > 0 && da > 0 && acc;
    gain_cos = std::min(gain_cos, dc);
    gain_align = std::min(gain_align, da);
  }
  return {ok == 20, fmt("%d/20 trials, min gain: diag cos %+.4f, diag c_ii %+.5f", ok, gain_cos, gain_align)};
}

Outcome small_step_ascent() {
  int bad_steps = 0;
  double worst = INFINITY;
  for (int t = 0; t < 100; ++t) {
    oracle::Rng rng(9000 + t);
    const std::size_t n = 2 + rng() % 63, dim = 2 + rng() % 127;
    auto f = oracle::random_matrix(rng, n, dim, true);
    auto h = oracle::random_matrix(rng, n, dim, true);
    CloConfig cfg;
    cfg.lambda = 1e-3;
    std::vector<CloTraceRow> trace;
    clo_refine(h, f, cfg, &trace);
    for (std::size_t s = 1; s < trace.size(); ++s) {
      const double delta = trace[s].objective - trace[s - 1].objective;
      worst = std::min(worst, delta);
      bad_steps += delta < -1e-8;
    }
  }
  return {bad_steps == 0, fmt("100 trials x 10 steps, %d decreasing steps, min delta %.2e", bad_steps, worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Corpus {
  fs::path dir;
  SyntheticWorld world;
  PipelineConfig cfg;
};

Corpus write_corpus(const std::string& name, std::uint64_t seed, std::size_t per_cluster) {
  Corpus c{oracle::scratch_dir(name), make_synthetic_world({.images_per_cluster = per_cluster, .seed = seed}), {}};
  save_embeddings(c.world.images, c.dir / "images.emb");
  save_embeddings(c.world.lexicon, c.dir / "lexicon.emb");
  std::ofstream(c.dir / "vocab.json") << vocabulary_json(c.world);
  c.cfg.images = c.dir / "images.emb";
  c.cfg.vocabulary = c.dir / "vocab.json";
  c.cfg.provider = "synthetic:" + (c.dir / "lexicon.emb").string();
  c.cfg.seed = seed;
  return c;
}

Outcome end_to_end() {
  auto c = write_corpus("accept_e2e", 31, 25);
  c.cfg.retrieval.k = 3;
  c.cfg.retrieval.m = 20;
  c.cfg.retrieval.batch_size = 16;
  c.cfg.emit_stream = true;
  c.cfg.output = c.dir / "a";
  auto a = run_pipeline(c.cfg);
  c.cfg.output = c.dir / "b";
  auto b = run_pipeline(c.cfg);
  const bool same = slurp(c.dir / "a" / "pairs.jsonl") == slurp(c.dir / "b" / "pairs.jsonl") &&
                    slurp(c.dir / "a" / "stream.jsonl") == slurp(c.dir / "b" / "stream.jsonl") &&
                    slurp(c.dir / "a" / "pairs.emb") == slurp(c.dir / "b" / "pairs.emb");
  const auto& m = a.manifest;
  const std::uint64_t k = 3, n = 100, bs = 16;
  const std::uint64_t per_image = (k + 1) * k * k * k;
  const std::uint64_t calls = n * ((k * k * k + bs - 1) / bs + (k * k * k * k + bs - 1) / bs);
  const bool counts = m["captions_encoded"] == n * per_image && m["provider_texts"] == n * per_image &&
                      m["provider_calls"] == calls && m["expected_captions_per_image"] == per_image &&
                      b.manifest["provider_calls"] == m["provider_calls"];
  fs::remove_all(c.dir);
  return {same && counts,
          fmt("byte-identical %s, captions %llu (want %llu), calls %llu (want %llu)", same ? "yes" : "no",
              m["captions_encoded"].get<unsigned long long>(), static_cast<unsigned long long>(n * per_image),
              m["provider_calls"].get<unsigned long long>(), static_cast<unsigned long long>(calls))};
}

FeatureMatrix select(const PipelineResult& r, bool captions) {
  std::vector<float> data;
  std::vector<std::string> ids;
  std::map<std::string, int> next;
  for (const auto& p : r.pairs) {
    if (p.caption.has_value() != captions) continue;
    data.insert(data.end(), p.feature.values().begin(), p.feature.values().end());
    ids.push_back(p.image_id + "#" + std::to_string(next[p.image_id]++));
  }
  return FeatureMatrix(r.pairs.front().feature.dim(), std::move(data), std::move(ids), true);
}

Outcome unpaired_spread() {
  int ok = 0;
  double worst_margin = INFINITY, std_clo = 0, std_gauss = 0, mean_clo = 0, mean_gauss = 0;
  for (int t = 0; t < 20; ++t) {
    auto c = write_corpus("accept_spread", 700 + t, 25);
    c.cfg.retrieval.k = 2;
    c.cfg.retrieval.m = 3;
    c.cfg.gaussian_draws = 3;
    c.cfg.perturb.xi = 3.0;
    c.cfg.output = c.dir / "out";
    auto r = run_pipeline(c.cfg);
    auto texts = select(r, true), gauss = select(r, false);
    auto images = load_embeddings(c.cfg.images);
    auto rc = similarity_histograms(images, texts, pairing_from_ids(texts), 100, 20000, t);
    auto rg = similarity_histograms(images, gauss, pairing_from_ids(gauss), 100, 20000, t);
    ok += rc.text_text_unpaired.std < rg.text_text_unpaired.std;
    worst_margin = std::min(worst_margin, rg.text_text_unpaired.std - rc.text_text_unpaired.std);
    std_clo += rc.text_text_unpaired.std / 20;
    std_gauss += rg.text_text_unpaired.std / 20;
    mean_clo += rc.text_text_unpaired.mean / 20;
    mean_gauss += rg.text_text_unpaired.mean / 20;
    fs::remove_all(c.dir);
  }
  return {ok == 20, fmt("%d/20 trials, unpaired std %.4f (retrieval+CLO) vs %.4f (xi=3), min margin %.4f; "
                        "unpaired mean %.3f vs %.3f",
                        ok, std_clo, std_gauss, worst_margin, mean_clo, mean_gauss)};
}

}  // namespace

int main() {
  criterion(1, "gradient vs finite diff", 30, gradient_check);
  criterion(2, "gradient bound", 60, theorem_bound);
  criterion(3, "proof identity", 60, proof_identity);
  criterion(4, "caption count identity", 10, count_identity);
  criterion(5, "top-k vs brute force", 30, retrieval_oracle);
  criterion(6, "gaussian perturbation", 0, perturbation_contract);
  criterion(7, "refinement efficacy", 60, clo_efficacy);
  criterion(8, "small-step ascent", 0, small_step_ascent);
  criterion(9, "end-to-end determinism", 0, end_to_end);
  criterion(10, "unpaired similarity spread", 0, unpaired_spread);
  std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
