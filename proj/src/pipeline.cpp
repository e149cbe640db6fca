#include "ptsynth/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <toml.hpp>

#include "ptsynth/emb_io.hpp"
#include "ptsynth/error.hpp"
#include "ptsynth/parallel.hpp"
#include "ptsynth/remote_encoder.hpp"

namespace ptsynth {

namespace fs = std::filesystem;

namespace {

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw Error(ErrorCode::InvalidArgument, std::string(what) + " path not set");
  if (!fs::exists(p)) throw Error(ErrorCode::IoError, std::string(what) + " not found: " + p.string());
}

std::string_view schedule_name(ScheduleKind k) { return k == ScheduleKind::Step ? "step" : "linear"; }

ScheduleKind schedule_from_string(std::string_view s) {
  if (s == "step") return ScheduleKind::Step;
  if (s == "linear") return ScheduleKind::Linear;
  throw Error(ErrorCode::InvalidArgument, "schedule must be linear or step, got " + std::string(s));
}

std::uint64_t ipow(std::uint64_t b, std::size_t e) {
  std::uint64_t r = 1;
  while (e-- > 0) r *= b;
  return r;
}

template <class T>
std::optional<T> toml_get(const toml::table& t, std::string_view key) {
  const auto* node = t.get(key);
  if (!node) return std::nullopt;
  if constexpr (std::is_same_v<T, double>) {
    // Integers are fine where floats are expected.
    if (auto v = node->value<double>()) return v;
  } else if (auto v = node->value<T>()) {
    return v;
  }
  throw Error(ErrorCode::InvalidArgument, "config key '" + std::string(key) + "' has the wrong type");
}

std::size_t as_count(std::int64_t v, std::string_view key) {
  if (v < 0) throw Error(ErrorCode::InvalidArgument, "config key '" + std::string(key) + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

std::vector<std::string> string_list(const toml::table& t, std::string_view key) {
  std::vector<std::string> out;
  const auto* node = t.get(key);
  if (!node) return out;
  const auto* arr = node->as_array();
  if (!arr) throw Error(ErrorCode::InvalidArgument, "config key '" + std::string(key) + "' must be a list");
  for (const auto& el : *arr) {
    auto s = el.value<std::string>();
    if (!s) throw Error(ErrorCode::InvalidArgument, "config key '" + std::string(key) + "' must hold strings");
    out.push_back(*s);
  }
  return out;
}

struct ImageWork {
  std::vector<PseudoCaption> captions;
  EncodeStats stats;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + p.string());
}

}  // namespace

void PipelineConfig::validate() const {
  require_file(images, "image embeddings");
  require_file(vocabulary, "vocabulary");
  if (templates) require_file(*templates, "templates");
  if (vocab_embeddings) require_file(*vocab_embeddings, "vocabulary embeddings");
  if (output.empty()) throw Error(ErrorCode::InvalidArgument, "output directory not set");
  retrieval.validate();
  perturb.validate();
  clo.validate();
  schedule.validate();
  if (batch_n < 1) throw Error(ErrorCode::InvalidArgument, "batch_n must be >= 1");
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json j;
  j["images"] = images.string();
  j["vocabulary"] = vocabulary.string();
  j["templates"] = templates ? nlohmann::json(templates->string()) : nlohmann::json(nullptr);
  j["vocab_embeddings"] =
      vocab_embeddings ? nlohmann::json(vocab_embeddings->string()) : nlohmann::json(nullptr);
  j["output"] = output.string();
  j["k"] = retrieval.k;
  j["m"] = retrieval.m;
  j["iterative"] = retrieval.iterative;
  j["score_floor"] = retrieval.score_floor ? nlohmann::json(*retrieval.score_floor) : nlohmann::json(nullptr);
  j["encode_batch"] = retrieval.batch_size;
  j["xi"] = perturb.xi;
  j["t"] = clo.steps;
  j["lambda"] = clo.lambda;
  j["tau"] = clo.tau;
  j["renormalize"] = clo.renormalize;
  j["schedule"] = schedule_name(schedule.kind);
  j["schedule_total"] = schedule.total_iters;
  j["schedule_switch"] = schedule.switch_point;
  j["schedule_floor"] = schedule.floor;
  j["allow"] = filters.allow;
  j["deny"] = filters.deny;
  j["text_only"] = filters.text_only;
  j["provider"] = provider;
  j["seed"] = seed;
  j["batch_n"] = batch_n;
  j["gaussian_draws"] = gaussian_draws;
  j["emit_stream"] = emit_stream;
  j["threads"] = threads;
  return j;
}

void apply_config_toml(PipelineConfig& cfg, std::string_view toml_text, const fs::path& base_dir) {
  toml::table t;
  try {
    t = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config: " << e.description() << " at line " << e.source().begin.line;
    throw Error(ErrorCode::InvalidArgument, msg.str());
  }
  static const char* known[] = {
      "images", "vocabulary", "templates", "vocab_embeddings", "output", "k", "m", "iterative",
      "score_floor", "encode_batch", "xi", "t", "lambda", "tau", "renormalize", "schedule",
      "schedule_total", "schedule_switch", "schedule_floor", "allow", "deny", "text_only",
      "provider", "seed", "batch_n", "gaussian_draws", "emit_stream", "threads"};
  for (const auto& [key, node] : t) {
    if (std::find(std::begin(known), std::end(known), key.str()) == std::end(known)) {
      throw Error(ErrorCode::InvalidArgument, "unknown config key '" + std::string(key.str()) + "'");
    }
  }
  auto path_of = [&](std::string_view key) -> std::optional<fs::path> {
    auto s = toml_get<std::string>(t, key);
    if (!s) return std::nullopt;
    fs::path p(*s);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return p;
  };
  if (auto p = path_of("images")) cfg.images = *p;
  if (auto p = path_of("vocabulary")) cfg.vocabulary = *p;
  if (auto p = path_of("templates")) cfg.templates = *p;
  if (auto p = path_of("vocab_embeddings")) cfg.vocab_embeddings = *p;
  if (auto p = path_of("output")) cfg.output = *p;
  if (auto v = toml_get<std::int64_t>(t, "k")) cfg.retrieval.k = as_count(*v, "k");
  if (auto v = toml_get<std::int64_t>(t, "m")) cfg.retrieval.m = as_count(*v, "m");
  if (auto v = toml_get<bool>(t, "iterative")) cfg.retrieval.iterative = *v;
  if (auto v = toml_get<double>(t, "score_floor")) cfg.retrieval.score_floor = *v;
  if (auto v = toml_get<std::int64_t>(t, "encode_batch")) cfg.retrieval.batch_size = as_count(*v, "encode_batch");
  if (auto v = toml_get<double>(t, "xi")) cfg.perturb.xi = *v;
  if (auto v = toml_get<std::int64_t>(t, "t")) cfg.clo.steps = as_count(*v, "t");
  if (auto v = toml_get<double>(t, "lambda")) cfg.clo.lambda = *v;
  if (auto v = toml_get<double>(t, "tau")) cfg.clo.tau = *v;
  if (auto v = toml_get<bool>(t, "renormalize")) cfg.clo.renormalize = *v;
  if (auto v = toml_get<std::string>(t, "schedule")) cfg.schedule.kind = schedule_from_string(*v);
  if (auto v = toml_get<std::int64_t>(t, "schedule_total")) cfg.schedule.total_iters = as_count(*v, "schedule_total");
  if (auto v = toml_get<std::int64_t>(t, "schedule_switch")) cfg.schedule.switch_point = as_count(*v, "schedule_switch");
  if (auto v = toml_get<double>(t, "schedule_floor")) cfg.schedule.floor = *v;
  if (t.contains("allow")) cfg.filters.allow = string_list(t, "allow");
  if (t.contains("deny")) cfg.filters.deny = string_list(t, "deny");
  if (auto v = toml_get<bool>(t, "text_only")) cfg.filters.text_only = *v;
  if (auto v = toml_get<std::string>(t, "provider")) {
    cfg.provider = *v;
    // lexicon paths are file paths like the others
    if (v->starts_with("synthetic:")) {
      fs::path p(v->substr(10));
      if (p.is_relative() && !base_dir.empty()) cfg.provider = "synthetic:" + (base_dir / p).string();
    }
  }
  if (auto v = toml_get<std::int64_t>(t, "seed")) cfg.seed = static_cast<std::uint64_t>(*v);
  if (auto v = toml_get<std::int64_t>(t, "batch_n")) cfg.batch_n = as_count(*v, "batch_n");
  if (auto v = toml_get<std::int64_t>(t, "gaussian_draws")) cfg.gaussian_draws = as_count(*v, "gaussian_draws");
  if (auto v = toml_get<bool>(t, "emit_stream")) cfg.emit_stream = *v;
  if (auto v = toml_get<std::int64_t>(t, "threads")) cfg.threads = static_cast<unsigned>(as_count(*v, "threads"));
  cfg.perturb.seed = cfg.seed;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  PipelineConfig cfg;
  apply_config_toml(cfg, ss.str(), path.parent_path());
  return cfg;
}

std::unique_ptr<EncoderProvider> make_provider(const std::string& spec, std::size_t dim,
                                               std::uint64_t seed) {
  if (spec == "synthetic") return std::make_unique<SyntheticEncoder>(dim, seed);
  if (spec.starts_with("synthetic:")) {
    auto lexicon = load_embeddings(spec.substr(10));
    if (lexicon.dim() != dim) {
      throw Error(ErrorCode::DimMismatch, "lexicon dim " + std::to_string(lexicon.dim()) +
                                              " != image dim " + std::to_string(dim));
    }
    return std::make_unique<SyntheticEncoder>(dim, seed, std::move(lexicon));
  }
  if (spec.starts_with("endpoint:")) {
    try {
      return std::make_unique<RemoteEncoder>(open_endpoint(spec.substr(9)));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ProviderFailure) throw;
      throw Error(ErrorCode::ProviderFailure, e.what());
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown provider '" + spec + "'");
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  // Dimension comes from the images header; loaded again inside, which is cheap.
  const auto dim = load_embeddings(cfg.images).dim();
  auto provider = make_provider(cfg.provider, dim, cfg.seed);
  return run_pipeline(cfg, *provider);
}

PipelineResult run_pipeline(const PipelineConfig& cfg, EncoderProvider& provider) {
  const auto started = std::chrono::steady_clock::now();
  cfg.validate();
  fs::create_directories(cfg.output);
  PerturbConfig perturb = cfg.perturb;
  perturb.seed = cfg.seed;

  // Images in id order.
  FeatureMatrix raw = load_embeddings(cfg.images);
  std::vector<std::size_t> order(raw.rows());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return raw.id(a) < raw.id(b); });
  std::vector<float> data;
  std::vector<std::string> ids;
  data.reserve(raw.rows() * raw.dim());
  for (auto r : order) {
    auto row = normalize(raw.row(r));
    data.insert(data.end(), row.values().begin(), row.values().end());
    ids.push_back(raw.id(r));
  }
  const FeatureMatrix images(raw.dim(), std::move(data), std::move(ids), true);
  const std::size_t n_images = images.rows();

  Vocabulary vocab = load_vocabulary(cfg.vocabulary, cfg.filters);
  std::vector<PromptTemplate> templates =
      cfg.templates ? load_templates(*cfg.templates)
                    : std::vector<PromptTemplate>{coco_template(), relation_template()};
  if (templates.empty()) throw Error(ErrorCode::InvalidArgument, "no templates");

  if (provider.dim() != images.dim()) {
    throw Error(ErrorCode::ProviderFailure, "provider dim " + std::to_string(provider.dim()) +
                                                " != image dim " + std::to_string(images.dim()));
  }
  std::size_t vocab_encodes = 0;
  std::optional<std::string> failure;
  if (cfg.vocab_embeddings) {
    attach_embeddings(vocab, load_embeddings(*cfg.vocab_embeddings));
  } else {
    for (const auto& [cat, words] : vocab.categories()) vocab_encodes += words.size();
    try {
      embed_vocabulary(vocab, provider);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProviderFailure) throw;
      failure = e.what();
    } catch (const std::exception& e) {
      failure = e.what();
    }
  }

  const std::size_t k = cfg.retrieval.k;
  if (k > vocab.smallest_category()) {
    throw Error(ErrorCode::KOutOfRange, "K=" + std::to_string(k) + " exceeds smallest category (" +
                                            std::to_string(vocab.smallest_category()) + ")");
  }
  std::optional<TwoStageTemplates> two_stage;
  std::vector<PromptTemplate> exhaustive;
  std::uint64_t per_image_expected = 0;
  std::uint64_t candidates = 0;
  if (cfg.retrieval.iterative) {
    two_stage = select_two_stage(templates);
    const std::size_t r = two_stage->relation.category_count();
    const std::size_t f = two_stage->full.category_count();
    per_image_expected = ipow(k, r) + k * ipow(k, f - r);
    candidates = k * ipow(k, f - r);
  } else {
    std::size_t widest = 0;
    for (const auto& t : templates) widest = std::max(widest, t.category_count());
    for (const auto& t : templates) {
      if (t.category_count() == widest) exhaustive.push_back(t);
    }
    per_image_expected = exhaustive.size() * ipow(k, widest);
    candidates = per_image_expected;
  }
  if (cfg.retrieval.m > candidates) {
    throw Error(ErrorCode::MOutOfRange, "M=" + std::to_string(cfg.retrieval.m) + " exceeds the " +
                                            std::to_string(candidates) + " captions per image");
  }

  const PairSource caption_source = cfg.clo.steps > 0 ? PairSource::Clo : PairSource::Retrieval;
  std::vector<std::vector<PseudoPair>> per_image;  // completed images only
  std::vector<std::vector<PseudoCaption>> refined_pools;
  EncodeStats total;

  for (std::size_t start = 0; start < n_images && !failure; start += cfg.batch_n) {
    const std::size_t end = std::min(n_images, start + cfg.batch_n);
    const std::size_t count = end - start;
    std::vector<ImageWork> work(count);
    try {
      parallel_for(count, cfg.threads, [&](std::size_t local) {
        const auto image = images.row(start + local);
        CachingEncoder enc(provider, cfg.retrieval.batch_size);
        work[local].captions =
            two_stage ? two_stage_synthesis(image, vocab, *two_stage, enc, cfg.retrieval)
                      : exhaustive_synthesis(image, vocab, exhaustive, enc, cfg.retrieval);
        work[local].stats = enc.stats();
      });
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProviderFailure) throw;
      failure = e.what();
      break;
    }

    std::vector<float> chunk_data;
    std::vector<std::string> chunk_ids;
    for (std::size_t i = start; i < end; ++i) {
      auto row = images.row(i);
      chunk_data.insert(chunk_data.end(), row.begin(), row.end());
      chunk_ids.push_back(images.id(i));
    }
    const ImageBatch batch(FeatureMatrix(images.dim(), std::move(chunk_data), std::move(chunk_ids), true));

    std::vector<std::vector<PseudoPair>> chunk_pairs(count);
    std::vector<std::vector<PseudoCaption>> chunk_pools(count);
    parallel_for(count, cfg.threads, [&](std::size_t local) {
      const std::size_t row = start + local;
      const std::string& image_id = images.id(row);
      auto& pairs = chunk_pairs[local];
      for (const auto& cap : work[local].captions) {
        auto h = refine_feature(cap.embedding->values(), batch, local, cfg.clo);
        std::vector<float> hf(h.begin(), h.end());
        PseudoCaption refined = cap;
        refined.embedding = normalize(hf);
        pairs.push_back(PseudoPair{image_id, *refined.embedding, caption_source, cap.score, cap.text});
        chunk_pools[local].push_back(std::move(refined));
      }
      for (std::size_t j = 0; j < cfg.gaussian_draws; ++j) {
        pairs.push_back(PseudoPair{image_id, gaussian_pseudo_feature(image_id, images.row(row), perturb, j),
                                   PairSource::Gaussian, std::nullopt, std::nullopt});
      }
    });
    for (std::size_t local = 0; local < count; ++local) {
      total += work[local].stats;
      per_image.push_back(std::move(chunk_pairs[local]));
      refined_pools.push_back(std::move(chunk_pools[local]));
    }
  }

  PipelineResult result;
  std::vector<float> emb_data;
  std::vector<std::string> emb_ids;
  for (auto& pairs : per_image) {
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      const auto& v = pairs[j].feature.values();
      emb_data.insert(emb_data.end(), v.begin(), v.end());
      emb_ids.push_back(pairs[j].image_id + "#" + std::to_string(j));
    }
    std::move(pairs.begin(), pairs.end(), std::back_inserter(result.pairs));
  }

  {
    std::ofstream out(cfg.output / "pairs.jsonl", std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write pairs.jsonl");
    write_pairs_jsonl(out, result.pairs);
  }
  save_embeddings(FeatureMatrix(images.dim(), std::move(emb_data), std::move(emb_ids), true),
                  cfg.output / "pairs.emb");

  std::size_t stream_len = 0;
  if (cfg.emit_stream && !per_image.empty()) {
    std::ofstream out(cfg.output / "stream.jsonl", std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write stream.jsonl");
    for (std::uint64_t t = 0; t < cfg.schedule.total_iters; ++t) {
      const std::size_t row = t % refined_pools.size();
      auto p = sample_pair(images.id(row), images.row(row), refined_pools[row], caption_source,
                           cfg.schedule, t, perturb);
      out << pair_to_json_line(p) << '\n';
      ++stream_len;
    }
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  auto& m = result.manifest;
  m["format"] = "ptsynth-run/1";
  m["config"] = cfg.to_json();
  m["seed"] = cfg.seed;
  m["images"] = n_images;
  m["images_completed"] = per_image.size();
  m["pairs"] = result.pairs.size();
  m["stream_pairs"] = stream_len;
  m["caption_source"] = to_string(caption_source);
  m["provider_calls"] = total.calls;
  m["captions_encoded"] = total.requested;
  m["provider_texts"] = total.computed;
  m["vocab_encodes"] = vocab_encodes;
  m["expected_captions_per_image"] = per_image_expected;
  m["wall_time_s"] = wall;
  m["partial"] = failure.has_value();
  m["error"] = failure ? nlohmann::json(*failure) : nlohmann::json(nullptr);
  write_text(cfg.output / "manifest.json", m.dump(2) + "\n");

  if (failure) throw Error(ErrorCode::ProviderFailure, *failure);
  return result;
}

}  // namespace ptsynth
