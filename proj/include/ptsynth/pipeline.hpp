#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptsynth/clo.hpp"
#include "ptsynth/encoder.hpp"
#include "ptsynth/pseudo.hpp"
#include "ptsynth/retrieval.hpp"
#include "ptsynth/vocab.hpp"

namespace ptsynth {

struct PipelineConfig {
  std::filesystem::path images;      // EMB1
  std::filesystem::path vocabulary;  // category -> words JSON
  std::optional<std::filesystem::path> templates;         // default: six-slot + relation
  std::optional<std::filesystem::path> vocab_embeddings;  // EMB1 keyed by word; default: encode
  std::filesystem::path output;      // directory

  RetrievalConfig retrieval;
  PerturbConfig perturb;
  CloConfig clo;
  MixingSchedule schedule;
  VocabularyFilters filters;

  // "synthetic", "synthetic:<lexicon.emb>" or "endpoint:<address>".
  std::string provider = "synthetic";
  std::uint64_t seed = 0;
  std::size_t batch_n = 64;         // CLO batch size
  std::size_t gaussian_draws = 5;   // Gaussian pairs per image
  bool emit_stream = false;         // also write the mixed training stream
  unsigned threads = 0;

  // Checks values and that referenced input files exist.
  void validate() const;
  nlohmann::json to_json() const;
};

// Flat TOML keys mirroring the CLI flags (k, m, xi, t, lambda, tau, batch_n,
// seed, provider, iterative, schedule, ...). Relative paths resolve against
// the config file's directory.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
void apply_config_toml(PipelineConfig& cfg, std::string_view toml_text,
                       const std::filesystem::path& base_dir = {});

std::unique_ptr<EncoderProvider> make_provider(const std::string& spec, std::size_t dim,
                                               std::uint64_t seed);

struct PipelineResult {
  std::vector<PseudoPair> pairs;  // id-sorted images, per image: captions then Gaussian draws
  nlohmann::json manifest;
};

// Writes pairs.jsonl, pairs.emb (+ ids sidecar), manifest.json and, when
// enabled, stream.jsonl into cfg.output. A provider failure still flushes the
// images completed so far with "partial": true before rethrowing.
PipelineResult run_pipeline(const PipelineConfig& cfg);
// Same with a caller-owned provider (cfg.provider is ignored).
PipelineResult run_pipeline(const PipelineConfig& cfg, EncoderProvider& provider);

}  // namespace ptsynth
