#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptsynth/embedding.hpp"

namespace ptsynth {

// Text encoder contract: deterministic, row order equals input order, rows
// unit-norm within 1e-5. Implementations used from several threads must be
// internally synchronized.
class EncoderProvider {
 public:
  virtual ~EncoderProvider() = default;
  virtual std::size_t dim() = 0;
  // Row ids are the decimal input positions ("0", "1", ...); texts may repeat.
  virtual FeatureMatrix encode_texts(std::span<const std::string> texts) = 0;
};

// Deterministic in-process encoder. A text is split into whitespace tokens
// (greedily matching multi-word lexicon entries); each token maps to its
// lexicon row if present, else to a seeded pseudo-random unit vector. The
// text embedding is the normalized sum. Stateless, so thread-safe.
class SyntheticEncoder final : public EncoderProvider {
 public:
  SyntheticEncoder(std::size_t dim, std::uint64_t seed,
                   std::optional<FeatureMatrix> lexicon = std::nullopt);

  std::size_t dim() override { return dim_; }
  FeatureMatrix encode_texts(std::span<const std::string> texts) override;

  std::vector<float> encode_one(const std::string& text) const;
  std::vector<float> token_vector(std::string_view token) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::optional<FeatureMatrix> lexicon_;
  std::size_t max_phrase_tokens_ = 1;
};

struct EncodeStats {
  std::size_t requested = 0;  // texts asked for, memo hits included
  std::size_t computed = 0;   // texts actually sent to the provider
  std::size_t calls = 0;      // provider round trips

  EncodeStats& operator+=(const EncodeStats& o) {
    requested += o.requested;
    computed += o.computed;
    calls += o.calls;
    return *this;
  }
};

inline constexpr std::size_t kDefaultEncodeBatch = 256;

// Batches provider calls and memoizes results by text. Validates every
// provider response; any provider problem surfaces as ProviderFailure.
// Not thread-safe; use one per task.
class CachingEncoder {
 public:
  explicit CachingEncoder(EncoderProvider& provider, std::size_t batch_size = kDefaultEncodeBatch);

  std::vector<FeatureVector> encode(const std::vector<std::string>& texts);
  const EncodeStats& stats() const noexcept { return stats_; }
  std::size_t dim();

 private:
  EncoderProvider& provider_;
  std::size_t batch_size_;
  std::unordered_map<std::string, FeatureVector> memo_;
  EncodeStats stats_;
};

}  // namespace ptsynth
