#include "ptsynth/encoder.hpp"

#include <cmath>
#include <sstream>

#include "ptsynth/error.hpp"
#include "ptsynth/rng.hpp"

namespace ptsynth {

namespace {

std::vector<std::string> split_tokens(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

}  // namespace

SyntheticEncoder::SyntheticEncoder(std::size_t dim, std::uint64_t seed,
                                   std::optional<FeatureMatrix> lexicon)
    : dim_(dim), seed_(seed), lexicon_(std::move(lexicon)) {
  if (dim_ == 0) throw Error(ErrorCode::InvalidArgument, "encoder dimension must be >= 1");
  if (lexicon_) {
    if (lexicon_->dim() != dim_) throw Error(ErrorCode::DimMismatch, "lexicon dimension");
    for (const auto& id : lexicon_->ids()) {
      max_phrase_tokens_ = std::max(max_phrase_tokens_, split_tokens(id).size());
    }
  }
}

std::vector<float> SyntheticEncoder::token_vector(std::string_view token) const {
  if (lexicon_) {
    if (auto row = lexicon_->find(std::string(token))) {
      auto r = lexicon_->row(*row);
      return {r.begin(), r.end()};
    }
  }
  KeyedStream stream(stream_key(seed_, token), 0);
  std::vector<double> g(dim_);
  double norm2 = 0;
  for (auto& x : g) {
    x = stream.normal();
    norm2 += x * x;
  }
  const double norm = std::sqrt(norm2);
  std::vector<float> out(dim_);
  for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(g[i] / norm);
  return out;
}

std::vector<float> SyntheticEncoder::encode_one(const std::string& text) const {
  const auto tokens = split_tokens(text);
  std::vector<double> acc(dim_, 0.0);
  for (std::size_t at = 0; at < tokens.size();) {
    // Longest lexicon phrase starting here, else the single token.
    std::size_t take = 1;
    std::string unit = tokens[at];
    if (lexicon_) {
      for (std::size_t len = std::min(max_phrase_tokens_, tokens.size() - at); len > 1; --len) {
        std::string phrase = tokens[at];
        for (std::size_t j = 1; j < len; ++j) phrase += " " + tokens[at + j];
        if (lexicon_->find(phrase)) {
          take = len;
          unit = std::move(phrase);
          break;
        }
      }
    }
    const auto v = token_vector(unit);
    for (std::size_t i = 0; i < dim_; ++i) acc[i] += v[i];
    at += take;
  }
  double norm2 = 0;
  for (double x : acc) norm2 += x * x;
  if (norm2 < 1e-12) {
    // Empty or self-cancelling text: fall back to the whole-text hash vector.
    return token_vector("\x1f" + text);
  }
  const double norm = std::sqrt(norm2);
  std::vector<float> out(dim_);
  for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

FeatureMatrix SyntheticEncoder::encode_texts(std::span<const std::string> texts) {
  std::vector<float> data;
  data.reserve(texts.size() * dim_);
  std::vector<std::string> ids;
  ids.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto v = encode_one(texts[i]);
    data.insert(data.end(), v.begin(), v.end());
    ids.push_back(std::to_string(i));
  }
  return FeatureMatrix(dim_, std::move(data), std::move(ids), false);
}

CachingEncoder::CachingEncoder(EncoderProvider& provider, std::size_t batch_size)
    : provider_(provider), batch_size_(batch_size == 0 ? kDefaultEncodeBatch : batch_size) {}

std::size_t CachingEncoder::dim() {
  try {
    return provider_.dim();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::ProviderFailure, e.what());
  }
}

std::vector<FeatureVector> CachingEncoder::encode(const std::vector<std::string>& texts) {
  stats_.requested += texts.size();

  std::vector<std::string> pending;
  {
    std::unordered_map<std::string, bool> queued;
    for (const auto& t : texts) {
      if (!memo_.contains(t) && queued.emplace(t, true).second) pending.push_back(t);
    }
  }

  for (std::size_t start = 0; start < pending.size(); start += batch_size_) {
    const std::size_t end = std::min(pending.size(), start + batch_size_);
    std::span<const std::string> batch(pending.data() + start, end - start);
    FeatureMatrix out;
    try {
      out = provider_.encode_texts(batch);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ProviderFailure) throw;
      throw Error(ErrorCode::ProviderFailure, e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ProviderFailure, e.what());
    }
    ++stats_.calls;
    if (out.rows() != batch.size()) {
      throw Error(ErrorCode::ProviderFailure, "provider returned " + std::to_string(out.rows()) +
                                                  " rows for " + std::to_string(batch.size()) +
                                                  " texts");
    }
    if (!memo_.empty() && out.dim() != memo_.begin()->second.dim()) {
      throw Error(ErrorCode::ProviderFailure, "provider changed its output dimension");
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto row = out.row(i);
      if (std::abs(l2_norm(row) - 1.0) > 1e-5) {
        throw Error(ErrorCode::ProviderFailure, "provider row is not unit-norm");
      }
      std::vector<float> v(row.begin(), row.end());
      const bool unit = std::abs(l2_norm(row) - 1.0) <= kUnitTolerance;
      memo_.emplace(batch[i], FeatureVector(std::move(v), unit));
    }
    stats_.computed += batch.size();
  }

  std::vector<FeatureVector> result;
  result.reserve(texts.size());
  for (const auto& t : texts) result.push_back(memo_.at(t));
  return result;
}

}  // namespace ptsynth
