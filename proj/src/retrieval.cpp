#include "ptsynth/retrieval.hpp"

#include <algorithm>
#include <numeric>

#include "ptsynth/error.hpp"

namespace ptsynth {

void RetrievalConfig::validate() const {
  if (k < 1) throw Error(ErrorCode::KOutOfRange, "K must be >= 1");
  if (m < 1) throw Error(ErrorCode::MOutOfRange, "M must be >= 1");
}

WordCandidates image_to_words(std::span<const float> image, const Vocabulary& vocab,
                              std::size_t k) {
  if (k < 1 || k > vocab.smallest_category()) {
    throw Error(ErrorCode::KOutOfRange, "K=" + std::to_string(k) + " exceeds smallest category (" +
                                            std::to_string(vocab.smallest_category()) + ")");
  }
  WordCandidates out;
  for (const auto& [cat, words] : vocab.categories()) {
    const auto hits = top_k(image, vocab.embeddings(cat), k);
    auto& dst = out[cat];
    dst.reserve(k);
    for (auto idx : hits.indices) dst.push_back(words[idx]);
  }
  return out;
}

std::vector<PseudoCaption> image_to_prompts(std::span<const float> image,
                                            std::vector<PseudoCaption> captions,
                                            CachingEncoder& encoder, std::size_t m,
                                            std::optional<double> score_floor) {
  if (captions.empty()) throw Error(ErrorCode::MOutOfRange, "no captions to rank");
  if (m < 1 || m > captions.size()) {
    throw Error(ErrorCode::MOutOfRange, "M=" + std::to_string(m) + " with " +
                                            std::to_string(captions.size()) + " captions");
  }
  std::vector<std::string> texts;
  texts.reserve(captions.size());
  for (const auto& c : captions) texts.push_back(c.text);
  auto feats = encoder.encode(texts);
  if (!feats.empty() && feats.front().dim() != image.size()) {
    throw Error(ErrorCode::ProviderFailure, "provider dimension differs from image dimension");
  }

  std::vector<double> scores(captions.size());
  for (std::size_t i = 0; i < captions.size(); ++i) scores[i] = cosine_sim(image, feats[i]);

  std::vector<std::size_t> order(captions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<PseudoCaption> out;
  out.reserve(m);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t i = order[r];
    if (score_floor && scores[i] < *score_floor) break;
    PseudoCaption c = std::move(captions[i]);
    c.embedding = std::move(feats[i]);
    c.score = scores[i];
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<PseudoCaption> image_to_prompts(std::span<const float> image,
                                            std::vector<PseudoCaption> captions,
                                            EncoderProvider& provider, std::size_t m) {
  CachingEncoder encoder(provider);
  return image_to_prompts(image, std::move(captions), encoder, m);
}

TwoStageTemplates make_two_stage(const PromptTemplate& relation, const PromptTemplate& full) {
  TwoStageTemplates t{relation, full, {}};
  std::size_t next = 0;
  for (std::size_t c = 0; c < full.category_count() && next < relation.category_count(); ++c) {
    if (full.category_at(c) == relation.category_at(next)) {
      t.relation_slots.push_back(c);
      ++next;
    }
  }
  if (next != relation.category_count()) {
    throw Error(ErrorCode::MissingCategory, "template '" + full.to_string() +
                                                "' does not contain relation '" +
                                                relation.to_string() + "'");
  }
  return t;
}

TwoStageTemplates select_two_stage(const std::vector<PromptTemplate>& templates) {
  if (templates.size() < 2) {
    throw Error(ErrorCode::MissingCategory, "two-stage synthesis needs a relation and a full template");
  }
  auto by_size = [](const PromptTemplate& a, const PromptTemplate& b) {
    return a.category_count() < b.category_count();
  };
  const auto& relation = *std::min_element(templates.begin(), templates.end(), by_size);
  const auto& full = *std::max_element(templates.begin(), templates.end(), by_size);
  if (relation.category_count() == full.category_count()) {
    throw Error(ErrorCode::MissingCategory, "no reduced relation template among templates");
  }
  return make_two_stage(relation, full);
}

std::vector<PseudoCaption> two_stage_synthesis(std::span<const float> image,
                                               const Vocabulary& vocab,
                                               const TwoStageTemplates& templates,
                                               CachingEncoder& encoder,
                                               const RetrievalConfig& cfg) {
  cfg.validate();
  const auto words = image_to_words(image, vocab, cfg.k);

  // Stage 1: relations, K of them kept.
  auto relations = compose_prompts(templates.relation, words);
  auto kept = image_to_prompts(image, std::move(relations), encoder, cfg.k);

  // Stage 2: each kept relation fixed into the full template.
  std::vector<std::vector<std::string>> per_slot(templates.full.category_count());
  for (std::size_t c = 0; c < per_slot.size(); ++c) {
    auto it = words.find(templates.full.category_at(c));
    if (it == words.end()) throw Error(ErrorCode::MissingCategory, templates.full.category_at(c));
    per_slot[c] = it->second;
  }
  std::vector<PseudoCaption> expanded;
  for (const auto& rel : kept) {
    auto slots = per_slot;
    for (std::size_t r = 0; r < templates.relation_slots.size(); ++r) {
      slots[templates.relation_slots[r]] = {rel.slot_words[r]};
    }
    auto batch = compose_slots(templates.full, slots);
    std::move(batch.begin(), batch.end(), std::back_inserter(expanded));
  }
  return image_to_prompts(image, std::move(expanded), encoder, cfg.m, cfg.score_floor);
}

std::vector<PseudoCaption> exhaustive_synthesis(std::span<const float> image,
                                                const Vocabulary& vocab,
                                                const std::vector<PromptTemplate>& templates,
                                                CachingEncoder& encoder,
                                                const RetrievalConfig& cfg) {
  cfg.validate();
  if (templates.empty()) throw Error(ErrorCode::MissingCategory, "no templates");
  const auto words = image_to_words(image, vocab, cfg.k);
  std::vector<PseudoCaption> all;
  for (const auto& t : templates) {
    auto batch = compose_prompts(t, words);
    std::move(batch.begin(), batch.end(), std::back_inserter(all));
  }
  return image_to_prompts(image, std::move(all), encoder, cfg.m, cfg.score_floor);
}

}  // namespace ptsynth
