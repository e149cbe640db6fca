#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ptsynth/encoder.hpp"
#include "ptsynth/vocab.hpp"

namespace ptsynth {

struct RetrievalConfig {
  std::size_t k = 3;         // words kept per category
  std::size_t m = 20;        // captions kept per image
  bool iterative = true;     // two-stage relation-first fill
  std::optional<double> score_floor;  // drop kept captions scoring below this
  std::size_t batch_size = kDefaultEncodeBatch;

  void validate() const;
};

using WordCandidates = std::map<std::string, std::vector<std::string>>;

// Per category, the K words closest to the image (best first).
WordCandidates image_to_words(std::span<const float> image, const Vocabulary& vocab, std::size_t k);

// Encodes every caption, scores it against the image and returns the best M
// with embedding and score attached. Ranking is a stable sort on score, so
// equal scores keep their input order.
std::vector<PseudoCaption> image_to_prompts(std::span<const float> image,
                                            std::vector<PseudoCaption> captions,
                                            CachingEncoder& encoder, std::size_t m,
                                            std::optional<double> score_floor = std::nullopt);

std::vector<PseudoCaption> image_to_prompts(std::span<const float> image,
                                            std::vector<PseudoCaption> captions,
                                            EncoderProvider& provider, std::size_t m);

struct TwoStageTemplates {
  PromptTemplate relation;  // e.g. {Noun} {Verb} {Noun}
  PromptTemplate full;      // must contain the relation categories as a subsequence
  std::vector<std::size_t> relation_slots;  // category-slot indices of `full` filled by a relation
};

// Pairs a reduced relation template with the largest template that embeds it.
TwoStageTemplates make_two_stage(const PromptTemplate& relation, const PromptTemplate& full);
TwoStageTemplates select_two_stage(const std::vector<PromptTemplate>& templates);

// Stage 1 composes the relation template (K^3 captions) and keeps the best K
// relations; stage 2 fills each relation into the full template with K
// choices per remaining slot (K^4 captions). Encoded texts total (K+1)K^3.
// Returns the best M stage-2 captions.
std::vector<PseudoCaption> two_stage_synthesis(std::span<const float> image,
                                               const Vocabulary& vocab,
                                               const TwoStageTemplates& templates,
                                               CachingEncoder& encoder,
                                               const RetrievalConfig& cfg);

// Composes every listed template over the top-K words (K^6 for the six-slot
// template) and returns the best M.
std::vector<PseudoCaption> exhaustive_synthesis(std::span<const float> image,
                                                const Vocabulary& vocab,
                                                const std::vector<PromptTemplate>& templates,
                                                CachingEncoder& encoder,
                                                const RetrievalConfig& cfg);

}  // namespace ptsynth
