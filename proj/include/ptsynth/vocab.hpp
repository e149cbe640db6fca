#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ptsynth/embedding.hpp"

namespace ptsynth {

class EncoderProvider;

namespace category {
inline constexpr std::string_view kNoun = "Noun";
inline constexpr std::string_view kVerb = "Verb";
inline constexpr std::string_view kNumeralQuantifier = "NumeralQuantifier";
inline constexpr std::string_view kAdjective = "Adjective";
}  // namespace category

// Maps accepted spellings ("Numeral", "Numeral/Quantifier", "Custom:faces", ...)
// to the canonical category name. Throws InvalidArgument on unknown names.
std::string canonical_category(std::string_view name);

struct VocabularyFilters {
  std::vector<std::string> allow;  // when non-empty, only these words survive
  std::vector<std::string> deny;
  // Drops tokens that are not plain words (emoji, punctuation, digits-only).
  bool text_only = true;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  // Categories must be non-empty; words are trimmed and must stay non-empty.
  explicit Vocabulary(std::map<std::string, std::vector<std::string>> categories);

  const std::map<std::string, std::vector<std::string>>& categories() const noexcept {
    return categories_;
  }
  bool has(const std::string& category) const { return categories_.contains(category); }
  const std::vector<std::string>& words(const std::string& category) const;

  // Word embeddings, row order equal to word order.
  bool has_embeddings() const noexcept { return !embeddings_.empty(); }
  const FeatureMatrix& embeddings(const std::string& category) const;
  void set_embeddings(const std::string& category, FeatureMatrix m);

  std::size_t smallest_category() const;

 private:
  std::map<std::string, std::vector<std::string>> categories_;
  std::map<std::string, FeatureMatrix> embeddings_;
};

Vocabulary parse_vocabulary(std::string_view json_text, const VocabularyFilters& filters = {});
Vocabulary load_vocabulary(const std::filesystem::path& path, const VocabularyFilters& filters = {});

// Encodes every word of every category through the provider.
void embed_vocabulary(Vocabulary& vocab, EncoderProvider& provider);

// Uses rows of `table` whose id equals the word; every word must be present.
void attach_embeddings(Vocabulary& vocab, const FeatureMatrix& table);

struct CategorySlot {
  std::string category;
  friend bool operator==(const CategorySlot&, const CategorySlot&) = default;
};
struct LiteralSlot {
  std::string text;
  friend bool operator==(const LiteralSlot&, const LiteralSlot&) = default;
};
using Slot = std::variant<CategorySlot, LiteralSlot>;

class PromptTemplate {
 public:
  PromptTemplate() = default;
  explicit PromptTemplate(std::vector<Slot> slots);

  // "{Numeral} photo of {Noun}": braces name categories, other tokens are literals.
  static PromptTemplate parse(std::string_view text);

  const std::vector<Slot>& slots() const noexcept { return slots_; }
  std::size_t category_count() const noexcept { return category_positions_.size(); }
  // Slot index of the c-th category slot.
  const std::vector<std::size_t>& category_positions() const noexcept {
    return category_positions_;
  }
  const std::string& category_at(std::size_t c) const;
  std::string to_string() const;

  friend bool operator==(const PromptTemplate& a, const PromptTemplate& b) {
    return a.slots_ == b.slots_;
  }

 private:
  std::vector<Slot> slots_;
  std::vector<std::size_t> category_positions_;
};

// The MS-COCO six-slot template and the reduced relation template.
PromptTemplate coco_template();
PromptTemplate relation_template();

// JSON: list of slot arrays, literal slots as {"lit": "..."}.
std::vector<PromptTemplate> parse_templates(std::string_view json_text);
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);

struct PseudoCaption {
  std::string text;
  std::vector<std::string> slot_words;
  std::optional<FeatureVector> embedding;
  std::optional<double> score;
};

std::string render(const PromptTemplate& tmpl, const std::vector<std::string>& slot_words);

// Cartesian product over per-category-slot candidate lists. Order is
// lexicographic in candidate indices with the last slot varying fastest.
std::vector<PseudoCaption> compose_slots(const PromptTemplate& tmpl,
                                         const std::vector<std::vector<std::string>>& per_slot);

// Same, with candidates looked up by each slot's category.
std::vector<PseudoCaption> compose_prompts(
    const PromptTemplate& tmpl, const std::map<std::string, std::vector<std::string>>& candidates);

// Number of captions compose_prompts would emit, without building them.
std::size_t composition_count(const PromptTemplate& tmpl,
                              const std::map<std::string, std::vector<std::string>>& candidates);

// Keeps the first occurrence of each caption text.
std::vector<PseudoCaption> dedup_captions(std::vector<PseudoCaption> captions);

// Recovers slot words from rendered text. Words may contain spaces, so the
// per-slot candidate lists disambiguate; returns nullopt if text does not fit.
std::optional<std::vector<std::string>> parse_caption(
    const PromptTemplate& tmpl, std::string_view text,
    const std::map<std::string, std::vector<std::string>>& candidates);

}  // namespace ptsynth
