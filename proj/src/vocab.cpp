#include "ptsynth/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "ptsynth/encoder.hpp"
#include "ptsynth/error.hpp"

namespace ptsynth {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Plain-word check: ASCII letters plus inner spaces, hyphens and apostrophes,
// with at least one letter. Rejects emoji, punctuation and byte-level tokens.
bool is_text_word(std::string_view w) {
  bool letter = false;
  for (unsigned char c : w) {
    if (std::isalpha(c)) {
      letter = true;
    } else if (c != ' ' && c != '-' && c != '\'') {
      return false;
    }
  }
  return letter;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json parse_json(std::string_view text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
}

}  // namespace

std::string canonical_category(std::string_view name) {
  const std::string n = trim(name);
  if (n == category::kNoun || n == "Nouns") return std::string(category::kNoun);
  if (n == category::kVerb || n == "Verbs") return std::string(category::kVerb);
  if (n == category::kAdjective || n == "Adjectives") return std::string(category::kAdjective);
  if (n == category::kNumeralQuantifier || n == "Numeral/Quantifier" || n == "Numeral" ||
      n == "Quantifier" || n == "Numerals") {
    return std::string(category::kNumeralQuantifier);
  }
  if (n.starts_with("Custom:") && n.size() > 7) return n;
  throw Error(ErrorCode::InvalidArgument, "unknown category '" + n + "'");
}

Vocabulary::Vocabulary(std::map<std::string, std::vector<std::string>> categories) {
  for (auto& [name, words] : categories) {
    const std::string canon = canonical_category(name);
    if (words.empty()) throw Error(ErrorCode::EmptyCategory, canon);
    auto& dst = categories_[canon];
    for (auto& w : words) {
      std::string t = trim(w);
      if (t.empty()) throw Error(ErrorCode::InvalidArgument, "empty word in " + canon);
      dst.push_back(std::move(t));
    }
  }
}

const std::vector<std::string>& Vocabulary::words(const std::string& cat) const {
  auto it = categories_.find(cat);
  if (it == categories_.end()) throw Error(ErrorCode::MissingCategory, cat);
  return it->second;
}

const FeatureMatrix& Vocabulary::embeddings(const std::string& cat) const {
  auto it = embeddings_.find(cat);
  if (it == embeddings_.end()) {
    throw Error(ErrorCode::MissingCategory, "no embeddings for " + cat);
  }
  return it->second;
}

void Vocabulary::set_embeddings(const std::string& cat, FeatureMatrix m) {
  if (m.rows() != words(cat).size()) {
    throw Error(ErrorCode::DimMismatch, "embedding rows != word count for " + cat);
  }
  embeddings_[cat] = std::move(m);
}

std::size_t Vocabulary::smallest_category() const {
  std::size_t best = 0;
  bool first = true;
  for (const auto& [_, words] : categories_) {
    if (first || words.size() < best) best = words.size();
    first = false;
  }
  return best;
}

Vocabulary parse_vocabulary(std::string_view json_text, const VocabularyFilters& filters) {
  const auto doc = parse_json(json_text);
  if (!doc.is_object()) throw Error(ErrorCode::MalformedJson, "vocabulary must be an object");

  const std::set<std::string> allow(filters.allow.begin(), filters.allow.end());
  const std::set<std::string> deny(filters.deny.begin(), filters.deny.end());

  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [name, list] : doc.items()) {
    if (!list.is_array()) throw Error(ErrorCode::MalformedJson, name + " must be an array");
    const std::string canon = canonical_category(name);
    auto& dst = out[canon];
    std::set<std::string> seen(dst.begin(), dst.end());
    for (const auto& item : list) {
      if (!item.is_string()) throw Error(ErrorCode::MalformedJson, name + " has a non-string word");
      std::string w = trim(item.get<std::string>());
      // Byte-pair vocabularies mark word ends with "</w>".
      if (w.ends_with("</w>")) w = trim(std::string_view(w).substr(0, w.size() - 4));
      if (w.empty()) continue;
      if (filters.text_only && !is_text_word(w)) continue;
      if (!allow.empty() && !allow.contains(w)) continue;
      if (deny.contains(w)) continue;
      if (seen.insert(w).second) dst.push_back(std::move(w));
    }
    if (dst.empty()) throw Error(ErrorCode::EmptyCategory, canon);
  }
  return Vocabulary(std::move(out));
}

Vocabulary load_vocabulary(const std::filesystem::path& path, const VocabularyFilters& filters) {
  return parse_vocabulary(read_file(path), filters);
}

void embed_vocabulary(Vocabulary& vocab, EncoderProvider& provider) {
  CachingEncoder encoder(provider);
  for (const auto& [cat, words] : vocab.categories()) {
    auto vecs = encoder.encode(words);
    std::vector<float> data;
    for (const auto& v : vecs) {
      auto n = normalize(v);
      data.insert(data.end(), n.values().begin(), n.values().end());
    }
    vocab.set_embeddings(cat, FeatureMatrix(encoder.dim(), std::move(data), words, true));
  }
}

void attach_embeddings(Vocabulary& vocab, const FeatureMatrix& table) {
  for (const auto& [cat, words] : vocab.categories()) {
    std::vector<float> data;
    data.reserve(words.size() * table.dim());
    for (const auto& w : words) {
      auto row = table.find(w);
      if (!row) throw Error(ErrorCode::MissingCategory, "no embedding for word '" + w + "'");
      auto n = normalize(table.row(*row));
      data.insert(data.end(), n.values().begin(), n.values().end());
    }
    vocab.set_embeddings(cat, FeatureMatrix(table.dim(), std::move(data), words, true));
  }
}

PromptTemplate::PromptTemplate(std::vector<Slot> slots) : slots_(std::move(slots)) {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (auto* c = std::get_if<CategorySlot>(&slots_[i])) {
      c->category = canonical_category(c->category);
      category_positions_.push_back(i);
    } else {
      auto& lit = std::get<LiteralSlot>(slots_[i]);
      lit.text = trim(lit.text);
      if (lit.text.empty()) throw Error(ErrorCode::InvalidArgument, "empty literal slot");
    }
  }
  if (category_positions_.empty()) {
    throw Error(ErrorCode::InvalidArgument, "template needs at least one category slot");
  }
}

PromptTemplate PromptTemplate::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<Slot> slots;
  for (std::string tok; in >> tok;) {
    if (tok.size() > 2 && tok.front() == '{' && tok.back() == '}') {
      slots.emplace_back(CategorySlot{tok.substr(1, tok.size() - 2)});
    } else if (!slots.empty() && std::holds_alternative<LiteralSlot>(slots.back())) {
      std::get<LiteralSlot>(slots.back()).text += " " + tok;
    } else {
      slots.emplace_back(LiteralSlot{tok});
    }
  }
  return PromptTemplate(std::move(slots));
}

const std::string& PromptTemplate::category_at(std::size_t c) const {
  return std::get<CategorySlot>(slots_.at(category_positions_.at(c))).category;
}

std::string PromptTemplate::to_string() const {
  std::string out;
  for (const auto& s : slots_) {
    if (!out.empty()) out += ' ';
    if (auto* c = std::get_if<CategorySlot>(&s)) {
      out += "{" + c->category + "}";
    } else {
      out += std::get<LiteralSlot>(s).text;
    }
  }
  return out;
}

PromptTemplate coco_template() {
  return PromptTemplate::parse("{NumeralQuantifier} {Adjective} {Noun} {Verb} {Adjective} {Noun}");
}

PromptTemplate relation_template() { return PromptTemplate::parse("{Noun} {Verb} {Noun}"); }

std::vector<PromptTemplate> parse_templates(std::string_view json_text) {
  const auto doc = parse_json(json_text);
  if (!doc.is_array()) throw Error(ErrorCode::MalformedJson, "templates must be a list");
  std::vector<PromptTemplate> out;
  for (const auto& t : doc) {
    if (!t.is_array()) throw Error(ErrorCode::MalformedJson, "template must be a slot array");
    std::vector<Slot> slots;
    for (const auto& s : t) {
      if (s.is_string()) {
        slots.emplace_back(CategorySlot{s.get<std::string>()});
      } else if (s.is_object() && s.contains("lit") && s["lit"].is_string()) {
        slots.emplace_back(LiteralSlot{s["lit"].get<std::string>()});
      } else {
        throw Error(ErrorCode::MalformedJson, "slot must be a category name or {\"lit\": ...}");
      }
    }
    out.emplace_back(std::move(slots));
  }
  return out;
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  return parse_templates(read_file(path));
}

std::string render(const PromptTemplate& tmpl, const std::vector<std::string>& slot_words) {
  if (slot_words.size() != tmpl.category_count()) {
    throw Error(ErrorCode::ArityMismatch, std::to_string(slot_words.size()) + " words for " +
                                              std::to_string(tmpl.category_count()) + " slots");
  }
  std::string out;
  std::size_t next = 0;
  for (const auto& s : tmpl.slots()) {
    const std::string& piece = std::holds_alternative<CategorySlot>(s)
                                   ? slot_words[next++]
                                   : std::get<LiteralSlot>(s).text;
    if (piece.empty()) continue;
    if (!out.empty()) out += ' ';
    out += piece;
  }
  return out;
}

std::vector<PseudoCaption> compose_slots(const PromptTemplate& tmpl,
                                         const std::vector<std::vector<std::string>>& per_slot) {
  if (per_slot.size() != tmpl.category_count()) {
    throw Error(ErrorCode::ArityMismatch, "candidate lists do not match template slots");
  }
  std::size_t total = 1;
  for (std::size_t c = 0; c < per_slot.size(); ++c) {
    if (per_slot[c].empty()) throw Error(ErrorCode::MissingCategory, tmpl.category_at(c));
    total *= per_slot[c].size();
  }
  std::vector<PseudoCaption> out;
  out.reserve(total);
  // Odometer over candidate indices, last slot fastest.
  std::vector<std::size_t> idx(per_slot.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    PseudoCaption cap;
    cap.slot_words.reserve(per_slot.size());
    for (std::size_t c = 0; c < per_slot.size(); ++c) cap.slot_words.push_back(per_slot[c][idx[c]]);
    cap.text = render(tmpl, cap.slot_words);
    out.push_back(std::move(cap));
    for (std::size_t c = per_slot.size(); c-- > 0;) {
      if (++idx[c] < per_slot[c].size()) break;
      idx[c] = 0;
    }
  }
  return out;
}

namespace {

std::vector<std::vector<std::string>> lists_for(
    const PromptTemplate& tmpl, const std::map<std::string, std::vector<std::string>>& candidates) {
  std::vector<std::vector<std::string>> per_slot;
  per_slot.reserve(tmpl.category_count());
  for (std::size_t c = 0; c < tmpl.category_count(); ++c) {
    auto it = candidates.find(tmpl.category_at(c));
    if (it == candidates.end() || it->second.empty()) {
      throw Error(ErrorCode::MissingCategory, tmpl.category_at(c));
    }
    per_slot.push_back(it->second);
  }
  return per_slot;
}

}  // namespace

std::vector<PseudoCaption> compose_prompts(
    const PromptTemplate& tmpl, const std::map<std::string, std::vector<std::string>>& candidates) {
  return compose_slots(tmpl, lists_for(tmpl, candidates));
}

std::size_t composition_count(const PromptTemplate& tmpl,
                              const std::map<std::string, std::vector<std::string>>& candidates) {
  std::size_t total = 1;
  for (const auto& l : lists_for(tmpl, candidates)) total *= l.size();
  return total;
}

std::vector<PseudoCaption> dedup_captions(std::vector<PseudoCaption> captions) {
  std::set<std::string> seen;
  std::vector<PseudoCaption> out;
  out.reserve(captions.size());
  for (auto& c : captions) {
    if (seen.insert(c.text).second) out.push_back(std::move(c));
  }
  return out;
}

namespace {

bool consume(std::string_view& rest, std::string_view piece, bool first) {
  std::string_view r = rest;
  if (!first) {
    if (r.empty() || r.front() != ' ') return false;
    r.remove_prefix(1);
  }
  if (!r.starts_with(piece)) return false;
  r.remove_prefix(piece.size());
  if (!r.empty() && r.front() != ' ') return false;
  rest = r;
  return true;
}

bool match_from(const PromptTemplate& tmpl, const std::vector<std::vector<std::string>>& per_slot,
                std::size_t slot, std::size_t cat, std::string_view rest,
                std::vector<std::string>& words) {
  if (slot == tmpl.slots().size()) return rest.empty();
  const bool first = slot == 0;
  if (auto* lit = std::get_if<LiteralSlot>(&tmpl.slots()[slot])) {
    std::string_view r = rest;
    return consume(r, lit->text, first) && match_from(tmpl, per_slot, slot + 1, cat, r, words);
  }
  for (const auto& w : per_slot[cat]) {
    std::string_view r = rest;
    if (!consume(r, w, first)) continue;
    words.push_back(w);
    if (match_from(tmpl, per_slot, slot + 1, cat + 1, r, words)) return true;
    words.pop_back();
  }
  return false;
}

}  // namespace

std::optional<std::vector<std::string>> parse_caption(
    const PromptTemplate& tmpl, std::string_view text,
    const std::map<std::string, std::vector<std::string>>& candidates) {
  const auto per_slot = lists_for(tmpl, candidates);
  std::vector<std::string> words;
  if (match_from(tmpl, per_slot, 0, 0, text, words)) return words;
  return std::nullopt;
}

}  // namespace ptsynth
