#pragma once

// Key expression extraction: prompt rendering, response parsing and word-type
// tagging.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fivl/error.hpp"
#include "fivl/lexicon.hpp"
#include "fivl/prompts.hpp"
#include "fivl/transport.hpp"

namespace fivl {

// ---------------------------------------------------------------------------
// Text helpers

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) words.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return words;
}

// FNV-1a: stable across platforms, unlike std::hash.
namespace detail {

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

// Single-pass substitution of {name} slots. Inserted values are never rescanned.
inline std::string substitute(std::string_view tmpl,
                              std::initializer_list<std::pair<std::string_view, std::string_view>> slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, value] : slots) {
        if (tmpl.substr(i + 1, name.size()) == name && i + 1 + name.size() < tmpl.size() &&
            tmpl[i + 1 + name.size()] == '}') {
          out += value;
          i += name.size() + 2;
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Word types

enum class WordType { noun, adjective, proper_noun, adposition, verb, other };
inline constexpr std::size_t kWordTypeCount = 6;
inline constexpr std::array<std::string_view, kWordTypeCount> kWordTypeNames = {
    "noun", "adjective", "proper_noun", "adposition", "verb", "other"};

using WordTypeCounts = std::array<int, kWordTypeCount>;

inline std::string_view to_string(WordType t) { return kWordTypeNames[static_cast<int>(t)]; }

inline bool is_noun(WordType t) { return t == WordType::noun || t == WordType::proper_noun; }

class WordTagger {
 public:
  virtual ~WordTagger() = default;
  virtual WordType tag(std::string_view word) const = 0;
};

// Lexicon lookup with light inflection handling (plural -s/-es/-ies, verb
// -ing/-ed/-s). Capitalized words absent from the lexicon are proper nouns;
// anything else unknown is `other`.
class LexiconTagger final : public WordTagger {
 public:
  LexiconTagger() {
    load(lexicon::kNouns, WordType::noun);
    load(lexicon::kAdjectives, WordType::adjective);
    load(lexicon::kAdpositions, WordType::adposition);
    load(lexicon::kVerbs, WordType::verb);
    load(lexicon::kOther, WordType::other);
  }

  void add(std::string_view word, WordType type) { table_[to_lower(word)] = type; }
  std::size_t size() const { return table_.size(); }

  WordType tag(std::string_view raw) const override {
    const std::string_view word = strip_punct(raw);
    if (word.empty()) return WordType::other;
    const std::string lower = to_lower(word);
    if (auto t = lookup(lower)) return *t;
    if (std::isupper(static_cast<unsigned char>(word.front()))) return WordType::proper_noun;
    if (auto t = inflected(lower)) return *t;
    return WordType::other;
  }

 private:
  static std::string_view strip_punct(std::string_view w) {
    auto keep = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '\''; };
    while (!w.empty() && !keep(w.front())) w.remove_prefix(1);
    while (!w.empty() && !keep(w.back())) w.remove_suffix(1);
    if (w.ends_with("'s")) w.remove_suffix(2);
    return w;
  }

  void load(std::string_view list, WordType type) {
    for (const auto& w : split_words(list)) table_.emplace(w, type);  // first list wins
  }

  std::optional<WordType> lookup(const std::string& w) const {
    if (auto it = table_.find(w); it != table_.end()) return it->second;
    return std::nullopt;
  }

  std::optional<WordType> lookup_as(const std::string& stem, WordType want) const {
    auto t = lookup(stem);
    if (t && *t == want) return t;
    return std::nullopt;
  }

  std::optional<WordType> inflected(const std::string& w) const {
    auto drop = [&](std::size_t n) { return w.substr(0, w.size() - n); };
    if (w.size() > 3 && w.ends_with("ies")) {
      if (auto t = lookup_as(drop(3) + "y", WordType::noun)) return t;
    }
    if (w.size() > 2 && w.ends_with("es")) {
      if (auto t = lookup_as(drop(2), WordType::noun)) return t;
      if (auto t = lookup_as(drop(2), WordType::verb)) return t;
    }
    if (w.size() > 1 && w.ends_with('s')) {
      if (auto t = lookup_as(drop(1), WordType::noun)) return t;
      if (auto t = lookup_as(drop(1), WordType::verb)) return t;
    }
    for (std::string_view suffix : {"ing", "ed"}) {
      if (w.size() <= suffix.size() + 1 || !w.ends_with(suffix)) continue;
      const std::string stem = drop(suffix.size());
      if (auto t = lookup_as(stem, WordType::verb)) return t;
      if (auto t = lookup_as(stem + "e", WordType::verb)) return t;
      // doubled final consonant: running -> run, stopped -> stop
      if (stem.size() >= 2 && stem[stem.size() - 1] == stem[stem.size() - 2])
        if (auto t = lookup_as(stem.substr(0, stem.size() - 1), WordType::verb)) return t;
    }
    return std::nullopt;
  }

  std::unordered_map<std::string, WordType> table_;
};

inline const LexiconTagger& default_tagger() {
  static const LexiconTagger tagger;
  return tagger;
}

inline WordTypeCounts classify_word_types(std::string_view phrase,
                                          const WordTagger& tagger = default_tagger()) {
  if (trim(phrase).empty()) throw InvalidArgument("cannot classify an empty phrase");
  WordTypeCounts counts{};
  for (const auto& w : split_words(phrase)) ++counts[static_cast<int>(tagger.tag(w))];
  return counts;
}

// ---------------------------------------------------------------------------
// Prompts

enum class PromptVariant { training, vqa_eval, gqa_pope_eval };

inline PromptVariant parse_prompt_variant(std::string_view name) {
  if (name == "training" || name == "train") return PromptVariant::training;
  if (name == "vqa_eval" || name == "vqa") return PromptVariant::vqa_eval;
  if (name == "gqa_pope_eval" || name == "gqa" || name == "pope" || name == "gqa_pope")
    return PromptVariant::gqa_pope_eval;
  throw InvalidArgument("unknown prompt variant '" + std::string(name) + "'");
}

inline std::string_view to_string(PromptVariant v) {
  switch (v) {
    case PromptVariant::training: return "training";
    case PromptVariant::vqa_eval: return "vqa_eval";
    case PromptVariant::gqa_pope_eval: return "gqa_pope_eval";
  }
  throw InvalidArgument("unknown prompt variant");
}

inline std::string render_extraction_prompt(PromptVariant variant, std::string_view question,
                                            std::string_view answer) {
  if (trim(question).empty()) throw InvalidArgument("question must not be empty");
  switch (variant) {
    case PromptVariant::training:
      return substitute(prompts::kExtractionTraining, {{"question", question}, {"answer", answer}});
    case PromptVariant::vqa_eval:
    case PromptVariant::gqa_pope_eval: {
      std::string_view examples =
          variant == PromptVariant::vqa_eval ? prompts::kExamplesVqaV2 : prompts::kExamplesGqaPope;
      if (examples.ends_with('\n')) examples.remove_suffix(1);
      std::string tmpl(prompts::kExtractionEval);
      const auto at = tmpl.find("<EXAMPLES>");
      tmpl.replace(at, std::string_view("<EXAMPLES>").size(), examples);
      // Examples carry no slots, so substituting after splicing is safe.
      return substitute(tmpl, {{"question", question}, {"answer", answer}});
    }
  }
  throw InvalidArgument("unknown prompt variant");
}

// ---------------------------------------------------------------------------
// Parsing

inline constexpr std::string_view kExpressionSeparator = ":::";

inline bool is_not_available(std::string_view s) {
  const std::string l = to_lower(trim(s));
  return l == "n/a" || l == "n/a." || l == "\"n/a\"" || l == "\"n/a\".";
}

// Whitespace and stray separator colons at the edges of a piece.
inline std::string_view trim_piece(std::string_view s) {
  auto edge = [](char c) { return c == ':' || std::isspace(static_cast<unsigned char>(c)); };
  while (!s.empty() && edge(s.front())) s.remove_prefix(1);
  while (!s.empty() && edge(s.back())) s.remove_suffix(1);
  return s;
}

// Total parser: split on ":::", trim, drop empties and N/A markers. Pieces
// never start or end with ':', so joining the output with ":::" and parsing
// again is the identity.
inline std::vector<std::string> parse_key_expressions(std::string_view response) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto at = response.find(kExpressionSeparator, start);
    const auto piece = trim_piece(response.substr(start, at == std::string_view::npos ? at : at - start));
    if (!piece.empty() && !is_not_available(piece)) out.emplace_back(piece);
    if (at == std::string_view::npos) break;
    start = at + kExpressionSeparator.size();
  }
  return out;
}

inline std::string join_expressions(const std::vector<std::string>& phrases) {
  std::string out;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (i) out += kExpressionSeparator;
    out += phrases[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Key expressions

enum class ExpressionSource { question, answer };

inline std::string_view to_string(ExpressionSource s) {
  return s == ExpressionSource::question ? "question" : "answer";
}

inline constexpr int kMaxExpressionWords = 4;
inline constexpr std::string_view kForbiddenPunctuation = ".,;:!?\"";

struct KeyExpression {
  std::string text;
  int turn_index = 0;
  ExpressionSource source = ExpressionSource::answer;
  WordTypeCounts word_types{};

  int word_count() const { return static_cast<int>(split_words(text).size()); }
  bool too_long() const { return word_count() > kMaxExpressionWords; }
  bool has_punctuation() const { return text.find_first_of(kForbiddenPunctuation) != std::string::npos; }
  bool operator==(const KeyExpression&) const = default;
};

inline bool contains_ci(std::string_view haystack, std::string_view needle) {
  return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

inline KeyExpression make_key_expression(std::string phrase, int turn_index, std::string_view question,
                                         std::string_view answer,
                                         const WordTagger& tagger = default_tagger()) {
  KeyExpression e;
  e.turn_index = turn_index;
  e.source = (!contains_ci(answer, phrase) && contains_ci(question, phrase)) ? ExpressionSource::question
                                                                             : ExpressionSource::answer;
  e.word_types = classify_word_types(phrase, tagger);
  e.text = std::move(phrase);
  return e;
}

struct ExtractionResult {
  std::vector<KeyExpression> expressions;
  std::string raw_response;
};

struct ExtractorSettings {
  std::string model = "gpt-4o";
  RetryPolicy retry;
};

// One chat request per turn. Transport failures surviving the retry policy
// become ExtractionError; ProtocolError passes through.
inline ExtractionResult extract_for_turn(ChatClient& client, PromptVariant variant,
                                         std::string_view question, std::string_view answer,
                                         int turn_index, const std::string& sample_id = {},
                                         const ExtractorSettings& settings = {},
                                         const WordTagger& tagger = default_tagger()) {
  ChatRequest req;
  req.model = settings.model;
  req.temperature = 0.0;
  req.messages.push_back({"system", render_extraction_prompt(variant, question, answer), {}});
  ExtractionResult result;
  try {
    result.raw_response = with_retries(settings.retry, [&] { return client.complete(req); });
  } catch (const TransportError& e) {
    throw ExtractionError(sample_id, e.what());
  }
  for (auto& phrase : parse_key_expressions(result.raw_response))
    result.expressions.push_back(make_key_expression(std::move(phrase), turn_index, question, answer, tagger));
  return result;
}

}  // namespace fivl
