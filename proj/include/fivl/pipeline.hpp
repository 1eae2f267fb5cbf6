#pragma once

// Dataset ingestion, augmentation orchestration, eval filtering, statistics
// and the line-delimited augmented dataset format.
//
// Augmented dataset file:
//   line 1   {"format":"fivl-augmented","version":1}
//   line 2+  one JSON sample record per line (see sample_to_json)

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fivl/error.hpp"
#include "fivl/grounding.hpp"
#include "fivl/keyexpr.hpp"
#include "fivl/mask.hpp"
#include "fivl/parallel.hpp"
#include "fivl/transport.hpp"

namespace fivl {

struct Turn {
  std::string question;
  std::string answer;
  bool operator==(const Turn&) const = default;
};

struct Conversation {
  std::string id;
  std::string image_ref;
  std::vector<Turn> turns;
  bool operator==(const Conversation&) const = default;
};

struct QualityFlags {
  bool augmented = false;  // false when the sample passed through untouched
  int extraction_failures = 0;
  int grounding_failures = 0;
  int long_expressions = 0;
  int punctuated_expressions = 0;
  int ungrounded_expressions = 0;
  int deduplicated_masks = 0;
  bool operator==(const QualityFlags&) const = default;
};

struct AugmentedSample {
  Conversation conversation;
  std::vector<Grounding> groundings;
  std::vector<std::string> raw_responses;  // extractor output per turn, for audit
  QualityFlags quality;

  std::size_t mask_count() const {
    return static_cast<std::size_t>(std::count_if(groundings.begin(), groundings.end(),
                                                  [](const Grounding& g) { return g.has_mask(); }));
  }
  bool operator==(const AugmentedSample&) const = default;
};

// ---------------------------------------------------------------------------
// Ingestion

struct IngestDiagnostic {
  std::string record_id;
  std::string field;
  std::string message;
};

struct IngestResult {
  std::vector<Conversation> conversations;
  std::vector<IngestDiagnostic> rejected;
};

namespace detail {

inline bool is_human_role(const std::string& r) { return r == "human" || r == "user"; }
inline bool is_model_role(const std::string& r) { return r == "gpt" || r == "assistant" || r == "model"; }

inline std::optional<Conversation> conversation_from_record(const json& rec, std::size_t index,
                                                            std::vector<IngestDiagnostic>& diag) {
  std::string id = "#" + std::to_string(index);
  auto reject = [&](const std::string& field, const std::string& msg) {
    diag.push_back({id, field, msg});
    return std::nullopt;
  };
  if (!rec.is_object()) return reject("", "record is not an object");
  if (rec.contains("id")) {
    if (rec["id"].is_string()) id = rec["id"].get<std::string>();
    else if (rec["id"].is_number()) id = rec["id"].dump();
    else return reject("id", "id must be a string or number");
  } else {
    return reject("id", "missing");
  }
  if (!rec.contains("image") || !rec["image"].is_string() || rec["image"].get<std::string>().empty())
    return reject("image", "missing or not a string");
  if (!rec.contains("conversations") || !rec["conversations"].is_array())
    return reject("conversations", "missing or not an array");
  const auto& msgs = rec["conversations"];
  if (msgs.empty()) return reject("conversations", "no turns");
  if (msgs.size() % 2 != 0) return reject("conversations", "odd number of messages");
  Conversation c{id, rec["image"].get<std::string>(), {}};
  for (std::size_t i = 0; i < msgs.size(); i += 2) {
    const auto& q = msgs[i];
    const auto& a = msgs[i + 1];
    const std::string where = "conversations[" + std::to_string(i) + "]";
    if (!q.is_object() || !a.is_object() || !q.contains("from") || !a.contains("from") ||
        !q.contains("value") || !a.contains("value") || !q["value"].is_string() || !a["value"].is_string())
      return reject(where, "message needs string 'from' and 'value'");
    if (!is_human_role(q["from"].get<std::string>()) || !is_model_role(a["from"].get<std::string>()))
      return reject(where, "roles must alternate human/gpt starting with human");
    c.turns.push_back({q["value"].get<std::string>(), a["value"].get<std::string>()});
  }
  return c;
}

}  // namespace detail

// Reads the instruction-tuning schema
//   [{"id", "image", "conversations": [{"from", "value"}, ...]}, ...]
// Invalid records are rejected with diagnostics; with `strict` the first one
// raises IngestError instead.
inline IngestResult ingest_dataset(const json& records, bool strict = false) {
  if (!records.is_array()) throw IngestError("", "", "dataset must be a JSON array");
  IngestResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto c = detail::conversation_from_record(records[i], i, out.rejected);
    if (c) {
      out.conversations.push_back(std::move(*c));
    } else if (strict) {
      const auto& d = out.rejected.back();
      throw IngestError(d.record_id, d.field, d.message);
    }
  }
  return out;
}

inline IngestResult ingest_dataset(const std::string& path, bool strict = false) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open dataset '" + path + "'");
  json records;
  try {
    records = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IngestError("", "", std::string("not valid JSON: ") + e.what());
  }
  return ingest_dataset(records, strict);
}

// ---------------------------------------------------------------------------
// Serialization

inline json grounding_to_json(const Grounding& g) {
  json wt = json::object();
  for (std::size_t i = 0; i < kWordTypeCount; ++i)
    if (g.expression.word_types[i]) wt[std::string(kWordTypeNames[i])] = g.expression.word_types[i];
  json boxes = json::array();
  for (const auto& b : g.boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
  return {{"text", g.expression.text},
          {"turn", g.expression.turn_index},
          {"source", std::string(to_string(g.expression.source))},
          {"word_types", std::move(wt)},
          {"boxes", std::move(boxes)},
          {"mask", g.mask ? json(format_rle(*g.mask)) : json(nullptr)},
          {"score", g.detector_score},
          {"coverage", g.coverage},
          {"deduplicated", g.deduplicated}};
}

inline Grounding grounding_from_json(const json& j) {
  Grounding g;
  g.expression.text = j.at("text").get<std::string>();
  g.expression.turn_index = j.at("turn").get<int>();
  const auto src = j.at("source").get<std::string>();
  if (src != "question" && src != "answer") throw ProtocolError("bad expression source '" + src + "'");
  g.expression.source = src == "question" ? ExpressionSource::question : ExpressionSource::answer;
  for (const auto& [k, v] : j.at("word_types").items()) {
    const auto it = std::find(kWordTypeNames.begin(), kWordTypeNames.end(), k);
    if (it == kWordTypeNames.end()) throw ProtocolError("unknown word type '" + k + "'");
    g.expression.word_types[static_cast<std::size_t>(it - kWordTypeNames.begin())] = v.get<int>();
  }
  for (const auto& b : j.at("boxes")) g.boxes.push_back({b.at(0), b.at(1), b.at(2), b.at(3)});
  if (!j.at("mask").is_null()) g.mask = parse_rle(j.at("mask").get<std::string>());
  g.detector_score = j.at("score").get<double>();
  g.coverage = j.at("coverage").get<double>();
  g.deduplicated = j.at("deduplicated").get<bool>();
  return g;
}

inline json sample_to_json(const AugmentedSample& s) {
  json turns = json::array();
  for (const auto& t : s.conversation.turns) turns.push_back({{"question", t.question}, {"answer", t.answer}});
  json gs = json::array();
  for (const auto& g : s.groundings) gs.push_back(grounding_to_json(g));
  const auto& q = s.quality;
  return {{"id", s.conversation.id},
          {"image", s.conversation.image_ref},
          {"turns", std::move(turns)},
          {"groundings", std::move(gs)},
          {"raw_responses", s.raw_responses},
          {"quality",
           {{"augmented", q.augmented},
            {"extraction_failures", q.extraction_failures},
            {"grounding_failures", q.grounding_failures},
            {"long_expressions", q.long_expressions},
            {"punctuated_expressions", q.punctuated_expressions},
            {"ungrounded_expressions", q.ungrounded_expressions},
            {"deduplicated_masks", q.deduplicated_masks}}}};
}

inline AugmentedSample sample_from_json(const json& j) {
  AugmentedSample s;
  s.conversation.id = j.at("id").get<std::string>();
  s.conversation.image_ref = j.at("image").get<std::string>();
  for (const auto& t : j.at("turns"))
    s.conversation.turns.push_back({t.at("question").get<std::string>(), t.at("answer").get<std::string>()});
  for (const auto& g : j.at("groundings")) s.groundings.push_back(grounding_from_json(g));
  s.raw_responses = j.at("raw_responses").get<std::vector<std::string>>();
  const auto& q = j.at("quality");
  s.quality.augmented = q.at("augmented").get<bool>();
  s.quality.extraction_failures = q.at("extraction_failures").get<int>();
  s.quality.grounding_failures = q.at("grounding_failures").get<int>();
  s.quality.long_expressions = q.at("long_expressions").get<int>();
  s.quality.punctuated_expressions = q.at("punctuated_expressions").get<int>();
  s.quality.ungrounded_expressions = q.at("ungrounded_expressions").get<int>();
  s.quality.deduplicated_masks = q.at("deduplicated_masks").get<int>();
  for (const auto& g : s.groundings)
    if (g.expression.turn_index < 0 || g.expression.turn_index >= static_cast<int>(s.conversation.turns.size()))
      throw ProtocolError("grounding references turn " + std::to_string(g.expression.turn_index) +
                          " outside the conversation");
  return s;
}

inline constexpr int kDatasetVersion = 1;
inline constexpr std::string_view kDatasetFormat = "fivl-augmented";

inline void write_dataset(const std::vector<AugmentedSample>& samples, std::ostream& out) {
  out << json{{"format", kDatasetFormat}, {"version", kDatasetVersion}}.dump() << '\n';
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

inline void write_dataset(const std::vector<AugmentedSample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset '" + path + "'");
  write_dataset(samples, out);
  if (!out) throw Error("write failed for '" + path + "'");
}

inline std::vector<AugmentedSample> read_dataset(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw FormatError(1, "missing header line");
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != kDatasetFormat) throw FormatError(1, "not a fivl-augmented dataset");
    const int version = header.value("version", -1);
    if (version != kDatasetVersion)
      throw FormatError(1, "unsupported dataset version " + std::to_string(version));
  } catch (const json::exception& e) {
    throw FormatError(1, std::string("bad header: ") + e.what());
  }
  std::vector<AugmentedSample> samples;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      samples.push_back(sample_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(lineno, e.what());
    } catch (const MalformedMaskError& e) {
      throw FormatError(lineno, std::string("bad mask: ") + e.what());
    } catch (const ProtocolError& e) {
      throw FormatError(lineno, e.what());
    }
  }
  return samples;
}

inline std::vector<AugmentedSample> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

// ---------------------------------------------------------------------------
// Samples and groundings

inline AugmentedSample passthrough(Conversation c) {
  AugmentedSample s;
  s.conversation = std::move(c);
  return s;
}

inline void recount_quality(AugmentedSample& s) {
  auto& q = s.quality;
  q.long_expressions = q.punctuated_expressions = q.ungrounded_expressions = q.deduplicated_masks = 0;
  for (const auto& g : s.groundings) {
    q.long_expressions += g.expression.too_long() ? 1 : 0;
    q.punctuated_expressions += g.expression.has_punctuation() ? 1 : 0;
    q.deduplicated_masks += g.deduplicated ? 1 : 0;
    q.ungrounded_expressions += (!g.has_mask() && !g.deduplicated) ? 1 : 0;
  }
}

inline AugmentedSample attach_groundings(AugmentedSample sample, std::vector<Grounding> groundings,
                                         double dedup_threshold = kDefaultDedupThreshold) {
  for (const auto& g : groundings)
    if (g.expression.turn_index < 0 ||
        g.expression.turn_index >= static_cast<int>(sample.conversation.turns.size()))
      throw InvalidArgument("grounding for '" + g.expression.text + "' references a turn outside sample '" +
                            sample.conversation.id + "'");
  sample.groundings = dedup_groundings(std::move(groundings), dedup_threshold);
  recount_quality(sample);
  return sample;
}

// ---------------------------------------------------------------------------
// Statistics

struct DatasetStats {
  std::size_t n_conversations = 0;
  std::size_t n_turns = 0;
  std::size_t n_expressions = 0;
  std::size_t n_masks = 0;
  double avg_expressions_per_conversation = 0.0;
  double avg_expressions_per_turn = 0.0;
  double avg_masks_per_conversation = 0.0;
  double avg_words_per_expression = 0.0;
  double avg_coverage = 0.0;
  std::array<double, kWordTypeCount> word_type_distribution{};
  double filtered_fraction = 0.0;
  std::size_t augmentation_failures = 0;
  std::size_t long_expressions = 0;
  std::size_t punctuated_expressions = 0;
  bool operator==(const DatasetStats&) const = default;
};

inline bool has_grounded_expression(const AugmentedSample& s) {
  return !s.groundings.empty() && s.mask_count() > 0;
}

inline DatasetStats compute_dataset_stats(const std::vector<AugmentedSample>& samples,
                                          double filtered_fraction = 0.0) {
  DatasetStats st;
  st.n_conversations = samples.size();
  st.filtered_fraction = filtered_fraction;
  std::size_t words = 0;
  double coverage_sum = 0.0;
  std::array<std::size_t, kWordTypeCount> type_counts{};
  for (const auto& s : samples) {
    st.n_turns += s.conversation.turns.size();
    st.n_expressions += s.groundings.size();
    if (!s.quality.augmented) ++st.augmentation_failures;
    for (const auto& g : s.groundings) {
      words += static_cast<std::size_t>(g.expression.word_count());
      for (std::size_t i = 0; i < kWordTypeCount; ++i)
        type_counts[i] += static_cast<std::size_t>(g.expression.word_types[i]);
      st.long_expressions += g.expression.too_long() ? 1 : 0;
      st.punctuated_expressions += g.expression.has_punctuation() ? 1 : 0;
      if (g.has_mask()) {
        ++st.n_masks;
        coverage_sum += g.coverage;
      }
    }
  }
  if (st.n_conversations) {
    st.avg_expressions_per_conversation = double(st.n_expressions) / double(st.n_conversations);
    st.avg_masks_per_conversation = double(st.n_masks) / double(st.n_conversations);
  }
  if (st.n_turns) st.avg_expressions_per_turn = double(st.n_expressions) / double(st.n_turns);
  if (st.n_expressions) st.avg_words_per_expression = double(words) / double(st.n_expressions);
  if (st.n_masks) st.avg_coverage = coverage_sum / double(st.n_masks);
  const std::size_t typed = std::accumulate(type_counts.begin(), type_counts.end(), std::size_t{0});
  if (typed)
    for (std::size_t i = 0; i < kWordTypeCount; ++i)
      st.word_type_distribution[i] = double(type_counts[i]) / double(typed);
  return st;
}

inline json stats_to_json(const DatasetStats& st) {
  json dist = json::object();
  for (std::size_t i = 0; i < kWordTypeCount; ++i)
    dist[std::string(kWordTypeNames[i])] = st.word_type_distribution[i];
  return {{"conversations", st.n_conversations},
          {"turns", st.n_turns},
          {"expressions", st.n_expressions},
          {"masks", st.n_masks},
          {"avg_expressions_per_conversation", st.avg_expressions_per_conversation},
          {"avg_expressions_per_turn", st.avg_expressions_per_turn},
          {"avg_masks_per_conversation", st.avg_masks_per_conversation},
          {"avg_words_per_expression", st.avg_words_per_expression},
          {"avg_coverage", st.avg_coverage},
          {"word_type_distribution", std::move(dist)},
          {"filtered_fraction", st.filtered_fraction},
          {"augmentation_failures", st.augmentation_failures},
          {"long_expressions", st.long_expressions},
          {"punctuated_expressions", st.punctuated_expressions}};
}

// ---------------------------------------------------------------------------
// Eval filtering

struct FilterResult {
  std::vector<AugmentedSample> samples;
  double retained_fraction = 1.0;
};

// Keeps samples with at least one key expression and one non-empty mask.
inline FilterResult filter_eval_samples(const std::vector<AugmentedSample>& samples) {
  FilterResult r;
  for (const auto& s : samples)
    if (has_grounded_expression(s)) r.samples.push_back(s);
  r.retained_fraction = samples.empty() ? 1.0 : double(r.samples.size()) / double(samples.size());
  return r;
}

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentMode { train, eval };

struct AugmentConfig {
  AugmentMode mode = AugmentMode::train;
  PromptVariant eval_variant = PromptVariant::gqa_pope_eval;
  int parallelism = 1;
  double box_threshold = kDefaultBoxThreshold;
  double mask_threshold = kDefaultMaskThreshold;
  double dedup_threshold = kDefaultDedupThreshold;
  std::string image_root;     // prefix joined to the record's image field
  std::string journal_path;   // empty: no journal
  ExtractorSettings extractor;
  RetryPolicy grounding_retry;
};

struct AugmentResult {
  std::vector<AugmentedSample> samples;
  DatasetStats stats;
  std::size_t resumed = 0;  // samples restored from the journal
};

inline AugmentedSample augment_sample(const Conversation& conv, ChatClient& extractor,
                                      GroundingClient& grounder, const AugmentConfig& cfg) {
  const PromptVariant variant = cfg.mode == AugmentMode::train ? PromptVariant::training : cfg.eval_variant;
  AugmentedSample out = passthrough(conv);
  std::vector<Grounding> groundings;
  bool grounding_stage = false;
  try {
    for (std::size_t t = 0; t < conv.turns.size(); ++t) {
      grounding_stage = false;
      auto res = extract_for_turn(extractor, variant, conv.turns[t].question, conv.turns[t].answer,
                                  static_cast<int>(t), conv.id, cfg.extractor);
      out.raw_responses.push_back(std::move(res.raw_response));
      grounding_stage = true;
      for (auto& expr : res.expressions) {
        GroundingRequest req;
        req.image_id = conv.image_ref;
        req.image_ref = cfg.image_root.empty()
                            ? conv.image_ref
                            : (std::filesystem::path(cfg.image_root) / conv.image_ref).string();
        req.phrase = expr.text;
        req.box_threshold = cfg.box_threshold;
        req.mask_threshold = cfg.mask_threshold;
        auto dets = ground_expression(grounder, req, cfg.grounding_retry);
        groundings.push_back(dets.empty() ? ungrounded(std::move(expr))
                                          : consolidate_masks(std::move(expr), dets));
      }
    }
  } catch (const Error&) {
    // Client failures quarantine the sample: it passes through un-augmented.
    AugmentedSample failed = passthrough(conv);
    (grounding_stage ? failed.quality.grounding_failures : failed.quality.extraction_failures) = 1;
    return failed;
  }
  out = attach_groundings(std::move(out), std::move(groundings), cfg.dedup_threshold);
  out.quality.augmented = true;
  return out;
}

namespace detail {

// Journal lines: {"index": i, "sample": {...}}. A torn final line (crash
// mid-write) is ignored; damage anywhere else is an error.
inline std::unordered_map<std::size_t, AugmentedSample> load_journal(const std::string& path,
                                                                     const std::vector<Conversation>& input) {
  std::unordered_map<std::size_t, AugmentedSample> done;
  std::ifstream in(path, std::ios::binary);
  if (!in) return done;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      const json j = json::parse(lines[i]);
      const auto index = j.at("index").get<std::size_t>();
      auto sample = sample_from_json(j.at("sample"));
      if (index < input.size() && input[index].id == sample.conversation.id)
        done.insert_or_assign(index, std::move(sample));
    } catch (const std::exception& e) {
      if (i + 1 == lines.size()) break;
      throw FormatError(i + 1, std::string("corrupt journal entry: ") + e.what());
    }
  }
  return done;
}

}  // namespace detail

// Fans samples out to `parallelism` workers; the output keeps input order.
// With a journal path, completed samples are appended as they finish and a
// rerun restores them instead of calling the clients again.
inline AugmentResult augment_dataset(const std::vector<Conversation>& conversations, ChatClient& extractor,
                                     GroundingClient& grounder, const AugmentConfig& cfg) {
  AugmentResult result;
  std::vector<std::optional<AugmentedSample>> slots(conversations.size());

  std::ofstream journal;
  if (!cfg.journal_path.empty()) {
    auto done = detail::load_journal(cfg.journal_path, conversations);
    result.resumed = done.size();
    for (auto& [i, s] : done) slots[i] = std::move(s);
    // Rewrite the journal without any torn tail before appending.
    std::ofstream rewrite(cfg.journal_path, std::ios::binary | std::ios::trunc);
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i]) rewrite << json{{"index", i}, {"sample", sample_to_json(*slots[i])}}.dump() << '\n';
    rewrite.close();
    journal.open(cfg.journal_path, std::ios::binary | std::ios::app);
    if (!journal) throw Error("cannot open journal '" + cfg.journal_path + "'");
  }

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (!slots[i]) pending.push_back(i);

  std::mutex mu;
  parallel_for(pending.size(), cfg.parallelism, [&](std::size_t k) {
    const std::size_t i = pending[k];
    AugmentedSample s = augment_sample(conversations[i], extractor, grounder, cfg);
    if (journal.is_open()) {
      const std::string line = json{{"index", i}, {"sample", sample_to_json(s)}}.dump();
      std::lock_guard lock(mu);
      journal << line << '\n';
      journal.flush();
    }
    slots[i] = std::move(s);
  });

  result.samples.reserve(slots.size());
  for (auto& s : slots) result.samples.push_back(std::move(*s));
  double filtered = 0.0;
  if (cfg.mode == AugmentMode::eval) filtered = 1.0 - filter_eval_samples(result.samples).retained_fraction;
  result.stats = compute_dataset_stats(result.samples, filtered);
  return result;
}

}  // namespace fivl
