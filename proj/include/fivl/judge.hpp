#pragma once

// LLM-as-judge evaluation of extracted key expressions (keyword importance)
// and of their masks (seg1: does the masked crop cover the phrase; seg2: does
// the image with the mask removed still show it).

#include <algorithm>
#include <cctype>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include "fivl/error.hpp"
#include "fivl/image.hpp"
#include "fivl/keyexpr.hpp"
#include "fivl/mask.hpp"
#include "fivl/parallel.hpp"
#include "fivl/pipeline.hpp"
#include "fivl/prompts.hpp"
#include "fivl/transport.hpp"

namespace fivl {

enum class JudgeKind { keyword, seg1, seg2 };

inline JudgeKind parse_judge_kind(std::string_view s) {
  if (s == "keyword" || s == "keywords") return JudgeKind::keyword;
  if (s == "seg1") return JudgeKind::seg1;
  if (s == "seg2") return JudgeKind::seg2;
  throw InvalidArgument("unknown judge kind '" + std::string(s) + "'");
}

inline std::string_view to_string(JudgeKind k) {
  switch (k) {
    case JudgeKind::keyword: return "keyword";
    case JudgeKind::seg1: return "seg1";
    case JudgeKind::seg2: return "seg2";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Image preparation

namespace detail {

inline void require_mask_fits(const Image& img, const RleMask& mask) {
  if (mask.width != img.width || mask.height != img.height)
    throw DimensionError("mask " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                         " does not match image " + std::to_string(img.width) + "x" + std::to_string(img.height));
}

}  // namespace detail

// Bounding rectangle of the mask; pixels in the rectangle but off the mask
// take the fill color.
inline Image crop_to_mask(const Image& img, const RleMask& mask, const Color& fill = kBlack) {
  detail::require_mask_fits(img, mask);
  const auto box = bounding_box(mask);
  if (!box) throw InvalidArgument("cannot crop to an empty mask");
  const BitGrid g = rle_decode(mask);
  Image out(box->width(), box->height(), img.channels);
  for (int y = box->y_min; y < box->y_max; ++y)
    for (int x = box->x_min; x < box->x_max; ++x) {
      if (g.at(x, y))
        std::copy_n(img.px(x, y), img.channels, out.px(x - box->x_min, y - box->y_min));
      else
        put(out, x - box->x_min, y - box->y_min, fill);
    }
  return out;
}

inline Image inverse_mask_image(const Image& img, const RleMask& mask, const Color& fill = kBlack) {
  detail::require_mask_fits(img, mask);
  const BitGrid g = rle_decode(mask);
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (g.at(x, y)) put(out, x, y, fill);
  return out;
}

// ---------------------------------------------------------------------------
// Prompts and verdicts

inline std::string render_judge_prompt(JudgeKind kind, std::string_view word, std::string_view question = {}) {
  if (trim(word).empty()) throw InvalidArgument("judge word must not be empty");
  switch (kind) {
    case JudgeKind::seg1: return substitute(prompts::kJudgeSeg1, {{"word", word}});
    case JudgeKind::seg2: return substitute(prompts::kJudgeSeg2, {{"word", word}});
    case JudgeKind::keyword: return substitute(prompts::kJudgeKeyword, {{"word", word}, {"question", question}});
  }
  throw InvalidArgument("unknown judge kind");
}

struct JudgeVerdict {
  JudgeKind kind = JudgeKind::keyword;
  bool valid = false;
  bool verdict = false;       // seg kinds: answered yes; keyword: judged important
  std::optional<int> degree;  // keyword kind only, 0..10
  std::string raw;
  bool operator==(const JudgeVerdict&) const = default;
};

namespace detail {

inline std::string lower_words(std::string_view text) {
  std::string s;
  for (char c : text) s += std::isalnum(static_cast<unsigned char>(c)) ? char(std::tolower(static_cast<unsigned char>(c))) : ' ';
  return " " + s + " ";
}

inline std::optional<int> importance_degree(const std::string& text) {
  static const std::regex out_of_ten(R"((\d+)\s*(/|out of)\s*10\b)");
  static const std::regex integer(R"(\b(\d+)\b)");
  std::smatch m;
  if (!std::regex_search(text, m, out_of_ten) && !std::regex_search(text, m, integer)) return std::nullopt;
  if (m[1].length() > 2) return std::nullopt;
  const int v = std::stoi(m[1].str());
  if (v < 0 || v > 10) return std::nullopt;
  return v;
}

}  // namespace detail

// Total: unparseable text yields valid = false.
inline JudgeVerdict parse_judge_response(JudgeKind kind, std::string_view text) {
  JudgeVerdict v{kind, false, false, std::nullopt, std::string(text)};
  const std::string words = detail::lower_words(text);
  if (kind == JudgeKind::keyword) {
    bool important;
    if (words.find(" not important ") != std::string::npos || words.find(" unimportant ") != std::string::npos)
      important = false;
    else if (words.find(" important ") != std::string::npos)
      important = true;
    else
      return v;
    const auto degree = detail::importance_degree(std::string(text));
    if (!degree) return v;
    v.valid = true;
    v.verdict = important;
    v.degree = degree;
    return v;
  }
  const auto yes = words.find(" yes "), no = words.find(" no ");
  if (yes == std::string::npos && no == std::string::npos) return v;
  v.valid = true;
  v.verdict = yes < no;
  return v;
}

// ---------------------------------------------------------------------------
// Metrics

struct JudgeMetrics {
  std::size_t n = 0;          // verdicts seen
  std::size_t n_invalid = 0;
  std::size_t n_keyword = 0;  // valid keyword verdicts
  std::size_t n_seg1 = 0;
  std::size_t n_seg2 = 0;
  std::optional<double> importance_ratio;
  std::optional<double> overall_importance_degree;
  std::optional<double> important_keyword_degree;
  std::optional<double> seg1_rate;  // crop judged to cover the phrase ("yes")
  std::optional<double> seg2_rate;  // inverse judged free of the phrase ("no")
};

// Published reference values for one large judge run; fixtures only.
struct JudgeReference {
  double importance_ratio = 0.76;
  double overall_importance_degree = 6.8;
  double important_keyword_degree = 9.0;
  double seg1_rate = 0.46;
  double seg2_rate = 0.72;
};
inline constexpr JudgeReference kJudgeReference{};

inline JudgeMetrics aggregate_judge_metrics(const std::vector<JudgeVerdict>& verdicts) {
  JudgeMetrics m;
  std::size_t important = 0, seg1_yes = 0, seg2_no = 0;
  long long degree_sum = 0, important_degree_sum = 0;
  for (const auto& v : verdicts) {
    ++m.n;
    if (!v.valid) {
      ++m.n_invalid;
      continue;
    }
    switch (v.kind) {
      case JudgeKind::keyword:
        ++m.n_keyword;
        degree_sum += v.degree.value_or(0);
        if (v.verdict) {
          ++important;
          important_degree_sum += v.degree.value_or(0);
        }
        break;
      case JudgeKind::seg1:
        ++m.n_seg1;
        seg1_yes += v.verdict;
        break;
      case JudgeKind::seg2:
        ++m.n_seg2;
        seg2_no += !v.verdict;
        break;
    }
  }
  if (m.n_keyword) {
    m.importance_ratio = double(important) / double(m.n_keyword);
    m.overall_importance_degree = double(degree_sum) / double(m.n_keyword);
  }
  if (important) m.important_keyword_degree = double(important_degree_sum) / double(important);
  if (m.n_seg1) m.seg1_rate = double(seg1_yes) / double(m.n_seg1);
  if (m.n_seg2) m.seg2_rate = double(seg2_no) / double(m.n_seg2);
  return m;
}

inline json metrics_to_json(const JudgeMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"n", m.n},
          {"n_invalid", m.n_invalid},
          {"invalid_fraction", m.n ? double(m.n_invalid) / double(m.n) : 0.0},
          {"n_keyword", m.n_keyword},
          {"n_seg1", m.n_seg1},
          {"n_seg2", m.n_seg2},
          {"importance_ratio", opt(m.importance_ratio)},
          {"overall_importance_degree", opt(m.overall_importance_degree)},
          {"important_keyword_degree", opt(m.important_keyword_degree)},
          {"seg1_rate", opt(m.seg1_rate)},
          {"seg2_rate", opt(m.seg2_rate)}};
}

// ---------------------------------------------------------------------------
// Runs

struct JudgeItem {
  std::string sample_id;
  std::string image_ref;
  int turn = 0;
  std::string expression;
  std::string question;
  std::optional<RleMask> mask;
};

// One item per key expression; seg kinds only consider expressions with a mask.
// Sampling without replacement, seeded; order of the result is the draw order.
inline std::vector<JudgeItem> sample_judge_items(const std::vector<AugmentedSample>& samples, JudgeKind kind,
                                                 std::size_t n, std::uint64_t seed) {
  std::vector<JudgeItem> pool;
  for (const auto& s : samples)
    for (const auto& g : s.groundings) {
      if (kind != JudgeKind::keyword && !g.has_mask()) continue;
      const auto t = static_cast<std::size_t>(g.expression.turn_index);
      const std::string q = t < s.conversation.turns.size() ? s.conversation.turns[t].question : "";
      pool.push_back({s.conversation.id, s.conversation.image_ref, g.expression.turn_index, g.expression.text, q,
                      g.has_mask() ? g.mask : std::nullopt});
    }
  std::mt19937_64 rng(seed);
  const std::size_t take = std::min(n, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(take);
  return pool;
}

inline Image judge_image(JudgeKind kind, const Image& img, const std::optional<RleMask>& mask) {
  switch (kind) {
    case JudgeKind::keyword: return img;
    case JudgeKind::seg1: return crop_to_mask(img, mask.value());
    case JudgeKind::seg2: return inverse_mask_image(img, mask.value());
  }
  throw InvalidArgument("unknown judge kind");
}

struct JudgeRecord {
  JudgeItem item;
  JudgeVerdict verdict;
  std::string error;  // transport or image failure; verdict invalid
};

struct JudgeConfig {
  std::string model;
  int parallelism = 1;
  RetryPolicy retry;
};

using JudgeImageSource = std::function<Image(const std::string& image_ref)>;

inline std::vector<JudgeRecord> run_judge(ChatClient& client, JudgeKind kind, const std::vector<JudgeItem>& items,
                                          const JudgeImageSource& images, const JudgeConfig& cfg) {
  std::vector<JudgeRecord> out(items.size());
  parallel_for(items.size(), cfg.parallelism, [&](std::size_t i) {
    auto& r = out[i];
    r.item = items[i];
    r.verdict.kind = kind;
    try {
      const Image img = judge_image(kind, images(r.item.image_ref), r.item.mask);
      ChatRequest req{cfg.model,
                      {{"user", render_judge_prompt(kind, r.item.expression, r.item.question),
                        {base64_encode(encode_png(img))}}},
                      0.0};
      const std::string text = with_retries(cfg.retry, [&] { return client.complete(req); });
      r.verdict = parse_judge_response(kind, text);
    } catch (const Error& e) {
      r.error = e.what();
    }
  });
  return out;
}

inline json judge_record_to_json(const JudgeRecord& r) {
  json j = {{"sample_id", r.item.sample_id},
            {"turn", r.item.turn},
            {"expression", r.item.expression},
            {"kind", to_string(r.verdict.kind)},
            {"valid", r.verdict.valid},
            {"verdict", r.verdict.verdict},
            {"degree", r.verdict.degree ? json(*r.verdict.degree) : json(nullptr)},
            {"raw", r.verdict.raw}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline JudgeVerdict verdict_from_json(const json& j) {
  JudgeVerdict v;
  v.kind = parse_judge_kind(j.at("kind").get<std::string>());
  v.valid = j.at("valid").get<bool>();
  v.verdict = j.at("verdict").get<bool>();
  if (!j.at("degree").is_null()) v.degree = j.at("degree").get<int>();
  v.raw = j.value("raw", "");
  return v;
}

}  // namespace fivl
