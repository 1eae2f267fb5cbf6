#pragma once

// Visual Reliance Score: accuracy drop when the key-expression regions of the
// image are blanked,
//     VRS = (accuracy_original - accuracy_perturbed) / accuracy_original,
// plus a random-placement control that blanks same-sized boxes elsewhere.
//
// Model-under-test wire contract (POST JSON):
//   request  {"model", "image_base64" (PNG), "question"}
//   response {"answer"}        ({"content"} is accepted too)

#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fivl/error.hpp"
#include "fivl/image.hpp"
#include "fivl/mask.hpp"
#include "fivl/parallel.hpp"
#include "fivl/pipeline.hpp"
#include "fivl/transport.hpp"

namespace fivl {

// ---------------------------------------------------------------------------
// Perturbation

enum class PerturbMode { fivl, random_control, none };
enum class FillMode { color, mean };

inline PerturbMode parse_perturb_mode(std::string_view s) {
  if (s == "fivl") return PerturbMode::fivl;
  if (s == "random" || s == "random_control") return PerturbMode::random_control;
  if (s == "none") return PerturbMode::none;
  throw InvalidArgument("unknown perturbation mode '" + std::string(s) + "' (fivl|random|none)");
}

inline std::string_view to_string(PerturbMode m) {
  switch (m) {
    case PerturbMode::fivl: return "fivl";
    case PerturbMode::random_control: return "random";
    case PerturbMode::none: return "none";
  }
  return "?";
}

struct PerturbationSpec {
  PerturbMode mode = PerturbMode::fivl;
  FillMode fill_mode = FillMode::color;
  Color fill = kBlack;
  bool tight_mask = false;  // fill the grounding masks instead of their boxes
  std::uint64_t seed = 0;

  // Cache key component; two specs with the same label produce the same images.
  std::string label() const {
    std::string s(to_string(mode));
    if (mode == PerturbMode::random_control) s += ":" + std::to_string(seed);
    if (tight_mask) s += ":mask";
    if (fill_mode == FillMode::mean) s += ":mean";
    else if (fill != kBlack)
      s += ":" + std::to_string(fill[0]) + "," + std::to_string(fill[1]) + "," + std::to_string(fill[2]);
    return s;
  }
};

inline void check_box(const Image& img, const BBox& b) {
  if (b.x_min < 0 || b.y_min < 0 || b.x_max > img.width || b.y_max > img.height || b.x_min > b.x_max ||
      b.y_min > b.y_max)
    throw DimensionError("box [" + std::to_string(b.x_min) + "," + std::to_string(b.y_min) + "," +
                         std::to_string(b.x_max) + "," + std::to_string(b.y_max) + ") outside " +
                         std::to_string(img.width) + "x" + std::to_string(img.height) + " image");
}

// Every pixel inside any box becomes `fill`; the rest is untouched.
inline Image perturb_image(const Image& img, const std::vector<BBox>& boxes, const Color& fill = kBlack) {
  for (const auto& b : boxes) check_box(img, b);
  Image out = img;
  for (const auto& b : boxes)
    for (int y = b.y_min; y < b.y_max; ++y)
      for (int x = b.x_min; x < b.x_max; ++x) put(out, x, y, fill);
  return out;
}

inline Image perturb_image_masks(const Image& img, const std::vector<RleMask>& masks, const Color& fill = kBlack) {
  Image out = img;
  for (const auto& m : masks) {
    if (m.width != img.width || m.height != img.height) throw DimensionError("mask and image dimensions differ");
    const BitGrid g = rle_decode(m);
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x)
        if (g.at(x, y)) put(out, x, y, fill);
  }
  return out;
}

// Same-sized boxes at uniformly drawn valid positions.
inline std::vector<BBox> random_control_boxes(int width, int height, const std::vector<BBox>& boxes,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<BBox> out;
  for (const auto& b : boxes) {
    if (b.width() > width || b.height() > height || b.width() < 0 || b.height() < 0)
      throw DimensionError("box larger than the image");
    const int x = std::uniform_int_distribution<int>(0, width - b.width())(rng);
    const int y = std::uniform_int_distribution<int>(0, height - b.height())(rng);
    out.push_back({x, y, x + b.width(), y + b.height()});
  }
  return out;
}

inline std::vector<BBox> sample_boxes(const AugmentedSample& s) {
  std::vector<BBox> out;
  for (const auto& g : s.groundings)
    if (g.has_mask()) out.insert(out.end(), g.boxes.begin(), g.boxes.end());
  return out;
}

inline Image apply_perturbation(const Image& img, const AugmentedSample& s, const PerturbationSpec& spec) {
  const Color fill = spec.fill_mode == FillMode::mean ? mean_color(img) : spec.fill;
  switch (spec.mode) {
    case PerturbMode::none:
      return img;
    case PerturbMode::fivl:
      if (spec.tight_mask) {
        std::vector<RleMask> masks;
        for (const auto& g : s.groundings)
          if (g.has_mask()) masks.push_back(*g.mask);
        return perturb_image_masks(img, masks, fill);
      }
      return perturb_image(img, sample_boxes(s), fill);
    case PerturbMode::random_control: {
      // Per-sample stream so results do not depend on evaluation order.
      const auto boxes = random_control_boxes(img.width, img.height, sample_boxes(s),
                                              spec.seed ^ detail::fnv1a(s.conversation.id));
      return perturb_image(img, boxes, fill);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Scoring

enum class ScoringMode { exact_norm, yes_no };

inline ScoringMode parse_scoring_mode(std::string_view s) {
  if (s == "exact" || s == "exact_norm") return ScoringMode::exact_norm;
  if (s == "yes_no" || s == "yesno") return ScoringMode::yes_no;
  throw InvalidArgument("unknown scoring mode '" + std::string(s) + "' (exact_norm|yes_no)");
}

struct AnswerScore {
  bool correct = false;
  bool flagged = false;  // scored 0 for a reason worth a human look
};

// Lowercase, punctuation to spaces, articles removed, single spaces.
inline std::string normalize_answer(std::string_view s) {
  std::string cleaned;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    cleaned += std::ispunct(u) ? ' ' : static_cast<char>(std::tolower(u));
  }
  std::string out;
  for (const auto& w : split_words(cleaned)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

namespace detail {

inline bool has_number(std::string_view normalized) {
  static const std::vector<std::string> words{"zero", "one", "two", "three", "four", "five", "six",
                                              "seven", "eight", "nine", "ten", "eleven", "twelve"};
  for (const auto& w : split_words(normalized)) {
    if (std::any_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      return true;
    if (std::find(words.begin(), words.end(), w) != words.end()) return true;
  }
  return false;
}

inline std::optional<std::string> first_yes_no(std::string_view normalized) {
  for (const auto& w : split_words(normalized))
    if (w == "yes" || w == "no") return w;
  return std::nullopt;
}

}  // namespace detail

inline AnswerScore score_answer(std::string_view prediction, std::string_view ground_truth, ScoringMode mode) {
  const auto p = normalize_answer(prediction), g = normalize_answer(ground_truth);
  if (mode == ScoringMode::yes_no) {
    const auto pp = detail::first_yes_no(p), gg = detail::first_yes_no(g);
    if (!pp || !gg) return {false, true};
    return {*pp == *gg, false};
  }
  if (p == g) return {true, false};
  // No numeral canonicalization: "three" vs "3" is wrong but worth flagging.
  return {false, detail::has_number(p) && detail::has_number(g)};
}

inline double visual_reliance_score(double accuracy_original, double accuracy_perturbed) {
  if (!(accuracy_original > 0.0)) throw UndefinedValueError("visual reliance undefined when original accuracy is 0");
  return (accuracy_original - accuracy_perturbed) / accuracy_original;
}

// ---------------------------------------------------------------------------
// Model under test

class VqaModelClient {
 public:
  virtual ~VqaModelClient() = default;
  virtual std::string name() const = 0;
  // Must be thread-safe.
  virtual std::string answer(const Image& image, const std::string& question) = 0;
};

class HttpVqaClient final : public VqaModelClient {
 public:
  HttpVqaClient(HttpJsonTransport transport, std::string model)
      : transport_(std::move(transport)), model_(std::move(model)) {}

  std::string name() const override { return model_; }

  std::string answer(const Image& image, const std::string& question) override {
    const json res = transport_.post(
        {{"model", model_}, {"image_base64", base64_encode(encode_png(image))}, {"question", question}});
    for (const char* key : {"answer", "content"})
      if (res.is_object() && res.contains(key) && res[key].is_string()) return res[key].get<std::string>();
    throw ProtocolError("model response has no string 'answer'");
  }

 private:
  HttpJsonTransport transport_;
  std::string model_;
};

// Responses keyed by (item, condition, model), persisted as JSONL so a rerun
// never queries the model twice.
class ResponseCache {
 public:
  ResponseCache() = default;
  explicit ResponseCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      try {
        const json j = json::parse(line);
        table_[key(j.at("item"), j.at("condition"), j.at("model"))] = j.at("answer").get<std::string>();
      } catch (const json::exception& e) {
        if (in.peek() == EOF) break;  // torn final line
        throw FormatError(lineno, std::string("corrupt cache entry: ") + e.what());
      }
    }
  }

  std::optional<std::string> get(const std::string& item, const std::string& condition, const std::string& model) {
    std::lock_guard lock(mu_);
    if (auto it = table_.find(key(item, condition, model)); it != table_.end()) return it->second;
    return std::nullopt;
  }

  void put(const std::string& item, const std::string& condition, const std::string& model, const std::string& answer) {
    std::lock_guard lock(mu_);
    table_[key(item, condition, model)] = answer;
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    out << json{{"item", item}, {"condition", condition}, {"model", model}, {"answer", answer}}.dump() << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return table_.size();
  }

 private:
  static std::string key(const std::string& a, const std::string& b, const std::string& c) {
    return a + '\x1f' + b + '\x1f' + c;
  }
  std::string path_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> table_;
};

// ---------------------------------------------------------------------------
// Benchmark

struct VrsRecord {
  std::string sample_id;
  int turn = 0;
  std::string question;
  std::string ground_truth;
  std::string answer_original;
  std::string answer_perturbed;
  bool scored = false;
  bool correct_original = false;
  bool correct_perturbed = false;
  bool flagged = false;
  std::string error;
};

struct VrsReport {
  std::string model;
  std::string condition;
  std::size_t n_samples = 0;   // scored items
  std::size_t n_unscored = 0;
  double accuracy_original = 0.0;
  double accuracy_perturbed = 0.0;
  std::optional<double> vrs;   // absent when accuracy_original is 0
  std::vector<VrsRecord> records;
};

struct BenchmarkConfig {
  PerturbationSpec perturbation;
  ScoringMode scoring = ScoringMode::exact_norm;
  int parallelism = 1;
  RetryPolicy retry;
};

using ImageSource = std::function<Image(const AugmentedSample&)>;

inline ImageSource images_from_disk(std::string root) {
  return [root = std::move(root)](const AugmentedSample& s) {
    const auto& ref = s.conversation.image_ref;
    return load_image(root.empty() ? ref : (std::filesystem::path(root) / ref).string());
  };
}

// One item per turn. The image perturbation is per sample (all grounded boxes
// of the sample), since every turn looks at the same picture.
inline VrsReport run_benchmark(VqaModelClient& model, const std::vector<AugmentedSample>& samples,
                               const ImageSource& images, const BenchmarkConfig& cfg, ResponseCache& cache) {
  struct Item {
    std::size_t sample;
    int turn;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t t = 0; t < samples[i].conversation.turns.size(); ++t) items.push_back({i, int(t)});

  VrsReport rep;
  rep.model = model.name();
  rep.condition = cfg.perturbation.label();
  rep.records.resize(items.size());

  // Images are decoded once per sample, lazily.
  std::vector<std::once_flag> loaded(samples.size());
  std::vector<std::pair<Image, Image>> pics(samples.size());
  std::vector<std::string> load_error(samples.size());

  parallel_for(items.size(), cfg.parallelism, [&](std::size_t k) {
    const auto [si, turn] = items[k];
    const auto& s = samples[si];
    const auto& t = s.conversation.turns[static_cast<std::size_t>(turn)];
    VrsRecord& r = rep.records[k];
    r.sample_id = s.conversation.id;
    r.turn = turn;
    r.question = t.question;
    r.ground_truth = t.answer;
    std::call_once(loaded[si], [&] {
      try {
        pics[si].first = images(s);
        pics[si].second = apply_perturbation(pics[si].first, s, cfg.perturbation);
      } catch (const Error& e) {
        load_error[si] = e.what();
      }
    });
    if (!load_error[si].empty()) {
      r.error = load_error[si];
      return;
    }
    const std::string item = s.conversation.id + "#" + std::to_string(turn);
    auto ask = [&](const Image& img, const std::string& condition) {
      if (auto hit = cache.get(item, condition, model.name())) return *hit;
      std::string a = with_retries(cfg.retry, [&] { return model.answer(img, t.question); });
      cache.put(item, condition, model.name(), a);
      return a;
    };
    try {
      r.answer_original = ask(pics[si].first, "original");
      r.answer_perturbed = ask(pics[si].second, rep.condition);
    } catch (const Error& e) {
      r.error = e.what();  // dropped from both arms
      return;
    }
    const auto o = score_answer(r.answer_original, r.ground_truth, cfg.scoring);
    const auto p = score_answer(r.answer_perturbed, r.ground_truth, cfg.scoring);
    r.scored = true;
    r.correct_original = o.correct;
    r.correct_perturbed = p.correct;
    r.flagged = o.flagged || p.flagged;
  });

  std::size_t ok_o = 0, ok_p = 0;
  for (const auto& r : rep.records) {
    if (!r.scored) {
      ++rep.n_unscored;
      continue;
    }
    ++rep.n_samples;
    ok_o += r.correct_original;
    ok_p += r.correct_perturbed;
  }
  if (rep.n_samples) {
    rep.accuracy_original = double(ok_o) / double(rep.n_samples);
    rep.accuracy_perturbed = double(ok_p) / double(rep.n_samples);
  }
  if (rep.accuracy_original > 0.0) rep.vrs = visual_reliance_score(rep.accuracy_original, rep.accuracy_perturbed);
  return rep;
}

inline json record_to_json(const VrsRecord& r) {
  json j = {{"sample_id", r.sample_id},         {"turn", r.turn},
            {"question", r.question},           {"ground_truth", r.ground_truth},
            {"answer_original", r.answer_original}, {"answer_perturbed", r.answer_perturbed},
            {"scored", r.scored},               {"correct_original", r.correct_original},
            {"correct_perturbed", r.correct_perturbed}, {"flagged", r.flagged}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline json report_summary_json(const VrsReport& rep) {
  return {{"model", rep.model},
          {"condition", rep.condition},
          {"n_samples", rep.n_samples},
          {"n_unscored", rep.n_unscored},
          {"accuracy_original", rep.accuracy_original},
          {"accuracy_perturbed", rep.accuracy_perturbed},
          {"vrs", rep.vrs ? json(*rep.vrs) : json(nullptr)}};
}

// Summary line first, then one line per record.
inline void write_report(const VrsReport& rep, std::ostream& out) {
  out << json{{"summary", report_summary_json(rep)}}.dump() << '\n';
  for (const auto& r : rep.records) out << record_to_json(r).dump() << '\n';
}

inline std::string format_summary_table(const std::vector<VrsReport>& reports) {
  std::ostringstream o;
  o << std::left << std::setw(24) << "model" << std::setw(16) << "condition" << std::right << std::setw(8) << "n"
    << std::setw(10) << "acc_orig" << std::setw(10) << "acc_pert" << std::setw(9) << "VRS" << '\n';
  o << std::fixed << std::setprecision(3);
  for (const auto& r : reports) {
    o << std::left << std::setw(24) << r.model << std::setw(16) << r.condition << std::right << std::setw(8)
      << r.n_samples << std::setw(10) << r.accuracy_original << std::setw(10) << r.accuracy_perturbed;
    if (r.vrs) o << std::setw(9) << *r.vrs;
    else o << std::setw(9) << "n/a";
    o << '\n';
  }
  return o.str();
}

// ---------------------------------------------------------------------------
// Synthetic suite: a small colored square on gray noise; the question asks
// for the square's color. Gray backgrounds never match a palette color and
// the fill is black, so the square's pixels are unambiguous.

namespace synthetic {

struct Swatch {
  std::string_view name;
  Color rgb;
};

inline constexpr std::array<Swatch, 6> kPalette{{{"red", {220, 30, 30}},
                                                  {"green", {30, 180, 60}},
                                                  {"blue", {40, 70, 220}},
                                                  {"yellow", {230, 210, 40}},
                                                  {"purple", {140, 50, 170}},
                                                  {"orange", {240, 140, 20}}}};

inline constexpr std::string_view kQuestion = "What color is the square?";

struct Suite {
  std::vector<AugmentedSample> samples;
  std::map<std::string, Image> images;  // by image_ref

  ImageSource source() const {
    return [this](const AugmentedSample& s) {
      auto it = images.find(s.conversation.image_ref);
      if (it == images.end()) throw NotFoundError("no synthetic image '" + s.conversation.image_ref + "'");
      return it->second;
    };
  }
};

inline Suite make_suite(std::size_t n, std::uint64_t seed, int size = 128, int square = 10) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> gray(60, 200), pos(0, size - square);
  Suite suite;
  for (std::size_t i = 0; i < n; ++i) {
    Image img(size, size, 3);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const auto v = static_cast<std::uint8_t>(gray(rng));
        put(img, x, y, {v, v, v});
      }
    const auto& sw = kPalette[i % kPalette.size()];
    const int x0 = pos(rng), y0 = pos(rng);
    const BBox box{x0, y0, x0 + square, y0 + square};
    img = perturb_image(img, {box}, sw.rgb);

    char id[32];
    std::snprintf(id, sizeof(id), "syn%05zu", i);
    AugmentedSample s = passthrough({id, std::string(id) + ".png", {{std::string(kQuestion), std::string(sw.name)}}});
    Grounding g = ungrounded(make_key_expression("square", 0, kQuestion, sw.name));
    g.mask = box_mask(size, size, box);
    g.boxes = {box};
    g.detector_score = 1.0;
    g.coverage = coverage_fraction(*g.mask);
    s = attach_groundings(std::move(s), {std::move(g)});
    s.quality.augmented = true;
    suite.images.emplace(s.conversation.image_ref, std::move(img));
    suite.samples.push_back(std::move(s));
  }
  return suite;
}

// Answers with the palette color covering at least `min_pixels` pixels, or
// "unknown". With a 10x10 square and min_pixels 50 it needs half the square.
class OracleModel final : public VqaModelClient {
 public:
  explicit OracleModel(std::size_t min_pixels = 50) : min_pixels_(min_pixels) {}
  std::string name() const override { return "stub-oracle"; }
  std::string answer(const Image& img, const std::string&) override {
    std::array<std::size_t, kPalette.size()> hits{};
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const auto* p = img.px(x, y);
        for (std::size_t c = 0; c < kPalette.size(); ++c)
          if (p[0] == kPalette[c].rgb[0] && p[1] == kPalette[c].rgb[1] && p[2] == kPalette[c].rgb[2]) ++hits[c];
      }
    const auto best = std::max_element(hits.begin(), hits.end());
    if (*best < min_pixels_) return "unknown";
    return std::string(kPalette[static_cast<std::size_t>(best - hits.begin())].name);
  }

 private:
  std::size_t min_pixels_;
};

// Ignores the image entirely.
class TextPriorModel final : public VqaModelClient {
 public:
  std::string name() const override { return "stub-text-prior"; }
  std::string answer(const Image&, const std::string& question) override {
    return question.find("color") != std::string::npos ? "red" : "yes";
  }
};

}  // namespace synthetic

}  // namespace fivl
