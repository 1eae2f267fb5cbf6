#pragma once

// Shared generators and brute-force references for the test binaries.

#include <algorithm>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "fivl/grounding.hpp"
#include "fivl/keyexpr.hpp"
#include "fivl/mask.hpp"
#include "fivl/pipeline.hpp"
#include "fivl/vision_modeling.hpp"

namespace fivl::testing {

// Random raster made of a few rectangles plus speckle, so runs of all lengths
// show up.
inline BitGrid random_raster(std::mt19937& rng, int w, int h, double speckle = 0.05) {
  BitGrid g(w, h);
  std::uniform_int_distribution<int> nrect(0, 3);
  const int n = nrect(rng);
  for (int r = 0; r < n; ++r) {
    std::uniform_int_distribution<int> xs(0, w - 1), ys(0, h - 1);
    int x0 = xs(rng), x1 = xs(rng), y0 = ys(rng), y1 = ys(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) g.set(x, y);
  }
  std::bernoulli_distribution flip(speckle);
  for (auto& b : g.bits)
    if (flip(rng)) b = !b;
  return g;
}

inline std::size_t brute_area(const BitGrid& g) {
  std::size_t n = 0;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) n += g.at(x, y) ? 1 : 0;
  return n;
}

inline std::size_t brute_intersection(const BitGrid& a, const BitGrid& b) {
  std::size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) n += (a.at(x, y) && b.at(x, y)) ? 1 : 0;
  return n;
}

// Pixel bounds [lo, hi) of part `i` when `extent` is split into `parts` equal
// pieces and the last one absorbs the remainder.
inline std::pair<int, int> part_bounds(int i, int extent, int parts) {
  const int base = extent / parts;
  const int lo = i * base;
  const int hi = (i == parts - 1) ? extent : (i + 1) * base;
  return {lo, hi};
}

inline std::vector<std::uint8_t> brute_patch_flags(const BitGrid& g, int rows, int cols, double thr) {
  std::vector<std::uint8_t> out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      auto [y0, y1] = part_bounds(r, g.height, rows);
      auto [x0, x1] = part_bounds(c, g.width, cols);
      int tot = 0, on = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          ++tot;
          on += g.at(x, y) ? 1 : 0;
        }
      out.push_back(tot > 0 && double(on) / tot >= thr ? 1 : 0);
    }
  return out;
}

inline std::uint64_t hash_text(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Extractor stand-in: returns the nouns of the answer slot of the training
// prompt, or N/A when there are none.
inline std::string stub_extract(const ChatRequest& r) {
  const std::string& p = r.messages.at(0).content;
  const auto at = p.rfind("\nA: ");
  if (at == std::string::npos) return "N/A";
  const auto end = p.find('\n', at + 4);
  std::vector<std::string> nouns;
  for (const auto& w : split_words(p.substr(at + 4, end == std::string::npos ? end : end - at - 4))) {
    std::string t(trim_piece(w));
    while (!t.empty() && std::ispunct(static_cast<unsigned char>(t.back()))) t.pop_back();
    if (!t.empty() && default_tagger().tag(t) == WordType::noun &&
        std::find(nouns.begin(), nouns.end(), t) == nouns.end())
      nouns.push_back(t);
  }
  return nouns.empty() ? "N/A" : join_expressions(nouns);
}

// Grounder stand-in: one or two box detections derived from a hash of
// (image id, phrase) on a 32x32 canvas.
class StubGrounder final : public GroundingClient {
 public:
  std::vector<Detection> detect(const GroundingRequest& r) override {
    const auto h = hash_text(r.image_id + "|" + r.phrase);
    std::vector<Detection> out;
    const int n = 1 + static_cast<int>(h % 3 == 0);
    for (int i = 0; i < n; ++i) {
      const auto k = h >> (i * 20);
      const int x0 = int(k % 24), y0 = int((k >> 5) % 24), sz = 4 + int((k >> 10) % 8);
      const BBox b{x0, y0, std::min(32, x0 + sz), std::min(32, y0 + sz)};
      out.push_back({b, box_mask(32, 32, b), 0.3 + double((k >> 14) % 70) / 100.0});
    }
    return out;
  }
};

inline std::vector<Conversation> stub_corpus(std::size_t n) {
  const std::vector<std::string> answers{
      "A dog is sitting on the grass.", "There is a red car next to the tree.", "Yes",
      "The woman holds an umbrella.", "Two zebras and a giraffe near a fence.", "It is sunny.",
      "A cat sleeps on the sofa by the window.", "The man rides a horse on the beach."};
  std::vector<Conversation> out;
  for (std::size_t i = 0; i < n; ++i) {
    Conversation c{"s" + std::to_string(i), "img" + std::to_string(i % 7) + ".png", {}};
    for (std::size_t t = 0; t < 1 + i % 3; ++t)
      c.turns.push_back({"What do you see? (" + std::to_string(t) + ")", answers[(i * 3 + t) % answers.size()]});
    out.push_back(std::move(c));
  }
  return out;
}

// Greedy kept set, pixel by pixel: visit masks by area (desc) then id and keep
// one unless it overlaps a kept mask by more than `thr` of the smaller area.
inline std::vector<std::string> brute_dedup(const std::vector<std::pair<std::string, BitGrid>>& masks, double thr) {
  std::vector<std::size_t> idx(masks.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<std::size_t> area(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) area[i] = brute_area(masks[i].second);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      const auto a = idx[i], b = idx[j];
      if (area[b] > area[a] || (area[b] == area[a] && masks[b].first < masks[a].first)) std::swap(idx[i], idx[j]);
    }
  std::vector<std::size_t> kept;
  for (std::size_t i : idx) {
    bool dup = false;
    for (std::size_t k : kept) {
      const std::size_t small = std::min(area[i], area[k]);
      const double ratio = small == 0 ? (area[i] == area[k] ? 1.0 : 0.0)
                                      : double(brute_intersection(masks[i].second, masks[k].second)) / double(small);
      dup = dup || ratio > thr;
    }
    if (!dup) kept.push_back(i);
  }
  std::vector<std::string> out;
  for (std::size_t k : kept) out.push_back(masks[k].first);
  return out;
}

// Random labeling instance: mixed noun / non-noun phrases, some not in the
// answer, some without a mask.
struct LabelInstance {
  AugmentedSample sample;
  int rows = 1, cols = 1;
};

inline const KeywordVocab& label_vocab() {
  static const KeywordVocab v{{"dog", {5}}, {"cat", {3, 4}}, {"car", {7}}, {"bench", {11}}, {"grass", {12, 13}},
                              {"tree", {20}}};
  return v;
}

inline LabelInstance random_label_instance(std::mt19937& rng) {
  static const std::vector<std::string> phrases{"dog",   "cat",     "red car", "park bench", "grass",   "running",
                                                "quickly", "tree",  "horse",   "big tree",   "dog cat", "the"};
  const std::string answer = "A dog and a cat near the red car, the park bench and big tree on grass, running quickly";
  LabelInstance in;
  in.rows = 1 + int(rng() % 8);
  in.cols = 1 + int(rng() % 8);
  const int w = 1 + int(rng() % 24), h = 1 + int(rng() % 24);
  in.sample = passthrough({"i" + std::to_string(rng()), "x.png", {{"What is there?", answer}}});
  const int n = int(rng() % 6);
  for (int k = 0; k < n; ++k) {
    const auto& p = phrases[rng() % phrases.size()];
    auto g = ungrounded(make_key_expression(p, 0, "What is there?", answer));
    if (rng() % 5) g.mask = rle_encode(random_raster(rng, w, h, 0.05));
    in.sample.groundings.push_back(std::move(g));
  }
  return in;
}

// Per-patch enumeration over all groundings: the covering candidate with the
// least pixel area (then phrase, then position) names the patch.
inline VisionLabels brute_vision_labels(const AugmentedSample& s, const KeywordVocab& vocab, int rows, int cols,
                                        double thr = kDefaultCoverageThreshold) {
  struct Cand {
    std::size_t area;
    std::string phrase;
    std::size_t order;
    int token;
    BitGrid grid;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < s.groundings.size(); ++i) {
    const auto& g = s.groundings[i];
    if (!g.mask || g.mask->area() == 0) continue;
    const auto t = std::size_t(g.expression.turn_index);
    if (t >= s.conversation.turns.size() ||
        s.conversation.turns[t].answer.find(g.expression.text) == std::string::npos)
      continue;
    std::string noun;
    for (const auto& w : split_words(g.expression.text))
      if (is_noun(default_tagger().tag(w))) noun = w;
    if (noun.empty()) continue;
    auto it = vocab.find(noun);
    if (it == vocab.end()) it = vocab.find(to_lower(noun));
    if (it == vocab.end()) it = vocab.find(g.expression.text);
    if (it == vocab.end()) throw LabelError("no vocabulary entry for '" + noun + "'");
    const BitGrid grid = rle_decode(*g.mask);
    cands.push_back({brute_area(grid), g.expression.text, i, it->second.front(), grid});
  }
  VisionLabels out{rows, cols, std::vector<int>(std::size_t(rows) * cols, kIgnoreLabel)};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Cand* best = nullptr;
      for (const auto& cand : cands) {
        const auto [y0, y1] = part_bounds(r, cand.grid.height, rows);
        const auto [x0, x1] = part_bounds(c, cand.grid.width, cols);
        int tot = 0, on = 0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) {
            ++tot;
            on += cand.grid.at(x, y) ? 1 : 0;
          }
        if (tot == 0 || double(on) / tot < thr) continue;
        if (!best || std::tie(cand.area, cand.phrase, cand.order) < std::tie(best->area, best->phrase, best->order))
          best = &cand;
      }
      if (best) out.labels[std::size_t(r * cols + c)] = best->token;
    }
  return out;
}

}  // namespace fivl::testing
