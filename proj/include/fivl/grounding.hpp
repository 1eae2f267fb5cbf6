#pragma once

// Text-prompted detection + segmentation client contract and the
// post-processing that turns detections into one unified, deduplicated
// grounding per key expression.
//
// Wire contract (POST JSON):
//   request  {"image_id", "image_url" | "image_base64", "text_prompt",
//             "box_threshold", "mask_threshold"}
//   response {"detections": [{"box": [x_min, y_min, x_max, y_max],
//                             "mask": "{w} {h} | c0 c1 ...", "score": s}]}

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include "fivl/error.hpp"
#include "fivl/image.hpp"
#include "fivl/keyexpr.hpp"
#include "fivl/mask.hpp"
#include "fivl/transport.hpp"

namespace fivl {

inline constexpr double kDefaultBoxThreshold = 0.4;
inline constexpr double kDefaultMaskThreshold = 0.0;

struct Detection {
  BBox box;
  RleMask mask;
  double score = 0.0;
};

struct GroundingRequest {
  std::string image_id;
  std::string image_ref;  // path or URL
  std::string phrase;
  double box_threshold = kDefaultBoxThreshold;
  double mask_threshold = kDefaultMaskThreshold;
};

class GroundingClient {
 public:
  virtual ~GroundingClient() = default;
  // Raw detections. Implementations must be thread-safe.
  virtual std::vector<Detection> detect(const GroundingRequest& request) = 0;
};

inline Detection detection_from_json(const json& j) {
  try {
    const auto& b = j.at("box");
    if (!b.is_array() || b.size() != 4) throw ProtocolError("detection box must have 4 entries");
    Detection d;
    d.box = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
    d.mask = parse_rle(j.at("mask").get<std::string>());
    d.score = j.at("score").get<double>();
    if (!d.box.fits(d.mask.width, d.mask.height)) throw ProtocolError("detection box outside mask bounds");
    return d;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad detection payload: ") + e.what());
  } catch (const MalformedMaskError& e) {
    throw ProtocolError(std::string("bad detection mask: ") + e.what());
  }
}

inline json detection_to_json(const Detection& d) {
  return {{"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}},
          {"mask", format_rle(d.mask)},
          {"score", d.score}};
}

class HttpGroundingClient final : public GroundingClient {
 public:
  explicit HttpGroundingClient(HttpJsonTransport transport, bool inline_images = false)
      : transport_(std::move(transport)), inline_images_(inline_images) {}

  std::vector<Detection> detect(const GroundingRequest& r) override {
    json body = {{"image_id", r.image_id},
                 {"text_prompt", r.phrase},
                 {"box_threshold", r.box_threshold},
                 {"mask_threshold", r.mask_threshold}};
    if (inline_images_) {
      try {
        body["image_base64"] = base64_encode(read_file_bytes(r.image_ref));
      } catch (const NotFoundError& e) {
        throw InvalidArgument(std::string("unreadable image: ") + e.what());
      }
    } else {
      body["image_url"] = r.image_ref;
    }
    const json res = transport_.post(body);
    if (!res.is_object() || !res.contains("detections") || !res["detections"].is_array())
      throw ProtocolError("grounding response has no 'detections' array");
    std::vector<Detection> out;
    for (const auto& d : res["detections"]) out.push_back(detection_from_json(d));
    return out;
  }

 private:
  HttpJsonTransport transport_;
  bool inline_images_;
};

// Offline client reading fixtures:
//   {"<image_id>": {"<phrase>": [detection, ...]}}
// Unknown (image, phrase) pairs yield no detections.
class FileStubGroundingClient final : public GroundingClient {
 public:
  explicit FileStubGroundingClient(json fixtures) {
    for (const auto& [image, phrases] : fixtures.items())
      for (const auto& [phrase, dets] : phrases.items()) {
        auto& slot = table_[{image, phrase}];
        for (const auto& d : dets) slot.push_back(detection_from_json(d));
      }
  }

  static FileStubGroundingClient from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open grounding fixtures '" + path + "'");
    return FileStubGroundingClient(json::parse(in));
  }

  std::vector<Detection> detect(const GroundingRequest& r) override {
    if (auto it = table_.find({r.image_id, r.phrase}); it != table_.end()) return it->second;
    return {};
  }

 private:
  std::map<std::pair<std::string, std::string>, std::vector<Detection>> table_;
};

// Stand-in for an unreachable backend.
class OfflineGroundingClient final : public GroundingClient {
 public:
  std::vector<Detection> detect(const GroundingRequest&) override {
    throw TransportError("grounding endpoint offline");
  }
};

// Detections at or above the box threshold, best score first. Ties are broken
// by box coordinates so the order never depends on the backend.
inline std::vector<Detection> ground_expression(GroundingClient& client, const GroundingRequest& request,
                                                const RetryPolicy& retry = {}) {
  if (trim(request.phrase).empty()) throw InvalidArgument("phrase must not be empty");
  auto raw = with_retries(retry, [&] { return client.detect(request); });
  std::vector<Detection> out;
  for (auto& d : raw)
    if (d.score >= request.box_threshold) out.push_back(std::move(d));
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.box.y_min, a.box.x_min, a.box.y_max, a.box.x_max) <
           std::tie(b.box.y_min, b.box.x_min, b.box.y_max, b.box.x_max);
  });
  return out;
}

struct Grounding {
  KeyExpression expression;
  std::vector<BBox> boxes;
  std::optional<RleMask> mask;  // absent for ungrounded or deduplicated expressions
  double detector_score = 0.0;
  double coverage = 0.0;
  bool deduplicated = false;  // mask dropped as a near-duplicate of another grounding

  bool has_mask() const { return mask.has_value() && !mask->empty(); }
  bool operator==(const Grounding&) const = default;
};

inline Grounding ungrounded(KeyExpression expression) {
  Grounding g;
  g.expression = std::move(expression);
  return g;
}

inline Grounding consolidate_masks(KeyExpression expression, const std::vector<Detection>& detections) {
  if (detections.empty()) throw InvalidArgument("consolidate_masks needs at least one detection");
  std::vector<RleMask> masks;
  Grounding g;
  g.expression = std::move(expression);
  for (const auto& d : detections) {
    masks.push_back(d.mask);
    g.boxes.push_back(d.box);
    g.detector_score = std::max(g.detector_score, d.score);
  }
  g.mask = mask_union(masks);
  g.coverage = coverage_fraction(*g.mask);
  if (g.mask->empty()) {
    g.mask.reset();
    g.boxes.clear();
  }
  return g;
}

// Deduplicates grounding masks within one sample. A dropped grounding keeps
// its expression, loses its mask and boxes and is flagged `deduplicated`.
// Ties in mask area keep the grounding listed first.
inline std::vector<Grounding> dedup_groundings(std::vector<Grounding> groundings,
                                               double threshold = kDefaultDedupThreshold) {
  std::vector<std::pair<std::string, RleMask>> candidates;
  for (std::size_t i = 0; i < groundings.size(); ++i) {
    if (!groundings[i].has_mask()) continue;
    char id[16];
    std::snprintf(id, sizeof(id), "%08zu", i);
    candidates.emplace_back(id, *groundings[i].mask);
  }
  const auto kept = dedup_masks(candidates, threshold);
  std::vector<bool> keep(groundings.size(), false);
  for (const auto& id : kept) keep[std::stoul(id)] = true;
  for (std::size_t i = 0; i < groundings.size(); ++i) {
    if (!groundings[i].has_mask() || keep[i]) continue;
    groundings[i].mask.reset();
    groundings[i].boxes.clear();
    groundings[i].coverage = 0.0;
    groundings[i].deduplicated = true;
  }
  return groundings;
}

}  // namespace fivl
