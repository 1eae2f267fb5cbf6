#pragma once

// Human review of augmented samples: a lease-based work queue, an append-only
// judgment log, quality statistics, and the HTTP API the review UI talks to.

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fivl/error.hpp"
#include "fivl/image.hpp"
#include "fivl/keyexpr.hpp"
#include "fivl/mask.hpp"
#include "fivl/pipeline.hpp"
#include "fivl/transport.hpp"

namespace fivl {

// One key expression with its mask, picked per sample with the deployment seed.
struct ReviewItem {
  std::string sample_id;
  std::string image_ref;
  int turn = 0;
  std::string question;
  std::string answer;
  std::string expression;
  RleMask mask;
  double coverage = 0.0;
};

inline std::vector<ReviewItem> review_items(const std::vector<AugmentedSample>& samples, std::uint64_t seed) {
  std::vector<ReviewItem> items;
  for (const auto& s : samples) {
    std::vector<const Grounding*> masked;
    for (const auto& g : s.groundings)
      if (g.has_mask()) masked.push_back(&g);
    if (masked.empty()) continue;
    std::mt19937_64 rng(seed ^ detail::fnv1a(s.conversation.id));
    const Grounding& g = *masked[std::uniform_int_distribution<std::size_t>(0, masked.size() - 1)(rng)];
    const auto t = static_cast<std::size_t>(g.expression.turn_index);
    const Turn turn = t < s.conversation.turns.size() ? s.conversation.turns[t] : Turn{};
    items.push_back({s.conversation.id, s.conversation.image_ref, g.expression.turn_index, turn.question,
                     turn.answer, g.expression.text, *g.mask, coverage_fraction(*g.mask)});
  }
  return items;
}

struct JudgmentRecord {
  std::string sample_id;
  std::string expression;
  std::string annotator_id;
  bool q_mask_relevant = false;
  bool q_expression_significant = false;
  bool q_sample_good = false;
  std::int64_t timestamp = 0;  // unix seconds, assigned by the store
  double coverage = 0.0;       // mask coverage, copied from the item

  bool same_answers(const JudgmentRecord& o) const {
    return expression == o.expression && q_mask_relevant == o.q_mask_relevant &&
           q_expression_significant == o.q_expression_significant && q_sample_good == o.q_sample_good;
  }
  bool operator==(const JudgmentRecord&) const = default;
};

inline json judgment_to_json(const JudgmentRecord& r) {
  return {{"sample_id", r.sample_id},
          {"expression", r.expression},
          {"annotator_id", r.annotator_id},
          {"q_mask_relevant", r.q_mask_relevant},
          {"q_expression_significant", r.q_expression_significant},
          {"q_sample_good", r.q_sample_good},
          {"timestamp", r.timestamp},
          {"coverage", r.coverage}};
}

// Submissions must carry all three answers; timestamp and coverage are optional.
inline JudgmentRecord judgment_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("judgment must be a JSON object");
  auto str = [&](const char* k) {
    if (!j.contains(k) || !j[k].is_string() || j[k].get<std::string>().empty())
      throw InvalidArgument(std::string("judgment lacks '") + k + "'");
    return j[k].get<std::string>();
  };
  auto flag = [&](const char* k) {
    if (!j.contains(k) || !j[k].is_boolean()) throw InvalidArgument(std::string("judgment lacks boolean '") + k + "'");
    return j[k].get<bool>();
  };
  JudgmentRecord r{str("sample_id"), str("expression"), str("annotator_id"), flag("q_mask_relevant"),
                   flag("q_expression_significant"), flag("q_sample_good")};
  r.timestamp = j.value("timestamp", std::int64_t{0});
  r.coverage = j.value("coverage", 0.0);
  return r;
}

// ---------------------------------------------------------------------------
// Statistics: pure folds over records

struct ReviewStats {
  std::size_t n = 0;
  std::size_t n_good = 0;
  std::optional<double> pct_good_samples;
  std::optional<double> pct_expression_relevant;
  std::optional<double> pct_mask_relevant;
  std::optional<double> pct_expression_relevant_given_good;
  std::optional<double> pct_mask_relevant_given_good;
};

// Published reference values from one large annotation round; fixtures only.
struct ReviewReference {
  double pct_good_samples = 0.77;
  double pct_expression_relevant = 0.75;
  double pct_mask_relevant = 0.58;
  double pct_expression_relevant_given_good = 0.85;
  double pct_mask_relevant_given_good = 0.69;
};
inline constexpr ReviewReference kReviewReference{};

inline ReviewStats review_stats(const std::vector<JudgmentRecord>& records) {
  ReviewStats s;
  std::size_t expr = 0, mask = 0, expr_good = 0, mask_good = 0;
  for (const auto& r : records) {
    ++s.n;
    expr += r.q_expression_significant;
    mask += r.q_mask_relevant;
    if (r.q_sample_good) {
      ++s.n_good;
      expr_good += r.q_expression_significant;
      mask_good += r.q_mask_relevant;
    }
  }
  if (s.n) {
    s.pct_good_samples = double(s.n_good) / double(s.n);
    s.pct_expression_relevant = double(expr) / double(s.n);
    s.pct_mask_relevant = double(mask) / double(s.n);
  }
  if (s.n_good) {
    s.pct_expression_relevant_given_good = double(expr_good) / double(s.n_good);
    s.pct_mask_relevant_given_good = double(mask_good) / double(s.n_good);
  }
  return s;
}

struct CoverageBucket {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t n = 0;
  std::size_t n_mask_relevant = 0;
  std::optional<double> rate;
};

struct MaskSizeHistogram {
  double bucket_width = 0.0;
  std::vector<CoverageBucket> buckets;
  // Keeping only masks with coverage below `upper`: retained fraction and rate.
  struct Cutoff {
    double upper;
    double retained_fraction;
    std::optional<double> rate;
  };
  std::vector<Cutoff> cutoffs;
};

inline std::size_t coverage_bucket(double coverage, double width, std::size_t n_buckets) {
  const auto b = static_cast<std::size_t>(std::max(0.0, std::floor(coverage / width + 1e-9)));
  return std::min(b, n_buckets - 1);
}

inline MaskSizeHistogram mask_size_histogram(const std::vector<JudgmentRecord>& records, double bucket_width) {
  if (!(bucket_width > 0.0 && bucket_width <= 1.0)) throw InvalidArgument("bucket width must be in (0, 1]");
  const auto nb = static_cast<std::size_t>(std::ceil(1.0 / bucket_width - 1e-9));
  MaskSizeHistogram h{bucket_width, std::vector<CoverageBucket>(nb), {}};
  for (std::size_t b = 0; b < nb; ++b) {
    h.buckets[b].lower = double(b) * bucket_width;
    h.buckets[b].upper = std::min(1.0, double(b + 1) * bucket_width);
  }
  for (const auto& r : records) {
    auto& b = h.buckets[coverage_bucket(r.coverage, bucket_width, nb)];
    ++b.n;
    b.n_mask_relevant += r.q_mask_relevant;
  }
  std::size_t n = 0, yes = 0;
  for (auto& b : h.buckets) {
    if (b.n) b.rate = double(b.n_mask_relevant) / double(b.n);
    n += b.n;
    yes += b.n_mask_relevant;
    h.cutoffs.push_back({b.upper, records.empty() ? 0.0 : double(n) / double(records.size()),
                         n ? std::optional<double>(double(yes) / double(n)) : std::nullopt});
  }
  return h;
}

inline json stats_to_json(const ReviewStats& s) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"n", s.n},
          {"n_good", s.n_good},
          {"pct_good_samples", opt(s.pct_good_samples)},
          {"pct_expression_relevant", opt(s.pct_expression_relevant)},
          {"pct_mask_relevant", opt(s.pct_mask_relevant)},
          {"pct_expression_relevant_given_good", opt(s.pct_expression_relevant_given_good)},
          {"pct_mask_relevant_given_good", opt(s.pct_mask_relevant_given_good)}};
}

inline json histogram_to_json(const MaskSizeHistogram& h) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json buckets = json::array(), cutoffs = json::array();
  for (const auto& b : h.buckets)
    buckets.push_back({{"lower", b.lower}, {"upper", b.upper}, {"n", b.n}, {"n_mask_relevant", b.n_mask_relevant},
                       {"rate", opt(b.rate)}});
  for (const auto& c : h.cutoffs)
    cutoffs.push_back({{"max_coverage", c.upper}, {"retained_fraction", c.retained_fraction}, {"rate", opt(c.rate)}});
  return {{"bucket_width", h.bucket_width}, {"buckets", buckets}, {"cutoffs", cutoffs}};
}

// ---------------------------------------------------------------------------
// Store

using Clock = std::function<std::int64_t()>;  // unix seconds

inline std::int64_t system_clock_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline constexpr std::int64_t kDefaultLeaseSeconds = 600;

struct StoreOptions {
  std::string log_path;  // empty: in-memory only
  std::int64_t lease_seconds = kDefaultLeaseSeconds;
  std::uint64_t queue_seed = 0;  // per-annotator serving order
  Clock clock = system_clock_seconds;
};

enum class RecordOutcome { stored, duplicate };

class ReviewStore {
 public:
  explicit ReviewStore(std::vector<ReviewItem> items, StoreOptions opt = {})
      : items_(std::move(items)), opt_(std::move(opt)), snapshot_(std::make_shared<const std::vector<JudgmentRecord>>()) {
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (!index_.emplace(items_[i].sample_id, i).second)
        throw InvalidArgument("duplicate sample id '" + items_[i].sample_id + "'");
    if (!opt_.log_path.empty()) replay();
  }

  const std::vector<ReviewItem>& items() const { return items_; }

  const ReviewItem* find(const std::string& sample_id) const {
    auto it = index_.find(sample_id);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  // Next item this annotator has neither judged nor currently leased; leases it.
  std::optional<ReviewItem> next_sample(const std::string& annotator) {
    if (annotator.empty()) throw InvalidArgument("annotator id must not be empty");
    std::lock_guard lock(mu_);
    const auto now = opt_.clock();
    std::vector<std::size_t> order(items_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(opt_.queue_seed ^ detail::fnv1a(annotator)));
    for (std::size_t i : order) {
      const Key key{items_[i].sample_id, annotator};
      if (judged_.contains(key)) continue;
      auto lease = leases_.find(key);
      if (lease != leases_.end() && lease->second > now) continue;
      leases_[key] = now + opt_.lease_seconds;
      return items_[i];
    }
    return std::nullopt;
  }

  RecordOutcome record_judgment(JudgmentRecord r) {
    const ReviewItem* item = find(r.sample_id);
    if (!item) throw NotFoundError("unknown sample '" + r.sample_id + "'");
    if (r.expression != item->expression)
      throw InvalidArgument("expression does not match the one served for '" + r.sample_id + "'");
    std::lock_guard lock(mu_);
    const Key key{r.sample_id, r.annotator_id};
    if (auto it = judged_.find(key); it != judged_.end()) {
      if (records_[it->second].same_answers(r)) return RecordOutcome::duplicate;
      throw ConflictError("sample '" + r.sample_id + "' already judged differently by '" + r.annotator_id + "'");
    }
    const auto now = opt_.clock();
    auto lease = leases_.find(key);
    if (lease == leases_.end() || lease->second <= now)
      throw ConflictError("no active lease on '" + r.sample_id + "' for '" + r.annotator_id + "'");
    auto& last = last_timestamp_[r.annotator_id];
    r.timestamp = std::max(now, last);
    last = r.timestamp;
    r.coverage = item->coverage;
    append(r);
    leases_.erase(lease);
    judged_.emplace(key, records_.size());
    records_.push_back(std::move(r));
    publish();
    return RecordOutcome::stored;
  }

  // Immutable view; safe to fold without holding the store lock.
  std::shared_ptr<const std::vector<JudgmentRecord>> records() const {
    std::lock_guard lock(snapshot_mu_);
    return snapshot_;
  }

  std::size_t skipped_log_lines() const { return skipped_lines_; }

 private:
  using Key = std::pair<std::string, std::string>;  // (sample, annotator)

  void replay() {
    std::ifstream in(opt_.log_path, std::ios::binary);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      JudgmentRecord r;
      try {
        r = judgment_from_json(json::parse(line));
      } catch (const std::exception&) {
        if (in.peek() == std::char_traits<char>::eof()) {  // torn tail from a crash
          ++skipped_lines_;
          break;
        }
        throw FormatError(lineno, "corrupt judgment log '" + opt_.log_path + "'");
      }
      const Key key{r.sample_id, r.annotator_id};
      if (judged_.contains(key)) continue;
      judged_.emplace(key, records_.size());
      auto& last = last_timestamp_[r.annotator_id];
      last = std::max(last, r.timestamp);
      records_.push_back(std::move(r));
    }
    if (skipped_lines_) rewrite_log();
    publish();
  }

  void rewrite_log() {
    const auto tmp = opt_.log_path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      for (const auto& r : records_) out << judgment_to_json(r).dump() << '\n';
      if (!out) throw Error("cannot rewrite judgment log");
    }
    std::filesystem::rename(tmp, opt_.log_path);
  }

  void append(const JudgmentRecord& r) {
    if (opt_.log_path.empty()) return;
    if (!log_.is_open()) log_.open(opt_.log_path, std::ios::binary | std::ios::app);
    log_ << judgment_to_json(r).dump() << '\n';
    log_.flush();
    if (!log_) throw Error("cannot append to judgment log '" + opt_.log_path + "'");
  }

  void publish() {
    auto snap = std::make_shared<const std::vector<JudgmentRecord>>(records_);
    std::lock_guard lock(snapshot_mu_);
    snapshot_ = std::move(snap);
  }

  std::vector<ReviewItem> items_;
  StoreOptions opt_;
  std::map<std::string, std::size_t> index_;
  std::mutex mu_;
  std::map<Key, std::int64_t> leases_;  // expiry
  std::map<Key, std::size_t> judged_;   // index into records_
  std::map<std::string, std::int64_t> last_timestamp_;
  std::vector<JudgmentRecord> records_;
  std::ofstream log_;
  std::size_t skipped_lines_ = 0;
  mutable std::mutex snapshot_mu_;
  std::shared_ptr<const std::vector<JudgmentRecord>> snapshot_;
};

// ---------------------------------------------------------------------------
// HTTP

inline json review_payload(const ReviewItem& it, std::int64_t lease_seconds) {
  return {{"done", false},
          {"sample_id", it.sample_id},
          {"turn", it.turn},
          {"question", it.question},
          {"answer", it.answer},
          {"expression", it.expression},
          {"coverage", it.coverage},
          {"image_url", "/api/images/" + it.sample_id},
          {"mask_url", "/api/masks/" + it.sample_id},
          {"lease_seconds", lease_seconds},
          {"questions",
           {{{"key", "q_mask_relevant"}, {"text", "Does the mask show \"" + it.expression + "\"?"}},
            {{"key", "q_expression_significant"},
             {"text", "Is \"" + it.expression + "\" a key expression of the answer?"}},
            {{"key", "q_sample_good"}, {"text", "Should this sample be kept in the dataset?"}}}}};
}

using ReviewImageSource = std::function<Image(const std::string& image_ref)>;

// Registers the API on `server`; `static_dir` (if it exists) is mounted at /.
inline void mount_review_api(httplib::Server& server, ReviewStore& store, ReviewImageSource images,
                             const std::string& static_dir = "", std::int64_t lease_seconds = kDefaultLeaseSeconds) {
  auto send_json = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto error = [send_json](httplib::Response& res, int status, const std::string& msg) {
    send_json(res, status, {{"error", msg}});
  };

  server.Get("/api/samples/next", [&store, send_json, error, lease_seconds](const httplib::Request& req,
                                                                             httplib::Response& res) {
    const auto annotator = req.get_param_value("annotator");
    if (annotator.empty()) return error(res, 400, "missing annotator");
    const auto item = store.next_sample(annotator);
    if (!item) return send_json(res, 200, {{"done", true}});
    send_json(res, 200, review_payload(*item, lease_seconds));
  });

  server.Post("/api/judgments", [&store, send_json, error](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto outcome = store.record_judgment(judgment_from_json(json::parse(req.body)));
      send_json(res, outcome == RecordOutcome::stored ? 201 : 200,
                {{"stored", outcome == RecordOutcome::stored}, {"duplicate", outcome == RecordOutcome::duplicate}});
    } catch (const json::exception& e) {
      error(res, 400, std::string("bad JSON: ") + e.what());
    } catch (const InvalidArgument& e) {
      error(res, 400, e.what());
    } catch (const NotFoundError& e) {
      error(res, 404, e.what());
    } catch (const ConflictError& e) {
      error(res, 409, e.what());
    }
  });

  server.Get("/api/stats", [&store, send_json](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, stats_to_json(review_stats(*store.records())));
  });

  server.Get("/api/stats/mask-size", [&store, send_json, error](const httplib::Request& req, httplib::Response& res) {
    double width = 0.1;
    if (req.has_param("bucket")) {
      try {
        width = std::stod(req.get_param_value("bucket"));
      } catch (const std::exception&) {
        return error(res, 400, "bucket must be a number");
      }
    }
    try {
      send_json(res, 200, histogram_to_json(mask_size_histogram(*store.records(), width)));
    } catch (const InvalidArgument& e) {
      error(res, 400, e.what());
    }
  });

  auto png_route = [&store, images, error](bool overlay) {
    return [&store, images, error, overlay](const httplib::Request& req, httplib::Response& res) {
      const ReviewItem* item = store.find(req.matches[1].str());
      if (!item) return error(res, 404, "unknown sample");
      try {
        const Image img = images(item->image_ref);
        const auto png = encode_png(overlay ? overlay_mask(img, item->mask) : img);
        res.set_content(std::string(png.begin(), png.end()), "image/png");
      } catch (const Error& e) {
        error(res, 500, e.what());
      }
    };
  };
  server.Get(R"(/api/images/([^/]+))", png_route(false));
  server.Get(R"(/api/masks/([^/]+))", png_route(true));

  if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) server.set_mount_point("/", static_dir);
}

}  // namespace fivl
