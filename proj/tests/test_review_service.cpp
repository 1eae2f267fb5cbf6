#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "fivl/review_service.hpp"
#include "review_fixtures.hpp"

using namespace fivl;
namespace ft = fivl::testing;

namespace {

struct FakeClock {
  std::int64_t now = 1000;
  Clock fn() {
    return [this] { return now; };
  }
};

std::string temp_path(const std::string& tag) {
  return (std::filesystem::temp_directory_path() / ("fivl_review_" + tag + "_" + std::to_string(::getpid()))).string();
}

JudgmentRecord answer(const ReviewItem& it, const std::string& who, bool mask = true) {
  return {it.sample_id, it.expression, who, mask, true, true};
}

}  // namespace

TEST(ReviewStats, HandComputedFixture) {
  const auto s = review_stats(ft::review_fixture());
  EXPECT_EQ(s.n, 50u);
  EXPECT_DOUBLE_EQ(*s.pct_good_samples, 0.74);
  EXPECT_DOUBLE_EQ(*s.pct_expression_relevant, 0.80);
  EXPECT_DOUBLE_EQ(*s.pct_mask_relevant, 0.50);
  EXPECT_DOUBLE_EQ(*s.pct_expression_relevant_given_good, 30.0 / 37.0);
  EXPECT_DOUBLE_EQ(*s.pct_mask_relevant_given_good, 12.0 / 37.0);
}

TEST(ReviewStats, SmallCases) {
  std::vector<JudgmentRecord> four{{"a", "x", "u", true, true, true},
                                   {"b", "x", "u", true, true, true},
                                   {"c", "x", "u", false, true, true},
                                   {"d", "x", "u", false, false, false}};
  const auto s = review_stats(four);
  EXPECT_DOUBLE_EQ(*s.pct_good_samples, 0.75);
  EXPECT_DOUBLE_EQ(*s.pct_expression_relevant, 0.75);
  EXPECT_DOUBLE_EQ(*s.pct_mask_relevant, 0.5);
  const auto one = review_stats({four[0]});
  EXPECT_EQ(*one.pct_good_samples, 1.0);
  EXPECT_EQ(*one.pct_mask_relevant_given_good, 1.0);
  const auto bad = review_stats({four[3]});
  EXPECT_FALSE(bad.pct_expression_relevant_given_good.has_value());
  EXPECT_FALSE(review_stats({}).pct_good_samples.has_value());
}

TEST(MaskHistogram, BucketsSumToGlobalRate) {
  const auto recs = ft::review_fixture();
  const auto global = *review_stats(recs).pct_mask_relevant;
  for (double w : {0.05, 0.1, 0.2, 0.25, 0.3, 0.5, 0.7, 1.0}) {
    const auto h = mask_size_histogram(recs, w);
    std::size_t n = 0, yes = 0;
    for (const auto& b : h.buckets) {
      n += b.n;
      yes += b.n_mask_relevant;
    }
    EXPECT_EQ(n, recs.size());
    EXPECT_DOUBLE_EQ(double(yes) / double(n), global) << w;
    EXPECT_DOUBLE_EQ(*h.cutoffs.back().rate, global);
    EXPECT_DOUBLE_EQ(h.cutoffs.back().retained_fraction, 1.0);
  }
  const auto one = mask_size_histogram(recs, 1.0);
  ASSERT_EQ(one.buckets.size(), 1u);
  EXPECT_DOUBLE_EQ(*one.buckets[0].rate, global);
  // coverage (i % 10)/10 + 0.05: bucket b holds i = b, b+10, ...; even b all yes, odd all no
  const auto tenth = mask_size_histogram(recs, 0.1);
  ASSERT_EQ(tenth.buckets.size(), 10u);
  for (std::size_t b = 0; b < 10; ++b) {
    EXPECT_EQ(tenth.buckets[b].n, 5u);
    EXPECT_EQ(*tenth.buckets[b].rate, b % 2 == 0 ? 1.0 : 0.0);
  }
  EXPECT_THROW(mask_size_histogram(recs, 0.0), InvalidArgument);
  EXPECT_THROW(mask_size_histogram(recs, 1.5), InvalidArgument);
  std::vector<JudgmentRecord> small(3, {"a", "x", "u", true, true, true});
  for (auto& r : small) r.coverage = 0.1;
  const auto single = mask_size_histogram(small, 0.2);
  EXPECT_EQ(single.buckets[0].n, 3u);
  EXPECT_EQ(*single.buckets[0].rate, 1.0);
  EXPECT_EQ(coverage_bucket(1.0, 0.1, 10), 9u);
  EXPECT_EQ(coverage_bucket(0.3, 0.1, 10), 3u);
}

TEST(ReviewStore, ItemSelectionIsSeeded) {
  AugmentedSample s = passthrough({"s0", "a.png", {{"Q?", "a dog and a cat and a bird"}}});
  for (const auto* p : {"dog", "cat", "bird"}) {
    auto g = ungrounded(make_key_expression(p, 0, "Q?", "a dog and a cat and a bird"));
    g.mask = box_mask(4, 4, {0, 0, 2, 2});
    s.groundings.push_back(g);
  }
  const auto a = review_items({s}, 3), b = review_items({s}, 3);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].expression, b[0].expression);
  EXPECT_DOUBLE_EQ(a[0].coverage, 0.25);
  std::set<std::string> picked;
  for (std::uint64_t seed = 0; seed < 40; ++seed) picked.insert(review_items({s}, seed)[0].expression);
  EXPECT_EQ(picked.size(), 3u);
  EXPECT_TRUE(review_items({passthrough({"e", "a.png", {{"Q?", "A"}}})}, 0).empty());
}

TEST(ReviewStore, QueueLeasesAndJudgments) {
  FakeClock clock;
  ReviewStore store(ft::review_item_fixture(3), {"", 600, 7, clock.fn()});
  std::set<std::string> served;
  for (int i = 0; i < 3; ++i) served.insert(store.next_sample("ann")->sample_id);
  EXPECT_EQ(served.size(), 3u);
  EXPECT_FALSE(store.next_sample("ann").has_value());  // all leased
  EXPECT_TRUE(store.next_sample("other").has_value());  // separate annotator
  clock.now += 601;  // leases expire and re-enter the queue
  const auto again = store.next_sample("ann");
  ASSERT_TRUE(again.has_value());
  EXPECT_EQ(store.record_judgment(answer(*again, "ann")), RecordOutcome::stored);
  EXPECT_EQ(store.record_judgment(answer(*again, "ann")), RecordOutcome::duplicate);
  EXPECT_THROW(store.record_judgment(answer(*again, "ann", false)), ConflictError);
  EXPECT_EQ(store.records()->size(), 1u);
  EXPECT_EQ(store.records()->front().timestamp, clock.now);
  EXPECT_THROW(store.record_judgment(answer(store.items()[0], "nobody")), ConflictError);  // no lease
  EXPECT_THROW(store.record_judgment({"zz", "dog", "ann", true, true, true}), NotFoundError);
  auto wrong = answer(store.items()[1], "ann");
  wrong.expression = "cat";
  EXPECT_THROW(store.record_judgment(wrong), InvalidArgument);
  // judged samples never come back
  for (int i = 0; i < 5; ++i) {
    auto n = store.next_sample("ann");
    if (!n) break;
    EXPECT_NE(n->sample_id, again->sample_id);
    store.record_judgment(answer(*n, "ann"));
  }
  EXPECT_FALSE(store.next_sample("ann").has_value());
}

TEST(ReviewStore, ConcurrentClientsNeverDoubleServed) {
  for (int annotators : {1, 3, 10}) {
    ReviewStore store(ft::review_item_fixture(60), {"", 600, 1});
    const auto r = ft::run_lease_harness(store, 10, annotators);
    EXPECT_EQ(r.double_served, 0u);
    EXPECT_EQ(r.served, 60u * std::size_t(annotators));
    EXPECT_EQ(r.stored, r.served);
  }
}

TEST(ReviewStore, LogReplayReproducesStats) {
  const auto path = temp_path("log");
  std::filesystem::remove(path);
  FakeClock clock;
  std::vector<JudgmentRecord> before;
  {
    ReviewStore store(ft::review_item_fixture(20), {path, 600, 2, clock.fn()});
    ft::run_lease_harness(store, 4, 2);
    before = *store.records();
  }
  {
    std::ofstream torn(path, std::ios::app);
    torn << R"({"sample_id":"s1","expr)";
  }
  ReviewStore reloaded(ft::review_item_fixture(20), {path, 600, 2, clock.fn()});
  EXPECT_EQ(reloaded.skipped_log_lines(), 1u);
  EXPECT_EQ(*reloaded.records(), before);
  EXPECT_EQ(stats_to_json(review_stats(before)), stats_to_json(review_stats(*reloaded.records())));
  EXPECT_FALSE(reloaded.next_sample("a0").has_value());  // replayed judgments count
  ReviewStore third(ft::review_item_fixture(20), {path, 600, 2, clock.fn()});
  EXPECT_EQ(third.skipped_log_lines(), 0u);  // torn tail was dropped from disk
  std::filesystem::remove(path);
}

TEST(ReviewHttp, EndToEnd) {
  ReviewStore store(ft::review_item_fixture(2), {"", 600, 0});
  const auto static_dir = temp_path("ui");
  std::filesystem::create_directories(static_dir);
  std::ofstream(static_dir + "/index.html") << "<html>review</html>";
  httplib::Server server;
  mount_review_api(server, store, [](const std::string&) { return Image(10, 10, 3, 200); }, static_dir);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::jthread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  EXPECT_EQ(cli.Get("/api/samples/next")->status, 400);
  auto next = cli.Get("/api/samples/next?annotator=u1");
  ASSERT_TRUE(next);
  const auto payload = json::parse(next->body);
  EXPECT_FALSE(payload["done"].get<bool>());
  EXPECT_EQ(payload["questions"].size(), 3u);
  const std::string id = payload["sample_id"];
  json rec = {{"sample_id", id},         {"expression", "dog"},           {"annotator_id", "u1"},
              {"q_mask_relevant", true}, {"q_expression_significant", true}, {"q_sample_good", false}};
  EXPECT_EQ(cli.Post("/api/judgments", rec.dump(), "application/json")->status, 201);
  EXPECT_EQ(cli.Post("/api/judgments", rec.dump(), "application/json")->status, 200);
  rec["q_sample_good"] = true;
  EXPECT_EQ(cli.Post("/api/judgments", rec.dump(), "application/json")->status, 409);
  rec.erase("q_sample_good");
  EXPECT_EQ(cli.Post("/api/judgments", rec.dump(), "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/api/judgments", "{", "application/json")->status, 400);
  const auto stats = json::parse(cli.Get("/api/stats")->body);
  EXPECT_EQ(stats["n"], 1);
  EXPECT_EQ(stats["pct_mask_relevant"], 1.0);
  EXPECT_TRUE(stats["pct_mask_relevant_given_good"].is_null());
  const auto hist = json::parse(cli.Get("/api/stats/mask-size?bucket=0.5")->body);
  EXPECT_EQ(hist["buckets"].size(), 2u);
  EXPECT_EQ(cli.Get("/api/stats/mask-size?bucket=2")->status, 400);
  EXPECT_EQ(cli.Get("/api/stats/mask-size?bucket=x")->status, 400);
  auto png = cli.Get("/api/masks/" + id);
  ASSERT_EQ(png->status, 200);
  const auto overlay = decode_png(std::vector<std::uint8_t>(png->body.begin(), png->body.end()));
  EXPECT_EQ(overlay.width, 10);
  EXPECT_NE(overlay.px(0, 0)[0], overlay.px(9, 9)[0]);  // tinted inside the mask
  EXPECT_EQ(cli.Get("/api/images/" + id)->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(cli.Get("/api/images/nope")->status, 404);
  EXPECT_EQ(cli.Get("/index.html")->body, "<html>review</html>");
  cli.Get("/api/samples/next?annotator=u1");
  EXPECT_TRUE(json::parse(cli.Get("/api/samples/next?annotator=u1")->body)["done"].get<bool>());
  server.stop();
  th.join();
  std::filesystem::remove_all(static_dir);
}
