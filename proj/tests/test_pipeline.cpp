#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fivl/config.hpp"
#include "fivl/pipeline.hpp"
#include "support.hpp"

using namespace fivl;
namespace fs = std::filesystem;
using fivl::testing::stub_corpus;
using fivl::testing::StubGrounder;

namespace {

const RetryPolicy kNoWait{2, std::chrono::milliseconds(0), 1.0};

AugmentConfig quick_config(int parallelism = 1) {
  AugmentConfig c;
  c.parallelism = parallelism;
  c.extractor.retry = kNoWait;
  c.grounding_retry = kNoWait;
  return c;
}

std::string serialized(const std::vector<AugmentedSample>& s) {
  std::ostringstream out;
  write_dataset(s, out);
  return out.str();
}

fs::path temp_path(const std::string& name) {
  auto p = fs::temp_directory_path() / ("fivl_pipeline_" + std::to_string(::getpid()) + "_" + name);
  fs::remove(p);
  return p;
}

Grounding grounded(const std::string& text, int turn, const RleMask& m, const std::string& answer = "") {
  auto g = consolidate_masks(make_key_expression(text, turn, "q", answer.empty() ? text : answer),
                             {{*bounding_box(m), m, 0.9}});
  return g;
}

}  // namespace

TEST(Ingest, ValidAndRejected) {
  const json recs = json::parse(R"([
    {"id": "a", "image": "a.jpg", "conversations": [
      {"from": "human", "value": "<image>\nWhat is this?"}, {"from": "gpt", "value": "A dog."},
      {"from": "human", "value": "Color?"}, {"from": "gpt", "value": "Brown."}]},
    {"id": "b", "conversations": [{"from": "human", "value": "q"}, {"from": "gpt", "value": "a"}]},
    {"id": "c", "image": "c.jpg", "conversations": [{"from": "human", "value": "q"}]},
    {"id": "d", "image": "d.jpg", "conversations": [{"from": "gpt", "value": "q"}, {"from": "human", "value": "a"}]}
  ])");
  const auto r = ingest_dataset(recs);
  ASSERT_EQ(r.conversations.size(), 1u);
  EXPECT_EQ(r.conversations[0].turns.size(), 2u);
  EXPECT_EQ(r.conversations[0].turns[1].answer, "Brown.");
  ASSERT_EQ(r.rejected.size(), 3u);
  EXPECT_EQ(r.rejected[0].record_id, "b");
  EXPECT_EQ(r.rejected[0].field, "image");
  EXPECT_TRUE(ingest_dataset(json::array()).conversations.empty());
  EXPECT_THROW(ingest_dataset(recs, true), IngestError);
}

TEST(Serialization, RoundTripByteIdentical) {
  FunctionChatClient ex(fivl::testing::stub_extract);
  StubGrounder gr;
  const auto samples = augment_dataset(stub_corpus(5), ex, gr, quick_config()).samples;
  const auto text = serialized(samples);
  std::istringstream in(text);
  const auto back = read_dataset(in);
  EXPECT_EQ(back.size(), samples.size());
  EXPECT_EQ(serialized(back), text);
  EXPECT_EQ(compute_dataset_stats(back), compute_dataset_stats(samples));
}

TEST(Serialization, CorruptLineNamed) {
  AugmentedSample s = passthrough({"x", "x.png", {{"q", "a dog"}}});
  s = attach_groundings(s, {grounded("dog", 0, box_mask(4, 4, {0, 0, 2, 2}), "a dog")});
  auto text = serialized({s, s});
  const auto at = text.rfind("4 4 | ");
  text.replace(at, 6, "4 4 | 99 ");
  std::istringstream in(text);
  try {
    read_dataset(in);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream bad_header(R"({"format":"fivl-augmented","version":2})" "\n");
  EXPECT_THROW(read_dataset(bad_header), FormatError);
}

TEST(Filter, RuleAndIdempotence) {
  const auto m = box_mask(4, 4, {0, 0, 2, 2});
  std::vector<AugmentedSample> xs;
  for (int i = 0; i < 10; ++i) {
    auto s = passthrough({"s" + std::to_string(i), "i.png", {{"q", "a dog"}}});
    if (i < 4) s = attach_groundings(s, {grounded("dog", 0, m, "a dog")});
    else if (i < 7) s = attach_groundings(s, {ungrounded(make_key_expression("dog", 0, "q", "a dog"))});
    xs.push_back(s);
  }
  const auto f = filter_eval_samples(xs);
  EXPECT_EQ(f.samples.size(), 4u);
  EXPECT_DOUBLE_EQ(f.retained_fraction, 0.4);
  EXPECT_EQ(filter_eval_samples(f.samples).samples.size(), 4u);
  EXPECT_DOUBLE_EQ(filter_eval_samples(f.samples).retained_fraction, 1.0);
}

TEST(Stats, HandComputed) {
  EXPECT_EQ(compute_dataset_stats({}), DatasetStats{});
  const auto m1 = box_mask(4, 4, {0, 0, 2, 2});  // coverage 0.25
  const auto m2 = box_mask(4, 4, {0, 2, 4, 4});  // coverage 0.5, disjoint from m1
  auto a = passthrough({"a", "a.png", {{"q", "small dog and a red car"}, {"q2", "grass"}}});
  a = attach_groundings(a, {grounded("small dog", 0, m1, "small dog and a red car"),
                            grounded("red car", 0, m2, "small dog and a red car"),
                            ungrounded(make_key_expression("grass", 1, "q2", "grass"))});
  auto b = passthrough({"b", "b.png", {{"q", "nothing"}}});
  const auto st = compute_dataset_stats({a, b});
  EXPECT_EQ(st.n_conversations, 2u);
  EXPECT_EQ(st.n_turns, 3u);
  EXPECT_DOUBLE_EQ(st.avg_expressions_per_conversation, 1.5);
  EXPECT_DOUBLE_EQ(st.avg_expressions_per_turn, 1.0);
  EXPECT_DOUBLE_EQ(st.avg_masks_per_conversation, 1.0);
  EXPECT_DOUBLE_EQ(st.avg_words_per_expression, 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(st.avg_coverage, 0.375);
  // small/red adjectives, dog/car/grass nouns
  EXPECT_DOUBLE_EQ(st.word_type_distribution[int(WordType::adjective)], 0.4);
  EXPECT_DOUBLE_EQ(st.word_type_distribution[int(WordType::noun)], 0.6);
  double sum = 0;
  for (double d : st.word_type_distribution) sum += d;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  const auto j = stats_to_json(st);
  EXPECT_TRUE(j.contains("avg_expressions_per_conversation"));
  EXPECT_TRUE(j.contains("filtered_fraction"));
}

TEST(Augment, StubGoldenAndRetention) {
  FunctionChatClient ex(fivl::testing::stub_extract);
  StubGrounder gr;
  std::vector<Conversation> convs{{"x", "x.png", {{"What is it?", "A dog."}}},
                                  {"y", "y.png", {{"Is it sunny?", "Yes"}}}};
  const auto r = augment_dataset(convs, ex, gr, quick_config());
  ASSERT_EQ(r.samples.size(), 2u);
  ASSERT_EQ(r.samples[0].groundings.size(), 1u);
  EXPECT_EQ(r.samples[0].groundings[0].expression.text, "dog");
  EXPECT_TRUE(r.samples[0].groundings[0].has_mask());
  EXPECT_EQ(r.samples[0].raw_responses, (std::vector<std::string>{"dog"}));
  EXPECT_TRUE(r.samples[1].groundings.empty());
  EXPECT_TRUE(r.samples[1].quality.augmented);
  EXPECT_EQ(r.samples[1].conversation, convs[1]);
  EXPECT_DOUBLE_EQ(r.stats.filtered_fraction, 0.0);

  FunctionChatClient na([](const ChatRequest&) { return std::string("N/A"); });
  const auto all_na = augment_dataset(convs, na, gr, quick_config());
  for (std::size_t i = 0; i < convs.size(); ++i) EXPECT_EQ(all_na.samples[i].conversation, convs[i]);
  EXPECT_DOUBLE_EQ(all_na.stats.filtered_fraction, 0.0);

  auto eval = quick_config();
  eval.mode = AugmentMode::eval;
  EXPECT_DOUBLE_EQ(augment_dataset(convs, ex, gr, eval).stats.filtered_fraction, 0.5);
}

TEST(Augment, OfflineGrounderQuarantines) {
  FunctionChatClient ex(fivl::testing::stub_extract);
  OfflineGroundingClient off;
  const auto r = augment_dataset(stub_corpus(4), ex, off, quick_config(2));
  for (const auto& s : r.samples) {
    EXPECT_FALSE(s.quality.augmented);
    EXPECT_TRUE(s.groundings.empty());
  }
  EXPECT_EQ(r.stats.augmentation_failures, 4u);
  FunctionChatClient down([](const ChatRequest&) -> std::string { throw TransportError("down"); });
  StubGrounder gr;
  const auto d = augment_dataset(stub_corpus(2), down, gr, quick_config());
  EXPECT_EQ(d.samples[0].quality.extraction_failures, 1);
  EXPECT_EQ(d.samples[0].quality.grounding_failures, 0);
}

TEST(Augment, OrderIndependentOfParallelism) {
  FunctionChatClient ex(fivl::testing::stub_extract);
  StubGrounder gr;
  const auto corpus = stub_corpus(20);
  const auto base = serialized(augment_dataset(corpus, ex, gr, quick_config(1)).samples);
  for (int p : {2, 4, 16}) EXPECT_EQ(serialized(augment_dataset(corpus, ex, gr, quick_config(p)).samples), base);
}

TEST(Augment, ResumeAfterKill) {
  FunctionChatClient ex(fivl::testing::stub_extract);
  StubGrounder gr;
  const auto corpus = stub_corpus(12);
  const auto clean = serialized(augment_dataset(corpus, ex, gr, quick_config(1)).samples);

  const auto journal = temp_path("journal.jsonl");
  auto cfg = quick_config(3);
  cfg.journal_path = journal.string();
  std::atomic<int> calls{0};
  FunctionChatClient dying([&](const ChatRequest& r) -> std::string {
    if (++calls > 9) throw std::runtime_error("killed");
    return fivl::testing::stub_extract(r);
  });
  EXPECT_THROW(augment_dataset(corpus, dying, gr, cfg), std::runtime_error);
  { std::ofstream torn(journal, std::ios::app); torn << R"({"index": 11, "sample": {"id")"; }

  std::atomic<int> resumed_calls{0};
  FunctionChatClient counting([&](const ChatRequest& r) {
    ++resumed_calls;
    return fivl::testing::stub_extract(r);
  });
  const auto r = augment_dataset(corpus, counting, gr, cfg);
  EXPECT_GT(r.resumed, 0u);
  EXPECT_LT(r.resumed, corpus.size());
  EXPECT_EQ(serialized(r.samples), clean);
  // A second rerun is served entirely from the journal.
  resumed_calls = 0;
  EXPECT_EQ(serialized(augment_dataset(corpus, counting, gr, cfg).samples), clean);
  EXPECT_EQ(resumed_calls.load(), 0);
  fs::remove(journal);
}

TEST(Config, ParsesOverrides) {
  std::istringstream in("# comment\nbox_threshold = 0.6\n\nlambda=0.25\n");
  const auto c = Config::parse(in);
  EXPECT_DOUBLE_EQ(c.num("box_threshold"), 0.6);
  EXPECT_DOUBLE_EQ(c.num("lambda"), 0.25);
  EXPECT_DOUBLE_EQ(c.num("learning_rate"), 2e-5);
  EXPECT_EQ(c.integer("image_tokens"), 576);
  std::istringstream bad("x\n");
  EXPECT_THROW(Config::parse(bad), FormatError);
  EXPECT_THROW(c.num("optimizer"), InvalidArgument);
}
