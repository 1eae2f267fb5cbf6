// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Tolerances and time budgets are pinned below.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "analysis_fixtures.hpp"
#include "fivl/fivl.hpp"
#include "review_fixtures.hpp"
#include "support.hpp"

using namespace fivl;
namespace ft = fivl::testing;
namespace fs = std::filesystem;

namespace {

constexpr double kLinearityTol = 1e-12;
constexpr double kHandCaseTol = 1e-9;
constexpr double kGradTol = 1e-4;
constexpr double kVrsOracleTol = 1e-9;
constexpr double kVrsRandomBound = 0.05;
constexpr double kSpearmanTol = 1e-12;

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

// --- 1 ---------------------------------------------------------------------
Outcome loss_formula() {
  Outcome o;
  // one image row uniform over 4 tokens, one text row with two live logits
  Matrix logits = Matrix::Zero(3, 4);
  logits.row(1) << 0, 0, -1e3, -1e3;
  const std::vector<int> vision{0}, text{1, kIgnoreLabel};
  const auto at0 = combined_loss(logits, 1, text, vision, 0.0);
  const auto at1 = combined_loss(logits, 1, text, vision, 1.0);
  o.require(at0.combined == at0.ce_lm, "lambda=0 differs from CE_LM");
  o.require(at1.combined == at1.ce_vm, "lambda=1 differs from CE_VM");
  std::mt19937 rng(1);
  std::normal_distribution<double> nd(0, 2);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix m(7, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    const std::vector<int> v{int(rng() % 5), -1, int(rng() % 5)}, t{int(rng() % 5), -1, int(rng() % 5), 2};
    const auto lm = combined_loss(m, 3, t, v, 0.0).combined, vm = combined_loss(m, 3, t, v, 1.0).combined;
    for (double l : {0.1, 0.3, 0.5, 0.7, 0.9})
      o.require(std::abs(combined_loss(m, 3, t, v, l).combined - ((1 - l) * lm + l * vm)) <= kLinearityTol,
                "not linear in lambda at " + fmt(l));
  }
  const double hand = combined_loss(logits, 1, text, vision, 0.1).combined;
  const double closed = 0.1 * std::log(4.0) + 0.9 * std::log(2.0);
  o.require(std::abs(hand - closed) <= kHandCaseTol, "hand case off closed form");
  char six[16];
  std::snprintf(six, sizeof six, "%.6f", hand);
  o.require(std::string(six) == "0.762462", std::string("hand case prints ") + six);
  o.detail = o.pass ? "hand case " + std::string(six) + " (closed form diff " + fmt(std::abs(hand - closed)) + ")"
                    : o.detail;
  return o;
}

// --- 2 ---------------------------------------------------------------------
Outcome gradient_check() {
  Outcome o;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto [p, b] = random_toy_problem(seed, ToyDims{});
    for (double l : {0.0, kDefaultLambda, 0.5, 1.0}) worst = std::max(worst, grad_check(p, b, l));
  }
  o.require(worst < kGradTol, "max relative error " + fmt(worst));
  if (o.pass) o.detail = "50 models, max relative error " + fmt(worst);
  return o;
}

// --- 3 ---------------------------------------------------------------------
Outcome label_builder() {
  Outcome o;
  std::mt19937 rng(2024);
  std::size_t agree = 0, labeled = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto in = ft::random_label_instance(rng);
    const auto got = build_vision_labels(in.sample, ft::label_vocab(), in.rows, in.cols);
    const auto want = ft::brute_vision_labels(in.sample, ft::label_vocab(), in.rows, in.cols);
    agree += got == want;
    labeled += got.labeled() > 0;
  }
  o.require(agree == 1000, fmt(double(agree), 6) + "/1000 agree");
  if (o.pass) o.detail = "1000/1000 agree (" + std::to_string(labeled) + " with labels)";
  return o;
}

// --- 4 ---------------------------------------------------------------------
Outcome dedup() {
  Outcome o;
  std::mt19937 rng(4);
  std::size_t agree = 0, dropped = 0;
  for (int t = 0; t < 1000; ++t) {
    const int w = 1 + int(rng() % 16), h = 1 + int(rng() % 16);
    std::vector<std::pair<std::string, BitGrid>> grids;
    std::vector<std::pair<std::string, RleMask>> in;
    std::vector<int> ids{0, 1, 2, 3, 4, 5};
    std::shuffle(ids.begin(), ids.end(), rng);  // id order unrelated to insertion order
    for (int i = 0, n = 1 + int(rng() % 6); i < n; ++i) {
      auto g = ft::random_raster(rng, w, h, rng() % 2 ? 0.0 : 0.03);
      if (i > 0 && rng() % 3 == 0) g = grids[rng() % grids.size()].second;  // exact copies tie on area
      grids.emplace_back("m" + std::to_string(ids[std::size_t(i)]), g);
      in.emplace_back(grids.back().first, rle_encode(g));
    }
    const auto kept = dedup_masks(in);
    agree += kept == ft::brute_dedup(grids, kDefaultDedupThreshold);
    dropped += in.size() - kept.size();
    for (std::size_t a = 0; a < in.size(); ++a)
      for (std::size_t b = 0; b < in.size(); ++b) {
        if (a == b) continue;
        const bool ka = std::find(kept.begin(), kept.end(), in[a].first) != kept.end();
        const bool kb = std::find(kept.begin(), kept.end(), in[b].first) != kept.end();
        if (!ka || !kb) continue;
        const bool both_empty = in[a].second.area() == 0 && in[b].second.area() == 0;
        o.require(!both_empty && mask_overlap_ratio(in[a].second, in[b].second) <= kDefaultDedupThreshold,
                  "kept pair overlaps above threshold");
      }
  }
  o.require(agree == 1000, std::to_string(agree) + "/1000 agree with brute force");
  if (o.pass) o.detail = "1000/1000 agree, " + std::to_string(dropped) + " masks dropped overall";
  return o;
}

// --- 5 ---------------------------------------------------------------------
Outcome rle() {
  Outcome o;
  std::mt19937 rng(5);
  std::size_t exact = 0;
  for (int t = 0; t < 1000; ++t) {
    const int w = 1 + int(rng() % 64), h = 1 + int(rng() % 64);
    const auto g = ft::random_raster(rng, w, h, double(rng() % 4) / 10.0);
    const auto m = rle_encode(g);
    const auto back = rle_decode(parse_rle(format_rle(m)));
    exact += back.width == w && back.height == h && back.bits == g.bits;
  }
  o.require(exact == 1000, std::to_string(exact) + "/1000 exact round trips");
  std::size_t rejected = 0;
  const std::vector<std::string> corrupt{"4 2 0 2 3 1 2",  "4 2 | 0 2 3 1", "4 2 | 0 2 3 1 3", "4 2 | 0 2 0 4 2",
                                         "4 2 | 0 2 -3 7", "4 x | 8",       "0 2 | 0",         "4 2 | 1 2 3",
                                         "",               "3 3 |",         "2 2 | 4 junk"};
  for (const auto& c : corrupt) {
    try {
      parse_rle(c);
    } catch (const MalformedMaskError& e) {
      rejected += std::string(e.what()).size() > 0;
    }
  }
  o.require(rejected == corrupt.size(), std::to_string(rejected) + "/" + std::to_string(corrupt.size()) +
                                            " corrupt streams rejected with a diagnostic");
  if (o.pass) o.detail = "1000/1000 exact, " + std::to_string(rejected) + " corrupt streams rejected";
  return o;
}

// --- 6 ---------------------------------------------------------------------
Outcome visual_reliance() {
  Outcome o;
  const auto suite = synthetic::make_suite(200, 6);
  const auto src = suite.source();
  synthetic::OracleModel oracle;
  synthetic::TextPriorModel prior;
  ResponseCache cache;
  auto cfg = [](PerturbMode m, std::uint64_t seed) {
    BenchmarkConfig c;
    c.perturbation.mode = m;
    c.perturbation.seed = seed;
    c.parallelism = 4;
    return c;
  };
  const auto f = run_benchmark(oracle, suite.samples, src, cfg(PerturbMode::fivl, 0), cache);
  const auto r = run_benchmark(oracle, suite.samples, src, cfg(PerturbMode::random_control, 17), cache);
  const auto p = run_benchmark(prior, suite.samples, src, cfg(PerturbMode::fivl, 0), cache);
  o.require(f.n_samples == 200 && f.vrs && std::abs(*f.vrs - 1.0) <= kVrsOracleTol, "oracle fivl VRS not 1");
  o.require(r.vrs && std::abs(*r.vrs) <= kVrsRandomBound, "oracle random-control |VRS| above bound");
  o.require(p.vrs && *p.vrs == 0.0, "text-prior VRS not exactly 0");
  if (o.pass)
    o.detail = "oracle fivl " + fmt(*f.vrs) + ", random " + fmt(*r.vrs) + ", text-prior " + fmt(*p.vrs);
  return o;
}

// --- 7 ---------------------------------------------------------------------
double reference_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<long double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::size_t less = 0, equal = 0;
      for (double w : v) less += w < v[i], equal += w == v[i];
      r[i] = 1.0L + less + (equal - 1) / 2.0L;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const long double n = rx.size();
  long double mx = 0, my = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) mx += rx[i] / n, my += ry[i] / n;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return double(sxy / std::sqrt(sxx * syy));
}

Outcome spearman_check() {
  Outcome o;
  std::mt19937 rng(7);
  double worst = 0, worst_mono = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 3 + rng() % 60;
    const auto levels = 2 + rng() % 9;
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = double(rng() % levels);
    for (auto& v : y) v = double(rng() % (levels + 3)) * 0.5;
    x[0] = -1;  // never constant
    y[1] = 100;
    const double r = spearman(x, y);
    worst = std::max(worst, std::abs(r - reference_spearman(x, y)));
    std::vector<double> fx(n);
    for (std::size_t i = 0; i < n; ++i) fx[i] = std::exp(0.3 * x[i]) * 5 - 2;
    worst_mono = std::max(worst_mono, std::abs(spearman(fx, y) - r));
  }
  o.require(worst <= kSpearmanTol, "reference difference " + fmt(worst));
  o.require(worst_mono <= kSpearmanTol, "monotone transform changed rho by " + fmt(worst_mono));
  if (o.pass) o.detail = "max diff " + fmt(worst) + ", monotone drift " + fmt(worst_mono);
  return o;
}

// --- 8 ---------------------------------------------------------------------
Outcome head_recovery() {
  Outcome o;
  int hits = 0;
  for (std::uint32_t seed = 0; seed < 100; ++seed) {
    std::mt19937 rng(seed);
    const int layers = 4, heads = 6;
    const int pl = int(rng() % layers), ph = int(rng() % heads);
    std::vector<AlignmentSample> samples;
    for (int i = 0; i < 5; ++i) samples.push_back(ft::planted_alignment_sample(rng, layers, heads, 4, 3, pl, ph));
    const auto top = top_heads(head_alignment_summary(samples).spearman, 1);
    hits += top.size() == 1 && top[0].layer == pl && top[0].head == ph;
  }
  o.require(hits == 100, std::to_string(hits) + "/100 planted heads recovered");
  if (o.pass) o.detail = "100/100 planted heads recovered";
  return o;
}

// --- 9 ---------------------------------------------------------------------
Outcome argmax_segmentation_check() {
  Outcome o;
  std::mt19937 rng(9);
  for (int t = 0; t < 200; ++t) {
    const auto p = ft::planted_segmentation(rng, 2 + int(rng() % 7), 32, 3);
    const auto groups = argmax_segmentation(p.logits);
    const auto rep = segmentation_iou_report(groups, p.references, p.rows, p.cols);
    o.require(maxv_token_stats(groups) == p.references.size(), "distinct token count differs from construction");
    for (const auto& [tok, v] : rep.per_token) o.require(v == 1.0, "token " + std::to_string(tok) + " IoU " + fmt(v));
    o.require(rep.processed_fraction == 1.0, "not all reference tokens matched");
  }
  if (o.pass) o.detail = "200 constructions, every token IoU 1.0";
  return o;
}

// --- 10 --------------------------------------------------------------------
std::string read_asset(const std::string& name) {
  std::ifstream in(std::string(FIVL_ASSET_DIR) + "/prompts/v1/" + name, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (auto at = s.find(from); at != std::string::npos; at = s.find(from, at + to.size())) s.replace(at, from.size(), to);
  return s;
}

Outcome parsers() {
  Outcome o;
  o.require(parse_key_expressions("baby giraffe:::mother giraffe :::open area of their enclosure") ==
                std::vector<std::string>{"baby giraffe", "mother giraffe", "open area of their enclosure"},
            "worked example");
  o.require(parse_key_expressions("N/A").empty(), "N/A not empty");
  const std::string q = "What are the animals doing?", a = "Two giraffes eat leaves.";
  o.require(render_extraction_prompt(PromptVariant::training, q, a) ==
                replace_all(replace_all(read_asset("extraction_training.txt"), "{question}", q), "{answer}", a),
            "training render differs from template");
  for (auto [variant, examples] : {std::pair{PromptVariant::vqa_eval, "examples_vqav2.txt"},
                                   std::pair{PromptVariant::gqa_pope_eval, "examples_gqa_pope.txt"}}) {
    std::string ex = read_asset(examples);
    if (!ex.empty() && ex.back() == '\n') ex.pop_back();
    const auto expected = replace_all(
        replace_all(replace_all(read_asset("extraction_eval.txt"), "<EXAMPLES>", ex), "{question}", "Q"), "{answer}",
        "A");
    o.require(render_extraction_prompt(variant, "Q", "A") == expected, std::string("eval render differs: ") + examples);
  }
  o.require(render_judge_prompt(JudgeKind::seg1, "dog") == replace_all(read_asset("judge_seg1.txt"), "{word}", "dog"),
            "seg1 render");
  o.require(render_judge_prompt(JudgeKind::seg2, "dog") == replace_all(read_asset("judge_seg2.txt"), "{word}", "dog"),
            "seg2 render");
  o.require(render_judge_prompt(JudgeKind::keyword, "dog", "Why?") ==
                replace_all(replace_all(read_asset("judge_keyword.txt"), "{word}", "dog"), "{question}", "Why?"),
            "keyword render");
  if (o.pass) o.detail = "worked example, N/A, 6 template renders byte-identical";
  return o;
}

// --- 11 --------------------------------------------------------------------
AugmentConfig pipeline_config(int parallelism, const std::string& journal = "") {
  AugmentConfig c;
  c.parallelism = parallelism;
  c.extractor.retry = {2, std::chrono::milliseconds(0), 1.0};
  c.grounding_retry = c.extractor.retry;
  c.journal_path = journal;
  return c;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  return std::size_t(std::count(std::istreambuf_iterator<char>(in), {}, '\n'));
}

Outcome pipeline_determinism() {
  Outcome o;
  const auto dir = fs::temp_directory_path() / ("fivl_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto corpus = ft::stub_corpus(20);
  ft::StubGrounder grounder;
  std::vector<std::string> outputs;
  for (int p : {1, 4, 16}) {
    FunctionChatClient ex(ft::stub_extract);
    const auto path = dir / ("out_" + std::to_string(p) + ".jsonl");
    write_dataset(augment_dataset(corpus, ex, grounder, pipeline_config(p)).samples, path.string());
    outputs.push_back(file_bytes(path));
  }
  o.require(outputs[0] == outputs[1] && outputs[0] == outputs[2], "outputs differ across parallelism");

  // A child process runs with a slow extractor and is SIGKILLed mid-run; the
  // parent resumes from the journal.
  const auto journal = dir / "journal.jsonl";
  std::size_t journaled_at_kill = 0;
  for (int delay_ms : {30, 60, 120, 240}) {
    fs::remove(journal);
    const pid_t child = fork();
    if (child == 0) {
      FunctionChatClient slow([](const ChatRequest& r) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        return ft::stub_extract(r);
      });
      ft::StubGrounder g;
      augment_dataset(corpus, slow, g, pipeline_config(2, journal.string()));
      _exit(0);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
    kill(child, SIGKILL);
    int status = 0;
    waitpid(child, &status, 0);
    journaled_at_kill = fs::exists(journal) ? line_count(journal) : 0;
    if (WIFSIGNALED(status) && journaled_at_kill > 0 && journaled_at_kill < corpus.size()) break;
  }
  o.require(journaled_at_kill > 0 && journaled_at_kill < corpus.size(), "could not kill the run mid-way");
  FunctionChatClient ex(ft::stub_extract);
  const auto resumed = augment_dataset(corpus, ex, grounder, pipeline_config(4, journal.string()));
  const auto resumed_path = dir / "resumed.jsonl";
  write_dataset(resumed.samples, resumed_path.string());
  o.require(file_bytes(resumed_path) == outputs[0], "resumed output differs");
  if (o.pass)
    o.detail = "parallelism 1/4/16 identical; killed after " + std::to_string(journaled_at_kill) +
               "/20 samples, resumed " + std::to_string(resumed.resumed) + ", output identical";
  fs::remove_all(dir);
  return o;
}

// --- 12 --------------------------------------------------------------------
Outcome review_service() {
  Outcome o;
  const auto recs = ft::review_fixture();
  const auto s = review_stats(recs);
  o.require(s.pct_good_samples == ft::kFixtureGood && s.pct_expression_relevant == ft::kFixtureExpr &&
                s.pct_mask_relevant == ft::kFixtureMask && s.pct_expression_relevant_given_good == ft::kFixtureExprGivenGood &&
                s.pct_mask_relevant_given_good == ft::kFixtureMaskGivenGood,
            "stats differ from hand-computed values");
  for (double w : {0.05, 0.1, 0.15, 0.2, 0.25, 0.5, 1.0}) {
    const auto h = mask_size_histogram(recs, w);
    std::size_t n = 0, yes = 0;
    for (const auto& b : h.buckets) n += b.n, yes += b.n_mask_relevant;
    o.require(n == recs.size() && double(yes) / double(n) == *s.pct_mask_relevant,
              "histogram at width " + fmt(w) + " does not sum to the global rate");
  }
  std::size_t double_served = 0, served = 0;
  for (int annotators : {1, 2, 5, 10}) {
    ReviewStore store(ft::review_item_fixture(100), {"", kDefaultLeaseSeconds, std::uint64_t(annotators)});
    const auto r = ft::run_lease_harness(store, 10, annotators);
    double_served += r.double_served;
    served += r.served;
    o.require(r.served == 100u * std::size_t(annotators), "harness did not drain the queue");
  }
  o.require(double_served == 0, std::to_string(double_served) + " double-served leases");
  if (o.pass) o.detail = "fixture stats exact, histograms consistent, " + std::to_string(served) + " leases, 0 double-served";
  return o;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"loss formula endpoints, linearity, hand case", 1, loss_formula},
      {"gradient check on 50 toy models", 60, gradient_check},
      {"vision label builder vs per-patch enumeration", 30, label_builder},
      {"mask dedup vs brute force", 60, dedup},
      {"RLE round trip and corrupt-stream rejection", 60, rle},
      {"visual reliance score on synthetic suite", 60, visual_reliance},
      {"Spearman vs rank-then-Pearson reference", 60, spearman_check},
      {"planted attention head recovery", 60, head_recovery},
      {"argmax segmentation IoU on constructed logits", 60, argmax_segmentation_check},
      {"expression parser and prompt templates", 60, parsers},
      {"pipeline determinism and resume after kill", 120, pipeline_determinism},
      {"review stats, histogram, lease protocol", 60, review_service},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.pass && secs >= c.budget_s) {
      o.pass = false;
      o.detail = "over time budget of " + fmt(c.budget_s) + " s";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << std::setw(2) << i + 1 << "] " << c.name << ": " << o.detail
              << " (" << std::fixed << std::setprecision(3) << secs << " s)" << std::defaultfloat << std::endl;
  }
  std::cout << criteria.size() - std::size_t(failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
