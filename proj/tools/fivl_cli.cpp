// fivl command-line front end.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <httplib.h>

#include <cmath>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include "fivl/fivl.hpp"

namespace fs = std::filesystem;
using namespace fivl;

namespace {

// Settings shared by every subcommand: config file values, overridden by
// flags given on the command line.
struct Context {
  std::string config_path;
  Config cfg = Config::defaults();

  void load() {
    if (!config_path.empty()) cfg = Config::load(config_path);
  }
  RetryPolicy retry() const {
    return {cfg.integer("retries"), std::chrono::milliseconds(cfg.integer("retry_backoff_ms")), 2.0};
  }
  HttpJsonTransport transport(const std::string& url) const {
    return HttpJsonTransport(Endpoint::parse(url), cfg.str("credential_env"));
  }
};

template <typename T>
void override_key(Context& ctx, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>) ctx.cfg.set(key, *v);
  else ctx.cfg.set(key, std::to_string(*v));
}

std::string require(const Context& ctx, const std::string& key, const std::string& flag) {
  auto v = ctx.cfg.str(key);
  if (v.empty()) throw InvalidArgument("no " + key + " configured (set it in the config file or pass " + flag + ")");
  return v;
}

std::ofstream open_out(const std::string& path) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!trim(line).empty()) lines.push_back(line);
  return lines;
}

// Offline extractor: the nouns of the answer, in order of appearance.
std::string lexicon_extract(const ChatRequest& r) {
  const std::string& p = r.messages.at(0).content;
  const auto at = p.rfind("\nA: ");
  if (at == std::string::npos) return "N/A";
  const auto end = p.find('\n', at + 4);
  const std::string answer = p.substr(at + 4, end == std::string::npos ? std::string::npos : end - at - 4);
  std::vector<std::string> nouns;
  for (const auto& w : split_words(answer)) {
    std::string t(trim_piece(w));
    while (!t.empty() && std::ispunct(static_cast<unsigned char>(t.back()))) t.pop_back();
    while (!t.empty() && std::ispunct(static_cast<unsigned char>(t.front()))) t.erase(0, 1);
    if (!t.empty() && default_tagger().tag(t) == WordType::noun &&
        std::find(nouns.begin(), nouns.end(), t) == nouns.end())
      nouns.push_back(t);
  }
  return nouns.empty() ? "N/A" : join_expressions(nouns);
}

// Endpoint strings: an http(s) URL, or "stub:lexicon" for offline runs.
std::unique_ptr<ChatClient> make_extractor(const Context& ctx, const std::string& endpoint) {
  if (endpoint == "stub:lexicon") return std::make_unique<FunctionChatClient>(lexicon_extract);
  return std::make_unique<HttpChatClient>(ctx.transport(endpoint));
}

// "file:<fixtures.json>", "offline", or an http(s) URL.
std::unique_ptr<GroundingClient> make_grounder(const Context& ctx, const std::string& endpoint, bool inline_images) {
  if (endpoint.starts_with("file:"))
    return std::make_unique<FileStubGroundingClient>(FileStubGroundingClient::from_file(endpoint.substr(5)));
  if (endpoint == "offline") return std::make_unique<OfflineGroundingClient>();
  return std::make_unique<HttpGroundingClient>(ctx.transport(endpoint), inline_images);
}

std::unique_ptr<VqaModelClient> make_model(const Context& ctx, const std::string& endpoint, const std::string& name) {
  if (endpoint == "stub:oracle") return std::make_unique<synthetic::OracleModel>();
  if (endpoint == "stub:text-prior") return std::make_unique<synthetic::TextPriorModel>();
  return std::make_unique<HttpVqaClient>(ctx.transport(endpoint), name);
}

// Deterministic offline judge: calls everything important and well segmented.
std::string affirmative_judge(const ChatRequest&) { return "Yes. Important, 8/10."; }

std::unique_ptr<ChatClient> make_judge(const Context& ctx, const std::string& endpoint) {
  if (endpoint == "stub:affirmative") return std::make_unique<FunctionChatClient>(affirmative_judge);
  return std::make_unique<HttpChatClient>(ctx.transport(endpoint));
}

std::function<Image(const std::string&)> image_loader(std::string root) {
  return [root = std::move(root)](const std::string& ref) {
    return load_image(root.empty() ? ref : (fs::path(root) / ref).string());
  };
}

// ---------------------------------------------------------------------------
// augment / stats / filter-eval

struct AugmentArgs {
  std::string input, output, mode = "train", eval_variant = "gqa_pope", journal;
  std::optional<int> parallelism;
  std::optional<std::string> extractor, grounding, image_root;
  bool strict = false, inline_images = false;
};

int run_augment(Context& ctx, const AugmentArgs& a) {
  override_key(ctx, "parallelism", a.parallelism);
  override_key(ctx, "extractor_endpoint", a.extractor);
  override_key(ctx, "grounding_endpoint", a.grounding);
  override_key(ctx, "image_root", a.image_root);

  auto ingest = ingest_dataset(a.input, a.strict);
  for (const auto& d : ingest.rejected)
    std::cerr << "skipped record " << d.record_id << " (" << d.field << "): " << d.message << '\n';

  AugmentConfig cfg;
  if (a.mode == "train") cfg.mode = AugmentMode::train;
  else if (a.mode == "eval") cfg.mode = AugmentMode::eval;
  else throw InvalidArgument("--mode must be train or eval");
  cfg.eval_variant = parse_prompt_variant(a.eval_variant);
  cfg.parallelism = ctx.cfg.integer("parallelism");
  cfg.box_threshold = ctx.cfg.num("box_threshold");
  cfg.mask_threshold = ctx.cfg.num("mask_threshold");
  cfg.dedup_threshold = ctx.cfg.num("dedup_threshold");
  cfg.image_root = ctx.cfg.str("image_root");
  cfg.journal_path = a.journal;
  cfg.extractor.model = ctx.cfg.str("extractor_model");
  cfg.extractor.retry = ctx.retry();
  cfg.grounding_retry = ctx.retry();

  auto extractor = make_extractor(ctx, require(ctx, "extractor_endpoint", "--extractor-endpoint"));
  auto grounder = make_grounder(ctx, require(ctx, "grounding_endpoint", "--grounding-endpoint"), a.inline_images);
  auto res = augment_dataset(ingest.conversations, *extractor, *grounder, cfg);
  write_dataset(res.samples, a.output);
  json summary = stats_to_json(res.stats);
  summary["resumed"] = res.resumed;
  summary["rejected_records"] = ingest.rejected.size();
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int run_stats(const std::string& input) {
  std::cout << stats_to_json(compute_dataset_stats(read_dataset(input))).dump(2) << '\n';
  return 0;
}

int run_filter_eval(const std::string& input, const std::string& output) {
  const auto samples = read_dataset(input);
  auto res = filter_eval_samples(samples);
  write_dataset(res.samples, output);
  std::cout << json{{"input", samples.size()}, {"retained", res.samples.size()},
                    {"retained_fraction", res.retained_fraction}}
                   .dump(2)
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// labels / vm

struct LabelArgs {
  std::string dataset, vocab, out, selection = "first";
  int rows = 24, cols = 24, vocabulary_size = 0;
  std::optional<double> threshold;
  std::uint64_t seed = 0;
};

int run_labels(Context& ctx, const LabelArgs& a) {
  override_key(ctx, "coverage_threshold", a.threshold);
  std::ifstream vin(a.vocab);
  if (!vin) throw NotFoundError("cannot open vocabulary '" + a.vocab + "'");
  const json entries = json::parse(vin);
  KeywordVocab vocab;
  for (const auto& [k, v] : entries.items()) vocab[k] = v.get<std::vector<int>>();

  LabelOptions opt;
  opt.coverage_threshold = ctx.cfg.num("coverage_threshold");
  if (a.selection == "first") opt.selection = TokenSelection::first;
  else if (a.selection == "random") opt.selection = TokenSelection::seeded_random;
  else throw InvalidArgument("--selection must be first or random");
  opt.seed = a.seed;
  opt.vocabulary_size = a.vocabulary_size;

  auto out = open_out(a.out);
  std::size_t labeled = 0, patches = 0;
  for (const auto& s : read_dataset(a.dataset)) {
    const auto l = build_vision_labels(s, vocab, a.rows, a.cols, opt);
    labeled += l.labeled();
    patches += l.labels.size();
    out << format_label_line(s.conversation.id, l) << '\n';
  }
  std::cout << json{{"labeled_patches", labeled}, {"patches", patches}}.dump(2) << '\n';
  return 0;
}

int run_grad_check(Context& ctx, std::optional<double> lambda, int trials, std::uint64_t seed, double tolerance) {
  override_key(ctx, "lambda", lambda);
  const double l = ctx.cfg.num("lambda");
  check_lambda(l);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto [params, batch] = random_toy_problem(seed + std::uint64_t(t));
    worst = std::max(worst, grad_check(params, batch, l));
  }
  const bool ok = worst <= tolerance;
  std::cout << json{{"trials", trials}, {"lambda", l}, {"max_relative_error", worst}, {"tolerance", tolerance},
                    {"pass", ok}}
                   .dump(2)
            << '\n';
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// vrs

struct VrsArgs {
  std::string dataset, out, cache, scoring = "exact", name = "model";
  std::vector<std::string> modes{"fivl"};
  std::optional<std::string> endpoint, image_root;
  std::optional<int> parallelism;
  std::uint64_t seed = 0;
  bool tight_mask = false;
};

int run_vrs(Context& ctx, const VrsArgs& a) {
  override_key(ctx, "model_endpoint", a.endpoint);
  override_key(ctx, "image_root", a.image_root);
  override_key(ctx, "parallelism", a.parallelism);
  const auto samples = read_dataset(a.dataset);
  auto model = make_model(ctx, require(ctx, "model_endpoint", "--model-endpoint"), a.name);
  ResponseCache cache = a.cache.empty() ? ResponseCache() : ResponseCache(a.cache);
  const auto images = images_from_disk(ctx.cfg.str("image_root"));

  std::optional<std::ofstream> out;
  if (!a.out.empty()) out = open_out(a.out);
  std::vector<VrsReport> reports;
  for (const auto& m : a.modes) {
    BenchmarkConfig cfg;
    cfg.perturbation.mode = parse_perturb_mode(m);
    cfg.perturbation.seed = a.seed;
    cfg.perturbation.tight_mask = a.tight_mask;
    cfg.scoring = parse_scoring_mode(a.scoring);
    cfg.parallelism = ctx.cfg.integer("parallelism");
    cfg.retry = ctx.retry();
    auto rep = run_benchmark(*model, samples, images, cfg, cache);
    if (out) write_report(rep, *out);
    reports.push_back(std::move(rep));
  }
  std::cout << format_summary_table(reports);
  return 0;
}

int run_vrs_synth(const std::string& dir, std::size_t n, std::uint64_t seed) {
  const auto suite = synthetic::make_suite(n, seed);
  fs::create_directories(dir);
  for (const auto& [ref, img] : suite.images) save_image((fs::path(dir) / ref).string(), img);
  write_dataset(suite.samples, (fs::path(dir) / "dataset.jsonl").string());
  std::cout << "wrote " << n << " samples to " << dir << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// heads / segment

int grid_side(int n_image) {
  const int side = int(std::lround(std::sqrt(double(n_image))));
  if (side * side != n_image) throw DimensionError("n_image " + std::to_string(n_image) + " is not square; give rows/cols");
  return side;
}

struct HeadsArgs {
  std::string dumps, masks, out, direction = "key_to_image", heatmaps;
  int top = 10, heatmap_size = 336;
  std::optional<double> threshold;
};

int run_heads(Context& ctx, const HeadsArgs& a) {
  override_key(ctx, "coverage_threshold", a.threshold);
  const auto dir = a.direction == "key_to_image"   ? AttentionDirection::key_to_image
                   : a.direction == "image_to_key" ? AttentionDirection::image_to_key
                                                   : throw InvalidArgument("--direction must be key_to_image or image_to_key");
  std::vector<AlignmentSample> samples;
  std::vector<std::string> names;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(a.masks)) {
    ++lineno;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(lineno, e.what());
    }
    const std::string dump = j.at("dump").get<std::string>();
    AlignmentSample s{attention_from_tensor(load_tensor((fs::path(a.dumps) / dump).string())), {}, {}};
    validate_attention(s.attention);
    const int side = j.contains("rows") ? 0 : grid_side(s.attention.n_image);
    const int rows = j.value("rows", side), cols = j.value("cols", side);
    if (j.contains("patches")) {
      s.mask = {rows, cols, j.at("patches").get<std::vector<std::uint8_t>>()};
      if (s.mask.flags.size() != std::size_t(rows) * cols) throw FormatError(lineno, "patches do not match the grid");
    } else {
      s.mask = mask_to_patch_grid(parse_rle(j.at("mask").get<std::string>()), rows, cols,
                                  ctx.cfg.num("coverage_threshold"));
    }
    s.key_positions = j.at("key_positions").get<std::vector<int>>();
    names.push_back(j.value("id", dump));
    samples.push_back(std::move(s));
  }
  const auto res = head_alignment_summary(samples, dir);
  json top = json::array();
  std::vector<HeadScore> best;
  try {
    best = top_heads(res.spearman, a.top);
  } catch (const InvalidArgument&) {
  }
  for (const auto& h : best) top.push_back({{"layer", h.layer}, {"head", h.head}, {"rho", h.rho}});
  const json report = {{"samples", samples.size()},
                       {"skipped_samples", res.skipped_samples},
                       {"direction", a.direction},
                       {"spearman", head_summary_to_json(res.spearman)},
                       {"raw_mean", head_summary_to_json(res.raw_mean)},
                       {"top_heads", top}};
  open_out(a.out) << report.dump(2) << '\n';

  if (!a.heatmaps.empty() && !best.empty()) {
    fs::create_directories(a.heatmaps);
    const auto& h = best.front();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      const auto col = key_attention_column(s.attention, h.layer, h.head, s.key_positions, dir);
      const auto name = "L" + std::to_string(h.layer) + "H" + std::to_string(h.head) + "_" +
                        fs::path(names[i]).stem().string() + ".png";
      save_image((fs::path(a.heatmaps) / name).string(),
                 heatmap_image(col, s.mask.rows, s.mask.cols, a.heatmap_size, a.heatmap_size));
    }
  }
  std::cout << "summarized " << samples.size() << " samples (" << res.skipped_samples
            << " with constant masks skipped)\n";
  for (const auto& h : best) std::cout << "  L" << h.layer << " H" << h.head << "  rho=" << h.rho << '\n';
  return 0;
}

struct SegmentArgs {
  std::string logits, refs, out, heatmaps;
  std::optional<double> threshold;
  std::optional<int> rows, cols;
  int heatmap_size = 336;
};

int run_segment(Context& ctx, const SegmentArgs& a) {
  override_key(ctx, "coverage_threshold", a.threshold);
  const Matrix logits = vision_logits_from_tensor(load_tensor(a.logits));
  const int n_image = int(logits.rows());
  const int rows = a.rows.value_or(a.cols ? n_image / *a.cols : grid_side(n_image));
  const int cols = a.cols.value_or(n_image / rows);
  if (rows * cols != n_image) throw DimensionError("rows*cols does not match the logits' image positions");

  std::map<int, RleMask> refs;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(a.refs)) {
    ++lineno;
    try {
      const json j = json::parse(line);
      refs[j.at("token").get<int>()] = parse_rle(j.at("mask").get<std::string>());
    } catch (const json::exception& e) {
      throw FormatError(lineno, e.what());
    }
  }
  const auto groups = argmax_segmentation(logits);
  const auto rep = segmentation_iou_report(groups, refs, rows, cols, ctx.cfg.num("coverage_threshold"));
  json per = json::object();
  for (const auto& [t, v] : rep.per_token) per[std::to_string(t)] = v;
  const json report = {{"tokens_predicted", maxv_token_stats(groups)},
                       {"per_token_iou", per},
                       {"mean_iou", rep.mean_iou},
                       {"unmatched_predicted", rep.unmatched_predicted},
                       {"unmatched_reference", rep.unmatched_reference},
                       {"processed_fraction", rep.processed_fraction}};
  if (!a.out.empty()) open_out(a.out) << report.dump(2) << '\n';
  if (!a.heatmaps.empty()) {
    fs::create_directories(a.heatmaps);
    for (const auto& [token, patches] : groups) {
      const auto grid = group_to_patch_grid(patches, rows, cols);
      std::vector<double> v(grid.flags.begin(), grid.flags.end());
      save_image((fs::path(a.heatmaps) / ("token_" + std::to_string(token) + ".png")).string(),
                 heatmap_image(v, rows, cols, a.heatmap_size, a.heatmap_size));
    }
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// judge

struct JudgeArgs {
  std::string dataset, out;
  std::optional<std::string> endpoint, model, image_root;
  std::optional<int> parallelism;
  std::size_t sample_n = 100;
  std::uint64_t seed = 0;
};

json judge_summary(const JudgeMetrics& m) {
  json j = metrics_to_json(m);
  j["reference"] = {{"importance_ratio", kJudgeReference.importance_ratio},
                    {"overall_importance_degree", kJudgeReference.overall_importance_degree},
                    {"important_keyword_degree", kJudgeReference.important_keyword_degree},
                    {"seg1_rate", kJudgeReference.seg1_rate},
                    {"seg2_rate", kJudgeReference.seg2_rate}};
  return j;
}

int run_judge_cmd(Context& ctx, JudgeKind kind, const JudgeArgs& a) {
  override_key(ctx, "judge_endpoint", a.endpoint);
  override_key(ctx, "judge_model", a.model);
  override_key(ctx, "image_root", a.image_root);
  override_key(ctx, "parallelism", a.parallelism);
  const auto items = sample_judge_items(read_dataset(a.dataset), kind, a.sample_n, a.seed);
  auto client = make_judge(ctx, require(ctx, "judge_endpoint", "--endpoint"));
  JudgeConfig cfg{ctx.cfg.str("judge_model"), ctx.cfg.integer("parallelism"), ctx.retry()};
  const auto records = run_judge(*client, kind, items, image_loader(ctx.cfg.str("image_root")), cfg);
  std::vector<JudgeVerdict> verdicts;
  std::size_t failed = 0;
  std::optional<std::ofstream> out;
  if (!a.out.empty()) out = open_out(a.out);
  for (const auto& r : records) {
    if (out) *out << judge_record_to_json(r).dump() << '\n';
    if (!r.error.empty()) ++failed;
    verdicts.push_back(r.verdict);
  }
  json summary = judge_summary(aggregate_judge_metrics(verdicts));
  summary["failed_requests"] = failed;
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int run_judge_aggregate(const std::vector<std::string>& paths) {
  std::vector<JudgeVerdict> verdicts;
  for (const auto& p : paths) {
    std::size_t lineno = 0;
    for (const auto& line : read_lines(p)) {
      ++lineno;
      try {
        verdicts.push_back(verdict_from_json(json::parse(line)));
      } catch (const json::exception& e) {
        throw FormatError(lineno, p + ": " + e.what());
      }
    }
  }
  std::cout << judge_summary(aggregate_judge_metrics(verdicts)).dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// serve

struct ServeArgs {
  std::string dataset, log = "judgments.jsonl", host = "127.0.0.1", static_dir;
  int port = 8080;
  std::optional<std::string> image_root;
  std::optional<std::int64_t> lease;
  std::uint64_t seed = 0;
};

httplib::Server* g_server = nullptr;

int run_serve(Context& ctx, const ServeArgs& a) {
  override_key(ctx, "image_root", a.image_root);
  override_key(ctx, "lease_timeout_s", a.lease);
  const auto lease = std::int64_t(ctx.cfg.num("lease_timeout_s"));
  ReviewStore store(review_items(read_dataset(a.dataset), a.seed), {a.log, lease, a.seed, system_clock_seconds});
  if (store.skipped_log_lines()) std::cerr << "dropped a torn final line from " << a.log << '\n';
  httplib::Server server;
  mount_review_api(server, store, image_loader(ctx.cfg.str("image_root")), a.static_dir, lease);
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cerr << "serving " << store.items().size() << " samples on http://" << a.host << ":" << a.port << '\n';
  if (!server.listen(a.host, a.port)) throw Error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fivl: grounded key-expression augmentation and vision-reliance analysis"};
  app.require_subcommand(1);
  Context ctx;
  app.add_option("--config", ctx.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  std::function<int()> action;

  AugmentArgs aug;
  auto* augment = app.add_subcommand("augment", "Extract key expressions and ground them into masks");
  augment->add_option("--input", aug.input, "Conversation dataset (JSON array)")->required()->check(CLI::ExistingFile);
  augment->add_option("--output", aug.output, "Augmented dataset (JSONL)")->required();
  augment->add_option("--mode", aug.mode, "train|eval")->check(CLI::IsMember({"train", "eval"}));
  augment->add_option("--eval-variant", aug.eval_variant, "Eval prompt examples: vqa|gqa_pope");
  augment->add_option("--parallelism", aug.parallelism, "Concurrent samples")->check(CLI::PositiveNumber);
  augment->add_option("--extractor-endpoint", aug.extractor, "URL, or stub:lexicon");
  augment->add_option("--grounding-endpoint", aug.grounding, "URL, file:<fixtures.json>, or offline");
  augment->add_option("--image-root", aug.image_root);
  augment->add_option("--journal", aug.journal, "Resume journal (JSONL)");
  augment->add_flag("--strict", aug.strict, "Fail on the first malformed record");
  augment->add_flag("--inline-images", aug.inline_images, "Send images base64-encoded to the grounder");
  augment->callback([&] { action = [&] { return run_augment(ctx, aug); }; });

  std::string stats_input;
  auto* stats = app.add_subcommand("stats", "Dataset statistics of an augmented dataset");
  stats->add_option("--input", stats_input)->required()->check(CLI::ExistingFile);
  stats->callback([&] { action = [&] { return run_stats(stats_input); }; });

  std::string fe_in, fe_out;
  auto* fe = app.add_subcommand("filter-eval", "Keep samples with at least one grounded expression");
  fe->add_option("--input", fe_in)->required()->check(CLI::ExistingFile);
  fe->add_option("--output", fe_out)->required();
  fe->callback([&] { action = [&] { return run_filter_eval(fe_in, fe_out); }; });

  LabelArgs lab;
  auto* labels = app.add_subcommand("labels", "Write per-patch vision labels");
  labels->add_option("--dataset", lab.dataset)->required()->check(CLI::ExistingFile);
  labels->add_option("--vocab", lab.vocab, "JSON object: keyword -> token ids")->required()->check(CLI::ExistingFile);
  labels->add_option("--out", lab.out)->required();
  labels->add_option("--rows", lab.rows)->check(CLI::PositiveNumber);
  labels->add_option("--cols", lab.cols)->check(CLI::PositiveNumber);
  labels->add_option("--threshold", lab.threshold, "Patch coverage threshold");
  labels->add_option("--selection", lab.selection, "first|random");
  labels->add_option("--seed", lab.seed);
  labels->add_option("--vocabulary-size", lab.vocabulary_size, "Reject token ids at or above this");
  labels->callback([&] { action = [&] { return run_labels(ctx, lab); }; });

  auto* vm = app.add_subcommand("vm", "Vision-modeling loss utilities");
  vm->require_subcommand(1);
  std::optional<double> gc_lambda;
  int gc_trials = 8;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  auto* gc = vm->add_subcommand("grad-check", "Finite-difference check of the combined loss gradient");
  gc->add_option("--lambda", gc_lambda);
  gc->add_option("--trials", gc_trials)->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed);
  gc->add_option("--tolerance", gc_tol);
  gc->callback([&] { action = [&] { return run_grad_check(ctx, gc_lambda, gc_trials, gc_seed, gc_tol); }; });

  auto* vrs = app.add_subcommand("vrs", "Visual reliance benchmark");
  vrs->require_subcommand(1);
  VrsArgs va;
  auto* vrun = vrs->add_subcommand("run", "Score a model on original and perturbed images");
  vrun->add_option("--dataset", va.dataset)->required()->check(CLI::ExistingFile);
  vrun->add_option("--model-endpoint", va.endpoint, "URL, stub:oracle, or stub:text-prior");
  vrun->add_option("--model-name", va.name);
  vrun->add_option("--mode", va.modes, "fivl|random|none (comma-separated for several)")->delimiter(',');
  vrun->add_option("--scoring", va.scoring, "exact|yes_no");
  vrun->add_option("--seed", va.seed);
  vrun->add_option("--image-root", va.image_root);
  vrun->add_option("--parallelism", va.parallelism)->check(CLI::PositiveNumber);
  vrun->add_option("--cache", va.cache, "Response cache (JSONL)");
  vrun->add_option("--out", va.out, "Report records (JSONL)");
  vrun->add_flag("--tight-mask", va.tight_mask, "Fill masks instead of boxes");
  vrun->callback([&] { action = [&] { return run_vrs(ctx, va); }; });
  std::string synth_dir;
  std::size_t synth_n = 60;
  std::uint64_t synth_seed = 0;
  auto* vsynth = vrs->add_subcommand("synth", "Write the synthetic colored-square suite");
  vsynth->add_option("--out", synth_dir)->required();
  vsynth->add_option("--n", synth_n);
  vsynth->add_option("--seed", synth_seed);
  vsynth->callback([&] { action = [&] { return run_vrs_synth(synth_dir, synth_n, synth_seed); }; });

  auto* heads = app.add_subcommand("heads", "Attention-head analysis");
  heads->require_subcommand(1);
  HeadsArgs ha;
  auto* hsum = heads->add_subcommand("summarize", "Spearman alignment of attention with masks per head");
  hsum->add_option("--dumps", ha.dumps, "Directory of attention tensors")->required()->check(CLI::ExistingDirectory);
  hsum->add_option("--masks", ha.masks, "Per-sample JSONL")->required()->check(CLI::ExistingFile);
  hsum->add_option("--out", ha.out)->required();
  hsum->add_option("--direction", ha.direction, "key_to_image|image_to_key");
  hsum->add_option("--top", ha.top)->check(CLI::PositiveNumber);
  hsum->add_option("--threshold", ha.threshold, "Patch coverage threshold for RLE masks");
  hsum->add_option("--heatmaps", ha.heatmaps, "Directory for top-head heatmaps");
  hsum->add_option("--heatmap-size", ha.heatmap_size)->check(CLI::PositiveNumber);
  hsum->callback([&] { action = [&] { return run_heads(ctx, ha); }; });

  SegmentArgs sa;
  auto* seg = app.add_subcommand("segment", "Argmax segmentation from vision logits");
  seg->add_option("--logits", sa.logits, "vision_logits tensor")->required()->check(CLI::ExistingFile);
  seg->add_option("--refs", sa.refs, "Reference masks (JSONL)")->required()->check(CLI::ExistingFile);
  seg->add_option("--threshold", sa.threshold, "Patch coverage threshold");
  seg->add_option("--rows", sa.rows)->check(CLI::PositiveNumber);
  seg->add_option("--cols", sa.cols)->check(CLI::PositiveNumber);
  seg->add_option("--out", sa.out);
  seg->add_option("--heatmaps", sa.heatmaps, "Directory for per-token maps");
  seg->add_option("--heatmap-size", sa.heatmap_size)->check(CLI::PositiveNumber);
  seg->callback([&] { action = [&] { return run_segment(ctx, sa); }; });

  auto* judge = app.add_subcommand("judge", "Judge-model evaluation of expressions and masks");
  judge->require_subcommand(1);
  JudgeArgs ja;
  for (const char* name : {"keywords", "seg1", "seg2"}) {
    auto* sub = judge->add_subcommand(name);
    sub->add_option("--dataset", ja.dataset)->required()->check(CLI::ExistingFile);
    sub->add_option("--endpoint", ja.endpoint, "URL, or stub:affirmative");
    sub->add_option("--model", ja.model);
    sub->add_option("--sample-n", ja.sample_n);
    sub->add_option("--seed", ja.seed);
    sub->add_option("--image-root", ja.image_root);
    sub->add_option("--parallelism", ja.parallelism)->check(CLI::PositiveNumber);
    sub->add_option("--out", ja.out, "Verdict records (JSONL)");
    sub->callback([&, name] { action = [&, name] { return run_judge_cmd(ctx, parse_judge_kind(name), ja); }; });
  }
  std::vector<std::string> agg_paths;
  auto* agg = judge->add_subcommand("aggregate", "Recompute metrics from verdict records");
  agg->add_option("--records", agg_paths)->required()->check(CLI::ExistingFile);
  agg->callback([&] { action = [&] { return run_judge_aggregate(agg_paths); }; });

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "Human review service");
  serve->add_option("--dataset", sv.dataset)->required()->check(CLI::ExistingFile);
  serve->add_option("--log", sv.log, "Judgment log (JSONL)");
  serve->add_option("--host", sv.host);
  serve->add_option("--port", sv.port);
  serve->add_option("--static", sv.static_dir, "Review UI build directory");
  serve->add_option("--image-root", sv.image_root);
  serve->add_option("--lease", sv.lease, "Lease timeout in seconds");
  serve->add_option("--seed", sv.seed);
  serve->callback([&] { action = [&] { return run_serve(ctx, sv); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    ctx.load();
    return action();
  } catch (const std::exception& e) {
    std::cerr << "fivl: " << e.what() << '\n';
    return 1;
  }
}
