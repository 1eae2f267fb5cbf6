#pragma once

// Vision Modeling objective: per-patch vocabulary labels built from
// groundings, and the mixed loss
//     L = lambda * CE_vision + (1 - lambda) * CE_text
// over a sequence laid out as [image tokens..., text tokens...]. A small
// per-position MLP stands in for the model head so the analytic gradient can
// be checked against finite differences.

#include "fivl/eigen.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fivl/error.hpp"
#include "fivl/keyexpr.hpp"
#include "fivl/mask.hpp"
#include "fivl/pipeline.hpp"

namespace fivl {

inline constexpr int kIgnoreLabel = -1;
inline constexpr double kDefaultLambda = 0.1;
inline constexpr double kDefaultLearningRate = 2e-5;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Labels

struct VisionLabels {
  int rows = 0;
  int cols = 0;
  std::vector<int> labels;  // row-major, kIgnoreLabel where no keyword applies

  std::size_t labeled() const {
    return static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [](int l) { return l != kIgnoreLabel; }));
  }
  bool operator==(const VisionLabels&) const = default;
};

// Keyword (head noun or whole phrase) -> tokenizer ids of that keyword.
using KeywordVocab = std::map<std::string, std::vector<int>, std::less<>>;

enum class TokenSelection { first, seeded_random };

struct LabelOptions {
  double coverage_threshold = kDefaultCoverageThreshold;
  TokenSelection selection = TokenSelection::first;
  std::uint64_t seed = 0;
  int vocabulary_size = 0;  // > 0 enables the label < vocabulary_size check
  const WordTagger* tagger = nullptr;
};

// Last noun-tagged word of a phrase; empty when the phrase has no noun.
inline std::string head_noun(std::string_view phrase, const WordTagger& tagger = default_tagger()) {
  std::string head;
  for (const auto& w : split_words(phrase))
    if (is_noun(tagger.tag(w))) head = w;
  return head;
}

struct LabelCandidate {
  std::string phrase;
  int token = kIgnoreLabel;
  std::size_t pixel_area = 0;
  PatchGrid patches;
  std::size_t order = 0;  // position in the sample's grounding list
};

// Groundings usable as vision labels: masked, verbatim in their turn's answer,
// and containing a noun.
inline std::vector<LabelCandidate> label_candidates(const AugmentedSample& sample, const KeywordVocab& vocab,
                                                    int rows, int cols, const LabelOptions& opt = {}) {
  const WordTagger& tagger = opt.tagger ? *opt.tagger : default_tagger();
  std::vector<LabelCandidate> out;
  for (std::size_t i = 0; i < sample.groundings.size(); ++i) {
    const auto& g = sample.groundings[i];
    if (!g.has_mask()) continue;
    const auto turn = static_cast<std::size_t>(g.expression.turn_index);
    if (turn >= sample.conversation.turns.size()) continue;
    if (sample.conversation.turns[turn].answer.find(g.expression.text) == std::string::npos) continue;
    const std::string noun = head_noun(g.expression.text, tagger);
    if (noun.empty()) continue;

    const std::vector<int>* ids = nullptr;
    for (const std::string& key : {noun, to_lower(noun), g.expression.text})
      if (auto it = vocab.find(key); it != vocab.end() && !it->second.empty()) {
        ids = &it->second;
        break;
      }
    if (!ids) throw LabelError("no vocabulary entry for keyword '" + noun + "' of phrase '" +
                               g.expression.text + "'");
    int token = ids->front();
    if (opt.selection == TokenSelection::seeded_random && ids->size() > 1) {
      std::mt19937_64 rng(opt.seed ^ detail::fnv1a(sample.conversation.id + "\x1f" + g.expression.text));
      token = (*ids)[std::uniform_int_distribution<std::size_t>(0, ids->size() - 1)(rng)];
    }
    if (token < 0 || (opt.vocabulary_size > 0 && token >= opt.vocabulary_size))
      throw LabelError("token id " + std::to_string(token) + " for '" + g.expression.text +
                       "' outside the vocabulary");
    out.push_back({g.expression.text, token, g.mask->area(),
                   mask_to_patch_grid(*g.mask, rows, cols, opt.coverage_threshold), i});
  }
  return out;
}

// Each patch takes the label of the smallest mask covering it (ties: smallest
// phrase, then earliest grounding). Uncovered patches are ignored.
inline VisionLabels build_vision_labels(const AugmentedSample& sample, const KeywordVocab& vocab, int rows,
                                        int cols, const LabelOptions& opt = {}) {
  if (rows <= 0 || cols <= 0) throw DimensionError("label grid must be positive");
  auto cands = label_candidates(sample, vocab, rows, cols, opt);
  std::sort(cands.begin(), cands.end(), [](const LabelCandidate& a, const LabelCandidate& b) {
    return std::tie(a.pixel_area, a.phrase, a.order) < std::tie(b.pixel_area, b.phrase, b.order);
  });
  VisionLabels out{rows, cols, std::vector<int>(static_cast<std::size_t>(rows) * cols, kIgnoreLabel)};
  for (const auto& c : cands)
    for (std::size_t p = 0; p < out.labels.size(); ++p)
      if (c.patches.flags[p] && out.labels[p] == kIgnoreLabel) out.labels[p] = c.token;
  return out;
}

// Label file: one line per sample, "sample_id rows cols l0 l1 ...", -1 = ignore.
inline std::string format_label_line(const std::string& sample_id, const VisionLabels& l) {
  std::string s = sample_id + " " + std::to_string(l.rows) + " " + std::to_string(l.cols);
  for (int v : l.labels) s += " " + std::to_string(v);
  return s;
}

inline std::pair<std::string, VisionLabels> parse_label_line(const std::string& line, std::size_t lineno = 1) {
  std::istringstream in(line);
  std::string id;
  VisionLabels l;
  if (!(in >> id >> l.rows >> l.cols) || l.rows <= 0 || l.cols <= 0)
    throw FormatError(lineno, "expected 'sample_id rows cols labels...'");
  for (int v; in >> v;) {
    if (v < kIgnoreLabel) throw FormatError(lineno, "label below -1");
    l.labels.push_back(v);
  }
  if (!in.eof()) throw FormatError(lineno, "non-integer label");
  if (l.labels.size() != static_cast<std::size_t>(l.rows) * l.cols)
    throw FormatError(lineno, "expected " + std::to_string(l.rows * l.cols) + " labels, got " +
                                  std::to_string(l.labels.size()));
  return {id, l};
}

// ---------------------------------------------------------------------------
// Losses

struct LossBreakdown {
  double ce_vm = 0.0;
  double ce_lm = 0.0;
  double lambda = kDefaultLambda;
  double combined = 0.0;
};

namespace detail {

// Mean cross-entropy over labeled rows of `logits`. If `grad` is given, adds
// scale * d(loss)/d(logits) into it.
inline double mean_cross_entropy(const Eigen::Ref<const Matrix>& logits, const std::vector<int>& labels,
                                 Eigen::Ref<Matrix>* grad = nullptr, double scale = 1.0) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw DimensionError("logit rows (" + std::to_string(logits.rows()) + ") != labels (" +
                         std::to_string(labels.size()) + ")");
  const auto vocab = logits.cols();
  std::size_t n = 0;
  for (int l : labels) {
    if (l == kIgnoreLabel) continue;
    if (l < 0 || l >= vocab) throw DimensionError("label " + std::to_string(l) + " outside vocabulary");
    ++n;
  }
  if (n == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int l = labels[static_cast<std::size_t>(r)];
    if (l == kIgnoreLabel) continue;
    const double m = logits.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(r).array() - m).exp();
    const double z = e.sum();
    total += std::log(z) + m - logits(r, l);
    if (grad) {
      const double w = scale / static_cast<double>(n);
      grad->row(r) += w * (e / z);
      (*grad)(r, l) -= w;
    }
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

inline double lm_loss(const Matrix& text_logits, const std::vector<int>& text_labels) {
  return detail::mean_cross_entropy(text_logits, text_labels);
}

inline double vm_loss(const Matrix& vision_logits, const std::vector<int>& vision_labels) {
  return detail::mean_cross_entropy(vision_logits, vision_labels);
}

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must be in [0, 1]");
}

inline LossBreakdown combine(double ce_vm, double ce_lm, double lambda) {
  check_lambda(lambda);
  return {ce_vm, ce_lm, lambda, lambda * ce_vm + (1.0 - lambda) * ce_lm};
}

// `logits` covers the whole sequence: the first n_image rows are image
// positions, the rest text positions. Text labels are already aligned with
// their positions.
inline LossBreakdown combined_loss(const Matrix& logits, std::size_t n_image, const std::vector<int>& text_labels,
                                   const std::vector<int>& vision_labels, double lambda) {
  check_lambda(lambda);
  if (vision_labels.size() != n_image || static_cast<std::size_t>(logits.rows()) != n_image + text_labels.size())
    throw DimensionError("sequence layout does not match label counts");
  const auto ni = static_cast<Eigen::Index>(n_image);
  const double vm = detail::mean_cross_entropy(logits.topRows(ni), vision_labels);
  const double lm = detail::mean_cross_entropy(logits.bottomRows(logits.rows() - ni), text_labels);
  return combine(vm, lm, lambda);
}

// ---------------------------------------------------------------------------
// Toy model

struct ToyBatch {
  int n_image = 0;
  int n_text = 0;
  int vocabulary_size = 0;
  std::vector<int> text_token_ids;
  Matrix features;  // (n_image + n_text) x d; image rows first
  std::vector<int> text_labels;
  std::vector<int> vision_labels;

  int length() const { return n_image + n_text; }
};

struct ToyModelParams {
  Matrix w1;  // d x h
  Vector b1;  // h
  Matrix w2;  // h x V
  Vector b2;  // V

  std::size_t size() const {
    return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
  }

  // Uniform access to all parameters in a fixed order (w1, b1, w2, b2).
  double& at(std::size_t i) {
    auto idx = static_cast<Eigen::Index>(i);
    if (idx < w1.size()) return w1.data()[idx];
    idx -= w1.size();
    if (idx < b1.size()) return b1.data()[idx];
    idx -= b1.size();
    if (idx < w2.size()) return w2.data()[idx];
    idx -= w2.size();
    return b2.data()[idx];
  }
  double at(std::size_t i) const { return const_cast<ToyModelParams*>(this)->at(i); }
};

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline void check_shapes(const ToyModelParams& p, const ToyBatch& b) {
  if (b.features.rows() != b.length()) throw DimensionError("feature rows != n_image + n_text");
  if (b.features.cols() != p.w1.rows()) throw DimensionError("feature dim != w1 rows");
  if (p.b1.size() != p.w1.cols() || p.w2.rows() != p.w1.cols()) throw DimensionError("hidden dims disagree");
  if (p.b2.size() != p.w2.cols()) throw DimensionError("b2 size != vocabulary");
  if (b.vocabulary_size != 0 && p.w2.cols() != b.vocabulary_size)
    throw DimensionError("model vocabulary != batch vocabulary");
}

struct ToyActivations {
  Matrix pre;     // N x h
  Matrix hidden;  // N x h
  Matrix logits;  // N x V
};

inline ToyActivations toy_forward_full(const ToyModelParams& p, const ToyBatch& b) {
  check_shapes(p, b);
  ToyActivations a;
  a.pre = (b.features * p.w1).rowwise() + p.b1.transpose();
  a.hidden = a.pre.unaryExpr([](double x) { return gelu(x); });
  a.logits = (a.hidden * p.w2).rowwise() + p.b2.transpose();
  return a;
}

// logits[p] = gelu(feature[p] * W1 + b1) * W2 + b2, independently per position.
inline Matrix toy_forward(const ToyModelParams& p, const ToyBatch& b) { return toy_forward_full(p, b).logits; }

inline LossBreakdown toy_loss(const ToyModelParams& p, const ToyBatch& b, double lambda) {
  return combined_loss(toy_forward(p, b), static_cast<std::size_t>(b.n_image), b.text_labels, b.vision_labels,
                       lambda);
}

struct ToyGradients {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

// Analytic gradient of the combined loss by backpropagation.
inline std::pair<LossBreakdown, ToyGradients> toy_loss_and_gradient(const ToyModelParams& p, const ToyBatch& b,
                                                                    double lambda) {
  check_lambda(lambda);
  const ToyActivations a = toy_forward_full(p, b);
  Matrix dlogits = Matrix::Zero(a.logits.rows(), a.logits.cols());
  const auto ni = static_cast<Eigen::Index>(b.n_image);
  Eigen::Ref<Matrix> dv = dlogits.topRows(ni);
  Eigen::Ref<Matrix> dt = dlogits.bottomRows(dlogits.rows() - ni);
  const double vm = detail::mean_cross_entropy(a.logits.topRows(ni), b.vision_labels, &dv, lambda);
  const double lm = detail::mean_cross_entropy(a.logits.bottomRows(a.logits.rows() - ni), b.text_labels, &dt,
                                               1.0 - lambda);
  ToyGradients g;
  g.w2 = a.hidden.transpose() * dlogits;
  g.b2 = dlogits.colwise().sum().transpose();
  const Matrix dpre = (dlogits * p.w2.transpose()).cwiseProduct(a.pre.unaryExpr([](double x) { return gelu_grad(x); }));
  g.w1 = b.features.transpose() * dpre;
  g.b1 = dpre.colwise().sum().transpose();
  return {combine(vm, lm, lambda), std::move(g)};
}

inline double gradient_at(const ToyGradients& g, std::size_t i) {
  ToyModelParams view{g.w1, g.b1, g.w2, g.b2};
  return view.at(i);
}

inline constexpr double kDefaultGradCheckEpsilon = 1e-5;

// Max over parameters of |g_a - g_n| / max(1e-12, |g_a| + |g_n|), with g_n
// from central differences.
inline double grad_check(ToyModelParams params, const ToyBatch& batch, double lambda,
                         double epsilon = kDefaultGradCheckEpsilon) {
  const auto [loss, analytic] = toy_loss_and_gradient(params, batch, lambda);
  if (!std::isfinite(loss.combined)) throw UndefinedValueError("non-finite loss");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& w = params.at(i);
    const double saved = w;
    w = saved + epsilon;
    const double up = toy_loss(params, batch, lambda).combined;
    w = saved - epsilon;
    const double down = toy_loss(params, batch, lambda).combined;
    w = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw UndefinedValueError("non-finite loss");
    const double numeric = (up - down) / (2.0 * epsilon);
    const double ga = gradient_at(analytic, i);
    worst = std::max(worst, std::abs(ga - numeric) / std::max(1e-12, std::abs(ga) + std::abs(numeric)));
  }
  return worst;
}

inline void sgd_step(ToyModelParams& p, const ToyGradients& g, double learning_rate) {
  p.w1 -= learning_rate * g.w1;
  p.b1 -= learning_rate * g.b1;
  p.w2 -= learning_rate * g.w2;
  p.b2 -= learning_rate * g.b2;
}

struct ToyDims {
  int feature_dim = 4;
  int hidden = 8;
  int vocabulary_size = 16;
  int n_image = 4;
  int n_text = 4;
  double ignore_fraction = 0.25;
};

// Seeded random model and batch with mixed labeled / ignored positions.
inline std::pair<ToyModelParams, ToyBatch> random_toy_problem(std::uint64_t seed, const ToyDims& dims = {}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> token(0, dims.vocabulary_size - 1);
  std::bernoulli_distribution ignore(dims.ignore_fraction);
  auto fill = [&](auto& m, double scale) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
  };
  ToyModelParams p{Matrix(dims.feature_dim, dims.hidden), Vector(dims.hidden), Matrix(dims.hidden, dims.vocabulary_size),
                   Vector(dims.vocabulary_size)};
  fill(p.w1, 1.0 / std::sqrt(double(dims.feature_dim)));
  fill(p.b1, 0.1);
  fill(p.w2, 1.0 / std::sqrt(double(dims.hidden)));
  fill(p.b2, 0.1);

  ToyBatch b;
  b.n_image = dims.n_image;
  b.n_text = dims.n_text;
  b.vocabulary_size = dims.vocabulary_size;
  b.features = Matrix(b.length(), dims.feature_dim);
  fill(b.features, 1.0);
  for (int t = 0; t < dims.n_text; ++t) b.text_token_ids.push_back(token(rng));
  for (int i = 0; i < dims.n_image; ++i) b.vision_labels.push_back(ignore(rng) ? kIgnoreLabel : token(rng));
  for (int t = 0; t < dims.n_text; ++t) b.text_labels.push_back(ignore(rng) ? kIgnoreLabel : token(rng));
  return {std::move(p), std::move(b)};
}

}  // namespace fivl
