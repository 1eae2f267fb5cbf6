#pragma once

// Interpretability tools over externally captured model outputs:
//   - argmax segmentation of per-patch vision logits, scored by patch IoU
//   - per-head vision/language alignment: Spearman correlation between a key
//     expression's patch mask and the attention its tokens pay to the image.
//
// Tensor container (attention and logit dumps): one ASCII header line
//   FIVLT 1 kind=<attention|vision_logits> dtype=f32le shape=d0,d1,... [key=value ...]\n
// followed by prod(shape) little-endian IEEE-754 float32 values, row-major.
// Attention: shape=L,H,N,N with n_image=.. n_text=.. (N = n_image + n_text,
// image positions first), indexed [layer][head][query][key].
// Vision logits: shape=N_i,V.

#include "fivl/eigen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fivl/error.hpp"
#include "fivl/image.hpp"
#include "fivl/keyexpr.hpp"
#include "fivl/mask.hpp"

namespace fivl {

// ---------------------------------------------------------------------------
// Tensor container

struct Tensor {
  std::string kind;
  std::vector<std::size_t> shape;
  std::map<std::string, std::string> attrs;
  std::vector<float> values;

  std::size_t expected_size() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
};

inline constexpr std::string_view kTensorMagic = "FIVLT";

namespace detail {

inline std::uint32_t load_le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace detail

inline void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.values.size() != t.expected_size()) throw DimensionError("tensor values do not match its shape");
  out << kTensorMagic << " 1 kind=" << t.kind << " dtype=f32le shape=";
  for (std::size_t i = 0; i < t.shape.size(); ++i) out << (i ? "," : "") << t.shape[i];
  for (const auto& [k, v] : t.attrs) out << ' ' << k << '=' << v;
  out << '\n';
  for (float f : t.values) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    const char b[4] = {char(u & 0xFF), char(u >> 8 & 0xFF), char(u >> 16 & 0xFF), char(u >> 24 & 0xFF)};
    out.write(b, 4);
  }
}

inline Tensor read_tensor(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError(1, "missing tensor header");
  std::istringstream hs(header);
  std::string magic, version;
  hs >> magic >> version;
  if (magic != kTensorMagic) throw FormatError(1, "not a tensor container");
  if (version != "1") throw FormatError(1, "unsupported tensor version " + version);
  Tensor t;
  for (std::string tok; hs >> tok;) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw FormatError(1, "bad header token '" + tok + "'");
    const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "kind") t.kind = val;
    else if (key == "dtype") {
      if (val != "f32le") throw FormatError(1, "unsupported dtype " + val);
    } else if (key == "shape") {
      std::istringstream ss(val);
      for (std::string d; std::getline(ss, d, ',');) {
        try {
          t.shape.push_back(std::stoul(d));
        } catch (const std::exception&) {
          throw FormatError(1, "bad shape '" + val + "'");
        }
      }
    } else {
      t.attrs[key] = val;
    }
  }
  if (t.shape.empty()) throw FormatError(1, "missing shape");
  const std::size_t n = t.expected_size();
  std::vector<unsigned char> raw(n * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw FormatError(1, "payload has " + std::to_string(in.gcount()) + " bytes, header declares " +
                             std::to_string(raw.size()));
  t.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.values[i] = std::bit_cast<float>(detail::load_le32(&raw[i * 4]));
  return t;
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open dump '" + path + "'");
  return read_tensor(in);
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  write_tensor(out, t);
}

// ---------------------------------------------------------------------------
// Vision logits and argmax segmentation

using Matrix = Eigen::MatrixXd;

inline Matrix vision_logits_from_tensor(const Tensor& t) {
  if (t.kind != "vision_logits" || t.shape.size() != 2) throw FormatError(1, "expected a vision_logits N_i,V dump");
  Matrix m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.values[std::size_t(r * m.cols() + c)];
  return m;
}

inline Tensor vision_logits_to_tensor(const Matrix& m) {
  Tensor t{"vision_logits", {std::size_t(m.rows()), std::size_t(m.cols())}, {}, {}};
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(static_cast<float>(m(r, c)));
  return t;
}

using TokenGroups = std::map<int, std::vector<int>>;  // token id -> patch indices (ascending)

// Each patch goes to its argmax token; ties go to the lowest token id.
inline TokenGroups argmax_segmentation(const Matrix& logits) {
  if (!logits.allFinite()) throw UndefinedValueError("vision logits contain non-finite values");
  TokenGroups groups;
  for (Eigen::Index p = 0; p < logits.rows(); ++p) {
    Eigen::Index best = 0;
    for (Eigen::Index v = 1; v < logits.cols(); ++v)
      if (logits(p, v) > logits(p, best)) best = v;
    if (logits.cols() > 0) groups[int(best)].push_back(int(p));
  }
  return groups;
}

inline std::size_t maxv_token_stats(const TokenGroups& groups) { return groups.size(); }

inline PatchGrid group_to_patch_grid(const std::vector<int>& patches, int rows, int cols) {
  PatchGrid g{rows, cols, std::vector<std::uint8_t>(std::size_t(rows) * cols, 0)};
  for (int p : patches) {
    if (p < 0 || std::size_t(p) >= g.flags.size()) throw DimensionError("patch index outside the grid");
    g.flags[std::size_t(p)] = 1;
  }
  return g;
}

struct IouReport {
  std::map<int, double> per_token;   // tokens both predicted and referenced
  double mean_iou = 0.0;             // over per_token; 0 when none matched
  std::vector<int> unmatched_predicted;
  std::vector<int> unmatched_reference;
  double processed_fraction = 0.0;   // matched / reference tokens
};

inline IouReport segmentation_iou_report(const TokenGroups& groups, const std::map<int, RleMask>& references,
                                         int rows, int cols, double coverage_threshold = kDefaultCoverageThreshold) {
  IouReport rep;
  for (const auto& [token, patches] : groups) {
    auto it = references.find(token);
    if (it == references.end()) {
      rep.unmatched_predicted.push_back(token);
      continue;
    }
    const auto ref = mask_to_patch_grid(it->second, rows, cols, coverage_threshold);
    rep.per_token[token] = iou(group_to_patch_grid(patches, rows, cols), ref);
  }
  for (const auto& [token, m] : references)
    if (!groups.contains(token)) rep.unmatched_reference.push_back(token);
  double sum = 0.0;
  for (const auto& [t, v] : rep.per_token) sum += v;
  if (!rep.per_token.empty()) rep.mean_iou = sum / double(rep.per_token.size());
  if (!references.empty()) rep.processed_fraction = double(rep.per_token.size()) / double(references.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Rank correlation

// Average ranks (1-based); tied values share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (double(i) + double(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedValueError("correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DimensionError("spearman inputs differ in length");
  if (x.size() < 2) throw InvalidArgument("spearman needs at least two values");
  for (const auto* v : {&x, &y})
    if (std::all_of(v->begin(), v->end(), [&](double a) { return a == v->front(); }))
      throw UndefinedValueError("correlation undefined for constant input");
  return pearson(average_ranks(x), average_ranks(y));
}

// ---------------------------------------------------------------------------
// Attention alignment

struct AttentionDump {
  int n_layers = 0;
  int n_heads = 0;
  int n_image = 0;
  int n_text = 0;
  std::vector<float> values;  // [layer][head][query][key]

  int length() const { return n_image + n_text; }
  float at(int layer, int head, int query, int key) const {
    const std::size_t n = std::size_t(length());
    return values[((std::size_t(layer) * n_heads + head) * n + std::size_t(query)) * n + std::size_t(key)];
  }
  float& at(int layer, int head, int query, int key) {
    const std::size_t n = std::size_t(length());
    return values[((std::size_t(layer) * n_heads + head) * n + std::size_t(query)) * n + std::size_t(key)];
  }
};

inline AttentionDump make_attention_dump(int layers, int heads, int n_image, int n_text) {
  const std::size_t n = std::size_t(n_image + n_text);
  return {layers, heads, n_image, n_text, std::vector<float>(std::size_t(layers) * heads * n * n, 0.0f)};
}

inline AttentionDump attention_from_tensor(const Tensor& t) {
  if (t.kind != "attention" || t.shape.size() != 4 || t.shape[2] != t.shape[3])
    throw FormatError(1, "expected an attention L,H,N,N dump");
  auto attr = [&](const std::string& k) {
    auto it = t.attrs.find(k);
    if (it == t.attrs.end()) throw FormatError(1, "attention dump lacks " + k);
    return std::stoi(it->second);
  };
  AttentionDump d{int(t.shape[0]), int(t.shape[1]), attr("n_image"), attr("n_text"), t.values};
  if (std::size_t(d.length()) != t.shape[2]) throw FormatError(1, "n_image + n_text does not match N");
  return d;
}

inline Tensor attention_to_tensor(const AttentionDump& d) {
  const auto n = std::size_t(d.length());
  return {"attention",
          {std::size_t(d.n_layers), std::size_t(d.n_heads), n, n},
          {{"layout", "layer,head,query,key"},
           {"n_image", std::to_string(d.n_image)},
           {"n_text", std::to_string(d.n_text)}},
          d.values};
}

// Rows of an attention matrix are softmax outputs.
inline void validate_attention(const AttentionDump& d, double tolerance = 1e-4) {
  const auto n = std::size_t(d.length());
  if (d.values.size() != std::size_t(d.n_layers) * d.n_heads * n * n) throw DimensionError("attention size mismatch");
  for (int l = 0; l < d.n_layers; ++l)
    for (int h = 0; h < d.n_heads; ++h)
      for (int q = 0; q < d.length(); ++q) {
        double s = 0;
        for (int k = 0; k < d.length(); ++k) s += d.at(l, h, q, k);
        if (std::abs(s - 1.0) > tolerance)
          throw DimensionError("attention row (" + std::to_string(l) + "," + std::to_string(h) + "," +
                               std::to_string(q) + ") sums to " + std::to_string(s));
      }
}

struct AlignmentSample {
  AttentionDump attention;
  PatchGrid mask;                  // rows * cols == n_image
  std::vector<int> key_positions;  // sequence positions of the expression's tokens
};

enum class AttentionDirection { key_to_image, image_to_key };

struct HeadSummary {
  int n_layers = 0;
  int n_heads = 0;
  std::vector<double> mean;          // per cell, NaN when absent
  std::vector<std::size_t> n_samples;
  std::vector<std::size_t> skipped;  // constant attention columns

  std::optional<double> at(int layer, int head) const {
    const auto i = std::size_t(layer * n_heads + head);
    if (n_samples[i] == 0) return std::nullopt;
    return mean[i];
  }
};

struct HeadAlignment {
  HeadSummary spearman;
  HeadSummary raw_mean;  // mean attention from key tokens to image positions inside the mask
  std::size_t skipped_samples = 0;  // constant masks contribute to no cell
};

namespace detail {

// Sum of a sorted copy, so the mean does not depend on sample order.
inline double order_free_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline HeadSummary finish_summary(int layers, int heads, const std::vector<std::vector<double>>& cells,
                                  const std::vector<std::size_t>& skipped) {
  HeadSummary s{layers, heads, {}, {}, skipped};
  for (const auto& c : cells) {
    s.n_samples.push_back(c.size());
    s.mean.push_back(c.empty() ? std::nan("") : order_free_mean(c));
  }
  return s;
}

}  // namespace detail

inline std::vector<double> key_attention_column(const AttentionDump& d, int layer, int head,
                                                const std::vector<int>& keys, AttentionDirection dir) {
  std::vector<double> col(std::size_t(d.n_image), 0.0);
  for (int j = 0; j < d.n_image; ++j) {
    double s = 0;
    for (int p : keys) s += dir == AttentionDirection::key_to_image ? d.at(layer, head, p, j) : d.at(layer, head, j, p);
    col[std::size_t(j)] = s / double(keys.size());
  }
  return col;
}

inline HeadAlignment head_alignment_summary(const std::vector<AlignmentSample>& samples,
                                            AttentionDirection dir = AttentionDirection::key_to_image) {
  if (samples.empty()) throw InvalidArgument("no samples to summarize");
  const int L = samples.front().attention.n_layers, H = samples.front().attention.n_heads;
  const std::size_t cells = std::size_t(L) * H;
  std::vector<std::vector<double>> rho(cells), raw(cells);
  std::vector<std::size_t> skipped(cells, 0), none(cells, 0);
  HeadAlignment out;
  for (const auto& s : samples) {
    const auto& d = s.attention;
    if (d.n_layers != L || d.n_heads != H) throw DimensionError("dumps disagree on layers/heads");
    if (std::size_t(d.n_image) != s.mask.flags.size()) throw DimensionError("mask grid does not match n_image");
    if (s.key_positions.empty()) throw InvalidArgument("sample has no key token positions");
    for (int p : s.key_positions)
      if (p < 0 || p >= d.length()) throw DimensionError("key token position " + std::to_string(p) + " out of range");
    std::vector<double> mask(s.mask.flags.begin(), s.mask.flags.end());
    const bool constant_mask = std::all_of(mask.begin(), mask.end(), [&](double v) { return v == mask.front(); });
    if (constant_mask) ++out.skipped_samples;
    for (int l = 0; l < L; ++l)
      for (int h = 0; h < H; ++h) {
        const auto c = std::size_t(l * H + h);
        const auto col = key_attention_column(d, l, h, s.key_positions, dir);
        double in_mask = 0;
        std::size_t n_in = 0;
        for (std::size_t j = 0; j < col.size(); ++j)
          if (mask[j] != 0.0) {
            in_mask += col[j];
            ++n_in;
          }
        if (n_in) raw[c].push_back(in_mask / double(n_in));
        if (constant_mask) continue;
        try {
          rho[c].push_back(spearman(col, mask));
        } catch (const UndefinedValueError&) {
          ++skipped[c];
        }
      }
  }
  out.spearman = detail::finish_summary(L, H, rho, skipped);
  out.raw_mean = detail::finish_summary(L, H, raw, none);
  return out;
}

struct HeadScore {
  int layer = 0;
  int head = 0;
  double rho = 0.0;
  bool operator==(const HeadScore&) const = default;
};

// Highest-mean cells first; ties by (layer, head).
inline std::vector<HeadScore> top_heads(const HeadSummary& s, int k) {
  if (k <= 0) throw InvalidArgument("k must be positive");
  std::vector<HeadScore> cells;
  for (int l = 0; l < s.n_layers; ++l)
    for (int h = 0; h < s.n_heads; ++h)
      if (auto v = s.at(l, h)) cells.push_back({l, h, *v});
  if (cells.empty()) throw InvalidArgument("summary has no populated cells");
  std::stable_sort(cells.begin(), cells.end(), [](const HeadScore& a, const HeadScore& b) { return a.rho > b.rho; });
  cells.resize(std::min(cells.size(), std::size_t(k)));
  return cells;
}

inline json head_summary_to_json(const HeadSummary& s) {
  json rows = json::array(), counts = json::array();
  for (int l = 0; l < s.n_layers; ++l) {
    json r = json::array(), c = json::array();
    for (int h = 0; h < s.n_heads; ++h) {
      const auto v = s.at(l, h);
      r.push_back(v ? json(*v) : json(nullptr));
      c.push_back(s.n_samples[std::size_t(l * s.n_heads + h)]);
    }
    rows.push_back(r);
    counts.push_back(c);
  }
  return {{"layers", s.n_layers}, {"heads", s.n_heads}, {"mean", rows}, {"n_samples", counts}};
}

// ---------------------------------------------------------------------------
// Heatmaps

// Per-patch values min-max scaled to 0..255 and upsampled (nearest patch) to
// width x height, using the same partition as mask_to_patch_grid.
inline Image heatmap_image(const std::vector<double>& patch_values, int rows, int cols, int width, int height) {
  if (patch_values.size() != std::size_t(rows) * cols) throw DimensionError("heatmap values do not match grid");
  if (width <= 0 || height <= 0) throw DimensionError("heatmap size must be positive");
  const auto [lo, hi] = std::minmax_element(patch_values.begin(), patch_values.end());
  const double span = *hi - *lo;
  Image img(width, height, 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int r = detail::partition_index(y, height, rows), c = detail::partition_index(x, width, cols);
      const double v = patch_values[std::size_t(r * cols + c)];
      img.px(x, y)[0] = static_cast<std::uint8_t>(span > 0 ? std::lround(255.0 * (v - *lo) / span) : 0);
    }
  return img;
}

}  // namespace fivl
