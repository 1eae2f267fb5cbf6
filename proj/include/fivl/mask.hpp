#pragma once

// Pixel and patch level masks.
//
// RLE layout: row-major scan, runs alternate starting with a run of zeros.
// The first run may be empty (mask starts with a set pixel); every later run
// is strictly positive. Text form: "{width} {height} | c0 c1 c2 ...".

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fivl/error.hpp"

namespace fivl {

struct BitGrid {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  BitGrid() = default;
  BitGrid(int w, int h, bool value = false)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * h, value ? 1 : 0) {}

  std::size_t size() const { return bits.size(); }
  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  bool operator==(const BitGrid&) const = default;
};

struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;  // exclusive
  int y_max = 0;  // exclusive

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  bool contains(int x, int y) const {
    return x >= x_min && x < x_max && y >= y_min && y < y_max;
  }
  bool fits(int image_w, int image_h) const {
    return 0 <= x_min && x_min < x_max && x_max <= image_w && 0 <= y_min && y_min < y_max &&
           y_max <= image_h;
  }
  bool operator==(const BBox&) const = default;
};

struct RleMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> counts;

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }

  // Number of set pixels. Odd-indexed runs are ones.
  std::size_t area() const {
    std::size_t a = 0;
    for (std::size_t i = 1; i < counts.size(); i += 2) a += counts[i];
    return a;
  }
  bool empty() const { return area() == 0; }
  bool operator==(const RleMask&) const = default;
};

struct PatchGrid {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> flags;  // row-major

  std::size_t size() const { return flags.size(); }
  bool at(int r, int c) const { return flags[static_cast<std::size_t>(r) * cols + c] != 0; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
  }
  bool operator==(const PatchGrid&) const = default;
};

// Throws MalformedMaskError naming the violated rule.
inline void validate(const RleMask& mask) {
  if (mask.width <= 0 || mask.height <= 0)
    throw MalformedMaskError("mask dimensions must be positive, got " +
                             std::to_string(mask.width) + "x" + std::to_string(mask.height));
  if (mask.counts.empty()) throw MalformedMaskError("mask has no runs");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < mask.counts.size(); ++i) {
    if (i > 0 && mask.counts[i] == 0)
      throw MalformedMaskError("zero-length run at index " + std::to_string(i));
    total += mask.counts[i];
  }
  if (total != mask.pixels())
    throw MalformedMaskError("run lengths sum to " + std::to_string(total) + ", expected " +
                             std::to_string(mask.pixels()));
}

inline RleMask rle_encode(const BitGrid& raster) {
  if (raster.width <= 0 || raster.height <= 0 || raster.bits.size() != raster.size() ||
      raster.size() == 0)
    throw DimensionError("cannot encode an empty raster");
  RleMask out{raster.width, raster.height, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (std::uint8_t b : raster.bits) {
    const std::uint8_t v = b ? 1 : 0;
    if (v != current) {
      out.counts.push_back(run);
      run = 0;
      current = v;
    }
    ++run;
  }
  out.counts.push_back(run);
  return out;
}

inline BitGrid rle_decode(const RleMask& mask) {
  validate(mask);
  BitGrid out(mask.width, mask.height);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < mask.counts.size(); ++i) {
    if (i % 2 == 1)
      std::fill_n(out.bits.begin() + static_cast<std::ptrdiff_t>(pos), mask.counts[i],
                  std::uint8_t{1});
    pos += mask.counts[i];
  }
  return out;
}

inline RleMask empty_mask(int width, int height) {
  if (width <= 0 || height <= 0) throw DimensionError("mask dimensions must be positive");
  return RleMask{width, height, {static_cast<std::uint32_t>(width * height)}};
}

inline RleMask box_mask(int width, int height, const BBox& box) {
  if (!box.fits(width, height)) throw DimensionError("box outside image");
  BitGrid g(width, height);
  for (int y = box.y_min; y < box.y_max; ++y)
    for (int x = box.x_min; x < box.x_max; ++x) g.set(x, y);
  return rle_encode(g);
}

inline std::string format_rle(const RleMask& mask) {
  std::string s = std::to_string(mask.width) + " " + std::to_string(mask.height) + " |";
  for (auto c : mask.counts) {
    s += ' ';
    s += std::to_string(c);
  }
  return s;
}

inline RleMask parse_rle(std::string_view text) {
  RleMask mask;
  const auto bar = text.find('|');
  if (bar == std::string_view::npos) throw MalformedMaskError("missing '|' separator");
  auto read_ints = [](std::string_view part, auto&& sink) {
    std::size_t i = 0;
    while (i < part.size()) {
      while (i < part.size() && (part[i] == ' ' || part[i] == '\t')) ++i;
      if (i == part.size()) break;
      std::size_t j = i;
      while (j < part.size() && part[j] != ' ' && part[j] != '\t') ++j;
      long long v = 0;
      auto [p, ec] = std::from_chars(part.data() + i, part.data() + j, v);
      if (ec != std::errc{} || p != part.data() + j || v < 0 || v > 0xFFFFFFFFLL)
        throw MalformedMaskError("bad integer '" + std::string(part.substr(i, j - i)) + "'");
      sink(v);
      i = j;
    }
  };
  std::vector<long long> dims;
  read_ints(text.substr(0, bar), [&](long long v) { dims.push_back(v); });
  if (dims.size() != 2) throw MalformedMaskError("expected '{width} {height}' before '|'");
  if (dims[0] > (1 << 20) || dims[1] > (1 << 20)) throw MalformedMaskError("mask too large");
  mask.width = static_cast<int>(dims[0]);
  mask.height = static_cast<int>(dims[1]);
  read_ints(text.substr(bar + 1),
            [&](long long v) { mask.counts.push_back(static_cast<std::uint32_t>(v)); });
  validate(mask);
  return mask;
}

namespace detail {

inline void require_same_dims(const RleMask& a, const RleMask& b) {
  if (a.width != b.width || a.height != b.height)
    throw DimensionError("mask dimensions differ: " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
}

// Walks both run sequences in lockstep.
inline std::size_t intersection_area(const RleMask& a, const RleMask& b) {
  require_same_dims(a, b);
  std::size_t ia = 0, ib = 0;
  std::uint64_t left_a = a.counts.empty() ? 0 : a.counts[0];
  std::uint64_t left_b = b.counts.empty() ? 0 : b.counts[0];
  std::size_t inter = 0;
  while (ia < a.counts.size() && ib < b.counts.size()) {
    if (left_a == 0) {
      if (++ia < a.counts.size()) left_a = a.counts[ia];
      continue;
    }
    if (left_b == 0) {
      if (++ib < b.counts.size()) left_b = b.counts[ib];
      continue;
    }
    const auto step = std::min(left_a, left_b);
    if (ia % 2 == 1 && ib % 2 == 1) inter += step;
    left_a -= step;
    left_b -= step;
  }
  return inter;
}

}  // namespace detail

inline RleMask mask_union(std::span<const RleMask> masks) {
  if (masks.empty()) throw InvalidArgument("mask_union of an empty list");
  BitGrid acc = rle_decode(masks.front());
  for (const auto& m : masks.subspan(1)) {
    detail::require_same_dims(masks.front(), m);
    const BitGrid g = rle_decode(m);
    for (std::size_t i = 0; i < acc.bits.size(); ++i) acc.bits[i] |= g.bits[i];
  }
  return rle_encode(acc);
}

inline RleMask mask_union(const RleMask& a, const RleMask& b) {
  const RleMask pair[] = {a, b};
  return mask_union(std::span<const RleMask>(pair));
}

// |a and b| / min(|a|, |b|).
inline double mask_overlap_ratio(const RleMask& a, const RleMask& b) {
  const std::size_t inter = detail::intersection_area(a, b);
  const std::size_t area_a = a.area();
  const std::size_t area_b = b.area();
  if (area_a == 0 && area_b == 0) throw UndefinedValueError("overlap of two empty masks");
  const std::size_t denom = std::min(area_a, area_b);
  if (denom == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(denom);
}

inline constexpr double kDefaultDedupThreshold = 0.95;

// Greedy dedup: largest masks first, a mask survives if it overlaps no kept
// mask by more than `threshold`. Returns kept ids in visit order. Two empty
// masks count as identical.
inline std::vector<std::string> dedup_masks(
    std::span<const std::pair<std::string, RleMask>> masks,
    double threshold = kDefaultDedupThreshold) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw InvalidArgument("dedup threshold must be in (0, 1]");
  for (const auto& [id, m] : masks) detail::require_same_dims(masks.front().second, m);

  std::vector<std::size_t> order(masks.size());
  std::vector<std::size_t> areas(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    order[i] = i;
    areas[i] = masks[i].second.area();
  }
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    if (areas[l] != areas[r]) return areas[l] > areas[r];
    return masks[l].first < masks[r].first;
  });

  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool unique = true;
    for (std::size_t k : kept) {
      const double ratio = (areas[i] == 0 && areas[k] == 0)
                               ? 1.0
                               : mask_overlap_ratio(masks[i].second, masks[k].second);
      if (ratio > threshold) {
        unique = false;
        break;
      }
    }
    if (unique) kept.push_back(i);
  }
  std::vector<std::string> ids;
  ids.reserve(kept.size());
  for (std::size_t k : kept) ids.push_back(masks[k].first);
  return ids;
}

inline constexpr double kDefaultCoverageThreshold = 0.5;

namespace detail {

// Even partition of `extent` pixels into `parts`; the remainder goes to the
// last part.
inline int partition_index(int pixel, int extent, int parts) {
  const int base = extent / parts;
  if (base == 0) return parts - 1;
  return std::min(pixel / base, parts - 1);
}

}  // namespace detail

inline PatchGrid mask_to_patch_grid(const RleMask& mask, int rows, int cols,
                                    double coverage_threshold = kDefaultCoverageThreshold) {
  if (rows <= 0 || cols <= 0) throw DimensionError("patch grid rows/cols must be positive");
  const BitGrid g = rle_decode(mask);
  std::vector<std::size_t> covered(static_cast<std::size_t>(rows) * cols, 0);
  std::vector<std::size_t> total(covered.size(), 0);
  std::vector<int> col_of(static_cast<std::size_t>(g.width));
  for (int x = 0; x < g.width; ++x) col_of[x] = detail::partition_index(x, g.width, cols);
  for (int y = 0; y < g.height; ++y) {
    const int r = detail::partition_index(y, g.height, rows);
    for (int x = 0; x < g.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(r) * cols + col_of[x];
      ++total[p];
      covered[p] += g.at(x, y) ? 1 : 0;
    }
  }
  PatchGrid out{rows, cols, std::vector<std::uint8_t>(covered.size(), 0)};
  for (std::size_t p = 0; p < covered.size(); ++p) {
    if (total[p] == 0) continue;
    const double frac = static_cast<double>(covered[p]) / static_cast<double>(total[p]);
    out.flags[p] = frac >= coverage_threshold ? 1 : 0;
  }
  return out;
}

inline double iou(const RleMask& a, const RleMask& b) {
  const std::size_t inter = detail::intersection_area(a, b);
  const std::size_t uni = a.area() + b.area() - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double iou(const PatchGrid& a, const PatchGrid& b) {
  if (a.rows != b.rows || a.cols != b.cols || a.flags.size() != b.flags.size())
    throw DimensionError("patch grid dimensions differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.flags.size(); ++i) {
    inter += (a.flags[i] && b.flags[i]) ? 1 : 0;
    uni += (a.flags[i] || b.flags[i]) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double coverage_fraction(const RleMask& mask) {
  if (mask.pixels() == 0) return 0.0;
  return static_cast<double>(mask.area()) / static_cast<double>(mask.pixels());
}

// Tight bounding box of the set pixels, if any.
inline std::optional<BBox> bounding_box(const RleMask& mask) {
  const BitGrid g = rle_decode(mask);
  BBox box{g.width, g.height, 0, 0};
  bool any = false;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      if (g.at(x, y)) {
        any = true;
        box.x_min = std::min(box.x_min, x);
        box.y_min = std::min(box.y_min, y);
        box.x_max = std::max(box.x_max, x + 1);
        box.y_max = std::max(box.y_max, y + 1);
      }
  if (!any) return std::nullopt;
  return box;
}

}  // namespace fivl
