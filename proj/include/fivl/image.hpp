#pragma once

// 8-bit images (gray or RGB) plus PNG / PNM codecs and base64 for transport.

#include <openssl/evp.h>
#include <png.h>

#include <array>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "fivl/error.hpp"
#include "fivl/mask.hpp"

namespace fivl {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c = 3, std::uint8_t value = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, value) {}

  std::uint8_t* px(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
  const std::uint8_t* px(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
  bool operator==(const Image&) const = default;
};

using Color = std::array<std::uint8_t, 3>;
inline constexpr Color kBlack{0, 0, 0};

inline void put(Image& img, int x, int y, const Color& c) {
  auto* p = img.px(x, y);
  if (img.channels == 1) {
    p[0] = static_cast<std::uint8_t>((c[0] + c[1] + c[2]) / 3);
  } else {
    std::memcpy(p, c.data(), 3);
  }
}

inline bool same_pixel(const Image& a, int ax, int ay, const Image& b, int bx, int by) {
  return std::memcmp(a.px(ax, ay), b.px(bx, by), static_cast<std::size_t>(a.channels)) == 0;
}

inline Color mean_color(const Image& img) {
  std::array<std::uint64_t, 3> sum{};
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  if (n == 0) return kBlack;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c)
      sum[c] += img.pixels[i * img.channels + (img.channels == 1 ? 0 : c)];
  return {static_cast<std::uint8_t>(sum[0] / n), static_cast<std::uint8_t>(sum[1] / n),
          static_cast<std::uint8_t>(sum[2] / n)};
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width);
  desc.height = static_cast<png_uint_32>(img.height);
  desc.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("png encode: ") + desc.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw Error(std::string("png encode: ") + desc.message);
  out.resize(size);
  return out;
}

inline Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&desc, bytes.data(), bytes.size()))
    throw Error(std::string("png decode: ") + desc.message);
  desc.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(desc.width), static_cast<int>(desc.height), 3);
  if (!png_image_finish_read(&desc, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&desc);
    throw Error(std::string("png decode: ") + desc.message);
  }
  return img;
}

// Binary PPM (P6) / PGM (P5), maxval 255.
inline std::vector<std::uint8_t> encode_pnm(const Image& img) {
  std::string header = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline Image decode_pnm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    std::string t;
    while (pos < bytes.size()) {
      const char c = static_cast<char>(bytes[pos]);
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        ++pos;
      } else {
        t += c;
        ++pos;
      }
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6") throw Error("pnm decode: unsupported magic '" + magic + "'");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  const int maxval = std::stoi(token());
  if (maxval != 255 || w <= 0 || h <= 0) throw Error("pnm decode: unsupported header");
  ++pos;  // single whitespace after maxval
  Image img(w, h, magic == "P5" ? 1 : 3);
  if (bytes.size() - pos < img.pixels.size()) throw Error("pnm decode: truncated payload");
  std::memcpy(img.pixels.data(), bytes.data() + pos, img.pixels.size());
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image load_image(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G')
    return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
    return decode_pnm(bytes);
  throw Error("unsupported image format: '" + path + "'");
}

inline void save_image(const std::string& path, const Image& img) {
  const bool pnm = path.ends_with(".ppm") || path.ends_with(".pgm") || path.ends_with(".pnm");
  write_file_bytes(path, pnm ? encode_pnm(img) : encode_png(img));
}

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ProtocolError("base64 length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw ProtocolError("invalid base64 payload");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// Paints set mask pixels with a translucent tint. Used for review overlays.
inline Image overlay_mask(const Image& img, const RleMask& mask, const Color& tint = {255, 0, 0},
                          double alpha = 0.5) {
  if (mask.width != img.width || mask.height != img.height)
    throw DimensionError("mask and image dimensions differ");
  const BitGrid g = rle_decode(mask);
  Image out(img.width, img.height, 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto* s = img.px(x, y);
      auto* d = out.px(x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = s[img.channels == 1 ? 0 : c];
        d[c] = static_cast<std::uint8_t>(g.at(x, y) ? (1 - alpha) * v + alpha * tint[c] : v);
      }
    }
  return out;
}

}  // namespace fivl
