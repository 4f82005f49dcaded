#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gasda/error.hpp"
#include "gasda/tensor.hpp"

namespace gasda::io {

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

// Netpbm-style header tokenizer: whitespace separated, '#' comments to end
// of line, exactly one whitespace byte after the last token.
class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const std::string& path) : b_(bytes), path_(path) {}

  std::string token(const char* what) {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(static_cast<unsigned char>(b_[pos_])) && b_[pos_] != '#') ++pos_;
    if (pos_ == start) fail(std::string("missing ") + what, start);
    return b_.substr(start, pos_ - start);
  }

  std::size_t integer(const char* what) {
    const std::size_t at = pos_;
    const std::string t = token(what);
    if (t.find_first_not_of("0123456789") != std::string::npos || t.size() > 9) {
      fail(std::string("bad ") + what + " '" + t + "'", at);
    }
    return std::stoul(t);
  }

  // Consumes the single separator byte that ends the header.
  void end_header() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) fail("missing header terminator", pos_);
    ++pos_;
  }

  std::size_t offset() const { return pos_; }

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw ParseError(path_ + ": " + msg + " at byte offset " + std::to_string(at));
  }

 private:
  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& b_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Binary PPM (P6), 8-bit, values mapped to [0,1] by /maxval. Returns (1,3,H,W).
template <class T = Standard>
Tensor<T> decode_ppm(const std::string& bytes, const std::string& path) {
  detail::HeaderReader h(bytes, path);
  if (h.token("magic") != "P6") h.fail("not a binary PPM (expected P6)", 0);
  const std::size_t w = h.integer("width");
  const std::size_t ht = h.integer("height");
  const std::size_t at = h.offset();
  const std::size_t maxval = h.integer("maxval");
  if (maxval == 0 || maxval > 255) h.fail("unsupported maxval " + std::to_string(maxval), at);
  if (w == 0 || ht == 0) h.fail("zero image dimension", at);
  h.end_header();
  const std::size_t start = h.offset(), need = w * ht * 3;
  if (bytes.size() - start < need) {
    h.fail("truncated payload: need " + std::to_string(need) + " bytes, have " + std::to_string(bytes.size() - start),
           bytes.size());
  }
  std::vector<T> v(need);
  const std::size_t plane = w * ht;
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const auto byte = static_cast<unsigned char>(bytes[start + 3 * p + c]);
      v[c * plane + p] = static_cast<T>(static_cast<double>(byte) / static_cast<double>(maxval));
    }
  return Tensor<T>::from(Shape{1, 3, ht, w}, std::move(v));
}

// Writes channel values clipped to [0,1] and rounded to the nearest level.
template <class T>
std::string encode_ppm(const Tensor<T>& img) {
  const Shape s = img.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("encode_ppm: expected (1,3,H,W), got " + s.str());
  std::string out = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  const std::size_t plane = s.plane();
  const auto v = img.values();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const double x = std::clamp(static_cast<double>(v[c * plane + p]), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(x * 255.0))));
    }
  return out;
}

template <class T = Standard>
Tensor<T> load_image(const std::string& path) {
  return decode_ppm<T>(detail::read_file(path), path);
}

template <class T>
void save_image(const Tensor<T>& img, const std::string& path) {
  detail::write_file(path, encode_ppm(img));
}

// PFM: "Pf" (one channel) or "PF" (three), scale -1 for little-endian, rows
// stored bottom to top. Returns (1,C,H,W).
template <class T = Standard>
Tensor<T> decode_pfm(const std::string& bytes, const std::string& path) {
  detail::HeaderReader h(bytes, path);
  const std::string magic = h.token("magic");
  std::size_t channels = 0;
  if (magic == "Pf") {
    channels = 1;
  } else if (magic == "PF") {
    channels = 3;
  } else {
    h.fail("not a PFM (expected Pf or PF)", 0);
  }
  const std::size_t w = h.integer("width");
  const std::size_t ht = h.integer("height");
  const std::size_t at = h.offset();
  const std::string scale_text = h.token("scale");
  double scale = 0.0;
  try {
    std::size_t used = 0;
    scale = std::stod(scale_text, &used);
    if (used != scale_text.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    h.fail("bad scale '" + scale_text + "'", at);
  }
  if (!(scale < 0.0)) h.fail("unsupported big-endian or zero scale " + scale_text, at);
  if (w == 0 || ht == 0) h.fail("zero image dimension", at);
  h.end_header();
  const std::size_t start = h.offset(), count = w * ht * channels;
  if (bytes.size() - start < count * 4) {
    h.fail("truncated payload: need " + std::to_string(count * 4) + " bytes, have " +
               std::to_string(bytes.size() - start),
           bytes.size());
  }
  const std::size_t plane = w * ht;
  std::vector<T> v(count);
  for (std::size_t row = 0; row < ht; ++row)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        float f;
        std::memcpy(&f, bytes.data() + start + 4 * ((row * w + x) * channels + c), 4);
        const std::size_t y = ht - 1 - row;
        v[c * plane + y * w + x] = static_cast<T>(f);
      }
  return Tensor<T>::from(Shape{1, channels, ht, w}, std::move(v));
}

template <class T>
std::string encode_pfm(const Tensor<T>& t) {
  static_assert(std::endian::native == std::endian::little, "PFM writer assumes a little-endian host");
  const Shape s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3)) throw ShapeError("encode_pfm: expected (1,1|3,H,W), got " + s.str());
  std::string out = std::string(s.c == 1 ? "Pf" : "PF") + "\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n-1.0\n";
  const std::size_t plane = s.plane(), header = out.size();
  out.resize(header + s.numel() * 4);
  const auto v = t.values();
  for (std::size_t row = 0; row < s.h; ++row)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < s.c; ++c) {
        const float f = static_cast<float>(v[c * plane + (s.h - 1 - row) * s.w + x]);
        std::memcpy(out.data() + header + 4 * ((row * s.w + x) * s.c + c), &f, 4);
      }
  return out;
}

template <class T = Standard>
Tensor<T> load_depth(const std::string& path) {
  Tensor<T> d = decode_pfm<T>(detail::read_file(path), path);
  if (d.shape().c != 1) throw ParseError(path + ": depth map must be single-channel (Pf)");
  return d;
}

template <class T>
void save_depth(const Tensor<T>& depth, const std::string& path) {
  if (depth.shape().c != 1) throw ShapeError("save_depth: expected one channel, got " + depth.shape().str());
  detail::write_file(path, encode_pfm(depth));
}

}  // namespace gasda::io
