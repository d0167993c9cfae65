// SPDX-License-Identifier: Apache-2.0
//
// Planar double-precision images in [0,1] plus 8-bit PNG (zlib-backed) and
// binary PPM/PGM codecs. PNG support covers what this project writes:
// 8-bit gray or RGB, non-interlaced, all five scanline filters on read.

#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "occufield/math.hpp"
#include "occufield/tensor.hpp"

namespace occufield {

struct Image {
  int width = 0, height = 0, channels = 3;
  std::vector<double> pixels;  // planar [c][y][x]

  static Image create(int w, int h, int c = 3, double fill = 0.0) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.pixels.assign(static_cast<size_t>(w) * h * c, fill);
    return img;
  }

  double& at(int c, int y, int x) {
    return pixels[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return pixels[(static_cast<size_t>(c) * height + y) * width + x];
  }
  void set_rgb(int y, int x, const Vec3& v) {
    at(0, y, x) = v.x;
    at(1, y, x) = v.y;
    at(2, y, x) = v.z;
  }
  Vec3 rgb_at(int y, int x) const { return {at(0, y, x), at(1, y, x), at(2, y, x)}; }

  Tensor to_tensor(bool requires_grad = false) const {
    return Tensor::from_data({channels, height, width}, pixels, requires_grad);
  }
  static Image from_tensor(const Tensor& t) {
    if (t.rank() != 3) fail("Image::from_tensor: expects [C,H,W]");
    Image img;
    img.channels = static_cast<int>(t.dim(0));
    img.height = static_cast<int>(t.dim(1));
    img.width = static_cast<int>(t.dim(2));
    img.pixels = t.values();
    return img;
  }

  // Align-corners bilinear fetch at normalized (u,v) in [-1,1]^2; border clamp.
  void sample_bilinear(double u, double v, double* out) const {
    auto axis = [](double c, int extent, int& i0, int& i1, double& f) {
      double half = 0.5 * (extent - 1);
      double x = (c + 1.0) * half;
      if (x <= 0) x = 0;
      if (x >= extent - 1) x = extent - 1;
      i0 = static_cast<int>(x);
      if (i0 > extent - 2) i0 = std::max(0, extent - 2);
      i1 = std::min(i0 + 1, extent - 1);
      f = x - i0;
    };
    int x0, x1, y0, y1;
    double fx, fy;
    axis(u, width, x0, x1, fx);
    axis(v, height, y0, y1, fy);
    for (int c = 0; c < channels; ++c) {
      double v00 = at(c, y0, x0), v10 = at(c, y0, x1);
      double v01 = at(c, y1, x0), v11 = at(c, y1, x1);
      out[c] = (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
    }
  }

  double mean_abs_diff(const Image& other) const {
    double s = 0;
    for (size_t i = 0; i < pixels.size(); ++i) s += std::abs(pixels[i] - other.pixels[i]);
    return pixels.empty() ? 0.0 : s / static_cast<double>(pixels.size());
  }
};

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace detail {

inline void png_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& data) {
  png_be32(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
  png_be32(out, crc);
}

inline uint8_t paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
  if (pb <= pc) return static_cast<uint8_t>(b);
  return static_cast<uint8_t>(c);
}

}  // namespace detail

inline std::vector<uint8_t> encode_png(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    fail("encode_png: only 1- or 3-channel images supported");
  const int w = img.width, h = img.height, ch = img.channels;
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (static_cast<size_t>(w) * ch + 1));
  size_t pos = 0;
  for (int y = 0; y < h; ++y) {
    raw[pos++] = 0;  // filter: none
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        raw[pos++] = static_cast<uint8_t>(std::lround(clamp01(img.at(c, y, x)) * 255.0));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    fail("encode_png: deflate failed");
  compressed.resize(bound);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  detail::png_be32(ihdr, static_cast<uint32_t>(w));
  detail::png_be32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);                          // bit depth
  ihdr.push_back(ch == 3 ? 2 : 0);            // color type
  ihdr.push_back(0);                          // compression
  ihdr.push_back(0);                          // filter method
  ihdr.push_back(0);                          // no interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", compressed);
  detail::png_chunk(out, "IEND", {});
  return out;
}

inline Image decode_png(const std::vector<uint8_t>& bytes) {
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    fail("decode_png: not a PNG stream");
  auto be32 = [&](size_t off) {
    return (uint32_t(bytes[off]) << 24) | (uint32_t(bytes[off + 1]) << 16) |
           (uint32_t(bytes[off + 2]) << 8) | uint32_t(bytes[off + 3]);
  };
  size_t pos = 8;
  uint32_t w = 0, h = 0;
  int ch = 0;
  std::vector<uint8_t> idat;
  while (pos + 8 <= bytes.size()) {
    uint32_t len = be32(pos);
    std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
    size_t data = pos + 8;
    if (data + len + 4 > bytes.size()) fail("decode_png: truncated chunk");
    if (type == "IHDR") {
      w = be32(data);
      h = be32(data + 4);
      int depth = bytes[data + 8], color = bytes[data + 9], interlace = bytes[data + 12];
      if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
        fail("decode_png: unsupported format (need 8-bit gray/RGB, no interlace)");
      ch = color == 2 ? 3 : 1;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), bytes.begin() + data, bytes.begin() + data + len);
    } else if (type == "IEND") {
      break;
    }
    pos = data + len + 4;
  }
  if (w == 0 || h == 0 || idat.empty()) fail("decode_png: missing image data");
  const size_t stride = static_cast<size_t>(w) * ch;
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    fail("decode_png: inflate failed");

  Image img = Image::create(static_cast<int>(w), static_cast<int>(h), ch);
  std::vector<uint8_t> prev(stride, 0), cur(stride);
  const int bpp = ch;
  for (uint32_t y = 0; y < h; ++y) {
    const uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
    const uint8_t filter = row[0];
    const uint8_t* src = row + 1;
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: fail("decode_png: bad filter byte");
      }
      cur[i] = static_cast<uint8_t>(v & 0xff);
    }
    for (uint32_t x = 0; x < w; ++x)
      for (int cc = 0; cc < ch; ++cc)
        img.at(cc, static_cast<int>(y), static_cast<int>(x)) =
            cur[static_cast<size_t>(x) * ch + cc] / 255.0;
    std::swap(prev, cur);
  }
  return img;
}

// ---------------------------------------------------------------------------
// File I/O (.png, .ppm for RGB, .pgm for gray)
// ---------------------------------------------------------------------------

inline void save_image(const Image& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("save_image: cannot write " + path);
  auto ends_with = [&](const char* suffix) {
    std::string s(suffix);
    return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(".ppm") || ends_with(".pgm")) {
    os << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height
       << "\n255\n";
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < img.channels; ++c) {
          uint8_t b = static_cast<uint8_t>(std::lround(clamp01(img.at(c, y, x)) * 255.0));
          os.write(reinterpret_cast<const char*>(&b), 1);
        }
  } else {
    std::vector<uint8_t> png = encode_png(img);
    os.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
  }
  if (!os) fail("save_image: write failed for " + path);
}

inline Image load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("load_image: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    const int ch = bytes[1] == '6' ? 3 : 1;
    size_t pos = 2;
    auto next_int = [&]() {
      while (pos < bytes.size() &&
             (std::isspace(bytes[pos]) || bytes[pos] == '#')) {
        if (bytes[pos] == '#')
          while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        ++pos;
      }
      int v = 0;
      while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
      return v;
    };
    int w = next_int(), h = next_int(), maxval = next_int();
    if (w <= 0 || h <= 0 || maxval != 255) fail("load_image: bad PNM header in " + path);
    ++pos;  // single whitespace after maxval
    if (pos + static_cast<size_t>(w) * h * ch > bytes.size())
      fail("load_image: truncated PNM " + path);
    Image img = Image::create(w, h, ch);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < ch; ++c)
          img.at(c, y, x) = bytes[pos++] / 255.0;
    return img;
  }
  return decode_png(bytes);
}

}  // namespace occufield
