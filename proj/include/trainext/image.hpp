#pragma once

// 8-bit image container, PNG I/O (libpng) and the sampling helpers shared by
// the augmentation, edge-detection and synthesis code paths.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "trainext/common.hpp"

namespace trainext {

// Interleaved row-major; channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool empty() const { return data.empty(); }

  bool operator==(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels && data == o.data;
  }
};

// Binary raster; values are 0/1.
struct Bitmap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Bitmap() = default;
  Bitmap(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v ? 1 : 0;
    return n;
  }

  bool operator==(const Bitmap& o) const {
    return width == o.width && height == o.height && data == o.data;
  }
};

// ---------------------------------------------------------------------------
// PNG I/O
// ---------------------------------------------------------------------------

namespace detail {

struct PngFile {
  std::FILE* f = nullptr;
  explicit PngFile(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {}
  ~PngFile() {
    if (f) std::fclose(f);
  }
  PngFile(const PngFile&) = delete;
  PngFile& operator=(const PngFile&) = delete;
};

}  // namespace detail

inline Image read_png(const std::string& path) {
  detail::PngFile file(path, "rb");
  if (!file.f) throw ParseError("cannot open image " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, file.f) != 8 || png_sig_cmp(header, 0, 8))
    throw ParseError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("corrupt PNG: " + path);
  }

  png_init_io(png, file.f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const png_byte out_color = png_get_color_type(png, info);
  const int channels = (out_color == PNG_COLOR_TYPE_GRAY) ? 1 : 3;

  Image img(static_cast<int>(w), static_cast<int>(h), channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = img.data.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  if (img.empty()) throw ValidationError("write_png: empty image");
  detail::PngFile file(path, "wb");
  if (!file.f) throw Error("cannot write image " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG write failed: " + path);
  }

  png_init_io(png, file.f);
  const int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
        img.data.data() + static_cast<std::size_t>(y) * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Masks persist as 1-bit grayscale PNGs.
inline void write_png_1bit(const std::string& path, const Bitmap& mask) {
  detail::PngFile file(path, "wb");
  if (!file.f) throw Error("cannot write image " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG write failed: " + path);
  }

  png_init_io(png, file.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(mask.width),
               static_cast<png_uint_32>(mask.height), 1, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const int stride = (mask.width + 7) / 8;
  std::vector<std::uint8_t> packed(static_cast<std::size_t>(stride) * mask.height, 0);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x))
        packed[static_cast<std::size_t>(y) * stride + x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));

  std::vector<png_bytep> rows(static_cast<std::size_t>(mask.height));
  for (int y = 0; y < mask.height; ++y)
    rows[static_cast<std::size_t>(y)] = packed.data() + static_cast<std::size_t>(y) * stride;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Bitmap read_png_mask(const std::string& path) {
  Image img = read_png(path);
  Bitmap mask(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      mask.at(y, x) = img.at(y, x, 0) >= 128 ? 1 : 0;
  return mask;
}

// ---------------------------------------------------------------------------
// Sampling helpers
// ---------------------------------------------------------------------------

inline std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
}

inline double sample_bilinear(const Image& img, double y, double x, int c) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  const int x0r = reflect101(x0, img.width), x1r = reflect101(x0 + 1, img.width);
  const int y0r = reflect101(y0, img.height), y1r = reflect101(y0 + 1, img.height);
  const double v00 = img.at(y0r, x0r, c), v01 = img.at(y0r, x1r, c);
  const double v10 = img.at(y1r, x0r, c), v11 = img.at(y1r, x1r, c);
  return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

// Generic geometric warp: for each destination pixel, (map_y, map_x) give the
// source coordinate to sample bilinearly (reflect101 border).
inline Image remap(const Image& src, int out_w, int out_h,
                   const std::vector<float>& map_y, const std::vector<float>& map_x) {
  Image out(out_w, out_h, src.channels);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * out_w + x;
      for (int c = 0; c < src.channels; ++c)
        out.at(y, x, c) = clamp_u8(sample_bilinear(src, map_y[i], map_x[i], c));
    }
  return out;
}

inline Image resize_bilinear(const Image& src, int out_w, int out_h) {
  if (src.empty()) throw ValidationError("resize: empty image");
  Image out(out_w, out_h, src.channels);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      for (int c = 0; c < src.channels; ++c)
        out.at(y, x, c) = clamp_u8(sample_bilinear(src, src_y, src_x, c));
    }
  }
  return out;
}

inline Image to_grayscale(const Image& src) {
  if (src.channels == 1) return src;
  Image out(src.width, src.height, 1);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const double v = 0.299 * src.at(y, x, 0) + 0.587 * src.at(y, x, 1) + 0.114 * src.at(y, x, 2);
      out.at(y, x, 0) = clamp_u8(v);
    }
  return out;
}

inline Image rotate90_cw(const Image& src) {
  Image out(src.height, src.width, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c)
        out.at(x, src.height - 1 - y, c) = src.at(y, x, c);
  return out;
}

inline Bitmap rotate90_cw(const Bitmap& src) {
  Bitmap out(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      out.at(x, src.height - 1 - y) = src.at(y, x);
  return out;
}

}  // namespace trainext
