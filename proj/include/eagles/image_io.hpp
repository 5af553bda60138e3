#pragma once

// Target image files: 8-bit PNG (divided by 255, no gamma) and an exact
// float32 container used for synthetic data.
//
// F32 image layout: "F32I" magic, u32 width, u32 height, u32 channels,
// then width*height*channels little-endian float32 values, row-major HWC.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "eagles/error.hpp"
#include "eagles/image.hpp"

namespace eagles {

inline void write_f32_image(const std::string& path, const Image<float>& img) {
  std::vector<std::uint8_t> bytes = {'F', '3', '2', 'I'};
  auto put32 = [&](std::uint32_t u) {
    for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(u >> (8 * i)));
  };
  put32(std::uint32_t(img.width));
  put32(std::uint32_t(img.height));
  put32(std::uint32_t(img.channels));
  for (float f : img.data) put32(std::bit_cast<std::uint32_t>(f));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(bool(out), ErrorKind::kIo, "write to '" + path + "' failed");
}

inline Image<float> read_f32_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::kIo, "cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() >= 16 && bytes[0] == 'F' && bytes[1] == '3' && bytes[2] == '2' && bytes[3] == 'I',
          ErrorKind::kParse, path + ": not an F32I image");
  auto get32 = [&](size_t off) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= std::uint32_t(bytes[off + i]) << (8 * i);
    return u;
  };
  const std::uint64_t w = get32(4), h = get32(8), c = get32(12);
  require(w > 0 && h > 0 && c > 0 && bytes.size() == 16 + 4 * w * h * c, ErrorKind::kParse,
          path + ": F32I size mismatch");
  Image<float> img{int(w), int(h), int(c)};
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = std::bit_cast<float>(get32(16 + 4 * i));
  return img;
}

/// Reads an 8-bit (or 16-bit, reduced) PNG as RGB in [0, 1].
inline Image<float> read_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  require(fp != nullptr, ErrorKind::kIo, "cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  int width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kParse, path + ": malformed PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  width = int(png_get_image_width(png, info));
  height = int(png_get_image_height(png, info));
  const size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * size_t(height));
  rows.resize(size_t(height));
  for (int y = 0; y < height; ++y) rows[size_t(y)] = buffer.data() + size_t(y) * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image<float> img(width, height, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = float(rows[size_t(y)][3 * x + c]) / 255.0f;
  return img;
}

/// Writes an RGB image clamped to [0, 1] as 8-bit PNG.
template <typename T>
void write_png(const std::string& path, const Image<T>& img) {
  require(img.channels == 3, ErrorKind::kInvalidInput, "write_png expects 3 channels");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  require(fp != nullptr, ErrorKind::kIo, "cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> buffer(size_t(img.width) * img.height * 3);
  for (size_t i = 0; i < buffer.size(); ++i)
    buffer[i] = std::uint8_t(std::lround(std::clamp(double(img.data[i]), 0.0, 1.0) * 255.0));
  std::vector<png_bytep> rows(size_t(img.height));
  for (int y = 0; y < img.height; ++y) rows[size_t(y)] = buffer.data() + size_t(y) * img.width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, path + ": PNG encoding failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Dispatches on extension: ".f32" exact floats, anything else PNG.
inline Image<float> read_image(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".f32") == 0) return read_f32_image(path);
  return read_png(path);
}

}  // namespace eagles
