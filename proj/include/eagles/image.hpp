#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "eagles/error.hpp"

namespace eagles {

/// Interleaved H x W x C image in linear [0, 1] units.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c = 3, T fill = T(0))
      : width(w), height(h), channels(c), data(size_t(w) * h * c, fill) {}

  size_t pixel_count() const { return size_t(width) * height; }
  T& at(int x, int y, int c) { return data[(size_t(y) * width + x) * channels + c]; }
  T at(int x, int y, int c) const { return data[(size_t(y) * width + x) * channels + c]; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  template <typename U>
  Image<U> cast() const {
    Image<U> out(width, height, channels);
    std::copy(data.begin(), data.end(), out.data.begin());
    return out;
  }

  bool operator==(const Image&) const = default;
};

/// Bilinear resampling with half-pixel centers and edge clamping.
template <typename T>
Image<T> resize_bilinear(const Image<T>& src, int width, int height) {
  require(width > 0 && height > 0, ErrorKind::kInvalidInput, "resize target must be non-empty");
  if (width == src.width && height == src.height) return src;
  Image<T> out(width, height, src.channels);
  const double sx = double(src.width) / width;
  const double sy = double(src.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
    const int y0 = int(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const T wy = T(fy - y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
      const int x0 = int(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const T wx = T(fx - x0);
      for (int c = 0; c < src.channels; ++c) {
        const T top = src.at(x0, y0, c) * (T(1) - wx) + src.at(x1, y0, c) * wx;
        const T bottom = src.at(x0, y1, c) * (T(1) - wx) + src.at(x1, y1, c) * wx;
        out.at(x, y, c) = top * (T(1) - wy) + bottom * wy;
      }
    }
  }
  return out;
}

/// Normalized 1D Gaussian taps of odd length `size`.
inline std::vector<double> gaussian_kernel_1d(int size, double sigma) {
  std::vector<double> k(size);
  const int r = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

/// Separable Gaussian blur with reflect padding. Size 1 is the identity.
template <typename T>
Image<T> gaussian_blur(const Image<T>& src, int size, double sigma) {
  require(size >= 1 && size % 2 == 1, ErrorKind::kConfiguration, "blur kernel size must be odd");
  if (size == 1) return src;
  const auto k = gaussian_kernel_1d(size, sigma);
  const int r = size / 2;
  Image<T> tmp(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * double(src.at(reflect_index(x + i, src.width), y, c));
        tmp.at(x, y, c) = T(acc);
      }
  Image<T> out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * double(tmp.at(x, reflect_index(y + i, src.height), c));
        out.at(x, y, c) = T(acc);
      }
  return out;
}

}  // namespace eagles
