#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "eagles/error.hpp"
#include "eagles/image.hpp"

namespace eagles {

template <typename T>
struct LossValue {
  T value = 0;
  Image<T> gradient;  // d value / d rendered
};

/// Mean absolute error over all pixels and channels.
template <typename T>
LossValue<T> l1_loss(const Image<T>& rendered, const Image<T>& target) {
  require(rendered.same_shape(target), ErrorKind::kInvalidInput, "l1_loss: image shapes differ");
  LossValue<T> out;
  out.gradient = Image<T>(rendered.width, rendered.height, rendered.channels);
  const T inv = T(1) / T(rendered.data.size());
  T sum = 0;
  for (size_t i = 0; i < rendered.data.size(); ++i) {
    const T d = rendered.data[i] - target.data[i];
    sum += std::abs(d);
    out.gradient.data[i] = d > T(0) ? inv : (d < T(0) ? -inv : T(0));
  }
  out.value = sum * inv;
  return out;
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

/// "Same"-size separable convolution of one channel plane with zero padding.
/// The kernel is symmetric, so this operator is its own adjoint.
template <typename T>
std::vector<T> conv_same_zero(const std::vector<T>& plane, int w, int h, const std::vector<double>& k) {
  const int r = int(k.size()) / 2;
  std::vector<T> tmp(plane.size()), out(plane.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      T acc = 0;
      for (int i = std::max(-r, -x); i <= std::min(r, w - 1 - x); ++i) acc += T(k[i + r]) * plane[size_t(y) * w + x + i];
      tmp[size_t(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      T acc = 0;
      for (int i = std::max(-r, -y); i <= std::min(r, h - 1 - y); ++i) acc += T(k[i + r]) * tmp[size_t(y + i) * w + x];
      out[size_t(y) * w + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over an 11x11 Gaussian window (sigma 1.5), zero padded,
/// averaged over pixels and channels, with the gradient w.r.t. `rendered`.
template <typename T>
LossValue<T> ssim(const Image<T>& rendered, const Image<T>& target) {
  require(rendered.same_shape(target), ErrorKind::kInvalidInput, "ssim: image shapes differ");
  require(rendered.width >= kSsimWindow && rendered.height >= kSsimWindow, ErrorKind::kInvalidInput,
          "ssim: images must be at least 11x11");
  const int w = rendered.width, h = rendered.height, ch = rendered.channels;
  const size_t np = size_t(w) * h;
  const auto k = gaussian_kernel_1d(kSsimWindow, kSsimSigma);
  const T c1 = T(kSsimC1), c2 = T(kSsimC2);
  const T inv_count = T(1) / T(np * ch);

  LossValue<T> out;
  out.gradient = Image<T>(w, h, ch);
  T total = 0;
  std::vector<T> x(np), y(np), xx(np), yy(np), xy(np);
  for (int c = 0; c < ch; ++c) {
    for (size_t p = 0; p < np; ++p) {
      x[p] = rendered.data[p * ch + c];
      y[p] = target.data[p * ch + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = detail::conv_same_zero(x, w, h, k);
    const auto my = detail::conv_same_zero(y, w, h, k);
    const auto exx = detail::conv_same_zero(xx, w, h, k);
    const auto eyy = detail::conv_same_zero(yy, w, h, k);
    const auto exy = detail::conv_same_zero(xy, w, h, k);
    std::vector<T> ga(np), gb(np), gc(np);
    for (size_t p = 0; p < np; ++p) {
      const T sxx = exx[p] - mx[p] * mx[p];
      const T syy = eyy[p] - my[p] * my[p];
      const T sxy = exy[p] - mx[p] * my[p];
      const T a1 = T(2) * mx[p] * my[p] + c1;
      const T a2 = T(2) * sxy + c2;
      const T b1 = mx[p] * mx[p] + my[p] * my[p] + c1;
      const T b2 = sxx + syy + c2;
      const T s = (a1 * a2) / (b1 * b2);
      total += s;
      const T ds_dmx = T(2) * my[p] * a2 / (b1 * b2) - s * T(2) * mx[p] / b1;
      const T ds_dsxx = -s / b2;
      const T ds_dsxy = T(2) * a1 / (b1 * b2);
      // sxx and sxy depend on mx as well as on the second moments.
      ga[p] = (ds_dmx - T(2) * mx[p] * ds_dsxx - my[p] * ds_dsxy) * inv_count;
      gb[p] = ds_dsxx * inv_count;
      gc[p] = ds_dsxy * inv_count;
    }
    const auto ca = detail::conv_same_zero(ga, w, h, k);
    const auto cb = detail::conv_same_zero(gb, w, h, k);
    const auto cc = detail::conv_same_zero(gc, w, h, k);
    for (size_t p = 0; p < np; ++p)
      out.gradient.data[p * ch + c] = ca[p] + T(2) * x[p] * cb[p] + y[p] * cc[p];
  }
  out.value = total * inv_count;
  return out;
}

/// (1 - lambda) L1 + lambda (1 - SSIM).
template <typename T>
LossValue<T> combined_loss(const Image<T>& rendered, const Image<T>& target, T lambda) {
  require(lambda >= T(0) && lambda <= T(1), ErrorKind::kConfiguration, "lambda must lie in [0, 1]");
  auto l1 = l1_loss(rendered, target);
  LossValue<T> out;
  out.gradient = Image<T>(rendered.width, rendered.height, rendered.channels);
  if (lambda == T(0)) {
    return l1;
  }
  auto s = ssim(rendered, target);
  out.value = (T(1) - lambda) * l1.value + lambda * (T(1) - s.value);
  for (size_t i = 0; i < out.gradient.data.size(); ++i)
    out.gradient.data[i] = (T(1) - lambda) * l1.gradient.data[i] - lambda * s.gradient.data[i];
  return out;
}

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for [0, 1] images; identical images report the 99 dB cap.
template <typename T>
double psnr(const Image<T>& a, const Image<T>& b) {
  require(a.same_shape(b), ErrorKind::kInvalidInput, "psnr: image shapes differ");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace eagles
