#pragma once

// Coarse-to-fine schedule: render scale or blur level as a function of the
// training iteration, and the matching target filters.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "eagles/core_math.hpp"
#include "eagles/error.hpp"
#include "eagles/image.hpp"

namespace eagles {

enum class ProgressiveMode { kNone, kDownsample, kMean, kGaussian };

inline std::string_view to_string(ProgressiveMode m) {
  switch (m) {
    case ProgressiveMode::kNone: return "none";
    case ProgressiveMode::kDownsample: return "downsample";
    case ProgressiveMode::kMean: return "mean";
    case ProgressiveMode::kGaussian: return "gaussian";
  }
  return "none";
}

inline ProgressiveMode parse_progressive_mode(std::string_view s) {
  if (s == "none") return ProgressiveMode::kNone;
  if (s == "downsample") return ProgressiveMode::kDownsample;
  if (s == "mean") return ProgressiveMode::kMean;
  if (s == "gaussian") return ProgressiveMode::kGaussian;
  fail(ErrorKind::kConfiguration, "unknown progressive mode '" + std::string(s) + "'");
}

struct ProgressiveConfig {
  ProgressiveMode mode = ProgressiveMode::kDownsample;
  double start_scale = 0.3;
  double end_scale = 1.0;
  double duration_fraction = 0.7;
  int gaussian_kernel_start = 5;

  void validate() const {
    require(0.0 < start_scale && start_scale <= end_scale && end_scale <= 1.0, ErrorKind::kConfiguration,
            "progressive scales must satisfy 0 < start <= end <= 1");
    require(0.0 < duration_fraction && duration_fraction <= 1.0, ErrorKind::kConfiguration,
            "progressive duration fraction must lie in (0, 1]");
    require(gaussian_kernel_start >= 1 && gaussian_kernel_start % 2 == 1, ErrorKind::kConfiguration,
            "gaussian kernel size must be a positive odd integer");
  }
};

/// Cosine ramp from start_scale to end_scale over the first
/// duration_fraction of training, constant afterwards.
inline double schedule_scale(long iter, long total_iters, const ProgressiveConfig& config) {
  const double horizon = config.duration_fraction * double(total_iters);
  if (horizon <= 0.0 || double(iter) >= horizon) return config.end_scale;
  const double t = std::max(0.0, double(iter)) / horizon;
  return config.start_scale +
         (config.end_scale - config.start_scale) * 0.5 * (1.0 - std::cos(std::numbers::pi * t));
}

struct Resolution {
  int width = 0;
  int height = 0;
  bool operator==(const Resolution&) const = default;
};

/// Each dimension becomes max(round(dim * scale), 16), never exceeding the base.
inline Resolution scaled_resolution(Resolution base, double scale) {
  require(scale > 0.0 && scale <= 1.0, ErrorKind::kInvalidInput, "scale must lie in (0, 1]");
  auto dim = [&](int d) { return std::min(d, std::max(int(std::lround(d * scale)), 16)); };
  return {dim(base.width), dim(base.height)};
}

/// Blur kernel size at `iter`: linear shrink from the start size to 1 over
/// the schedule horizon, snapped down to an odd integer.
inline int schedule_kernel_size(long iter, long total_iters, const ProgressiveConfig& config) {
  const double horizon = config.duration_fraction * double(total_iters);
  if (horizon <= 0.0 || double(iter) >= horizon) return 1;
  const double t = std::max(0.0, double(iter)) / horizon;
  int size = int(std::floor(config.gaussian_kernel_start - (config.gaussian_kernel_start - 1) * t));
  if (size % 2 == 0) --size;
  return std::max(size, 1);
}

/// What to train against at one iteration: the (possibly filtered) target
/// and the camera to render with.
template <typename T>
struct ProgressiveStep {
  Image<T> target;
  Camera<T> camera;
};

template <typename T>
Image<T> filter_target(const Image<T>& target, ProgressiveMode mode, double scale, int kernel_size) {
  switch (mode) {
    case ProgressiveMode::kNone:
      return target;
    case ProgressiveMode::kDownsample: {
      const Resolution r = scaled_resolution({target.width, target.height}, scale);
      return resize_bilinear(target, r.width, r.height);
    }
    case ProgressiveMode::kMean: {
      const Resolution r = scaled_resolution({target.width, target.height}, scale);
      return resize_bilinear(resize_bilinear(target, r.width, r.height), target.width, target.height);
    }
    case ProgressiveMode::kGaussian:
      return gaussian_blur(target, kernel_size, kernel_size / 3.0);
  }
  fail(ErrorKind::kConfiguration, "unknown progressive mode");
}

template <typename T>
ProgressiveStep<T> progressive_step(const Image<T>& target, const Camera<T>& camera, long iter, long total_iters,
                                    const ProgressiveConfig& config) {
  const double scale = schedule_scale(iter, total_iters, config);
  const int kernel = schedule_kernel_size(iter, total_iters, config);
  ProgressiveStep<T> step{filter_target(target, config.mode, scale, kernel), camera};
  if (step.target.width != camera.width || step.target.height != camera.height)
    step.camera = camera.resized(step.target.width, step.target.height);
  return step;
}

}  // namespace eagles
