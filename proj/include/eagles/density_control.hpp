#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "eagles/cloud.hpp"
#include "eagles/core_math.hpp"
#include "eagles/optimizer.hpp"
#include "eagles/quantization.hpp"

namespace eagles {

inline constexpr int kSplitChildren = 2;
inline constexpr double kSplitScaleDivisor = 1.6;

/// Copies rows of every per-Gaussian array; `sources[r]` must be valid.
template <typename T>
GaussianCloud<T> gather_rows(const GaussianCloud<T>& cloud, const std::vector<std::ptrdiff_t>& sources) {
  IndexMap map{sources};
  GaussianCloud<T> out;
  out.positions = map.apply(cloud.positions, 3);
  out.log_scales = map.apply(cloud.log_scales, 3);
  out.sh_base = map.apply(cloud.sh_base, 3);
  for (AttributeId id : kLatentAttributes) {
    const auto& a = cloud.attribute(id);
    auto& b = out.attribute(id);
    b.attribute = a.attribute;
    b.quantized = a.quantized;
    b.decoder = a.decoder;
    b.values = map.apply(a.values, size_t(a.width()));
  }
  return out;
}

/// Keeps the rows where `keep` is set, in order.
template <typename T>
std::pair<GaussianCloud<T>, IndexMap> keep_rows(const GaussianCloud<T>& cloud, const std::vector<bool>& keep) {
  IndexMap map;
  for (size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) map.source.push_back(std::ptrdiff_t(i));
  return {gather_rows(cloud, map.source), map};
}

/// Running per-Gaussian statistics between densification events.
template <typename T>
struct DensifyAccumulator {
  std::vector<T> grad_norm_sum;      // viewspace positional gradient norms
  std::vector<std::uint32_t> seen_count;
  std::vector<T> position_grad_sum;  // N x 3, world-space

  explicit DensifyAccumulator(size_t n = 0) { reset(n); }

  void reset(size_t n) {
    grad_norm_sum.assign(n, T(0));
    seen_count.assign(n, 0);
    position_grad_sum.assign(3 * n, T(0));
  }

  size_t size() const { return seen_count.size(); }

  void add(std::span<const T> viewspace_norm, std::span<const std::uint8_t> visible, std::span<const T> d_positions) {
    for (size_t i = 0; i < seen_count.size(); ++i) {
      if (!visible[i]) continue;
      grad_norm_sum[i] += viewspace_norm[i];
      ++seen_count[i];
      for (int c = 0; c < 3; ++c) position_grad_sum[3 * i + c] += d_positions[3 * i + c];
    }
  }

  T mean_grad(size_t i) const { return seen_count[i] ? grad_norm_sum[i] / T(seen_count[i]) : T(0); }

  void reindex(const IndexMap& map) {
    grad_norm_sum = map.apply(grad_norm_sum, 1, T(0));
    seen_count = map.apply(seen_count, 1, std::uint32_t(0));
    position_grad_sum = map.apply(position_grad_sum, 3, T(0));
  }
};

/// Influence weights W_i summed over the accumulation window.
template <typename T>
struct InfluenceAccumulator {
  std::vector<T> weight_sum;
  std::size_t window_iters = 0;

  explicit InfluenceAccumulator(size_t n = 0) : weight_sum(n, T(0)) {}

  void add(std::span<const T> influence) {
    for (size_t i = 0; i < weight_sum.size(); ++i) weight_sum[i] += influence[i];
  }

  void reset(size_t n) {
    weight_sum.assign(n, T(0));
    window_iters = 0;
  }

  void reindex(const IndexMap& map) { weight_sum = map.apply(weight_sum, 1, T(0)); }
};

struct DensifyStats {
  size_t cloned = 0;
  size_t split = 0;
};

template <typename T>
struct MutationResult {
  GaussianCloud<T> cloud;
  IndexMap map;  // new rows marked kNewRow
  DensifyStats stats;
  IndexMap parents;  // like `map`, but new rows point at the row they derive from
};

/// Clones small and splits large Gaussians whose mean viewspace gradient
/// exceeds `threshold`. Clones move by `clone_step` against the accumulated
/// world-space gradient; split children are sampled from the parent Gaussian
/// with scales divided by 1.6 and the parent is removed. Children copy the
/// parent's latent shadows.
template <typename T>
MutationResult<T> densify(const GaussianCloud<T>& cloud, const DensifyAccumulator<T>& acc, T threshold,
                          T scene_extent, T percent_dense, T clone_step, Rng& rng) {
  const size_t n = cloud.size();
  require(acc.size() == n, ErrorKind::kInvalidState, "densify accumulator is not aligned with the cloud");
  const auto rotations = cloud.rotation.decoded();
  const T size_limit = percent_dense * scene_extent;

  std::vector<std::ptrdiff_t> copy_from;
  std::vector<std::ptrdiff_t> reported;
  std::vector<size_t> clones, splits;
  for (size_t i = 0; i < n; ++i) {
    const bool selected = acc.mean_grad(i) > threshold;
    const T max_scale = std::exp(std::max({cloud.log_scales[3 * i], cloud.log_scales[3 * i + 1], cloud.log_scales[3 * i + 2]}));
    if (selected && max_scale > size_limit) {
      splits.push_back(i);
      continue;
    }
    if (selected) clones.push_back(i);
    copy_from.push_back(std::ptrdiff_t(i));
    reported.push_back(std::ptrdiff_t(i));
  }
  const size_t kept = copy_from.size();
  for (size_t i : clones) {
    copy_from.push_back(std::ptrdiff_t(i));
    reported.push_back(IndexMap::kNewRow);
  }
  for (size_t i : splits)
    for (int c = 0; c < kSplitChildren; ++c) {
      copy_from.push_back(std::ptrdiff_t(i));
      reported.push_back(IndexMap::kNewRow);
    }

  MutationResult<T> out{gather_rows(cloud, copy_from), IndexMap{reported}, {clones.size(), splits.size()},
                        IndexMap{copy_from}};
  size_t row = kept;
  for (size_t i : clones) {
    const Vec3<T> g(acc.position_grad_sum[3 * i], acc.position_grad_sum[3 * i + 1], acc.position_grad_sum[3 * i + 2]);
    const T norm = g.norm();
    if (norm > T(0) && std::isfinite(double(norm)))
      for (int c = 0; c < 3; ++c) out.cloud.positions[3 * row + c] -= clone_step * g[c] / norm;
    ++row;
  }
  const T log_div = T(std::log(kSplitScaleDivisor));
  for (size_t i : splits) {
    const Vec4<T> raw_q(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]);
    const T qn = raw_q.norm();
    const Mat3<T> r = qn > T(0) ? quaternion_to_rotation<T>(raw_q / qn) : Mat3<T>::Identity();
    const Vec3<T> s = cloud.log_scale(i).array().exp().matrix();
    const Vec3<T> p = cloud.position(i);
    for (int c = 0; c < kSplitChildren; ++c) {
      const Vec3<T> z(T(rng.normal()) * s[0], T(rng.normal()) * s[1], T(rng.normal()) * s[2]);
      const Vec3<T> child = r * z + p;
      for (int k = 0; k < 3; ++k) {
        out.cloud.positions[3 * row + k] = child[k];
        out.cloud.log_scales[3 * row + k] = cloud.log_scales[3 * i + k] - log_div;
      }
      ++row;
    }
  }
  return out;
}

/// Removes Gaussians whose decoded opacity is below `epsilon_alpha`.
template <typename T>
MutationResult<T> prune_low_opacity(const GaussianCloud<T>& cloud, T epsilon_alpha) {
  const auto pre = cloud.opacity.decoded();
  std::vector<bool> keep(cloud.size());
  for (size_t i = 0; i < keep.size(); ++i) keep[i] = !(sigmoid(pre[i]) < epsilon_alpha);
  auto [c, m] = keep_rows(cloud, keep);
  return {std::move(c), m, {}, m};
}

/// Pulls every opacity above `target_alpha` down to it by re-solving the
/// opacity latent through the decoder. Returns the number of rows changed.
template <typename T>
size_t opacity_reset(GaussianCloud<T>& cloud, T target_alpha) {
  auto& attr = cloud.opacity;
  const auto pre = attr.decoded();
  const T target_pre = logit(target_alpha);
  std::vector<T> reset_value;
  if (attr.quantized) {
    const T one[1] = {target_pre};
    reset_value = init_latents_least_squares<T>(attr.decoder, std::span<const T>(one, 1)).shadow;
  } else {
    reset_value = {target_pre};
  }
  const size_t w = size_t(attr.width());
  size_t changed = 0;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (!(sigmoid(pre[i]) > target_alpha)) continue;
    for (size_t c = 0; c < w; ++c) attr.values[i * w + c] = reset_value[c];
    ++changed;
  }
  return changed;
}

/// Removes floor(fraction * N) Gaussians with the smallest accumulated
/// influence; ties go to lower decoded opacity, then lower index.
template <typename T>
MutationResult<T> influence_prune(const GaussianCloud<T>& cloud, InfluenceAccumulator<T>& influence, double fraction) {
  require(fraction > 0.0 && fraction < 1.0, ErrorKind::kConfiguration, "prune fraction must lie in (0, 1)");
  require(influence.window_iters > 0, ErrorKind::kInvalidState, "influence window is empty");
  require(influence.weight_sum.size() == cloud.size(), ErrorKind::kInvalidState,
          "influence accumulator is not aligned with the cloud");
  const size_t n = cloud.size();
  const size_t remove = size_t(std::floor(fraction * double(n)));
  const auto pre = cloud.opacity.decoded();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (influence.weight_sum[a] != influence.weight_sum[b]) return influence.weight_sum[a] < influence.weight_sum[b];
    if (pre[a] != pre[b]) return pre[a] < pre[b];
    return a < b;
  });
  std::vector<bool> keep(n, true);
  for (size_t k = 0; k < remove; ++k) keep[order[k]] = false;
  auto [c, m] = keep_rows(cloud, keep);
  influence.reset(c.size());
  return {std::move(c), m, {}, m};
}

}  // namespace eagles
