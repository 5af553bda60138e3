#pragma once

// Depth-sorted alpha compositing of projected Gaussians, with the analytic
// backward pass. Pixels are processed in row-major order and every per-splat
// accumulation follows that order, so results are reproducible bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "eagles/cloud.hpp"
#include "eagles/core_math.hpp"
#include "eagles/error.hpp"
#include "eagles/image.hpp"

namespace eagles {

inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kDegenerateDeterminant = 1e-12;
inline constexpr double kMinRadius = 0.5;
inline constexpr int kTileSize = 16;

/// Per-view forward quantities of one Gaussian, shared by the forward
/// preparation and the parameter chain rule so both see identical values.
template <typename T>
struct GaussianView {
  bool visible = false;
  Vec3<T> t;  // camera-frame mean
  Vec2<T> mean2d;
  Vec4<T> unit_quaternion;
  T quaternion_norm = 0;
  Mat3<T> rotation;
  Vec3<T> scale;
  Mat3<T> cov3d;
  PerspectiveJacobian<T> jacobian;
  Mat23<T> jw;  // J W
  Mat2<T> cov2d;
  Vec3<T> conic;  // (a, b, c) of the inverse 2D covariance
  T radius = 0;   // 3 sigma, rounded up to whole pixels
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive pixel rectangle
  Vec3<T> view_dir;
  T view_distance = 0;
  Vec3<T> color_unclamped;
  T opacity = 0;
};

template <typename T>
GaussianView<T> prepare_gaussian(const GaussianCloud<T>& cloud, const DecodedAttributes<T>& decoded,
                                 const Camera<T>& camera, size_t i) {
  GaussianView<T> g;
  const Vec3<T> p = cloud.position(i);
  const Mat3<T> w = camera.rotation();
  g.t = w * p + camera.translation();
  if (!(g.t.z() > camera.near_plane) || g.t.z() > camera.far_plane) return g;

  const Vec4<T> raw_q = decoded.quaternion(i);
  g.quaternion_norm = raw_q.norm();
  if (!(g.quaternion_norm > T(0))) return g;
  g.unit_quaternion = raw_q / g.quaternion_norm;
  g.rotation = quaternion_to_rotation(g.unit_quaternion);
  g.scale = cloud.log_scale(i).array().exp().matrix();
  const Mat3<T> rs = g.rotation * g.scale.asDiagonal();
  g.cov3d = rs * rs.transpose();

  g.jacobian = perspective_jacobian(camera, g.t);
  g.jw = g.jacobian.j * w;
  g.cov2d = g.jw * g.cov3d * g.jw.transpose();
  g.cov2d(0, 0) += T(kCovarianceDilation);
  g.cov2d(1, 1) += T(kCovarianceDilation);
  const T a = g.cov2d(0, 0), b = g.cov2d(0, 1), c = g.cov2d(1, 1);
  const T det = a * c - b * b;
  if (!(det > T(kDegenerateDeterminant))) return g;
  g.conic = Vec3<T>(c / det, -b / det, a / det);

  const T mid = T(0.5) * (a + c);
  const T lambda_max = mid + std::sqrt(std::max(T(0), mid * mid - det));
  const T r = T(3) * std::sqrt(lambda_max);
  if (!(r >= T(kMinRadius))) return g;
  g.radius = std::ceil(r);

  g.mean2d = Vec2<T>(camera.focal.x() * g.t.x() / g.t.z() + camera.principal_point.x(),
                     camera.focal.y() * g.t.y() / g.t.z() + camera.principal_point.y());
  // Pixel centers sit at integer + 0.5.
  const double lo_x = std::ceil(double(g.mean2d.x() - g.radius) - 0.5);
  const double hi_x = std::floor(double(g.mean2d.x() + g.radius) - 0.5);
  const double lo_y = std::ceil(double(g.mean2d.y() - g.radius) - 0.5);
  const double hi_y = std::floor(double(g.mean2d.y() + g.radius) - 0.5);
  if (!(hi_x >= 0.0 && lo_x <= camera.width - 1.0 && hi_y >= 0.0 && lo_y <= camera.height - 1.0)) return g;
  g.x0 = int(std::max(lo_x, 0.0));
  g.x1 = int(std::min(hi_x, camera.width - 1.0));
  g.y0 = int(std::max(lo_y, 0.0));
  g.y1 = int(std::min(hi_y, camera.height - 1.0));
  if (g.x0 > g.x1 || g.y0 > g.y1) return g;

  const Vec3<T> v = p - camera.center();
  g.view_distance = v.norm();
  if (!(g.view_distance > T(0))) return g;
  g.view_dir = v / g.view_distance;
  const std::span<const T> base(cloud.sh_base.data() + 3 * i, 3);
  const std::span<const T> rest(decoded.sh_rest.data() + kShRestDim * i, kShRestDim);
  g.color_unclamped = eval_sh_unclamped<T>(base, rest, g.view_dir);
  g.opacity = sigmoid(decoded.opacity[i]);
  g.visible = true;
  return g;
}

/// Gaussians surviving culling for one view, sorted front to back.
template <typename T>
struct SplatList {
  size_t cloud_count = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> indices;
  std::vector<Vec2<T>> means2d;
  std::vector<Vec3<T>> conics;
  std::vector<T> depths;
  std::vector<T> radii;
  std::vector<std::array<int, 4>> rects;  // x0, y0, x1, y1 (inclusive)
  std::vector<T> opacities;
  std::vector<Vec3<T>> colors;

  size_t size() const { return indices.size(); }
};

template <typename T>
SplatList<T> cull_and_prepare(const GaussianCloud<T>& cloud, const DecodedAttributes<T>& decoded,
                              const Camera<T>& camera) {
  const size_t n = cloud.size();
  require(decoded.opacity.size() == n && decoded.rotation.size() == 4 * n &&
              decoded.sh_rest.size() == size_t(kShRestDim) * n,
          ErrorKind::kInvalidInput, "decoded attribute arrays do not match the cloud");
  std::vector<GaussianView<T>> views;
  std::vector<std::uint32_t> order;
  views.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    views.push_back(prepare_gaussian(cloud, decoded, camera, i));
    if (views.back().visible) order.push_back(std::uint32_t(i));
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return views[a].t.z() < views[b].t.z(); });

  SplatList<T> s;
  s.cloud_count = n;
  s.width = camera.width;
  s.height = camera.height;
  s.indices = order;
  for (std::uint32_t i : order) {
    const auto& g = views[i];
    s.means2d.push_back(g.mean2d);
    s.conics.push_back(g.conic);
    s.depths.push_back(g.t.z());
    s.radii.push_back(g.radius);
    s.rects.push_back({g.x0, g.y0, g.x1, g.y1});
    s.opacities.push_back(g.opacity);
    s.colors.push_back(g.color_unclamped.cwiseMax(T(0)));
  }
  return s;
}

template <typename T>
struct TapeEntry {
  std::uint32_t splat;  // position in the splat list
  T alpha;
  T transmittance;  // before this splat
  T gaussian;       // 2D Gaussian value; alpha = min(0.99, opacity * gaussian)
};

template <typename T>
struct RenderArtifacts {
  Image<T> image;
  std::vector<T> final_transmittance;  // H x W
  std::vector<T> influence;            // per Gaussian in the cloud
  // Per-pixel contributions, front to back; pixel p owns
  // tape[tape_offsets[p] .. tape_offsets[p + 1]).
  std::vector<TapeEntry<T>> tape;
  std::vector<std::uint32_t> tape_offsets;
  size_t splat_count = 0;
  Vec3<T> background = Vec3<T>::Zero();
};

namespace detail {

/// Splat-list positions whose rectangle touches each 16x16 tile, in depth order.
template <typename T>
std::vector<std::vector<std::uint32_t>> bin_splats(const SplatList<T>& splats, int tiles_x, int tiles_y) {
  std::vector<std::vector<std::uint32_t>> bins(size_t(tiles_x) * tiles_y);
  for (size_t s = 0; s < splats.size(); ++s) {
    const auto& r = splats.rects[s];
    for (int ty = r[1] / kTileSize; ty <= r[3] / kTileSize; ++ty)
      for (int tx = r[0] / kTileSize; tx <= r[2] / kTileSize; ++tx)
        bins[size_t(ty) * tiles_x + tx].push_back(std::uint32_t(s));
  }
  return bins;
}

}  // namespace detail

template <typename T>
RenderArtifacts<T> rasterize_forward(const SplatList<T>& splats, const Camera<T>& camera,
                                     const Vec3<T>& background) {
  require(camera.width == splats.width && camera.height == splats.height, ErrorKind::kInvalidInput,
          "camera resolution differs from the splat list");
  const int w = camera.width, h = camera.height;
  RenderArtifacts<T> out;
  out.image = Image<T>(w, h, 3);
  out.final_transmittance.assign(size_t(w) * h, T(1));
  out.influence.assign(splats.cloud_count, T(0));
  out.tape_offsets.assign(size_t(w) * h + 1, 0);
  out.splat_count = splats.size();
  out.background = background;

  const int tiles_x = (w + kTileSize - 1) / kTileSize;
  const int tiles_y = (h + kTileSize - 1) / kTileSize;
  const auto bins = detail::bin_splats(splats, tiles_x, tiles_y);

  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      const size_t pixel = size_t(py) * w + px;
      out.tape_offsets[pixel] = std::uint32_t(out.tape.size());
      const auto& bin = bins[size_t(py / kTileSize) * tiles_x + px / kTileSize];
      const T cx = T(px) + T(0.5), cy = T(py) + T(0.5);
      T transmittance = T(1);
      Vec3<T> color = Vec3<T>::Zero();
      for (std::uint32_t s : bin) {
        const auto& r = splats.rects[s];
        if (px < r[0] || px > r[2] || py < r[1] || py > r[3]) continue;
        const T dx = cx - splats.means2d[s].x();
        const T dy = cy - splats.means2d[s].y();
        const Vec3<T>& q = splats.conics[s];
        const T power = T(-0.5) * (q[0] * dx * dx + q[2] * dy * dy) - q[1] * dx * dy;
        if (power > T(0)) continue;
        const T gauss = std::exp(power);
        const T alpha = std::min(T(kAlphaMax), splats.opacities[s] * gauss);
        if (alpha < T(kAlphaMin)) continue;
        const T weight = alpha * transmittance;
        out.tape.push_back({s, alpha, transmittance, gauss});
        color += splats.colors[s] * weight;
        out.influence[splats.indices[s]] += weight;
        transmittance *= T(1) - alpha;
        if (transmittance < T(kTransmittanceStop)) break;
      }
      out.final_transmittance[pixel] = transmittance;
      color += background * transmittance;
      for (int c = 0; c < 3; ++c) out.image.at(px, py, c) = color[c];
    }
  }
  out.tape_offsets[size_t(w) * h] = std::uint32_t(out.tape.size());
  return out;
}

/// Gradients with respect to each splat in list order.
template <typename T>
struct SplatGradients {
  std::vector<Vec2<T>> d_mean2d;
  std::vector<Vec3<T>> d_conic;  // (a, b, c), b being the single off-diagonal entry
  std::vector<T> d_opacity;      // post-sigmoid opacity
  std::vector<Vec3<T>> d_color;  // clamped per-view color
};

template <typename T>
SplatGradients<T> rasterize_backward(const SplatList<T>& splats, const RenderArtifacts<T>& artifacts,
                                     const Image<T>& d_image) {
  const int w = splats.width, h = splats.height;
  require(artifacts.splat_count == splats.size() && artifacts.image.width == w &&
              artifacts.image.height == h && artifacts.tape_offsets.size() == size_t(w) * h + 1,
          ErrorKind::kInvalidState, "render tape does not belong to this splat list");
  require(d_image.width == w && d_image.height == h && d_image.channels == 3, ErrorKind::kInvalidInput,
          "image gradient shape mismatch");

  const size_t n = splats.size();
  SplatGradients<T> g;
  g.d_mean2d.assign(n, Vec2<T>::Zero());
  g.d_conic.assign(n, Vec3<T>::Zero());
  g.d_opacity.assign(n, T(0));
  g.d_color.assign(n, Vec3<T>::Zero());

  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      const size_t pixel = size_t(py) * w + px;
      const Vec3<T> d_pix(d_image.at(px, py, 0), d_image.at(px, py, 1), d_image.at(px, py, 2));
      if (d_pix.isZero()) continue;
      const T cx = T(px) + T(0.5), cy = T(py) + T(0.5);
      // Color composited behind the current splat, including the background.
      Vec3<T> behind = artifacts.background * artifacts.final_transmittance[pixel];
      const std::uint32_t begin = artifacts.tape_offsets[pixel];
      for (std::uint32_t e = artifacts.tape_offsets[pixel + 1]; e-- > begin;) {
        const TapeEntry<T>& entry = artifacts.tape[e];
        const std::uint32_t s = entry.splat;
        const T weight = entry.alpha * entry.transmittance;
        const Vec3<T>& c = splats.colors[s];
        g.d_color[s] += weight * d_pix;
        const T d_alpha = entry.transmittance * c.dot(d_pix) - behind.dot(d_pix) / (T(1) - entry.alpha);
        behind += c * weight;
        if (splats.opacities[s] * entry.gaussian > T(kAlphaMax)) continue;
        g.d_opacity[s] += entry.gaussian * d_alpha;
        const T d_gauss = splats.opacities[s] * d_alpha;
        const T dx = cx - splats.means2d[s].x();
        const T dy = cy - splats.means2d[s].y();
        const Vec3<T>& q = splats.conics[s];
        const T gd = entry.gaussian * d_gauss;
        g.d_conic[s] += Vec3<T>(T(-0.5) * gd * dx * dx, -gd * dx * dy, T(-0.5) * gd * dy * dy);
        g.d_mean2d[s] += gd * Vec2<T>(q[0] * dx + q[1] * dy, q[1] * dx + q[2] * dy);
      }
    }
  }
  return g;
}

template <typename T>
struct ParameterGradients {
  std::vector<T> d_positions;   // N x 3
  std::vector<T> d_log_scales;  // N x 3
  std::vector<T> d_rotation;    // N x 4, raw quaternion
  std::vector<T> d_opacity;     // N, pre-activation
  std::vector<T> d_sh_base;     // N x 3
  std::vector<T> d_sh_rest;     // N x 45
  std::vector<T> viewspace_grad_norm;  // N, NDC units
  std::vector<std::uint8_t> visible;   // N

  explicit ParameterGradients(size_t n = 0) { resize(n); }

  void resize(size_t n) {
    d_positions.assign(3 * n, T(0));
    d_log_scales.assign(3 * n, T(0));
    d_rotation.assign(4 * n, T(0));
    d_opacity.assign(n, T(0));
    d_sh_base.assign(3 * n, T(0));
    d_sh_rest.assign(size_t(kShRestDim) * n, T(0));
    viewspace_grad_norm.assign(n, T(0));
    visible.assign(n, 0);
  }

  /// Elementwise sum; visibility is or-ed and viewspace norms are summed.
  void accumulate(const ParameterGradients& o) {
    auto add = [](std::vector<T>& a, const std::vector<T>& b) {
      for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(d_positions, o.d_positions);
    add(d_log_scales, o.d_log_scales);
    add(d_rotation, o.d_rotation);
    add(d_opacity, o.d_opacity);
    add(d_sh_base, o.d_sh_base);
    add(d_sh_rest, o.d_sh_rest);
    add(viewspace_grad_norm, o.viewspace_grad_norm);
    for (size_t i = 0; i < visible.size(); ++i) visible[i] |= o.visible[i];
  }
};

/// Chain rule from splat-space gradients to the per-Gaussian parameters
/// (position, log-scale, raw quaternion, opacity pre-activation, SH).
template <typename T>
ParameterGradients<T> chain_to_parameters(const SplatList<T>& splats, const SplatGradients<T>& grads,
                                          const GaussianCloud<T>& cloud, const DecodedAttributes<T>& decoded,
                                          const Camera<T>& camera) {
  ParameterGradients<T> out(cloud.size());
  const Mat3<T> w = camera.rotation();
  const T fx = camera.focal.x(), fy = camera.focal.y();
  for (size_t s = 0; s < splats.size(); ++s) {
    const size_t i = splats.indices[s];
    const GaussianView<T> g = prepare_gaussian(cloud, decoded, camera, i);
    require(g.visible, ErrorKind::kInvalidState, "splat list does not match the cloud");
    out.visible[i] = 1;
    const Vec2<T>& dm = grads.d_mean2d[s];
    out.viewspace_grad_norm[i] =
        Vec2<T>(dm.x() * T(0.5) * T(camera.width), dm.y() * T(0.5) * T(camera.height)).norm();

    // Opacity through the sigmoid.
    out.d_opacity[i] = grads.d_opacity[s] * g.opacity * (T(1) - g.opacity);

    // Color through the SH basis and the view direction.
    Vec3<T> d_pos = Vec3<T>::Zero();
    {
      Vec3<T> d_raw = grads.d_color[s];
      for (int c = 0; c < 3; ++c)
        if (!(g.color_unclamped[c] > T(0))) d_raw[c] = T(0);
      const auto basis = sh_basis(g.view_dir);
      const auto basis_grad = sh_basis_gradient(g.view_dir);
      const T* rest = decoded.sh_rest.data() + size_t(kShRestDim) * i;
      T* d_rest = out.d_sh_rest.data() + size_t(kShRestDim) * i;
      for (int c = 0; c < 3; ++c) out.d_sh_base[3 * i + c] = basis[0] * d_raw[c];
      Vec3<T> d_dir = Vec3<T>::Zero();
      for (int k = 1; k < kShBasisCount; ++k) {
        const T* coeff = rest + (k - 1) * 3;
        T* d_coeff = d_rest + (k - 1) * 3;
        for (int c = 0; c < 3; ++c) d_coeff[c] = basis[k] * d_raw[c];
        d_dir += basis_grad[k] * (coeff[0] * d_raw[0] + coeff[1] * d_raw[1] + coeff[2] * d_raw[2]);
      }
      d_pos += (d_dir - g.view_dir * g.view_dir.dot(d_dir)) / g.view_distance;
    }

    // Conic -> 2D covariance -> (J, Sigma3d).
    const Vec3<T>& dq = grads.d_conic[s];
    Mat2<T> g_conic;
    g_conic << dq[0], T(0.5) * dq[1], T(0.5) * dq[1], dq[2];
    Mat2<T> conic;
    conic << g.conic[0], g.conic[1], g.conic[1], g.conic[2];
    const Mat2<T> g_cov2 = -conic * g_conic * conic;
    const Mat3<T> g_cov3 = g.jw.transpose() * g_cov2 * g.jw;
    const Mat23<T> g_jw = T(2) * g_cov2 * g.jw * g.cov3d;
    const Mat23<T> g_j = g_jw * w.transpose();

    Vec3<T> d_t = Vec3<T>::Zero();
    {
      const T tx = g.t.x(), ty = g.t.y(), tz = g.t.z();
      const T tz2 = tz * tz;
      const T ux = g.jacobian.ratio_x, uy = g.jacobian.ratio_y;
      const T dux_dtx = g.jacobian.free_x ? T(1) / tz : T(0);
      const T dux_dtz = g.jacobian.free_x ? -tx / tz2 : T(0);
      const T duy_dty = g.jacobian.free_y ? T(1) / tz : T(0);
      const T duy_dtz = g.jacobian.free_y ? -ty / tz2 : T(0);
      // J02 = -fx ux / tz, J12 = -fy uy / tz.
      d_t.x() += g_j(0, 2) * (-fx * dux_dtx / tz);
      d_t.y() += g_j(1, 2) * (-fy * duy_dty / tz);
      d_t.z() += g_j(0, 0) * (-fx / tz2) + g_j(1, 1) * (-fy / tz2) +
                 g_j(0, 2) * (-fx * (dux_dtz * tz - ux) / tz2) +
                 g_j(1, 2) * (-fy * (duy_dtz * tz - uy) / tz2);
      // Projected mean.
      d_t.x() += dm.x() * fx / tz;
      d_t.y() += dm.y() * fy / tz;
      d_t.z() += -dm.x() * fx * tx / tz2 - dm.y() * fy * ty / tz2;
    }
    d_pos += w.transpose() * d_t;
    for (int c = 0; c < 3; ++c) out.d_positions[3 * i + c] = d_pos[c];

    // Sigma3d = (R S)(R S)^T.
    const Mat3<T> rs = g.rotation * g.scale.asDiagonal();
    const Mat3<T> g_rs = T(2) * g_cov3 * rs;
    const Mat3<T> rt_g = g.rotation.transpose() * g_rs;
    for (int c = 0; c < 3; ++c) out.d_log_scales[3 * i + c] = rt_g(c, c) * g.scale[c];
    const Mat3<T> g_rot = g_rs * g.scale.asDiagonal();
    const Vec4<T> d_unit = rotation_backward(g.unit_quaternion, g_rot);
    const Vec4<T> d_raw_q =
        (d_unit - g.unit_quaternion * g.unit_quaternion.dot(d_unit)) / g.quaternion_norm;
    for (int c = 0; c < 4; ++c) out.d_rotation[4 * i + c] = d_raw_q[c];
  }
  return out;
}

/// Full forward render of a cloud from one camera.
template <typename T>
RenderArtifacts<T> render(const GaussianCloud<T>& cloud, const DecodedAttributes<T>& decoded,
                          const Camera<T>& camera, const Vec3<T>& background) {
  return rasterize_forward(cull_and_prepare(cloud, decoded, camera), camera, background);
}

}  // namespace eagles
