#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "eagles/cloud.hpp"
#include "eagles/core_math.hpp"
#include "eagles/dataset.hpp"
#include "eagles/ply.hpp"
#include "eagles/quantization.hpp"
#include "eagles/rasterizer.hpp"

namespace eagles {

/// Desk-scale scene recipe: Gaussians sampled in a cube, viewed by a ring of
/// cameras looking at the origin.
struct SyntheticSceneSpec {
  int gaussian_count = 200;
  double extent = 1.0;  // positions uniform in [-extent, extent]^3
  double color_min = 0.05, color_max = 0.95;
  double opacity_min = 0.6, opacity_max = 0.95;
  double scale_min = 0.04, scale_max = 0.14;  // fractions of extent, per axis
  double view_dependence = 0.5;               // amplitude of random higher SH bands
  int camera_count = 12;
  double ring_radius = 4.0;
  double ring_elevation = 0.35;  // radians above the horizontal plane
  double fov_x = 0.87;           // radians
  int resolution = 64;
  std::array<float, 3> background{0.0f, 0.0f, 0.0f};
  double init_fraction = 1.0;         // share of true centers seeding the init cloud
  double init_position_noise = 0.1;   // fractions of extent
  double init_color_noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    require(gaussian_count >= 1, ErrorKind::kConfiguration, "synthetic scene needs at least one Gaussian");
    require(resolution >= 16, ErrorKind::kConfiguration, "synthetic resolution must be at least 16");
    require(camera_count >= 1, ErrorKind::kConfiguration, "synthetic scene needs at least one camera");
    require(extent > 0 && ring_radius > 0 && fov_x > 0 && fov_x < std::numbers::pi, ErrorKind::kConfiguration,
            "synthetic extent, radius and field of view must be positive");
    require(color_min <= color_max && opacity_min <= opacity_max && scale_min <= scale_max && scale_min > 0 &&
                opacity_min > 0 && opacity_max < 1,
            ErrorKind::kConfiguration, "synthetic sampling ranges are inconsistent");
    require(init_fraction > 0.0 && init_fraction <= 1.0, ErrorKind::kConfiguration,
            "init fraction must lie in (0, 1]");
  }
};

/// World-to-camera transform for a camera at `eye` looking at `target`
/// (x right, y down, z forward).
template <typename T>
Mat4<T> look_at(const Vec3<T>& eye, const Vec3<T>& target, const Vec3<T>& up) {
  const Vec3<T> forward = (target - eye).normalized();
  const Vec3<T> right = forward.cross(up).normalized();
  const Vec3<T> down = forward.cross(right);
  Mat3<T> r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  Mat4<T> m = Mat4<T>::Identity();
  m.template block<3, 3>(0, 0) = r;
  m.template block<3, 1>(0, 3) = -r * eye;
  return m;
}

inline std::vector<Camera<float>> ring_cameras(const SyntheticSceneSpec& spec) {
  std::vector<Camera<float>> cams;
  const double f = 0.5 * spec.resolution / std::tan(0.5 * spec.fov_x);
  for (int i = 0; i < spec.camera_count; ++i) {
    const double theta = 2.0 * std::numbers::pi * i / spec.camera_count;
    const double e = spec.ring_elevation;
    const Vec3<double> eye(spec.ring_radius * std::cos(e) * std::cos(theta), spec.ring_radius * std::sin(e),
                           spec.ring_radius * std::cos(e) * std::sin(theta));
    Camera<float> c;
    c.world_to_camera = look_at<double>(eye, Vec3<double>::Zero(), Vec3<double>(0, 1, 0)).cast<float>();
    c.width = c.height = spec.resolution;
    c.focal = Vec2<float>(float(f), float(f));
    c.principal_point = Vec2<float>(0.5f * spec.resolution, 0.5f * spec.resolution);
    cams.push_back(c);
  }
  return cams;
}

struct SyntheticScene {
  GaussianCloud<float> ground_truth;  // raw mode
  ViewDataset dataset;
  InitPoints init_points;
};

inline SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const size_t n = size_t(spec.gaussian_count);
  InitialAttributes<float> a;
  a.positions.resize(3 * n);
  a.log_scales.resize(3 * n);
  a.sh_base.resize(3 * n);
  a.sh_rest.assign(size_t(kShRestDim) * n, 0.0f);
  a.rotation.resize(4 * n);
  a.opacity.resize(n);
  std::vector<float> colors(3 * n);
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) a.positions[3 * i + c] = float(spec.extent * (2.0 * rng.uniform() - 1.0));
    for (int c = 0; c < 3; ++c)
      a.log_scales[3 * i + c] =
          float(std::log(spec.extent * (spec.scale_min + (spec.scale_max - spec.scale_min) * rng.uniform())));
    Vec4<double> q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    if (q.norm() < 1e-9) q = Vec4<double>(1, 0, 0, 0);
    q.normalize();
    for (int c = 0; c < 4; ++c) a.rotation[4 * i + c] = float(q[c]);
    for (int c = 0; c < 3; ++c) {
      colors[3 * i + c] = float(spec.color_min + (spec.color_max - spec.color_min) * rng.uniform());
      a.sh_base[3 * i + c] = rgb_to_sh_base(colors[3 * i + c]);
    }
    if (spec.view_dependence > 0.0)
      for (int k = 0; k < kShRestDim; ++k)
        a.sh_rest[size_t(kShRestDim) * i + k] = float(spec.view_dependence * rng.normal());
    a.opacity[i] = float(logit(spec.opacity_min + (spec.opacity_max - spec.opacity_min) * rng.uniform()));
  }

  // Sparse, noisy stand-in for a structure-from-motion cloud.
  SyntheticScene scene;
  std::vector<size_t> pick(n);
  std::iota(pick.begin(), pick.end(), size_t(0));
  std::shuffle(pick.begin(), pick.end(), rng.engine());
  pick.resize(std::max<size_t>(1, size_t(std::ceil(spec.init_fraction * double(n)))));
  std::sort(pick.begin(), pick.end());
  for (size_t i : pick)
    for (int c = 0; c < 3; ++c) {
      scene.init_points.positions.push_back(
          float(a.positions[3 * i + c] + spec.extent * spec.init_position_noise * rng.normal()));
      scene.init_points.colors.push_back(
          float(std::clamp(colors[3 * i + c] + spec.init_color_noise * rng.normal(), 0.0, 1.0)));
    }
  scene.ground_truth = make_cloud(std::move(a), false, spec.seed);

  const auto decoded = decode_attributes(scene.ground_truth);
  const Vec3<float> bg(spec.background[0], spec.background[1], spec.background[2]);
  scene.dataset.background = bg;
  const auto cams = ring_cameras(spec);
  for (size_t i = 0; i < cams.size(); ++i) {
    View v;
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03zu", i);
    v.name = name;
    v.camera = cams[i];
    v.image = render(scene.ground_truth, decoded, cams[i], bg).image;
    scene.dataset.views.push_back(std::move(v));
  }
  return scene;
}

}  // namespace eagles
