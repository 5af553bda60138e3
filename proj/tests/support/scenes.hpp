#pragma once

// Small randomized scenes and numeric helpers shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eagles/eagles.hpp"

namespace eagles::testing {

struct RandomCloudOptions {
  double position_range = 0.6;
  double scale_min = 0.12, scale_max = 0.35;
  double opacity_min = 0.3, opacity_max = 0.85;
  double sh_rest_amplitude = 0.2;
};

template <typename T>
InitialAttributes<T> random_attributes(size_t n, Rng& rng, const RandomCloudOptions& o = {}) {
  InitialAttributes<T> a;
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) a.positions.push_back(T(o.position_range * (2.0 * rng.uniform() - 1.0)));
    for (int c = 0; c < 3; ++c)
      a.log_scales.push_back(T(std::log(o.scale_min + (o.scale_max - o.scale_min) * rng.uniform())));
    for (int c = 0; c < 3; ++c) a.sh_base.push_back(T(rgb_to_sh_base(0.1 + 0.8 * rng.uniform())));
    for (int k = 0; k < kShRestDim; ++k) a.sh_rest.push_back(T(o.sh_rest_amplitude * rng.normal()));
    Vec4<double> q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    for (int c = 0; c < 4; ++c) a.rotation.push_back(T(q[c]));
    a.opacity.push_back(T(logit(o.opacity_min + (o.opacity_max - o.opacity_min) * rng.uniform())));
  }
  return a;
}

template <typename T>
GaussianCloud<T> random_cloud(size_t n, std::uint64_t seed, bool quantized, const RandomCloudOptions& o = {}) {
  Rng rng(seed);
  return make_cloud<T>(random_attributes<T>(n, rng, o), quantized, seed);
}

/// Pinhole camera on a circle of `radius` around the origin, looking at it.
template <typename T>
Camera<T> orbit_camera(int size, double angle, double radius = 3.0, double elevation = 0.2, double fov = 0.9) {
  const Vec3<double> eye(radius * std::cos(elevation) * std::sin(angle), radius * std::sin(elevation),
                         -radius * std::cos(elevation) * std::cos(angle));
  Camera<T> c;
  c.world_to_camera = look_at<double>(eye, Vec3<double>::Zero(), Vec3<double>(0, 1, 0)).template cast<T>();
  c.width = c.height = size;
  const double f = 0.5 * size / std::tan(0.5 * fov);
  c.focal = Vec2<T>(T(f), T(f));
  c.principal_point = Vec2<T>(T(0.5 * size), T(0.5 * size));
  return c;
}

template <typename T>
Image<T> random_image(int w, int h, Rng& rng) {
  Image<T> img(w, h, 3);
  for (auto& v : img.data) v = T(rng.uniform());
  return img;
}

/// Named view of one differentiable parameter group of a cloud.
template <typename T>
struct ParameterGroup {
  std::string name;
  std::function<std::vector<T>&(GaussianCloud<T>&)> values;
  std::function<const std::vector<T>&(const CloudGradients<T>&)> gradient;
  double step_scale = 1.0;  // decoder weights use 10 * step / max|latent|
};

template <typename T>
std::vector<ParameterGroup<T>> parameter_groups(const GaussianCloud<T>& cloud) {
  std::vector<ParameterGroup<T>> g;
  g.push_back({"position", [](GaussianCloud<T>& c) -> std::vector<T>& { return c.positions; },
               [](const CloudGradients<T>& d) -> const std::vector<T>& { return d.d_positions; }});
  g.push_back({"log_scale", [](GaussianCloud<T>& c) -> std::vector<T>& { return c.log_scales; },
               [](const CloudGradients<T>& d) -> const std::vector<T>& { return d.d_log_scales; }});
  g.push_back({"sh_base", [](GaussianCloud<T>& c) -> std::vector<T>& { return c.sh_base; },
               [](const CloudGradients<T>& d) -> const std::vector<T>& { return d.d_sh_base; }});
  for (AttributeId id : kLatentAttributes) {
    const std::string name(attribute_spec(id).name);
    const size_t a = size_t(id);
    const bool q = cloud.attribute(id).quantized;
    g.push_back({name + (q ? "_latent" : ""),
                 [id](GaussianCloud<T>& c) -> std::vector<T>& { return c.attribute(id).values; },
                 [a](const CloudGradients<T>& d) -> const std::vector<T>& { return d.attributes[a].d_values; }});
    if (!q) continue;
    double max_latent = 1.0;
    for (T v : cloud.attribute(id).values) max_latent = std::max(max_latent, std::abs(double(v)));
    g.push_back({name + "_decoder_weight",
                 [id](GaussianCloud<T>& c) -> std::vector<T>& { return c.attribute(id).decoder.weight; },
                 [a](const CloudGradients<T>& d) -> const std::vector<T>& { return d.attributes[a].d_weight; },
                 10.0 / max_latent});
    g.push_back({name + "_decoder_bias",
                 [id](GaussianCloud<T>& c) -> std::vector<T>& { return c.attribute(id).decoder.bias; },
                 [a](const CloudGradients<T>& d) -> const std::vector<T>& { return d.attributes[a].d_bias; }});
  }
  return g;
}

struct GradientCheck {
  std::string group;
  size_t checked = 0;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  size_t failures = 0;
};

/// Compares analytic gradients of the summed multi-view loss against central
/// differences. An entry passes when its absolute error is within `abs_floor`
/// or its relative error is below `rel_tol`. Latents pass through unrounded.
template <typename T>
std::vector<GradientCheck> check_gradients(GaussianCloud<T> cloud, const std::vector<TrainingView<T>>& views,
                                           const Vec3<T>& background, T lambda, double step, double rel_tol,
                                           double abs_floor) {
  const auto [loss, grads] = total_loss_and_gradients(cloud, views, background, lambda, Rounding::kPassThrough);
  (void)loss;
  std::vector<GradientCheck> out;
  for (const auto& group : parameter_groups(cloud)) {
    GradientCheck r;
    r.group = group.name;
    const auto& analytic = group.gradient(grads);
    auto& values = group.values(cloud);
    const double h = step * group.step_scale;
    for (size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + T(h);
      const double up = double(total_loss(cloud, views, background, lambda, Rounding::kPassThrough));
      values[i] = saved - T(h);
      const double down = double(total_loss(cloud, views, background, lambda, Rounding::kPassThrough));
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = double(analytic.at(i));
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-300});
      ++r.checked;
      r.max_absolute_error = std::max(r.max_absolute_error, abs_err);
      if (abs_err > abs_floor) {
        r.max_relative_error = std::max(r.max_relative_error, rel_err);
        if (rel_err >= rel_tol) ++r.failures;
      }
    }
    out.push_back(r);
  }
  return out;
}

/// Per-pixel sum of blending weights plus the final transmittance.
template <typename T>
std::vector<T> blending_totals(const RenderArtifacts<T>& art) {
  std::vector<T> totals(art.final_transmittance.size());
  for (size_t p = 0; p < totals.size(); ++p) {
    T sum = art.final_transmittance[p];
    for (size_t k = art.tape_offsets[p]; k < art.tape_offsets[p + 1]; ++k)
      sum += art.tape[k].alpha * art.tape[k].transmittance;
    totals[p] = sum;
  }
  return totals;
}

template <typename T>
double max_abs_difference(const Image<T>& a, const Image<T>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
  return m;
}

inline double fraction_in_open_range(const std::vector<float>& opacity_pre, double lo, double hi) {
  if (opacity_pre.empty()) return 0.0;
  size_t inside = 0;
  for (float v : opacity_pre) {
    const double s = sigmoid(double(v));
    inside += s > lo && s < hi;
  }
  return double(inside) / double(opacity_pre.size());
}

}  // namespace eagles::testing
