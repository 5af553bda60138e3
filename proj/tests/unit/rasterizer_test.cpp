#include <gtest/gtest.h>

#include <cmath>

#include "support/scenes.hpp"

using namespace eagles;
using eagles::testing::orbit_camera;
using eagles::testing::random_cloud;

namespace {

/// One isotropic Gaussian at the origin, viewed head-on from distance 2.
GaussianCloud<double> single_gaussian(double scale, double opacity, double rgb) {
  InitialAttributes<double> a;
  a.positions = {0, 0, 0};
  a.log_scales = {std::log(scale), std::log(scale), std::log(scale)};
  a.sh_base = {rgb_to_sh_base(rgb), rgb_to_sh_base(rgb), rgb_to_sh_base(rgb)};
  a.sh_rest.assign(kShRestDim, 0.0);
  a.rotation = {1, 0, 0, 0};
  a.opacity = {logit(opacity)};
  return make_cloud<double>(std::move(a), false, 0);
}

Camera<double> frontal_camera(int size, double focal) {
  Camera<double> cam;
  cam.width = cam.height = size;
  cam.focal = Vec2<double>(focal, focal);
  cam.principal_point = Vec2<double>(size / 2.0, size / 2.0);
  cam.world_to_camera(2, 3) = 2.0;  // camera at z = -2 looking down +z
  return cam;
}

}  // namespace

TEST(Rasterizer, EmptySceneRendersBackground) {
  const GaussianCloud<double> empty;
  const auto cam = orbit_camera<double>(20, 0.0);
  const Vec3<double> bg(0.25, 0.5, 0.75);
  const auto art = render(empty, decode_attributes(empty), cam, bg);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(art.image.at(x, y, c), bg[c]);
}

TEST(Rasterizer, CenterPixelFollowsCompositingFormula) {
  const double scale = 0.2, opacity = 0.6, rgb = 0.8, focal = 40;
  const auto cloud = single_gaussian(scale, opacity, rgb);
  const auto cam = frontal_camera(32, focal);
  const Vec3<double> bg(0.1, 0.1, 0.1);
  const auto art = render(cloud, decode_attributes(cloud), cam, bg);
  // The splat center sits on a pixel corner; pixel (16,16) has center (16.5,16.5).
  const double var = std::pow(focal * scale / 2.0, 2) + kCovarianceDilation;
  const double g = std::exp(-0.5 * (0.25 + 0.25) / var);
  const double alpha = opacity * g;
  EXPECT_NEAR(art.image.at(16, 16, 0), alpha * rgb + (1 - alpha) * 0.1, 1e-12);
  EXPECT_NEAR(art.final_transmittance[16 * 32 + 16], 1 - alpha, 1e-12);
}

TEST(Rasterizer, AlphaIsCappedAt099) {
  const auto cloud = single_gaussian(0.3, 0.99999, 1.0);
  const auto art = render(cloud, decode_attributes(cloud), frontal_camera(32, 40), Vec3<double>(0, 0, 0));
  double max_alpha = 0;
  for (const auto& e : art.tape) max_alpha = std::max(max_alpha, e.alpha);
  EXPECT_DOUBLE_EQ(max_alpha, kAlphaMax);
}

TEST(Rasterizer, ContributionsBelowThresholdAreSkipped) {
  const auto cloud = single_gaussian(0.2, 0.6, 0.5);
  const auto art = render(cloud, decode_attributes(cloud), frontal_camera(64, 40), Vec3<double>(0, 0, 0));
  for (const auto& e : art.tape) EXPECT_GE(e.alpha, kAlphaMin);
  // Corner pixels are far outside the footprint.
  EXPECT_EQ(art.final_transmittance[0], 1.0);
}

TEST(Rasterizer, GaussianBehindCameraIsCulled) {
  auto cloud = single_gaussian(0.2, 0.6, 0.5);
  cloud.positions = {0, 0, -3};
  const auto art = render(cloud, decode_attributes(cloud), frontal_camera(32, 40), Vec3<double>(0, 0, 0));
  EXPECT_EQ(art.splat_count, 0u);
  EXPECT_EQ(art.influence[0], 0.0);
}

TEST(Rasterizer, NearerGaussianOccludes) {
  InitialAttributes<double> a;
  a.positions = {0, 0, 1, 0, 0, 0};  // red far, green near
  a.log_scales.assign(6, std::log(0.5));
  a.sh_base = {rgb_to_sh_base(1.0), rgb_to_sh_base(0.0), rgb_to_sh_base(0.0),
               rgb_to_sh_base(0.0), rgb_to_sh_base(1.0), rgb_to_sh_base(0.0)};
  a.sh_rest.assign(2 * kShRestDim, 0.0);
  a.rotation = {1, 0, 0, 0, 1, 0, 0, 0};
  a.opacity = {logit(0.99), logit(0.99)};
  const auto cloud = make_cloud<double>(std::move(a), false, 0);
  const auto art = render(cloud, decode_attributes(cloud), frontal_camera(32, 20), Vec3<double>(0, 0, 0));
  EXPECT_GT(art.image.at(16, 16, 1), 0.9);
  EXPECT_LT(art.image.at(16, 16, 0), 0.1);
  EXPECT_GT(art.influence[1], art.influence[0]);
}

TEST(Rasterizer, BlendingIdentityHoldsInSinglePrecision) {
  for (int s = 0; s < 10; ++s) {
    const auto cloud = random_cloud<float>(40, 100 + std::uint64_t(s), s % 2 == 0);
    const auto art = render(cloud, decode_attributes(cloud), orbit_camera<float>(32, 0.5 * s), Vec3<float>(1, 1, 1));
    for (float t : eagles::testing::blending_totals(art)) EXPECT_NEAR(t, 1.0f, 1e-5f);
  }
}

TEST(Rasterizer, InfluenceEqualsSumOfBlendWeights) {
  const auto cloud = random_cloud<double>(12, 3, true);
  const auto art = render(cloud, decode_attributes(cloud), orbit_camera<double>(32, 0.2), Vec3<double>(0, 0, 0));
  const auto splats = cull_and_prepare(cloud, decode_attributes(cloud), orbit_camera<double>(32, 0.2));
  std::vector<double> w(cloud.size(), 0.0);
  for (const auto& e : art.tape) w[splats.indices[e.splat]] += e.alpha * e.transmittance;
  for (size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(art.influence[i], w[i], 1e-12);
}

TEST(Rasterizer, TileBoundariesDoNotCreateSeams) {
  // A Gaussian centered on the corner shared by four tiles renders symmetrically.
  auto cloud = single_gaussian(0.3, 0.7, 0.6);
  const auto art = render(cloud, decode_attributes(cloud), frontal_camera(32, 40), Vec3<double>(0, 0, 0));
  for (int d = 0; d < 6; ++d) {
    EXPECT_NEAR(art.image.at(15 - d, 16, 0), art.image.at(16 + d, 16, 0), 1e-12);
    EXPECT_NEAR(art.image.at(16, 15 - d, 0), art.image.at(16, 16 + d, 0), 1e-12);
  }
}

TEST(Rasterizer, UnquantizedGradientsMatchFiniteDifferences) {
  const auto cloud = random_cloud<double>(6, 17, false);
  Rng rng(3);
  std::vector<TrainingView<double>> views;
  for (int v = 0; v < 2; ++v)
    views.push_back({orbit_camera<double>(16, 0.4 * v), eagles::testing::random_image<double>(16, 16, rng)});
  for (const auto& c : eagles::testing::check_gradients(cloud, views, Vec3<double>(0.3, 0.3, 0.3), 0.2, 1e-6, 1e-3, 1e-8))
    EXPECT_EQ(c.failures, 0u) << c.group << " max rel err " << c.max_relative_error;
}

TEST(Rasterizer, PureL1GradientsMatchFiniteDifferences) {
  const auto cloud = random_cloud<double>(6, 23, true);
  Rng rng(4);
  std::vector<TrainingView<double>> views{{orbit_camera<double>(16, 1.0), eagles::testing::random_image<double>(16, 16, rng)}};
  for (const auto& c : eagles::testing::check_gradients(cloud, views, Vec3<double>(0, 0, 0), 0.0, 1e-6, 1e-3, 1e-8))
    EXPECT_EQ(c.failures, 0u) << c.group << " max rel err " << c.max_relative_error;
}

TEST(Rasterizer, RenderIsDeterministic) {
  const auto cloud = random_cloud<float>(50, 8, true);
  const auto cam = orbit_camera<float>(48, 1.3);
  const auto a = render(cloud, decode_attributes(cloud), cam, Vec3<float>(0, 0, 0)).image;
  const auto b = render(cloud, decode_attributes(cloud), cam, Vec3<float>(0, 0, 0)).image;
  EXPECT_EQ(a.data, b.data);
}

namespace {

/// Hand-built splat list; conic zero makes each splat's footprint flat.
SplatList<double> flat_splats(int size, const std::vector<double>& opacities, const std::vector<Vec3<double>>& colors,
                              std::array<int, 4> rect) {
  SplatList<double> s;
  s.width = s.height = size;
  s.cloud_count = opacities.size();
  for (size_t i = 0; i < opacities.size(); ++i) {
    s.indices.push_back(std::uint32_t(i));
    s.means2d.emplace_back(size / 2.0, size / 2.0);
    s.conics.emplace_back(0, 0, 0);
    s.depths.push_back(1.0 + double(i));
    s.radii.push_back(size);
    s.rects.push_back(rect);
    s.opacities.push_back(opacities[i]);
    s.colors.push_back(colors[i]);
  }
  return s;
}

Camera<double> pixel_camera(int size) {
  Camera<double> c;
  c.width = c.height = size;
  return c;
}

}  // namespace

TEST(Rasterizer, CullingSortsByDepthAndDropsCameraOrigin) {
  InitialAttributes<double> a;
  a.positions = {0, 0, 3, 0, 0, 1, 0, 0, 2, 0, 0, 0};
  a.log_scales.assign(12, std::log(0.1));
  a.sh_base.assign(12, 0.0);
  a.sh_rest.assign(4 * kShRestDim, 0.0);
  a.rotation = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0};
  a.opacity.assign(4, 0.0);
  const auto cloud = make_cloud<double>(std::move(a), false, 0);
  Camera<double> cam = frontal_camera(16, 10);
  cam.world_to_camera(2, 3) = 0.0;  // camera at the origin
  const auto s = cull_and_prepare(cloud, decode_attributes(cloud), cam);
  EXPECT_EQ(s.indices, (std::vector<std::uint32_t>{1, 2, 0}));
  const GaussianCloud<double> empty;
  EXPECT_EQ(cull_and_prepare(empty, decode_attributes(empty), cam).size(), 0u);
}

TEST(Rasterizer, SingleOpaqueSplatOnOnePixel) {
  const auto s = flat_splats(8, {1.0}, {Vec3<double>(1, 0, 0)}, {3, 3, 3, 3});
  const auto art = rasterize_forward(s, pixel_camera(8), Vec3<double>(0, 0, 0));
  EXPECT_DOUBLE_EQ(art.image.at(3, 3, 0), 0.99);
  EXPECT_DOUBLE_EQ(art.image.at(3, 3, 1), 0.0);
  EXPECT_DOUBLE_EQ(art.image.at(2, 3, 0), 0.0);
  EXPECT_DOUBLE_EQ(art.influence[0], 0.99);
}

TEST(Rasterizer, TwoCoincidentHalfTransparentSplats) {
  const Vec3<double> c1(1, 0, 0), c2(0, 1, 0), bg(0, 0, 1);
  const auto s = flat_splats(4, {0.5, 0.5}, {c1, c2}, {0, 0, 3, 3});
  const auto art = rasterize_forward(s, pixel_camera(4), bg);
  const Vec3<double> expected = 0.5 * c1 + 0.25 * c2 + 0.25 * bg;
  for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(art.image.at(1, 2, c), expected[c]);
  EXPECT_DOUBLE_EQ(art.influence[0], 0.5 * 16);
  EXPECT_DOUBLE_EQ(art.influence[1], 0.25 * 16);
}

TEST(Rasterizer, ColorGradientOfOnePixelIsItsBlendWeight) {
  const auto s = flat_splats(8, {1.0}, {Vec3<double>(1, 0, 0)}, {3, 3, 3, 3});
  const auto art = rasterize_forward(s, pixel_camera(8), Vec3<double>(0, 0, 0));
  Image<double> d(8, 8, 3);
  d.at(3, 3, 0) = 1.0;
  const auto g = rasterize_backward(s, art, d);
  EXPECT_DOUBLE_EQ(g.d_color[0].x(), 0.99);
  EXPECT_DOUBLE_EQ(g.d_color[0].y(), 0.0);
  const auto zero = rasterize_backward(s, art, Image<double>(8, 8, 3));
  EXPECT_EQ(zero.d_color[0], Vec3<double>(0, 0, 0));
  EXPECT_EQ(zero.d_opacity[0], 0.0);
  EXPECT_EQ(zero.d_mean2d[0], Vec2<double>(0, 0));
}

TEST(Rasterizer, ZeroImageGradientGivesZeroParameterGradients) {
  const auto cloud = random_cloud<double>(5, 31, true);
  Rng rng(1);
  const auto target = eagles::testing::random_image<double>(16, 16, rng);
  const auto cam = orbit_camera<double>(16, 0.3);
  const auto splats = cull_and_prepare(cloud, decode_attributes(cloud), cam);
  const auto art = rasterize_forward(splats, cam, Vec3<double>(0, 0, 0));
  const auto sg = rasterize_backward(splats, art, Image<double>(16, 16, 3));
  const auto pg = chain_to_parameters(splats, sg, cloud, decode_attributes(cloud), cam);
  for (const auto* v : {&pg.d_positions, &pg.d_log_scales, &pg.d_rotation, &pg.d_opacity, &pg.d_sh_base, &pg.d_sh_rest})
    for (double x : *v) EXPECT_EQ(x, 0.0);
}

TEST(Rasterizer, QuantizedGradientsHoldBelowTheAcceptanceFloor) {
  const auto cloud = random_cloud<double>(8, 2024, true);
  Rng rng(99);
  std::vector<TrainingView<double>> views;
  for (int v = 0; v < 2; ++v)
    views.push_back({orbit_camera<double>(16, 0.5 * v - 0.25), eagles::testing::random_image<double>(16, 16, rng)});
  size_t measured = 0;
  for (const auto& c : eagles::testing::check_gradients(cloud, views, Vec3<double>(0.1, 0.2, 0.3), 0.2, 1e-6, 1e-3, 1e-10)) {
    EXPECT_EQ(c.failures, 0u) << c.group << " max rel err " << c.max_relative_error;
    if (c.max_relative_error > 0.0) ++measured;
  }
  EXPECT_GT(measured, 0u);
}
