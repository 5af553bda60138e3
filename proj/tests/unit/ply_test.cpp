#include <gtest/gtest.h>

#include <fstream>

#include "support/scenes.hpp"
#include "support/temp_dir.hpp"

using namespace eagles;

namespace {

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind(0);
}

}  // namespace

TEST(Ply, AsciiPointsWithByteColors) {
  eagles::testing::TempDir dir;
  write_text(dir.file("p.ply"),
             "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
             "property float x\nproperty float y\nproperty float z\n"
             "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
             "0 1 2 255 0 51\n-1.5 0.25 3 0 255 102\n");
  const auto pts = load_init_points(dir.file("p.ply"));
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts.positions, (std::vector<float>{0, 1, 2, -1.5f, 0.25f, 3}));
  EXPECT_FLOAT_EQ(pts.colors[0], 1.0f);
  EXPECT_FLOAT_EQ(pts.colors[2], 0.2f);
  EXPECT_FLOAT_EQ(pts.colors[5], 0.4f);
}

TEST(Ply, MissingColorsDefaultToGray) {
  eagles::testing::TempDir dir;
  write_text(dir.file("p.ply"),
             "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\n"
             "property double z\nend_header\n1 2 3\n");
  const auto pts = load_init_points(dir.file("p.ply"));
  EXPECT_EQ(pts.colors, (std::vector<float>{0.5f, 0.5f, 0.5f}));
}

TEST(Ply, BinaryWriterAndReaderAgree) {
  eagles::testing::TempDir dir;
  InitPoints pts;
  pts.positions = {0.1f, 0.2f, 0.3f, -4, 5, 6};
  pts.colors = {0, 0.5f, 1, 1, 1, 0};
  write_point_ply(dir.file("p.ply"), pts);
  const auto back = load_init_points(dir.file("p.ply"));
  EXPECT_EQ(back.positions, pts.positions);
  for (size_t i = 0; i < 6; ++i) EXPECT_NEAR(back.colors[i], pts.colors[i], 0.5 / 255.0 + 1e-7);
}

TEST(Ply, MalformedFilesRaiseParseErrors) {
  eagles::testing::TempDir dir;
  const std::string head = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n";
  write_text(dir.file("a.ply"), "plx\n");
  write_text(dir.file("b.ply"), head + "property float z\nend_header\n1 2 3\n");
  write_text(dir.file("c.ply"), head + "end_header\n1 2\n3 4\n");
  write_text(dir.file("d.ply"), head + "property float z\nend_header\n1 2 3\n4 five 6\n");
  write_text(dir.file("e.ply"), "ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\n"
                                "property float y\nproperty float z\nend_header\nabc");
  for (const char* name : {"a.ply", "b.ply", "c.ply", "d.ply", "e.ply"})
    EXPECT_EQ(kind_of([&] { load_init_points(dir.file(name)); }), ErrorKind::kParse) << name;
  EXPECT_EQ(kind_of([&] { load_init_points(dir.file("none.ply")); }), ErrorKind::kIo);
}

TEST(Ply, InitialAttributesFollowNeighborSpacing) {
  InitPoints pts;
  pts.positions = {0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3};
  pts.colors.assign(12, 0.25f);
  const auto a = initial_attributes<double>(pts);
  EXPECT_NEAR(std::exp(a.log_scales[0]), 2.0, 1e-12);  // neighbors at 1, 2, 3
  EXPECT_NEAR(sigmoid(a.opacity[0]), 0.1, 1e-12);
  EXPECT_EQ(a.rotation[0], 1.0);
  EXPECT_NEAR(a.sh_base[0] * sh::kC0 + 0.5, 0.25, 1e-7);
  for (double v : a.sh_rest) EXPECT_EQ(v, 0.0);
}

TEST(Ply, SplatExportImportRoundtrip) {
  eagles::testing::TempDir dir;
  const auto cloud = eagles::testing::random_cloud<float>(12, 4, true);
  export_ply(cloud, dir.file("s.ply"));
  const auto v = read_ply(dir.file("s.ply"));
  EXPECT_EQ(v.properties.size(), size_t(kSplatPlyFields));
  EXPECT_EQ(v.properties[9].name, "f_rest_0");
  const auto back = import_splat_ply(dir.file("s.ply"));
  const auto a = decode_attributes(cloud), b = decode_attributes(back);
  EXPECT_EQ(back.positions, cloud.positions);
  EXPECT_EQ(b.sh_rest, a.sh_rest);
  EXPECT_EQ(b.rotation, a.rotation);
  EXPECT_EQ(b.opacity, a.opacity);
  // Channel-major layout: f_rest_0 is the first red coefficient.
  EXPECT_EQ(float(v.columns[9][0]), a.sh_rest[0]);
  EXPECT_EQ(float(v.columns[9 + 15][0]), a.sh_rest[1]);
}

TEST(Ply, SplatImportRequiresAllProperties) {
  eagles::testing::TempDir dir;
  write_text(dir.file("p.ply"),
             "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
             "property float z\nend_header\n1 2 3\n");
  EXPECT_EQ(kind_of([&] { import_splat_ply(dir.file("p.ply")); }), ErrorKind::kParse);
}

TEST(Ply, CollinearPointsGetUnitMiddleScale) {
  InitPoints pts;
  pts.positions = {0, 0, 0, 1, 0, 0, 2, 0, 0};
  pts.colors.assign(9, 0.5f);
  const auto a = initial_attributes<double>(pts);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(a.log_scales[size_t(3 + c)], 0.0, 1e-12);
}
