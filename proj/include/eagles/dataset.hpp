#pragma once

// Multi-view datasets on disk:
//
//   <dir>/cameras.json   {"background": [r, g, b], "views": [ {...}, ... ]}
//   <dir>/images/...     targets (.f32 exact floats or 8-bit PNG)
//   <dir>/points3d.ply   initialization point cloud
//
// Each view object carries name, width, height, fx, fy, cx, cy, near, far,
// world_to_camera (16 numbers, row-major) and image (path relative to dir).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "eagles/core_math.hpp"
#include "eagles/error.hpp"
#include "eagles/image.hpp"
#include "eagles/image_io.hpp"

namespace eagles {

inline constexpr int kHoldoutStride = 8;

struct View {
  std::string name;
  Camera<float> camera;
  std::string image_path;  // relative to the dataset root
  Image<float> image;
  bool eval = false;
};

struct ViewDataset {
  std::string root;
  Vec3<float> background = Vec3<float>::Zero();
  std::vector<View> views;

  std::vector<size_t> train_indices() const { return split(false); }
  std::vector<size_t> eval_indices() const { return split(true); }

  /// Radius of the camera-center bounding sphere around their mean, times 1.1.
  double scene_extent() const {
    if (views.empty()) return 1.0;
    Vec3<double> mean = Vec3<double>::Zero();
    for (const auto& v : views) mean += v.camera.center().cast<double>();
    mean /= double(views.size());
    double r = 0.0;
    for (const auto& v : views) r = std::max(r, (v.camera.center().cast<double>() - mean).norm());
    return r > 0.0 ? 1.1 * r : 1.0;
  }

 private:
  std::vector<size_t> split(bool eval) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < views.size(); ++i)
      if (views[i].eval == eval) out.push_back(i);
    return out;
  }
};

/// Sorts views by name and, when `holdout` is set, marks every 8th view
/// (indices 0, 8, 16, ...) for evaluation.
inline void assign_split(ViewDataset& ds, bool holdout) {
  std::stable_sort(ds.views.begin(), ds.views.end(), [](const View& a, const View& b) { return a.name < b.name; });
  for (size_t i = 0; i < ds.views.size(); ++i) ds.views[i].eval = holdout && i % kHoldoutStride == 0;
}

inline nlohmann::json camera_to_json(const Camera<float>& c) {
  nlohmann::json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["fx"] = c.focal.x();
  j["fy"] = c.focal.y();
  j["cx"] = c.principal_point.x();
  j["cy"] = c.principal_point.y();
  j["near"] = c.near_plane;
  j["far"] = c.far_plane;
  std::vector<float> m(16);
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < 4; ++col) m[size_t(r * 4 + col)] = c.world_to_camera(r, col);
  j["world_to_camera"] = m;
  return j;
}

inline Camera<float> camera_from_json(const nlohmann::json& j) {
  Camera<float> c;
  try {
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.focal = {j.at("fx").get<float>(), j.at("fy").get<float>()};
    c.principal_point = {j.at("cx").get<float>(), j.at("cy").get<float>()};
    c.near_plane = j.value("near", 0.01f);
    c.far_plane = j.value("far", 1000.0f);
    const auto m = j.at("world_to_camera").get<std::vector<float>>();
    require(m.size() == 16, ErrorKind::kParse, "world_to_camera must hold 16 numbers");
    for (int r = 0; r < 4; ++r)
      for (int col = 0; col < 4; ++col) c.world_to_camera(r, col) = m[size_t(r * 4 + col)];
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("camera entry: ") + e.what());
  }
  require(c.width > 0 && c.height > 0, ErrorKind::kInvalidInput, "camera resolution must be positive");
  c.validate();
  return c;
}

/// Reads cameras.json and (optionally) every target image.
inline ViewDataset load_dataset(const std::string& dir, bool holdout, bool load_images = true) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const fs::path cams = root / "cameras.json";
  std::ifstream in(cams);
  require(bool(in), ErrorKind::kIo, "cannot open '" + cams.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, cams.string() + ": " + e.what());
  }
  ViewDataset ds;
  ds.root = dir;
  if (j.contains("background")) {
    const auto bg = j["background"].get<std::vector<float>>();
    require(bg.size() == 3, ErrorKind::kParse, "background must hold 3 numbers");
    ds.background = {bg[0], bg[1], bg[2]};
  }
  require(j.contains("views") && j["views"].is_array(), ErrorKind::kParse, cams.string() + ": missing views array");
  for (const auto& jv : j["views"]) {
    View v;
    try {
      v.name = jv.at("name").get<std::string>();
      v.image_path = jv.value("image", std::string());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, cams.string() + ": " + e.what());
    }
    v.camera = camera_from_json(jv);
    if (load_images) {
      require(!v.image_path.empty(), ErrorKind::kInvalidInput, "view '" + v.name + "' has no target image");
      v.image = read_image((root / v.image_path).string());
      require(v.image.width == v.camera.width && v.image.height == v.camera.height, ErrorKind::kInvalidInput,
              "view '" + v.name + "': image size differs from the camera");
    }
    ds.views.push_back(std::move(v));
  }
  assign_split(ds, holdout);
  return ds;
}

/// Writes cameras.json plus each view's image as .f32 and a PNG preview.
inline void save_dataset(const std::string& dir, ViewDataset& ds) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root / "images");
  nlohmann::json j;
  j["background"] = {ds.background.x(), ds.background.y(), ds.background.z()};
  j["views"] = nlohmann::json::array();
  for (auto& v : ds.views) {
    v.image_path = "images/" + v.name + ".f32";
    write_f32_image((root / v.image_path).string(), v.image);
    write_png((root / "images" / (v.name + ".png")).string(), v.image);
    auto jv = camera_to_json(v.camera);
    jv["name"] = v.name;
    jv["image"] = v.image_path;
    j["views"].push_back(jv);
  }
  std::ofstream out(root / "cameras.json");
  require(bool(out), ErrorKind::kIo, "cannot write cameras.json in '" + dir + "'");
  out << j.dump(2) << '\n';
  ds.root = dir;
}

}  // namespace eagles
