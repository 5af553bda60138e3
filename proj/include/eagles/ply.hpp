#pragma once

// Minimal PLY support: ASCII and binary little-endian vertex elements with
// scalar properties, plus the conventional Gaussian-splat vertex layout.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "eagles/cloud.hpp"
#include "eagles/error.hpp"

namespace eagles {

struct PlyProperty {
  std::string name;
  std::string type;
  int size = 0;
};

/// Vertex element of a PLY file, column-major, values widened to double
/// (exact for every supported scalar type).
struct PlyVertices {
  std::vector<PlyProperty> properties;
  std::vector<std::vector<double>> columns;
  size_t count = 0;

  int column(const std::string& name) const {
    for (size_t i = 0; i < properties.size(); ++i)
      if (properties[i].name == name) return int(i);
    return -1;
  }
};

namespace detail {

inline int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

inline double read_ply_scalar(const std::uint8_t* p, const std::string& t) {
  auto load = [p]<typename V>(V) {
    V v;
    std::memcpy(&v, p, sizeof(V));
    return double(v);
  };
  if (t == "char" || t == "int8") return load(std::int8_t{});
  if (t == "uchar" || t == "uint8") return load(std::uint8_t{});
  if (t == "short" || t == "int16") return load(std::int16_t{});
  if (t == "ushort" || t == "uint16") return load(std::uint16_t{});
  if (t == "int" || t == "int32") return load(std::int32_t{});
  if (t == "uint" || t == "uint32") return load(std::uint32_t{});
  if (t == "float" || t == "float32") return load(float{});
  return load(double{});
}

inline bool is_integer_type(const std::string& t) {
  return t != "float" && t != "float32" && t != "double" && t != "float64";
}

}  // namespace detail

inline PlyVertices read_ply(const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "binary PLY reading assumes a little-endian host");
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::kIo, "cannot open '" + path + "'");
  auto parse_error = [&](int line, const std::string& what) {
    fail(ErrorKind::kParse, path + ":" + std::to_string(line) + ": " + what);
  };

  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) parse_error(line_no + 1, "unexpected end of header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next_line();
  if (line != "ply") parse_error(line_no, "missing 'ply' magic");

  bool binary = false;
  bool have_format = false;
  bool in_vertex = false;
  bool vertex_seen = false;
  size_t elements_before_vertex = 0;
  PlyVertices v;
  while (true) {
    next_line();
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "end_header") break;
    if (kw == "comment" || kw == "obj_info" || kw.empty()) continue;
    if (kw == "format") {
      std::string fmt, ver;
      ss >> fmt >> ver;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else parse_error(line_no, "unsupported format '" + fmt + "'");
      have_format = true;
    } else if (kw == "element") {
      std::string name;
      long long count = -1;
      ss >> name >> count;
      if (!ss || count < 0) parse_error(line_no, "malformed element line");
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_seen = true;
        v.count = size_t(count);
      } else if (!vertex_seen) {
        ++elements_before_vertex;
      }
    } else if (kw == "property") {
      std::string type, name;
      ss >> type;
      if (type == "list") {
        if (in_vertex) parse_error(line_no, "list properties on vertices are not supported");
        continue;
      }
      ss >> name;
      if (!ss) parse_error(line_no, "malformed property line");
      if (!in_vertex) continue;
      const int size = detail::ply_type_size(type);
      if (size == 0) parse_error(line_no, "unknown property type '" + type + "'");
      v.properties.push_back({name, type, size});
    } else {
      parse_error(line_no, "unexpected header keyword '" + kw + "'");
    }
  }
  if (!have_format) parse_error(line_no, "missing format line");
  if (!vertex_seen) parse_error(line_no, "no vertex element");
  if (elements_before_vertex > 0) parse_error(line_no, "vertex element must come first");

  v.columns.assign(v.properties.size(), std::vector<double>(v.count));
  if (binary) {
    size_t stride = 0;
    for (const auto& p : v.properties) stride += size_t(p.size);
    const auto data_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto remaining = std::uint64_t(in.tellg() - data_start);
    in.seekg(data_start);
    if (stride == 0 || remaining / stride < v.count)
      fail(ErrorKind::kParse, path + ": binary vertex data truncated (" + std::to_string(remaining) +
                                  " bytes after header)");
    std::vector<std::uint8_t> buf(stride * v.count);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (size_t(in.gcount()) != buf.size())
      fail(ErrorKind::kParse, path + ": binary vertex data truncated at byte offset " + std::to_string(in.gcount()));
    for (size_t r = 0; r < v.count; ++r) {
      const std::uint8_t* row = buf.data() + r * stride;
      for (size_t c = 0; c < v.properties.size(); ++c) {
        v.columns[c][r] = detail::read_ply_scalar(row, v.properties[c].type);
        row += v.properties[c].size;
      }
    }
  } else {
    for (size_t r = 0; r < v.count; ++r) {
      next_line();
      std::istringstream ss(line);
      for (size_t c = 0; c < v.properties.size(); ++c) {
        std::string tok;
        if (!(ss >> tok)) parse_error(line_no, "too few values in vertex row");
        try {
          v.columns[c][r] = std::stod(tok);
        } catch (const std::exception&) {
          parse_error(line_no, "bad number '" + tok + "'");
        }
        if (detail::is_integer_type(v.properties[c].type)) v.columns[c][r] = std::trunc(v.columns[c][r]);
      }
    }
  }
  return v;
}

struct InitPoints {
  std::vector<float> positions;  // N x 3
  std::vector<float> colors;     // N x 3, [0, 1]
  size_t size() const { return positions.size() / 3; }
};

/// Positions (x, y, z) and optional red/green/blue. 8-bit colors are divided
/// by 255, floating-point colors are taken as-is; missing colors are 0.5.
inline InitPoints load_init_points(const std::string& path) {
  const PlyVertices v = read_ply(path);
  const int cx = v.column("x"), cy = v.column("y"), cz = v.column("z");
  require(cx >= 0 && cy >= 0 && cz >= 0, ErrorKind::kParse, path + ": vertex element lacks x/y/z");
  require(v.count > 0, ErrorKind::kInvalidInput, path + ": point cloud is empty");
  const int cr = v.column("red"), cg = v.column("green"), cb = v.column("blue");
  const bool has_color = cr >= 0 && cg >= 0 && cb >= 0;
  InitPoints pts;
  pts.positions.resize(3 * v.count);
  pts.colors.assign(3 * v.count, 0.5f);
  for (size_t i = 0; i < v.count; ++i) {
    pts.positions[3 * i] = float(v.columns[cx][i]);
    pts.positions[3 * i + 1] = float(v.columns[cy][i]);
    pts.positions[3 * i + 2] = float(v.columns[cz][i]);
    if (has_color) {
      const int cols[3] = {cr, cg, cb};
      for (int c = 0; c < 3; ++c) {
        const auto& prop = v.properties[cols[c]];
        const double raw = v.columns[cols[c]][i];
        const double scale = prop.type == "uchar" || prop.type == "uint8" ? 255.0
                             : detail::is_integer_type(prop.type)    ? 65535.0
                                                                      : 1.0;
        pts.colors[3 * i + c] = float(raw / scale);
      }
    }
  }
  return pts;
}

inline constexpr double kInitOpacity = 0.1;
inline constexpr double kMinNeighborDistance = 3.1622776601683794e-4;  // sqrt(1e-7)

/// Mean distance from each point to its (up to) three nearest neighbors.
inline std::vector<double> mean_neighbor_distance(std::span<const float> positions) {
  const size_t n = positions.size() / 3;
  std::vector<double> out(n, 0.0);
  const size_t k = std::min<size_t>(3, n > 0 ? n - 1 : 0);
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) {
    if (k == 0) {
      out[i] = 0.01;
      continue;
    }
    size_t m = 0;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double diff = double(positions[3 * i + c]) - double(positions[3 * j + c]);
        s += diff * diff;
      }
      d[m++] = std::sqrt(s);
    }
    std::partial_sort(d.begin(), d.begin() + std::ptrdiff_t(k), d.begin() + std::ptrdiff_t(m));
    double sum = 0.0;
    for (size_t j = 0; j < k; ++j) sum += d[j];
    out[i] = sum / double(k);
  }
  return out;
}

/// Raw initial attributes: isotropic scale from neighbor spacing, identity
/// rotation, opacity 0.1, band-0 color from RGB, zero higher bands.
template <typename T>
InitialAttributes<T> initial_attributes(const InitPoints& pts) {
  const size_t n = pts.size();
  InitialAttributes<T> a;
  a.positions.assign(pts.positions.begin(), pts.positions.end());
  const auto dist = mean_neighbor_distance(pts.positions);
  a.log_scales.resize(3 * n);
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) a.log_scales[3 * i + c] = T(std::log(std::max(dist[i], kMinNeighborDistance)));
  a.sh_base.resize(3 * n);
  for (size_t i = 0; i < 3 * n; ++i) a.sh_base[i] = rgb_to_sh_base(T(pts.colors[i]));
  a.sh_rest.assign(size_t(kShRestDim) * n, T(0));
  a.rotation.assign(4 * n, T(0));
  for (size_t i = 0; i < n; ++i) a.rotation[4 * i] = T(1);
  a.opacity.assign(n, logit(T(kInitOpacity)));
  return a;
}

namespace detail {

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(u >> (8 * i)));
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(bool(out), ErrorKind::kIo, "write to '" + path + "' failed");
}

}  // namespace detail

inline constexpr int kSplatPlyFields = 3 + 3 + 3 + kShRestDim + 1 + 3 + 4;  // 62

/// Writes decoded attributes in the common splat PLY layout: x y z, zeroed
/// normals, f_dc_*, f_rest_* (channel-major), opacity pre-activation,
/// log scales, rotation quaternion (w x y z). Binary little-endian float32.
template <typename T>
void export_ply(const GaussianCloud<T>& cloud, const std::string& path) {
  const size_t n = cloud.size();
  const auto dec = decode_attributes(cloud);
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << n << "\n";
  for (const char* p : {"x", "y", "z", "nx", "ny", "nz"}) header << "property float " << p << "\n";
  for (int i = 0; i < 3; ++i) header << "property float f_dc_" << i << "\n";
  for (int i = 0; i < kShRestDim; ++i) header << "property float f_rest_" << i << "\n";
  header << "property float opacity\n";
  for (int i = 0; i < 3; ++i) header << "property float scale_" << i << "\n";
  for (int i = 0; i < 4; ++i) header << "property float rot_" << i << "\n";
  header << "end_header\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.reserve(bytes.size() + n * kSplatPlyFields * 4);
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) detail::put_f32(bytes, float(cloud.positions[3 * i + c]));
    for (int c = 0; c < 3; ++c) detail::put_f32(bytes, 0.0f);
    for (int c = 0; c < 3; ++c) detail::put_f32(bytes, float(cloud.sh_base[3 * i + c]));
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < kShBasisCount - 1; ++k)
        detail::put_f32(bytes, float(dec.sh_rest[size_t(kShRestDim) * i + size_t(k) * 3 + c]));
    detail::put_f32(bytes, float(dec.opacity[i]));
    for (int c = 0; c < 3; ++c) detail::put_f32(bytes, float(cloud.log_scales[3 * i + c]));
    for (int c = 0; c < 4; ++c) detail::put_f32(bytes, float(dec.rotation[4 * i + c]));
  }
  detail::write_file(path, bytes);
}

/// Reads a splat PLY written by `export_ply` (or compatible tools) into an
/// unquantized cloud.
inline GaussianCloud<float> import_splat_ply(const std::string& path) {
  const PlyVertices v = read_ply(path);
  auto col = [&](const std::string& name) {
    const int c = v.column(name);
    require(c >= 0, ErrorKind::kParse, path + ": missing splat property '" + name + "'");
    return c;
  };
  const size_t n = v.count;
  InitialAttributes<float> a;
  a.positions.resize(3 * n);
  a.log_scales.resize(3 * n);
  a.sh_base.resize(3 * n);
  a.sh_rest.resize(size_t(kShRestDim) * n);
  a.rotation.resize(4 * n);
  a.opacity.resize(n);
  const int px[3] = {col("x"), col("y"), col("z")};
  int dc[3], sc[3], rot[4], rest[kShRestDim];
  for (int i = 0; i < 3; ++i) dc[i] = col("f_dc_" + std::to_string(i));
  for (int i = 0; i < 3; ++i) sc[i] = col("scale_" + std::to_string(i));
  for (int i = 0; i < 4; ++i) rot[i] = col("rot_" + std::to_string(i));
  for (int i = 0; i < kShRestDim; ++i) rest[i] = col("f_rest_" + std::to_string(i));
  const int op = col("opacity");
  for (size_t r = 0; r < n; ++r) {
    for (int c = 0; c < 3; ++c) {
      a.positions[3 * r + c] = float(v.columns[px[c]][r]);
      a.sh_base[3 * r + c] = float(v.columns[dc[c]][r]);
      a.log_scales[3 * r + c] = float(v.columns[sc[c]][r]);
    }
    for (int c = 0; c < 4; ++c) a.rotation[4 * r + c] = float(v.columns[rot[c]][r]);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < kShBasisCount - 1; ++k)
        a.sh_rest[size_t(kShRestDim) * r + size_t(k) * 3 + c] = float(v.columns[rest[c * (kShBasisCount - 1) + k]][r]);
    a.opacity[r] = float(v.columns[op][r]);
  }
  return make_cloud<float>(std::move(a), false, 0);
}

/// ASCII PLY of positions and 8-bit colors, as produced by SfM tools.
inline void write_point_ply(const std::string& path, const InitPoints& pts) {
  std::ostringstream s;
  s << "ply\nformat binary_little_endian 1.0\nelement vertex " << pts.size()
    << "\nproperty float x\nproperty float y\nproperty float z\n"
       "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  const std::string h = s.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (size_t i = 0; i < pts.size(); ++i) {
    for (int c = 0; c < 3; ++c) detail::put_f32(bytes, pts.positions[3 * i + c]);
    for (int c = 0; c < 3; ++c)
      bytes.push_back(std::uint8_t(std::lround(std::clamp(pts.colors[3 * i + c], 0.0f, 1.0f) * 255.0f)));
  }
  detail::write_file(path, bytes);
}

}  // namespace eagles
