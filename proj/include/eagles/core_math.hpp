#pragma once

// Geometric and radiometric primitives shared by the forward and backward
// passes. Everything here is a pure function of its arguments.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>

#include <Eigen/Core>

#include "eagles/error.hpp"

namespace eagles {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat4 = Eigen::Matrix<T, 4, 4>;
template <typename T> using Mat23 = Eigen::Matrix<T, 2, 3>;

inline constexpr int kShDegree = 3;
inline constexpr int kShBasisCount = (kShDegree + 1) * (kShDegree + 1);  // 16
inline constexpr int kShRestDim = (kShBasisCount - 1) * 3;               // 45

/// Low-pass dilation added to the projected covariance diagonal (px^2).
inline constexpr double kCovarianceDilation = 0.3;
/// Perspective Jacobian evaluates tx/tz, ty/tz clamped to this multiple of the
/// half-field-of-view tangent.
inline constexpr double kFrustumTangentLimit = 1.3;

/// Pinhole camera. `world_to_camera` is a rigid transform; the camera looks
/// down +z with +x right and +y down in pixel space.
template <typename T>
struct Camera {
  Mat4<T> world_to_camera = Mat4<T>::Identity();
  Vec2<T> focal{T(1), T(1)};
  Vec2<T> principal_point{T(0), T(0)};
  int width = 0;
  int height = 0;
  T near_plane = T(0.01);
  T far_plane = T(1000);

  Mat3<T> rotation() const { return world_to_camera.template block<3, 3>(0, 0); }
  Vec3<T> translation() const { return world_to_camera.template block<3, 1>(0, 3); }
  Vec3<T> center() const { return -(rotation().transpose() * translation()); }
  T tan_half_fov_x() const { return T(width) / (T(2) * focal.x()); }
  T tan_half_fov_y() const { return T(height) / (T(2) * focal.y()); }

  /// Same pose at a new resolution; intrinsics rescale with the image.
  Camera resized(int new_width, int new_height) const {
    Camera out = *this;
    const T sx = T(new_width) / T(width);
    const T sy = T(new_height) / T(height);
    out.width = new_width;
    out.height = new_height;
    out.focal = Vec2<T>(focal.x() * sx, focal.y() * sy);
    out.principal_point = Vec2<T>(principal_point.x() * sx, principal_point.y() * sy);
    return out;
  }

  template <typename U>
  Camera<U> cast() const {
    Camera<U> out;
    out.world_to_camera = world_to_camera.template cast<U>();
    out.focal = focal.template cast<U>();
    out.principal_point = principal_point.template cast<U>();
    out.width = width;
    out.height = height;
    out.near_plane = U(near_plane);
    out.far_plane = U(far_plane);
    return out;
  }

  /// Checks orthonormality of the rotation block and the clip planes.
  void validate() const {
    const Mat3<T> r = rotation();
    const double err = (r * r.transpose() - Mat3<T>::Identity()).cwiseAbs().maxCoeff();
    require(err < 1e-5, ErrorKind::kInvalidInput, "camera rotation is not orthonormal");
    require(T(0) < near_plane && near_plane < far_plane, ErrorKind::kInvalidInput,
            "camera clip planes must satisfy 0 < near < far");
    require(width > 0 && height > 0, ErrorKind::kInvalidInput, "camera resolution must be positive");
  }
};

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T logit(T p) {
  return std::log(p / (T(1) - p));
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
template <typename T>
Mat3<T> quaternion_to_rotation(const Vec4<T>& q) {
  const T w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<T> r;
  r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
      T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
      T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
  return r;
}

/// Gradient of a scalar loss with respect to the unit quaternion, given dL/dR.
template <typename T>
Vec4<T> rotation_backward(const Vec4<T>& q, const Mat3<T>& dR) {
  const T w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<T> dw, dx, dy, dz;
  dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return Vec4<T>(dR.cwiseProduct(dw).sum(), dR.cwiseProduct(dx).sum(),
                 dR.cwiseProduct(dy).sum(), dR.cwiseProduct(dz).sum());
}

/// Normalizes a raw quaternion; throws on a zero-norm input.
template <typename T>
Vec4<T> normalize_quaternion(const Vec4<T>& raw) {
  const T n = raw.norm();
  require(n > T(0) && std::isfinite(double(n)), ErrorKind::kInvalidInput,
          "quaternion has zero norm");
  return raw / n;
}

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
template <typename T>
Mat3<T> build_covariance_3d(const Vec3<T>& log_scale, const Vec4<T>& quaternion) {
  const Mat3<T> r = quaternion_to_rotation(normalize_quaternion(quaternion));
  const Vec3<T> s = log_scale.array().exp().matrix();
  const Mat3<T> m = r * s.asDiagonal();
  return m * m.transpose();
}

template <typename T>
struct ProjectedPoint {
  Vec2<T> pixel;
  T depth;
  bool culled;
};

template <typename T>
ProjectedPoint<T> project_point(const Camera<T>& camera, const Vec3<T>& position) {
  const Vec3<T> t = camera.rotation() * position + camera.translation();
  ProjectedPoint<T> out;
  out.depth = t.z();
  out.culled = !(t.z() > camera.near_plane) || t.z() > camera.far_plane;
  const T z = out.culled && t.z() == T(0) ? T(1) : t.z();
  out.pixel = Vec2<T>(camera.focal.x() * t.x() / z + camera.principal_point.x(),
                      camera.focal.y() * t.y() / z + camera.principal_point.y());
  return out;
}

/// First-order perspective Jacobian rows at camera-frame point t, with the
/// lateral ratios clamped to the frustum tangent bounds. `free_x`/`free_y`
/// report whether each ratio was inside the bounds.
template <typename T>
struct PerspectiveJacobian {
  Mat23<T> j;
  T ratio_x, ratio_y;
  bool free_x, free_y;
};

template <typename T>
PerspectiveJacobian<T> perspective_jacobian(const Camera<T>& camera, const Vec3<T>& t) {
  const T lim_x = T(kFrustumTangentLimit) * camera.tan_half_fov_x();
  const T lim_y = T(kFrustumTangentLimit) * camera.tan_half_fov_y();
  const T rx = t.x() / t.z();
  const T ry = t.y() / t.z();
  PerspectiveJacobian<T> out;
  out.ratio_x = std::clamp(rx, -lim_x, lim_x);
  out.ratio_y = std::clamp(ry, -lim_y, lim_y);
  out.free_x = out.ratio_x == rx;
  out.free_y = out.ratio_y == ry;
  const T fx = camera.focal.x(), fy = camera.focal.y();
  out.j << fx / t.z(), T(0), -fx * out.ratio_x / t.z(),
      T(0), fy / t.z(), -fy * out.ratio_y / t.z();
  return out;
}

/// Screen-space covariance J W Sigma W^T J^T plus the low-pass dilation.
template <typename T>
Mat2<T> project_covariance(const Camera<T>& camera, const Vec3<T>& position, const Mat3<T>& sigma3d) {
  const Vec3<T> t = camera.rotation() * position + camera.translation();
  const Mat23<T> m = perspective_jacobian(camera, t).j * camera.rotation();
  Mat2<T> cov = m * sigma3d * m.transpose();
  cov(0, 0) += T(kCovarianceDilation);
  cov(1, 1) += T(kCovarianceDilation);
  return cov;
}

/// exp(-0.5 d^T Sigma^-1 d). The caller skips splats whose covariance is
/// degenerate (determinant <= 1e-12).
template <typename T>
T eval_gaussian_2d(const Mat2<T>& sigma2d, const Vec2<T>& offset) {
  return std::exp(T(-0.5) * offset.dot(sigma2d.inverse() * offset));
}

// Real spherical harmonics up to degree 3, in the ordering used by common
// Gaussian-splatting tooling.
namespace sh {
inline constexpr double kC0 = 0.28209479177387814;
inline constexpr double kC1 = 0.4886025119029199;
inline constexpr std::array<double, 5> kC2 = {1.0925484305920792, -1.0925484305920792,
                                             0.31539156525252005, -1.0925484305920792,
                                             0.5462742152960396};
inline constexpr std::array<double, 7> kC3 = {-0.5900435899266435, 2.890611442640554,
                                             -0.4570457994644658, 0.3731763325901154,
                                             -0.4570457994644658, 1.445305721320277,
                                             -0.5900435899266435};
}  // namespace sh

template <typename T>
std::array<T, kShBasisCount> sh_basis(const Vec3<T>& d) {
  using namespace sh;
  const T x = d.x(), y = d.y(), z = d.z();
  const T xx = x * x, yy = y * y, zz = z * z;
  return {T(kC0),
          T(-kC1) * y,
          T(kC1) * z,
          T(-kC1) * x,
          T(kC2[0]) * x * y,
          T(kC2[1]) * y * z,
          T(kC2[2]) * (T(2) * zz - xx - yy),
          T(kC2[3]) * x * z,
          T(kC2[4]) * (xx - yy),
          T(kC3[0]) * y * (T(3) * xx - yy),
          T(kC3[1]) * x * y * z,
          T(kC3[2]) * y * (T(4) * zz - xx - yy),
          T(kC3[3]) * z * (T(2) * zz - T(3) * xx - T(3) * yy),
          T(kC3[4]) * x * (T(4) * zz - xx - yy),
          T(kC3[5]) * z * (xx - yy),
          T(kC3[6]) * x * (xx - T(3) * yy)};
}

/// Partial derivatives of each basis function with respect to (x, y, z),
/// treating the components as independent.
template <typename T>
std::array<Vec3<T>, kShBasisCount> sh_basis_gradient(const Vec3<T>& d) {
  using namespace sh;
  const T x = d.x(), y = d.y(), z = d.z();
  const T xx = x * x, yy = y * y, zz = z * z;
  const T c1 = T(kC1);
  return {Vec3<T>::Zero(),
          Vec3<T>(0, -c1, 0),
          Vec3<T>(0, 0, c1),
          Vec3<T>(-c1, 0, 0),
          T(kC2[0]) * Vec3<T>(y, x, 0),
          T(kC2[1]) * Vec3<T>(0, z, y),
          T(kC2[2]) * Vec3<T>(-2 * x, -2 * y, 4 * z),
          T(kC2[3]) * Vec3<T>(z, 0, x),
          T(kC2[4]) * Vec3<T>(2 * x, -2 * y, 0),
          T(kC3[0]) * Vec3<T>(6 * x * y, 3 * xx - 3 * yy, 0),
          T(kC3[1]) * Vec3<T>(y * z, x * z, x * y),
          T(kC3[2]) * Vec3<T>(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z),
          T(kC3[3]) * Vec3<T>(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy),
          T(kC3[4]) * Vec3<T>(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z),
          T(kC3[5]) * Vec3<T>(2 * x * z, -2 * y * z, xx - yy),
          T(kC3[6]) * Vec3<T>(3 * xx - 3 * yy, -6 * x * y, 0)};
}

/// SH color before the zero clamp: sum_k Y_k(d) c_k + 0.5 per channel.
/// `sh_rest` holds 15 coefficients x 3 channels, coefficient-major.
template <typename T>
Vec3<T> eval_sh_unclamped(std::span<const T> sh_base, std::span<const T> sh_rest, const Vec3<T>& view_dir) {
  const auto basis = sh_basis(view_dir);
  Vec3<T> c(sh_base[0], sh_base[1], sh_base[2]);
  c *= basis[0];
  for (int k = 1; k < kShBasisCount; ++k) {
    const T* coeff = sh_rest.data() + (k - 1) * 3;
    c += basis[k] * Vec3<T>(coeff[0], coeff[1], coeff[2]);
  }
  return c.array() + T(0.5);
}

template <typename T>
Vec3<T> eval_sh(std::span<const T> sh_base, std::span<const T> sh_rest, const Vec3<T>& view_dir) {
  return eval_sh_unclamped(sh_base, sh_rest, view_dir).cwiseMax(T(0));
}

/// Inverse of the band-0 projection: base coefficient giving `rgb` when all
/// higher bands are zero.
template <typename T>
T rgb_to_sh_base(T rgb) {
  return (rgb - T(0.5)) / T(sh::kC0);
}

}  // namespace eagles
