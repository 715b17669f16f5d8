#pragma once

// Rigid poses, pinhole cameras and the per-query view-coordinate frame.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "vgocc/error.hpp"

namespace vgocc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid transform x -> R x + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static Pose from_yaw(double yaw, const Vec3& t = Vec3::Zero());

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
  Pose operator*(const Pose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }

  bool is_valid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
           std::abs(rotation.determinant() - 1.0) < tol && translation.allFinite();
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
  static Pose from_matrix(const Eigen::Matrix4d& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }
};

/// Rotation about +z (yaw). Rows ((c,-s,0),(s,c,0),(0,0,1)).
inline Mat3 rotation_z(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

inline Pose Pose::from_yaw(double yaw, const Vec3& t) { return {rotation_z(yaw), t}; }

/// Four-quadrant angle of the x-y projection. atan2(0,0) is pinned to 0.
inline double view_angle(const Vec3& p) {
  if (p.x() == 0.0 && p.y() == 0.0) return 0.0;
  return std::atan2(p.y(), p.x());
}

struct AltitudeRotation {
  double phi = 0.0;
  Mat3 rotation = Mat3::Identity();
};

/// Elevation above the x-y plane and the matching rotation about y.
inline AltitudeRotation altitude_rotation(const Vec3& p) {
  const double rho = std::hypot(p.x(), p.y());
  AltitudeRotation a;
  a.phi = (rho == 0.0 && p.z() == 0.0) ? 0.0 : std::atan2(p.z(), rho);
  const double c = std::cos(a.phi), s = std::sin(a.phi);
  a.rotation << c, 0, -s, 0, 1, 0, s, 0, c;
  return a;
}

/// How learned 3D offsets are oriented before being added to the reference point.
enum class OffsetFrame {
  kOneDof,  // rotate by the view angle about z
  kTwoDof,  // view angle about z, then altitude about y
  kEgo,     // no rotation: offsets live in the ego frame (ablation)
};

struct ViewFrame {
  double theta = 0.0;
  double phi = 0.0;
  Vec3 origin = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();  // VC -> ego
};

inline ViewFrame make_view_frame(const Vec3& p, OffsetFrame mode) {
  ViewFrame f;
  f.origin = p;
  if (mode == OffsetFrame::kEgo) return f;
  f.theta = view_angle(p);
  f.rotation = rotation_z(f.theta);
  if (mode == OffsetFrame::kTwoDof) {
    const AltitudeRotation a = altitude_rotation(p);
    f.phi = a.phi;
    f.rotation = f.rotation * a.rotation;
  }
  return f;
}

/// p_s = p + R dp, with R chosen by `mode`.
inline Vec3 vc_sample_point(const Vec3& p, const Vec3& dp, OffsetFrame mode = OffsetFrame::kOneDof) {
  return p + make_view_frame(p, mode).rotation * dp;
}

/// T_prev->t = T_t^-1 * T_prev: maps previous-ego coordinates into current-ego coordinates.
inline Pose relative_pose(const Pose& current, const Pose& previous) {
  return current.inverse() * previous;
}

// ---------------------------------------------------------------------------

struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Pose extrinsics;  // camera-from-ego
  int width = 1, height = 1;

  void validate() const {
    require(fx > 0 && fy > 0, "camera focal lengths must be positive");
    require(width > 0 && height > 0, "camera image size must be positive");
    require(extrinsics.is_valid(1e-6), "camera extrinsics must be a rigid transform");
  }
  /// Camera center in ego coordinates.
  Vec3 center() const { return extrinsics.inverse().translation; }
};

struct Projection {
  Vec2 uv = Vec2::Zero();
  double depth = 0.0;
  bool in_view = false;
};

inline bool in_image(const CameraModel& cam, const Vec2& uv) {
  return uv.x() >= 0.0 && uv.y() >= 0.0 && uv.x() <= cam.width - 1 && uv.y() <= cam.height - 1;
}

inline Projection project_camera_point(const CameraModel& cam, const Vec3& xc) {
  Projection pr;
  pr.depth = xc.z();
  if (!(xc.z() > 0.0)) return pr;
  pr.uv = Vec2(cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy);
  pr.in_view = in_image(cam, pr.uv);
  return pr;
}

inline Projection pinhole_project(const CameraModel& cam, const Vec3& p_ego) {
  return project_camera_point(cam, cam.extrinsics.apply(p_ego));
}

/// d(uv)/d(p_ego) at a point with positive depth.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraModel& cam, const Vec3& p_ego) {
  const Vec3 xc = cam.extrinsics.apply(p_ego);
  const double iz = 1.0 / xc.z();
  Eigen::Matrix<double, 2, 3> j_cam;
  j_cam << cam.fx * iz, 0.0, -cam.fx * xc.x() * iz * iz, 0.0, cam.fy * iz,
      -cam.fy * xc.y() * iz * iz;
  return j_cam * cam.extrinsics.rotation;
}

/// Camera looking horizontally along `yaw` from `center` (x right, y down, z forward).
inline Pose horizontal_camera_extrinsics(double yaw, const Vec3& center) {
  const Vec3 forward(std::cos(yaw), std::sin(yaw), 0.0);
  const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Vec3 down(0.0, 0.0, -1.0);
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  return {r, -(r * center)};
}

inline double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, kTwoPi);
  if (a <= 0.0) a += kTwoPi;
  return a - std::numbers::pi;
}

}  // namespace vgocc
