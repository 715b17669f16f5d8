#include <gtest/gtest.h>

#include <numbers>

#include "vgocc/geometry.hpp"
#include "vgocc/numerics.hpp"

using namespace vgocc;
constexpr double kPi = std::numbers::pi;

namespace {

Pose random_pose(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return {q.normalized().toRotationMatrix(), Vec3(n(rng), n(rng), n(rng))};
}

bool close(const Pose& a, const Pose& b, double tol) {
  return (a.rotation - b.rotation).cwiseAbs().maxCoeff() < tol &&
         (a.translation - b.translation).cwiseAbs().maxCoeff() < tol;
}

}  // namespace

TEST(ViewAngle, Quadrants) {
  EXPECT_DOUBLE_EQ(view_angle(Vec3(1, 0, 3)), 0.0);
  EXPECT_DOUBLE_EQ(view_angle(Vec3(0, 1, -2)), kPi / 2);
  EXPECT_DOUBLE_EQ(view_angle(Vec3(1, 1, 0)), kPi / 4);
  EXPECT_DOUBLE_EQ(view_angle(Vec3(-1, 0, 0)), kPi);
  EXPECT_DOUBLE_EQ(view_angle(Vec3(0, 0, 5)), 0.0);
  EXPECT_DOUBLE_EQ(view_angle(Vec3(0, 0, 0)), 0.0);
}

TEST(RotationZ, IdentityQuarterTurnAndGroup) {
  EXPECT_EQ(rotation_z(0.0), Mat3::Identity());
  Mat3 q;
  q << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((rotation_z(kPi / 2) - q).cwiseAbs().maxCoeff(), 1e-15);
  Rng rng(1);
  std::uniform_real_distribution<double> d(-4, 4);
  for (int i = 0; i < 100; ++i) {
    const double a = d(rng), b = d(rng);
    EXPECT_LT((rotation_z(a) * rotation_z(b) - rotation_z(a + b)).cwiseAbs().maxCoeff(), 1e-12);
    const Mat3 r = rotation_z(a);
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(AltitudeRotation, Examples) {
  auto a = altitude_rotation(Vec3(1, 0, 0));
  EXPECT_DOUBLE_EQ(a.phi, 0.0);
  EXPECT_LT((a.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_DOUBLE_EQ(altitude_rotation(Vec3(0, 0, 1)).phi, kPi / 2);
  EXPECT_DOUBLE_EQ(altitude_rotation(Vec3(1, 0, 1)).phi, kPi / 4);
  // Elevation uses the planar radius, not x alone.
  EXPECT_NEAR(altitude_rotation(Vec3(0, -3, 3)).phi, kPi / 4, 1e-15);
}

TEST(VcSamplePoint, Examples) {
  const Vec3 p(0.3, -1.2, 0.7);
  EXPECT_EQ(vc_sample_point(p, Vec3::Zero()), p);
  EXPECT_LT((vc_sample_point(Vec3(0, 2, 1), Vec3(1, 0, 0)) - Vec3(0, 3, 1)).norm(), 1e-15);
  EXPECT_LT((vc_sample_point(Vec3(0, 0, 2), Vec3(1, 0, 0), OffsetFrame::kTwoDof) - Vec3(0, 0, 3)).norm(), 1e-15);
  EXPECT_EQ(vc_sample_point(p, Vec3(1, 2, 3), OffsetFrame::kEgo), p + Vec3(1, 2, 3));
}

TEST(VcSamplePoint, OneDofPreservesOffsetZ) {
  Rng rng(2);
  std::normal_distribution<double> n(0, 3);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(n(rng), n(rng), n(rng)), dp(n(rng), n(rng), n(rng));
    const Vec3 ps = vc_sample_point(p, dp);
    EXPECT_EQ(ps.z(), p.z() + dp.z());
    const ViewFrame f = make_view_frame(p, OffsetFrame::kTwoDof);
    EXPECT_GT(f.theta, -kPi);
    EXPECT_LE(f.theta, kPi);
    EXPECT_GT(f.phi, -kPi / 2);
    EXPECT_LT(f.phi, kPi / 2);
    EXPECT_LT((f.rotation.transpose() * f.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Pinhole, Examples) {
  CameraModel cam;
  cam.fx = cam.fy = 100;
  cam.cx = cam.cy = 50;
  cam.width = cam.height = 101;
  auto pr = project_camera_point(cam, Vec3(0, 0, 3));
  EXPECT_TRUE(pr.in_view);
  EXPECT_EQ(pr.uv, Vec2(50, 50));
  EXPECT_FALSE(project_camera_point(cam, Vec3(0, 0, 0)).in_view);
  EXPECT_FALSE(project_camera_point(cam, Vec3(0, 0, -1)).in_view);
  pr = project_camera_point(cam, Vec3(1, 0, 2));
  EXPECT_EQ(pr.uv, Vec2(100, 50));
  EXPECT_TRUE(pr.in_view);
  EXPECT_FALSE(project_camera_point(cam, Vec3(1.02, 0, 2)).in_view);
}

TEST(Pinhole, JacobianMatchesFiniteDifferences) {
  Rng rng(3);
  CameraModel cam;
  cam.fx = 80;
  cam.fy = 90;
  cam.cx = 32;
  cam.cy = 30;
  cam.width = cam.height = 64;
  cam.extrinsics = horizontal_camera_extrinsics(0.7, Vec3(0.1, 0.2, 1.5));
  const Vec3 p = Vec3(3 * std::cos(0.7), 3 * std::sin(0.7), 1.0) + Vec3(0.2, -0.1, 0.3);
  const auto j = projection_jacobian(cam, p);
  for (int a = 0; a < 3; ++a) {
    const double h = 1e-6;
    Vec3 e = Vec3::Zero();
    e[a] = h;
    const Vec2 fd = (pinhole_project(cam, p + e).uv - pinhole_project(cam, p - e).uv) / (2 * h);
    EXPECT_LT((j.col(a) - fd).norm(), 1e-6 * (1 + fd.norm()));
  }
}

TEST(Pinhole, JointRotationAboutZLeavesProjectionUnchanged) {
  Rng rng(4);
  std::uniform_real_distribution<double> ang(-kPi, kPi), d(-5, 5);
  CameraModel cam;
  cam.fx = cam.fy = 60;
  cam.cx = cam.cy = 31.5;
  cam.width = cam.height = 64;
  cam.extrinsics = horizontal_camera_extrinsics(0.4, Vec3(0, 0, 1.5));
  for (int i = 0; i < 100; ++i) {
    const double a = ang(rng);
    const Pose q = Pose::from_yaw(a);
    CameraModel rc = cam;
    rc.extrinsics = cam.extrinsics * q.inverse();
    const Vec3 p(d(rng), d(rng), d(rng));
    const auto p0 = pinhole_project(cam, p), p1 = pinhole_project(rc, q.apply(p));
    EXPECT_EQ(p0.in_view, p1.in_view);
    EXPECT_LT((p0.uv - p1.uv).norm(), 1e-10);
    EXPECT_NEAR(p0.depth, p1.depth, 1e-10);
  }
}

TEST(RelativePose, Examples) {
  Rng rng(5);
  const Pose t = random_pose(rng);
  EXPECT_TRUE(close(relative_pose(t, t), Pose::identity(), 1e-12));
  const Pose r = relative_pose(Pose::from_translation(Vec3(2, 0, 0)), Pose::identity());
  EXPECT_TRUE(close(r, Pose::from_translation(Vec3(-2, 0, 0)), 1e-15));
  for (int i = 0; i < 100; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    EXPECT_TRUE(close(relative_pose(a, b) * relative_pose(b, a), Pose::identity(), 1e-10));
    EXPECT_TRUE((a * b).is_valid());
    EXPECT_TRUE(a.inverse().is_valid());
  }
}

TEST(Pose, MatrixRoundTrip) {
  Rng rng(6);
  const Pose p = random_pose(rng);
  EXPECT_TRUE(close(Pose::from_matrix(p.matrix()), p, 1e-15));
  const Vec3 x(0.5, -1, 2);
  EXPECT_LT((p.inverse().apply(p.apply(x)) - x).norm(), 1e-12);
}

TEST(Camera, HorizontalExtrinsicsLookAlongYaw) {
  const double yaw = 1.1;
  const Vec3 c(0.2, -0.3, 1.5);
  CameraModel cam;
  cam.extrinsics = horizontal_camera_extrinsics(yaw, c);
  cam.validate();
  EXPECT_LT((cam.center() - c).norm(), 1e-12);
  const Vec3 ahead = c + 4.0 * Vec3(std::cos(yaw), std::sin(yaw), 0);
  const Vec3 xc = cam.extrinsics.apply(ahead);
  EXPECT_NEAR(xc.x(), 0, 1e-12);
  EXPECT_NEAR(xc.y(), 0, 1e-12);
  EXPECT_NEAR(xc.z(), 4, 1e-12);
}

TEST(Camera, ValidateRejectsBadIntrinsics) {
  CameraModel cam;
  cam.fx = 0;
  EXPECT_THROW(cam.validate(), ContractViolation);
}

TEST(WrapAngle, Range) {
  EXPECT_NEAR(wrap_angle(3 * kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(-kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(0.5), 0.5, 1e-15);
}
