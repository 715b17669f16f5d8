#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "vgocc/flow_annotation.hpp"
#include "vgocc/numerics.hpp"

using namespace vgocc;

namespace {

GridSpec test_grid() { return GridSpec{5, 20, 20, 0.4, Vec3(-4, -4, -1)}; }

BoxMotion motion(int id, const Vec3& size, const Pose& t, std::optional<Pose> prev) {
  BoxMotion m;
  m.track_id = id;
  m.category = 1;
  m.size = size;
  m.at_t = t;
  m.at_prev = prev;
  return m;
}

Pose random_planar_pose(Rng& rng) {
  std::uniform_real_distribution<double> a(-3, 3), d(-2, 2);
  return Pose::from_yaw(a(rng), Vec3(d(rng), d(rng), 0.2 * d(rng)));
}

}  // namespace

TEST(MapPointBack, StaticAndTranslation) {
  const Pose o = Pose::from_yaw(0.4, Vec3(1, 2, 0));
  const Vec3 p(1.3, 2.2, 0.5);
  EXPECT_LT((map_point_back(o, o, p) - p).norm(), 1e-15);
  const Pose ot = Pose::from_translation(Vec3(1, 0, 0)) * o;
  EXPECT_LT((map_point_back(ot, o, p) - (p - Vec3(1, 0, 0))).norm(), 1e-14);
}

TEST(MapPointBack, RotationChord) {
  const double omega = 0.8, dt = 0.5, r = 1.3;
  const Vec3 c(0.5, -0.2, 0.3);
  const Pose prev = Pose::from_yaw(0.1, c), now = Pose::from_yaw(0.1 + omega * dt, c);
  for (double phi : {0.0, 1.0, 2.5}) {
    const Vec3 p = c + r * Vec3(std::cos(phi), std::sin(phi), 0);
    EXPECT_NEAR((p - map_point_back(now, prev, p)).norm(), 2 * r * std::sin(omega * dt / 2), 1e-12);
  }
}

TEST(FlowVector, Examples) {
  const Vec3 p(1, 2, 3);
  EXPECT_EQ(flow_vector(p, p, 0.5), Vec3::Zero());
  EXPECT_EQ(flow_vector(Vec3(2, 0, 0), Vec3::Zero(), 0.5), Vec3(4, 0, 0));
  EXPECT_LT((flow_vector(3.0 * Vec3(1, -2, 0.5), Vec3::Zero(), 0.7) - 3.0 * flow_vector(Vec3(1, -2, 0.5), Vec3::Zero(), 0.7)).norm(), 1e-14);
  EXPECT_THROW(flow_vector(p, p, 0.0), ContractViolation);
  EXPECT_THROW(flow_vector(p, p, -1.0), ContractViolation);
}

TEST(VoxelizeBox, CubeOnVoxelCenter) {
  const GridSpec g = test_grid();
  const Vec3 c = g.center(2, 10, 10);
  const auto v = voxelize_box(Pose::from_translation(c), Vec3(2, 2, 2), GridSpec{9, 20, 20, 0.4, Vec3(-4, -4, -1.8)});
  // Brute force over the same grid.
  const GridSpec big{9, 20, 20, 0.4, Vec3(-4, -4, -1.8)};
  std::size_t brute = 0;
  for (std::size_t i = 0; i < big.voxels(); ++i)
    brute += center_in_box(Pose::from_translation(c), Vec3(2, 2, 2), big.center(i));
  EXPECT_EQ(brute, 125u);
  EXPECT_EQ(v.size(), 125u);
}

TEST(VoxelizeBox, MatchesBruteForceForRotatedBoxes) {
  Rng rng(1);
  const GridSpec g = test_grid();
  std::uniform_real_distribution<double> s(0.3, 3.0);
  for (int t = 0; t < 40; ++t) {
    const Pose b = random_planar_pose(rng);
    const Vec3 size(s(rng), s(rng), s(rng));
    auto v = voxelize_box(b, size, g);
    std::vector<std::size_t> brute;
    for (std::size_t i = 0; i < g.voxels(); ++i)
      if (center_in_box(b, size, g.center(i))) brute.push_back(i);
    std::sort(v.begin(), v.end());
    EXPECT_EQ(v, brute);
  }
}

TEST(VoxelizeBox, OutsideGridIsEmpty) {
  EXPECT_TRUE(voxelize_box(Pose::from_translation(Vec3(50, 0, 0)), Vec3(2, 2, 2), test_grid()).empty());
  EXPECT_DOUBLE_EQ(GridSpec{}.pitch, 0.4);
}

TEST(GenerateFlow, StaticObjectsGiveZero) {
  const Pose b = Pose::from_yaw(0.3, Vec3(0.2, 0.1, 0));
  const std::vector<BoxMotion> m{motion(1, Vec3(2, 1, 1), b, b)};
  for (FlowMode mode : {FlowMode::kOccupancyFlow, FlowMode::kObjectFlow}) {
    const FlowField f = generate_flow_field(m, test_grid(), 0.5, mode);
    std::size_t occ = 0;
    for (std::size_t i = 0; i < f.grid.voxels(); ++i) {
      occ += f.occupied[i];
      EXPECT_LT(f.at(i).norm(), 1e-14);
    }
    EXPECT_GT(occ, 0u);
  }
}

TEST(GenerateFlow, TranslationModesAgree) {
  const Pose prev = Pose::from_yaw(0.6, Vec3(-0.5, 0.3, 0)),
             now = Pose::from_translation(Vec3(0.7, -0.2, 0)) * prev;
  const std::vector<BoxMotion> m{motion(1, Vec3(2.5, 1.2, 1.4), now, prev)};
  const FlowField a = generate_flow_field(m, test_grid(), 0.5, FlowMode::kOccupancyFlow);
  const FlowField b = generate_flow_field(m, test_grid(), 0.5, FlowMode::kObjectFlow);
  EXPECT_EQ(a.occupied, b.occupied);
  for (std::size_t i = 0; i < a.flow.size(); ++i) EXPECT_NEAR(a.flow[i], b.flow[i], 1e-12);
}

TEST(GenerateFlow, TurningBoxContrast) {
  const double omega = 0.5, dt = 0.5;
  const GridSpec g = test_grid();
  const Vec3 c = g.center(2, 10, 10);
  const Pose prev = Pose::from_yaw(0.0, c), now = Pose::from_yaw(omega * dt, c);
  const std::vector<BoxMotion> m{motion(1, Vec3(3, 1.6, 1.2), now, prev)};
  const FlowField obj = generate_flow_field(m, g, dt, FlowMode::kObjectFlow);
  const FlowField occ = generate_flow_field(m, g, dt, FlowMode::kOccupancyFlow);
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.voxels(); ++i) {
    if (!occ.occupied[i]) continue;
    ++n;
    EXPECT_EQ(obj.at(i).norm(), 0.0);
    const Vec3 d = g.center(i) - c;
    const double r = d.head<2>().norm();
    const Vec3 f = occ.at(i);
    EXPECT_NEAR(f.norm(), 2 * r * std::sin(omega * dt / 2) / dt, 1e-9);
    EXPECT_NEAR(f.z(), 0.0, 1e-12);
    // Chord direction is the tangent rotated back by half the swept angle.
    if (r > 1e-9) {
      const Vec2 tangent = Eigen::Rotation2Dd(-omega * dt / 2) * Vec2(-d.y(), d.x()).normalized();
      EXPECT_NEAR(f.head<2>().normalized().dot(tangent), 1.0, 1e-9);
    }
  }
  EXPECT_GT(n, 20u);
}

TEST(GenerateFlow, NewTrackGetsZeroFlowAndNonBoxIsEmpty) {
  const std::vector<BoxMotion> m{motion(3, Vec3(1, 1, 1), Pose::from_translation(Vec3(1, 1, 0)), std::nullopt)};
  const FlowField f = generate_flow_field(m, test_grid(), 0.5, FlowMode::kOccupancyFlow);
  for (std::size_t i = 0; i < f.grid.voxels(); ++i) {
    EXPECT_EQ(f.at(i), Vec3::Zero());
    if (!f.occupied[i]) {
      EXPECT_EQ(f.category[i], -1);
      EXPECT_EQ(f.track[i], -1);
    } else {
      EXPECT_EQ(f.track[i], 3);
    }
  }
  EXPECT_THROW(generate_flow_field(m, test_grid(), 0.0, FlowMode::kOccupancyFlow), ContractViolation);
}

TEST(GenerateFlow, OverlapGoesToNearestCenterThenLowerTrack) {
  const GridSpec g = test_grid();
  const Pose a = Pose::from_translation(Vec3(-0.4, 0, 0)), b = Pose::from_translation(Vec3(0.4, 0, 0));
  const std::vector<BoxMotion> m{motion(7, Vec3(2, 2, 2), b, b), motion(2, Vec3(2, 2, 2), a, a)};
  const FlowField f = generate_flow_field(m, g, 0.5, FlowMode::kOccupancyFlow);
  for (std::size_t i = 0; i < g.voxels(); ++i) {
    if (!f.occupied[i]) continue;
    const Vec3 p = g.center(i);
    const double da = (p - a.translation).norm(), db = (p - b.translation).norm();
    if (std::abs(da - db) < 1e-12) EXPECT_EQ(f.track[i], 2);
    else EXPECT_EQ(f.track[i], da < db ? 2 : 7);
  }
}

TEST(GenerateFlow, RigidRoundTrip) {
  Rng rng(2);
  const GridSpec g = test_grid();
  const double dt = 0.4;
  for (int t = 0; t < 20; ++t) {
    const Pose prev = random_planar_pose(rng), now = random_planar_pose(rng);
    const std::vector<BoxMotion> m{motion(1, Vec3(2, 1.5, 1), now, prev)};
    const FlowField f = generate_flow_field(m, g, dt, FlowMode::kOccupancyFlow);
    for (std::size_t i = 0; i < g.voxels(); ++i) {
      if (!f.occupied[i]) continue;
      const Vec3 p = g.center(i);
      EXPECT_LT((map_point_back(now, prev, p) + f.at(i) * dt - p).norm(), 1e-10);
    }
  }
}

TEST(GenerateFlow, FrameInvariance) {
  Rng rng(3);
  const GridSpec g = test_grid();
  const Pose prev = Pose::from_yaw(0.2, Vec3(0.1, 0, 0)), now = Pose::from_yaw(0.6, Vec3(0.5, 0.3, 0));
  const std::vector<BoxMotion> m{motion(1, Vec3(2.4, 1.2, 1), now, prev)};
  const FlowField base = generate_flow_field(m, g, 0.5, FlowMode::kOccupancyFlow);
  for (int t = 0; t < 5; ++t) {
    const Pose world = random_planar_pose(rng);
    const std::vector<BoxMotion> mw{motion(1, Vec3(2.4, 1.2, 1), world * now, world * prev)};
    // Grid moves with the world; flow is reported in grid axes, so it is unchanged.
    const FlowField moved = generate_flow_field(mw, g, 0.5, FlowMode::kOccupancyFlow, world);
    EXPECT_EQ(moved.occupied, base.occupied);
    for (std::size_t i = 0; i < g.voxels(); ++i) {
      if (!base.occupied[i]) continue;
      EXPECT_NEAR(moved.at(i).norm(), base.at(i).norm(), 1e-10);
      EXPECT_LT((world.rotation * moved.at(i) - world.rotation * base.at(i)).norm(), 1e-10);
    }
  }
}

TEST(GenerateFlow, ObjectFlowMatchesOccupancyFlowAtCenterVoxel) {
  const GridSpec g = test_grid();
  const Vec3 c = g.center(2, 9, 11);
  const Pose prev = Pose::from_yaw(0.1, c - Vec3(0.3, 0.1, 0)), now = Pose::from_yaw(0.35, c);
  const std::vector<BoxMotion> m{motion(1, Vec3(2, 1.2, 1), now, prev)};
  const FlowField a = generate_flow_field(m, g, 0.5, FlowMode::kOccupancyFlow);
  const FlowField b = generate_flow_field(m, g, 0.5, FlowMode::kObjectFlow);
  const std::size_t idx = *g.locate(c);
  EXPECT_LT((a.at(idx) - b.at(idx)).norm(), 1e-12);
}

TEST(ReduceBev, Examples) {
  GridSpec g{3, 2, 2, 0.4, Vec3::Zero()};
  FlowField f(g, Pose::identity());
  for (int z = 0; z < 3; ++z) {
    const std::size_t i = g.index(z, 0, 0);
    f.occupied[i] = 1;
    f.category[i] = 2;
    f.set(i, Vec3(3, 1, 0));
  }
  f.occupied[g.index(0, 1, 1)] = f.occupied[g.index(2, 1, 1)] = 1;
  f.category[g.index(0, 1, 1)] = f.category[g.index(2, 1, 1)] = 1;
  f.set(g.index(0, 1, 1), Vec3(2, 0, 0));
  f.set(g.index(2, 1, 1), Vec3(4, 0, 0));
  const BEVFlowField b = reduce_bev_flow(f);
  EXPECT_TRUE(b.valid[0]);
  EXPECT_EQ(b.flow[0], 3.0);
  EXPECT_EQ(b.flow[1], 1.0);
  EXPECT_EQ(b.category[0], 2);
  EXPECT_FALSE(b.valid[1]);
  EXPECT_EQ(b.flow[2], 0.0);
  EXPECT_EQ(b.category[1], -1);
  EXPECT_TRUE(b.valid[3]);
  EXPECT_EQ(b.flow[6], 3.0);
  EXPECT_EQ(b.flow[7], 0.0);
}

TEST(ReduceBev, UniformColumnsCommute) {
  const Pose prev = Pose::from_yaw(0.3, Vec3(0, 0, 0)), now = Pose::from_translation(Vec3(0.8, 0.4, 0)) * prev;
  const std::vector<BoxMotion> m{motion(1, Vec3(2, 2, 1.5), now, prev)};
  const FlowField f = generate_flow_field(m, test_grid(), 0.5, FlowMode::kOccupancyFlow);
  const BEVFlowField b = reduce_bev_flow(f);
  for (std::size_t c = 0; c < b.cells(); ++c)
    if (b.valid[c]) {
      EXPECT_NEAR(b.flow[c * 2], 1.6, 1e-12);
      EXPECT_NEAR(b.flow[c * 2 + 1], 0.8, 1e-12);
    }
}

TEST(FlowIo, SaveLoadRoundTrip) {
  const Pose prev = Pose::from_yaw(0.0, Vec3(0, 0, 0)), now = Pose::from_yaw(0.4, Vec3(0.3, 0, 0));
  const std::vector<BoxMotion> m{motion(5, Vec3(2, 1, 1), now, prev)};
  const FlowField f = generate_flow_field(m, test_grid(), 0.5, FlowMode::kOccupancyFlow, Pose::from_yaw(0.2));
  const auto dir = std::filesystem::temp_directory_path() / "vgocc_flow_test";
  std::filesystem::create_directories(dir);
  save_flow_field(f, dir / "flow");
  const FlowField r = load_flow_field(dir / "flow");
  EXPECT_EQ(r.grid, f.grid);
  EXPECT_EQ(r.flow, f.flow);
  EXPECT_EQ(r.occupied, f.occupied);
  EXPECT_EQ(r.category, f.category);
  EXPECT_EQ(r.track, f.track);
  EXPECT_LT((r.grid_pose.rotation - f.grid_pose.rotation).norm(), 1e-15);
  const json h = read_json(dir / "flow.json");
  EXPECT_EQ(h.at("units"), "m/s");
  std::filesystem::remove_all(dir);
}

TEST(BoxMotions, PairsFramesByTrack) {
  TrackedBox a, b;
  a.track_id = 1;
  a.pose_per_frame = {{0, Pose::identity()}, {1, Pose::from_translation(Vec3(1, 0, 0))}};
  b.track_id = 2;
  b.pose_per_frame = {{1, Pose::identity()}};
  const std::vector<TrackedBox> boxes{a, b};
  const auto m = box_motions(boxes, 1, 0);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_TRUE(m[0].at_prev.has_value());
  EXPECT_FALSE(m[1].at_prev.has_value());
  EXPECT_TRUE(box_motions(boxes, 5, 4).empty());
}
