#include <gtest/gtest.h>

#include <numbers>

#include "support.hpp"
#include "vgocc/view_attention.hpp"

using namespace vgocc;
using vgocc::testing::numeric_grad;
using vgocc::testing::random_map;
using vgocc::testing::random_vec;
using vgocc::testing::rel_error;

namespace {

constexpr double kPi = std::numbers::pi;

CameraModel ring_camera(double yaw, int size, double fov_deg, const Vec3& center = Vec3(0, 0, 1.5)) {
  CameraModel c;
  c.width = c.height = size;
  c.cx = c.cy = 0.5 * (size - 1);
  c.fx = c.fy = c.cx / std::tan(0.5 * fov_deg * kPi / 180);
  c.extrinsics = horizontal_camera_extrinsics(yaw, center);
  return c;
}

std::vector<CameraModel> ring_rig(int cams, int size, double fov_deg) {
  std::vector<CameraModel> r;
  for (int j = 0; j < cams; ++j) r.push_back(ring_camera(2 * kPi * j / cams, size, fov_deg));
  return r;
}

std::vector<FeatureMap> random_maps(const std::vector<CameraModel>& rig, int c, Rng& rng) {
  std::vector<FeatureMap> f;
  for (const auto& cam : rig) f.push_back(random_map(cam.height, cam.width, c, rng));
  return f;
}

/// Offsets generically nonzero: random weights on top of the star bias.
ViewAttnParams generic_params(const AttnShape& s, Rng& rng, int dim, double wscale) {
  ViewAttnParams p = make_view_attn_params(s, rng, dim, dim == 3 ? 0.5 : 2.0);
  fill_normal(p.offset_head.weight, rng, wscale);
  fill_normal(p.logit_head.weight, rng, 0.5);
  fill_normal(p.logit_head.bias, rng, 0.5);
  for (auto& m : p.value_maps) fill_normal(m.bias, rng, 0.1);
  for (auto& m : p.output_maps) fill_normal(m.bias, rng, 0.1);
  return p;
}

ViewAttnParams identity_single(int c, int cameras) {
  ViewAttnParams p;
  p.channels = c;
  p.heads = 1;
  p.points = 1;
  p.cameras = cameras;
  p.offset_dim = 3;
  p.value_maps = {AffineMap::identity(c)};
  p.output_maps = {AffineMap::identity(c)};
  p.offset_head = AffineMap(3, c);
  p.logit_head = AffineMap(cameras, c);
  return p;
}

double total_rel(const ViewAttnParams& a, const ViewAttnParams& b) {
  std::vector<double> x, y;
  a.for_each_buffer([&](const std::vector<double>& v) { x.insert(x.end(), v.begin(), v.end()); });
  b.for_each_buffer([&](const std::vector<double>& v) { y.insert(y.end(), v.begin(), v.end()); });
  return rel_error(x, y);
}

}  // namespace

TEST(GenerateOffsets, ZeroHeadGivesZeroOffsets) {
  Rng rng(1);
  ViewAttnParams p = make_view_attn_params({8, 2, 3, 2}, rng, 3, 0.0);
  for (const Vec3& o : generate_offsets(p, random_vec(8, rng))) EXPECT_EQ(o, Vec3::Zero());
}

TEST(GenerateOffsets, BiasOnlyHeadIgnoresQuery) {
  Rng rng(2);
  ViewAttnParams p = make_view_attn_params({8, 2, 3, 2}, rng, 3, 0.5);
  fill_normal(p.offset_head.bias, rng, 1.0);
  const auto a = generate_offsets(p, random_vec(8, rng)), b = generate_offsets(p, random_vec(8, rng));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(a[i], Vec3(p.offset_head.bias[i * 3], p.offset_head.bias[i * 3 + 1], p.offset_head.bias[i * 3 + 2]));
  }
}

TEST(GenerateOffsets, OneHotQueryReadsWeightColumn) {
  Rng rng(3);
  ViewAttnParams p = make_view_attn_params({4, 1, 2, 1}, rng, 3, 0.0);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 4; ++c) p.offset_head.w(r, c) = 10 * r + c;
  const std::vector<double> q{0, 0, 1, 0};
  const auto o = generate_offsets(p, q);
  EXPECT_EQ(o[0], Vec3(2, 12, 22));
  EXPECT_EQ(o[1], Vec3(32, 42, 52));
}

TEST(GenerateAttention, ZeroHeadIsUniform) {
  Rng rng(4);
  const ViewAttnParams p = make_view_attn_params({8, 2, 3, 4}, rng);
  for (double w : generate_attention(p, random_vec(8, rng))) EXPECT_DOUBLE_EQ(w, 1.0 / 12);
}

TEST(GenerateAttention, PerHeadSumsToOne) {
  Rng rng(5);
  const ViewAttnParams p = generic_params({12, 3, 4, 5}, rng, 3, 0.1);
  for (int t = 0; t < 20; ++t) {
    const auto w = generate_attention(p, random_vec(12, rng, 2.0));
    for (int m = 0; m < 3; ++m) {
      double s = 0;
      for (int i = 0; i < 20; ++i) s += w[m * 20 + i];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(GenerateAttention, HandSoftmax) {
  Rng rng(6);
  ViewAttnParams p = make_view_attn_params({2, 1, 1, 2}, rng);
  p.logit_head.bias = {0.0, std::log(3.0)};
  const auto w = generate_attention(p, std::vector<double>{0.3, 0.1});
  EXPECT_NEAR(w[0], 0.25, 1e-15);
  EXPECT_NEAR(w[1], 0.75, 1e-15);
}

TEST(ViewAttnForward, SingleSampleCollapse) {
  Rng rng(7);
  const std::vector<CameraModel> rig{ring_camera(0.0, 32, 60)};
  const auto maps = random_maps(rig, 5, rng);
  const ViewAttnParams p = identity_single(5, 1);
  const Vec3 ref(4.0, 0.6, 0.9);
  const auto q = random_vec(5, rng);
  const auto r = view_attn_forward({q, ref}, p, maps, rig);
  const Projection pr = pinhole_project(rig[0], ref);
  ASSERT_TRUE(pr.in_view);
  const auto s = bilinear_sample(maps[0], pr.uv.x(), pr.uv.y());
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(r.out[c], s.feature[c], 1e-14);
  ASSERT_EQ(r.trace.samples.size(), 1u);
  EXPECT_TRUE(r.trace.samples[0].in_view);
  EXPECT_EQ(r.trace.cameras_reached(), 1);
}

TEST(ViewAttnForward, BehindOnlyCameraIsZero) {
  Rng rng(8);
  const std::vector<CameraModel> rig{ring_camera(0.0, 32, 60)};
  const auto maps = random_maps(rig, 5, rng);
  const auto r = view_attn_forward({random_vec(5, rng), Vec3(-3, 0.2, 1.0)}, identity_single(5, 1), maps, rig);
  for (double v : r.out) EXPECT_EQ(v, 0.0);
}

TEST(ViewAttnForward, MirroredCamerasMatchSingleCamera) {
  // Two cameras mirrored about the x-z plane, maps mirrored left-right:
  // a point on the x axis samples the same feature in both.
  Rng rng(9);
  const double yaw = 0.3;
  const CameraModel a = ring_camera(yaw, 33, 70, Vec3(0, -0.5, 1.5));
  const CameraModel b = ring_camera(-yaw, 33, 70, Vec3(0, 0.5, 1.5));
  FeatureMap fa = random_map(33, 33, 4, rng), fb(33, 33, 4);
  for (int r = 0; r < 33; ++r)
    for (int c = 0; c < 33; ++c)
      for (int ch = 0; ch < 4; ++ch) fb.at(r, 32 - c, ch) = fa.at(r, c, ch);
  const Vec3 ref(3.0, 0.0, 0.8);
  const auto q = random_vec(4, rng);
  const std::vector<CameraModel> two{a, b}, one{a};
  const std::vector<FeatureMap> m2{fa, fb}, m1{fa};
  const auto r2 = view_attn_forward({q, ref}, identity_single(4, 2), m2, two);
  const auto r1 = view_attn_forward({q, ref}, identity_single(4, 1), m1, one);
  EXPECT_EQ(r2.trace.cameras_reached(), 2);
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(r2.out[c], r1.out[c], 1e-12);
}

TEST(ViewAttnForward, ContractViolations) {
  Rng rng(10);
  const auto rig = ring_rig(2, 16, 60);
  auto maps = random_maps(rig, 8, rng);
  const ViewAttnParams p = make_view_attn_params({8, 2, 2, 2}, rng);
  const auto q = random_vec(8, rng);
  EXPECT_NO_THROW(view_attn_forward({q, Vec3(2, 0, 1)}, p, maps, rig));
  const std::vector<FeatureMap> short_maps{maps[0]};
  EXPECT_THROW(view_attn_forward({q, Vec3(2, 0, 1)}, p, short_maps, rig), ContractViolation);
  EXPECT_THROW(view_attn_forward({random_vec(7, rng), Vec3(2, 0, 1)}, p, maps, rig), ContractViolation);
  maps[1] = random_map(16, 16, 6, rng);
  EXPECT_THROW(view_attn_forward({q, Vec3(2, 0, 1)}, p, maps, rig), ContractViolation);
  EXPECT_THROW(make_view_attn_params({9, 2, 2, 2}, rng), ContractViolation);
}

TEST(ViewAttnBackward, ConstantFeaturesGiveZeroOffsetGradient) {
  Rng rng(11);
  const auto rig = ring_rig(3, 24, 80);
  std::vector<FeatureMap> maps;
  for (const auto& c : rig) {
    FeatureMap m(c.height, c.width, 8);
    std::fill(m.data.begin(), m.data.end(), 0.7);
    maps.push_back(m);
  }
  const ViewAttnParams p = generic_params({8, 2, 3, 3}, rng, 3, 0.05);
  const auto g = view_attn_backward({random_vec(8, rng), Vec3(3, 0.5, 1)}, p, maps, rig, random_vec(8, rng));
  for (double v : g.params.offset_head.weight) EXPECT_EQ(v, 0.0);
  for (double v : g.params.offset_head.bias) EXPECT_EQ(v, 0.0);
}

TEST(ViewAttnBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(12);
  const auto rig = ring_rig(3, 24, 80);
  const auto maps = random_maps(rig, 8, rng);
  const ViewAttnParams p = generic_params({8, 2, 3, 3}, rng, 3, 0.05);
  const auto g = view_attn_backward({random_vec(8, rng), Vec3(3, 0.5, 1)}, p, maps, rig,
                                    std::vector<double>(8, 0.0));
  g.params.for_each_buffer([](const std::vector<double>& b) {
    for (double v : b) EXPECT_EQ(v, 0.0);
  });
  for (double v : g.query) EXPECT_EQ(v, 0.0);
  for (const auto& f : g.features)
    for (double v : f.data) EXPECT_EQ(v, 0.0);
}

class ViewAttnGradCheck : public ::testing::TestWithParam<OffsetFrame> {};

TEST_P(ViewAttnGradCheck, MatchesFiniteDifferences) {
  const OffsetFrame mode = GetParam();
  for (std::uint64_t seed = 100; seed < 106; ++seed) {
    Rng rng(seed);
    const auto rig = ring_rig(4, 20, 100);
    auto maps = random_maps(rig, 8, rng);
    ViewAttnParams p = generic_params({8, 2, 3, 4}, rng, 3, 0.05);
    auto q = random_vec(8, rng);
    const Vec3 ref(2.5, 1.2, 0.6);
    const auto up = random_vec(8, rng);
    const auto g = view_attn_backward({q, ref}, p, maps, rig, up, mode);
    const auto loss = [&] { return dot(up, view_attn_forward({q, ref}, p, maps, rig, mode).out); };
    ViewAttnParams num = p.zeros_like();
    std::vector<std::vector<double>*> pb, nb;
    p.for_each_buffer([&](std::vector<double>& b) { pb.push_back(&b); });
    num.for_each_buffer([&](std::vector<double>& b) { nb.push_back(&b); });
    for (std::size_t i = 0; i < pb.size(); ++i) *nb[i] = numeric_grad(*pb[i], loss);
    EXPECT_LT(total_rel(g.params, num), 1e-4) << "seed " << seed;
    EXPECT_LT(rel_error(g.query, numeric_grad(q, loss)), 1e-4) << "seed " << seed;
    for (std::size_t j = 0; j < maps.size(); ++j)
      EXPECT_LT(rel_error(g.features[j].data, numeric_grad(maps[j].data, loss)), 1e-4) << "seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, ViewAttnGradCheck,
                         ::testing::Values(OffsetFrame::kOneDof, OffsetFrame::kTwoDof, OffsetFrame::kEgo));

TEST(ProjectionFirst, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 200; seed < 206; ++seed) {
    Rng rng(seed);
    const auto rig = ring_rig(6, 20, 80);
    auto maps = random_maps(rig, 8, rng);
    ViewAttnParams p = generic_params({8, 2, 3, 6}, rng, 2, 0.3);
    auto q = random_vec(8, rng);
    const Vec3 ref(3.0, 1.2, 0.6);  // near a seam: two cameras see it
    const auto up = random_vec(8, rng);
    const auto g = projection_first_backward({q, ref}, p, maps, rig, up);
    const auto loss = [&] { return dot(up, projection_first_forward({q, ref}, p, maps, rig).out); };
    ViewAttnParams num = p.zeros_like();
    std::vector<std::vector<double>*> pb, nb;
    p.for_each_buffer([&](std::vector<double>& b) { pb.push_back(&b); });
    num.for_each_buffer([&](std::vector<double>& b) { nb.push_back(&b); });
    for (std::size_t i = 0; i < pb.size(); ++i) *nb[i] = numeric_grad(*pb[i], loss);
    EXPECT_LT(total_rel(g.params, num), 1e-4) << "seed " << seed;
    EXPECT_LT(rel_error(g.query, numeric_grad(q, loss)), 1e-4) << "seed " << seed;
  }
}

TEST(ProjectionFirst, OnlyTheSeeingCameraMatters) {
  Rng rng(13);
  const auto rig = ring_rig(6, 24, 55);
  auto maps = random_maps(rig, 8, rng);
  const ViewAttnParams p = generic_params({8, 2, 3, 6}, rng, 2, 0.3);
  const auto q = random_vec(8, rng);
  const Vec3 ref(4.0, 0.3, 0.8);
  ASSERT_EQ(camera_coverage(ref, rig), 1);
  const auto a = projection_first_forward({q, ref}, p, maps, rig);
  for (std::size_t j = 1; j < maps.size(); ++j) maps[j] = random_map(24, 24, 8, rng, 5.0);
  const auto b = projection_first_forward({q, ref}, p, maps, rig);
  EXPECT_EQ(a.out, b.out);
  for (const auto& s : a.trace.samples) EXPECT_EQ(s.camera, 0);
}

TEST(ProjectionFirst, InvisibleEverywhereIsZero) {
  Rng rng(14);
  const std::vector<CameraModel> rig{ring_camera(0.0, 24, 60)};
  const auto maps = random_maps(rig, 8, rng);
  ViewAttnParams p = generic_params({8, 2, 3, 1}, rng, 2, 0.3);
  const auto r = projection_first_forward({random_vec(8, rng), Vec3(-2, 0, 1)}, p, maps, rig);
  for (double v : r.out) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(r.trace.samples.empty());
}

TEST(ProjectionFirst, CollapsesToViewAttentionWithZeroOffsets) {
  Rng rng(15);
  const std::vector<CameraModel> rig{ring_camera(0.0, 32, 60)};
  const auto maps = random_maps(rig, 6, rng);
  ViewAttnParams v = identity_single(6, 1);
  ViewAttnParams pf = v;
  pf.offset_dim = 2;
  pf.offset_head = AffineMap(2, 6);
  const auto q = random_vec(6, rng);
  const Vec3 ref(3.5, -0.4, 1.1);
  const auto a = view_attn_forward({q, ref}, v, maps, rig), b = projection_first_forward({q, ref}, pf, maps, rig);
  for (int c = 0; c < 6; ++c) EXPECT_NEAR(a.out[c], b.out[c], 1e-12);
}

TEST(Coverage, RigProjectionCounts) {
  const auto rig = ring_rig(6, 64, 70);
  EXPECT_EQ(camera_coverage(Vec3(5, 0, 1.5), rig), 1);
  EXPECT_EQ(camera_coverage(Vec3(0, 0, 1.5), rig), 0);
  EXPECT_EQ(camera_coverage(Vec3(5 * std::cos(kPi / 6), 5 * std::sin(kPi / 6), 1.5), rig), 2);
  const std::vector<CameraModel> mono{ring_camera(0.0, 64, 70)};
  EXPECT_EQ(camera_coverage(Vec3(-5, 0, 1.5), mono), 0);
}

TEST(ScaleConsistency, MetricSpreadIsDepthIndependent) {
  Rng rng(16);
  const std::vector<CameraModel> rig{ring_camera(0.0, 64, 70)};
  const auto maps = random_maps(rig, 8, rng);
  ViewAttnParams p = make_view_attn_params({8, 2, 4, 1}, rng, 3, 0.5);
  fill_normal(p.offset_head.bias, rng, 0.4);
  const auto q = random_vec(8, rng);
  const auto spread = [](const std::vector<Vec3>& pts) {
    double d = 0;
    for (const auto& a : pts)
      for (const auto& b : pts) d = std::max(d, (a - b).norm());
    return d;
  };
  const auto points = [&](const Vec3& ref) {
    std::vector<Vec3> pts;
    for (const auto& s : view_attn_forward({q, ref}, p, maps, rig).trace.samples) pts.push_back(s.sample_point);
    return pts;
  };
  const Vec3 near(3.0, 0.0, 1.5), far(6.0, 0.0, 1.5);
  EXPECT_NEAR(spread(points(near)), spread(points(far)), 1e-12);

  // A fixed pixel spread back-projected at the reference depth grows linearly.
  const CameraModel& cam = rig[0];
  const auto metric_extent = [&](const Vec3& ref, double px) {
    const double depth = cam.extrinsics.apply(ref).z();
    return px * depth / cam.fx;
  };
  EXPECT_NEAR(metric_extent(far, 4.0) / metric_extent(near, 4.0), 2.0, 1e-12);
}

TEST(RotationalInvariance, JointRotationOfRigAndReferencePoint) {
  Rng rng(17);
  const auto rig = ring_rig(6, 32, 70);
  const auto maps = random_maps(rig, 8, rng);
  const ViewAttnParams p = generic_params({8, 2, 4, 6}, rng, 3, 0.05);
  const auto q = random_vec(8, rng);
  const Vec3 ref(3.2, 1.1, 0.7);
  std::uniform_real_distribution<double> ang(-kPi, kPi);
  double worst_vc = 0, worst_ego_min = 1e300;
  for (int t = 0; t < 16; ++t) {
    const Pose rot = Pose::from_yaw(ang(rng));
    std::vector<CameraModel> rr = rig;
    for (auto& c : rr) c.extrinsics = c.extrinsics * rot.inverse();
    const Vec3 rref = rot.apply(ref);
    for (const OffsetFrame mode : {OffsetFrame::kOneDof, OffsetFrame::kEgo}) {
      const auto a = view_attn_forward({q, ref}, p, maps, rig, mode).out;
      const auto b = view_attn_forward({q, rref}, p, maps, rr, mode).out;
      double d = 0;
      for (std::size_t c = 0; c < a.size(); ++c) d = std::max(d, std::abs(a[c] - b[c]));
      if (mode == OffsetFrame::kOneDof) worst_vc = std::max(worst_vc, d);
      else worst_ego_min = std::min(worst_ego_min, d);
    }
  }
  EXPECT_LT(worst_vc, 1e-9);
  EXPECT_GT(worst_ego_min, 1e-3);
}
