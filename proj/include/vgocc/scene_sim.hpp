#pragma once

// Deterministic synthetic world standing in for an image backbone and a real
// dataset: camera rigs, box-shaped static and dynamic geometry, ray-cast
// per-camera features and ground-truth occupancy / flow.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "vgocc/flow_annotation.hpp"
#include "vgocc/geometry.hpp"
#include "vgocc/grid.hpp"
#include "vgocc/io.hpp"
#include "vgocc/numerics.hpp"
#include "vgocc/objective.hpp"

namespace vgocc {

enum class RigPreset { kSurround6, kStereo2, kMono1 };

inline RigPreset parse_rig_preset(const std::string& s) {
  if (s == "surround6") return RigPreset::kSurround6;
  if (s == "stereo2") return RigPreset::kStereo2;
  if (s == "mono1") return RigPreset::kMono1;
  throw ContractViolation("unknown rig preset '" + s + "' (surround6 | stereo2 | mono1)");
}

inline std::string to_string(RigPreset p) {
  switch (p) {
    case RigPreset::kSurround6: return "surround6";
    case RigPreset::kStereo2: return "stereo2";
    case RigPreset::kMono1: return "mono1";
  }
  return "?";
}

inline constexpr double kCameraHeight = 1.5;

/// Square pinhole camera whose horizontal and vertical field of view both equal fov.
inline CameraModel make_camera(double yaw, const Vec3& center, int image_size, double fov_degrees) {
  require(fov_degrees > 10.0 && fov_degrees < 170.0, "fov must lie in (10, 170) degrees");
  require(image_size >= 2, "image size must be >= 2");
  CameraModel c;
  c.width = c.height = image_size;
  c.cx = c.cy = 0.5 * (image_size - 1);
  c.fx = c.fy = c.cx / std::tan(0.5 * fov_degrees * std::numbers::pi / 180.0);
  c.extrinsics = horizontal_camera_extrinsics(yaw, center);
  return c;
}

/// surround6: yaw 60 deg * i; stereo2: two forward cameras 0.5 m apart; mono1: one forward camera.
inline std::vector<CameraModel> build_rig(RigPreset preset, int image_size, double fov_degrees) {
  std::vector<CameraModel> rig;
  const Vec3 c0(0.0, 0.0, kCameraHeight);
  switch (preset) {
    case RigPreset::kSurround6:
      for (int i = 0; i < 6; ++i)
        rig.push_back(make_camera(i * std::numbers::pi / 3.0, c0, image_size, fov_degrees));
      break;
    case RigPreset::kStereo2:
      rig.push_back(make_camera(0.0, Vec3(0.0, 0.25, kCameraHeight), image_size, fov_degrees));
      rig.push_back(make_camera(0.0, Vec3(0.0, -0.25, kCameraHeight), image_size, fov_degrees));
      break;
    case RigPreset::kMono1:
      rig.push_back(make_camera(0.0, c0, image_size, fov_degrees));
      break;
  }
  return rig;
}

// ---------------------------------------------------------------------------

struct GroundPlane {
  double z_top = 0.0;
  double thickness = 0.4;
  int category = 0;
};

/// Vertical slab along the segment from -> to, standing on z = base.
struct Wall {
  Vec2 from = Vec2::Zero(), to = Vec2(1.0, 0.0);
  double thickness = 0.4, height = 2.0, base = 0.0;
  int category = 0;
};

struct RigSpec {
  std::optional<RigPreset> preset;  // unset when cameras are listed explicitly
  int image_size = 64;
  double fov_degrees = 70.0;
  std::vector<CameraModel> cameras;
};

struct SceneFrame {
  double timestamp = 0.0;
  Pose ego_pose;  // ego -> world
};

struct SceneSpec {
  std::string name = "scene";
  RigSpec rig;
  GridSpec grid;
  std::vector<std::string> classes;
  std::vector<int> foreground;
  std::optional<GroundPlane> ground;
  std::vector<Wall> walls;
  std::vector<TrackedBox> objects;
  std::vector<SceneFrame> frames;
  std::uint64_t seed = 0;
  double max_range = 30.0;

  int num_frames() const { return static_cast<int>(frames.size()); }
  int num_classes() const { return static_cast<int>(classes.size()); }
  const std::vector<CameraModel>& cameras() const { return rig.cameras; }

  int class_index(const std::string& n) const {
    auto it = std::find(classes.begin(), classes.end(), n);
    require(it != classes.end(), "class '" + n + "' is not in the class table");
    return static_cast<int>(it - classes.begin());
  }

  void validate() const {
    require(!frames.empty(), "scene needs at least one frame");
    grid.validate();
    require(!classes.empty(), "scene class table is empty");
    require(!rig.cameras.empty(), "scene rig has no cameras");
    for (const auto& c : rig.cameras) c.validate();
    const auto ok = [&](int c) { return c >= 0 && c < num_classes(); };
    if (ground) require(ok(ground->category), "ground class is not in the class table");
    for (const auto& w : walls) {
      require(ok(w.category), "wall class is not in the class table");
      require(w.thickness > 0 && w.height > 0 && (w.to - w.from).norm() > 0, "degenerate wall");
    }
    for (const auto& o : objects) {
      require(ok(o.category), "object class is not in the class table");
      require((o.size.array() > 0).all(), "object sizes must be positive");
      for (const auto& [f, p] : o.pose_per_frame)
        require(f >= 0 && f < num_frames(), "object pose references a frame out of range");
    }
    for (int c : foreground) require(ok(c), "foreground class is not in the class table");
    for (std::size_t i = 1; i < frames.size(); ++i)
      require(frames[i].timestamp > frames[i - 1].timestamp, "frame timestamps must increase");
    require(max_range > 0, "max_range must be positive");
  }
};

// ---------------------------------------------------------------------------
// Solid geometry at one frame, all in world coordinates.

struct WorldSolid {
  Pose inv_pose;  // world -> box-local
  Vec3 half;
  int category = 0;
  int priority = 0;  // higher wins where solids overlap
};

struct WorldSnapshot {
  std::optional<GroundPlane> ground;
  std::vector<WorldSolid> solids;
  double top = -std::numeric_limits<double>::infinity();  // highest occupied z

  /// Class of the solid containing p, or kFreeLabel.
  int classify(const Vec3& p) const {
    int best = kFreeLabel, pri = std::numeric_limits<int>::min();
    for (const auto& s : solids) {
      if (s.priority <= pri) continue;
      const Vec3 l = s.inv_pose.apply(p);
      if (std::abs(l.x()) <= s.half.x() && std::abs(l.y()) <= s.half.y() && std::abs(l.z()) <= s.half.z()) {
        best = s.category;
        pri = s.priority;
      }
    }
    if (best == kFreeLabel && ground && p.z() <= ground->z_top && p.z() >= ground->z_top - ground->thickness)
      best = ground->category;
    return best;
  }
};

inline Pose wall_pose(const Wall& w) {
  const Vec2 mid = 0.5 * (w.from + w.to), d = w.to - w.from;
  return Pose::from_yaw(std::atan2(d.y(), d.x()), Vec3(mid.x(), mid.y(), w.base + 0.5 * w.height));
}

inline WorldSnapshot snapshot(const SceneSpec& s, int frame) {
  WorldSnapshot w;
  w.ground = s.ground;
  for (const auto& wall : s.walls)
    w.solids.push_back({wall_pose(wall).inverse(),
                        Vec3(0.5 * (wall.to - wall.from).norm(), 0.5 * wall.thickness, 0.5 * wall.height),
                        wall.category, 1});
  for (const auto& o : s.objects)
    if (auto p = o.pose_at(frame)) w.solids.push_back({p->inverse(), 0.5 * o.size, o.category, 2});
  if (w.ground) w.top = w.ground->z_top;
  for (const auto& so : w.solids) {
    const Pose fwd = so.inv_pose.inverse();
    w.top = std::max(w.top, fwd.translation.z() + (fwd.rotation.cwiseAbs() * so.half).z());
  }
  return w;
}

// ---------------------------------------------------------------------------
// Feature rendering.

/// Channel layout: [0, classes) one-hot class code, the rest a sinusoidal
/// code of (rho, z) of the hit point, rho = world distance from the z axis.
inline void encode_surface(int category, const Vec3& p, int num_classes, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  if (category >= 0 && category < static_cast<int>(out.size())) out[category] = 1.0;
  const double rho = std::hypot(p.x(), p.y());
  for (std::size_t c = num_classes, k = 0; c < out.size(); ++c, ++k) {
    const double v = (k % 4 < 2) ? rho : p.z();
    const double freq = 0.35 * std::pow(1.7, static_cast<double>(k / 4));
    out[c] = 0.5 * ((k % 2 == 0) ? std::sin(freq * v) : std::cos(freq * v));
  }
}

struct RayHit {
  bool hit = false;
  double t = 0.0;
  Vec3 point = Vec3::Zero();
  int category = kFreeLabel;
};

/// Uniform march at `step` from `origin` along unit `dir`; the first occupied
/// step is refined by bisection. `visit` sees every sample point up to and
/// including the hit.
template <typename Visit>
RayHit march_ray(const WorldSnapshot& w, const Vec3& origin, const Vec3& dir, double step, double max_range,
                 Visit&& visit) {
  RayHit r;
  const int n = static_cast<int>(std::ceil(max_range / step));
  double prev_t = 0.0;
  for (int i = 1; i <= n; ++i) {
    const double t = i * step;
    const Vec3 p = origin + t * dir;
    if (dir.z() >= 0.0 && p.z() > w.top) break;
    if (w.classify(p) != kFreeLabel) {
      double lo = prev_t, hi = t;
      for (int it = 0; it < 48; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (w.classify(origin + mid * dir) != kFreeLabel) hi = mid;
        else lo = mid;
      }
      r.hit = true;
      r.t = hi;
      r.point = origin + hi * dir;
      r.category = w.classify(r.point);
      visit(r.point);
      return r;
    }
    visit(p);
    prev_t = t;
  }
  return r;
}

inline Vec3 pixel_ray(const CameraModel& cam, double u, double v) {
  const Vec3 dc((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  return (cam.extrinsics.rotation.transpose() * dc).normalized();  // ego frame
}

struct RenderedFrame {
  std::vector<FeatureMap> features;     // one per camera
  std::vector<std::uint8_t> observed;   // gt voxels touched by some camera ray
};

inline double ray_step(const SceneSpec& s) { return s.grid.pitch / 4.0; }

/// Renders all cameras of one frame; `channels` is the feature width (C_Voxel).
inline RenderedFrame render_frame(const SceneSpec& s, int frame, int channels) {
  require(frame >= 0 && frame < s.num_frames(), "frame out of range");
  require(channels > s.num_classes(), "feature channels must exceed the number of classes");
  const WorldSnapshot w = snapshot(s, frame);
  const Pose ego = s.frames[frame].ego_pose;
  const Pose to_ego = ego.inverse();
  RenderedFrame out;
  out.observed.assign(s.grid.voxels(), 0);
  const auto mark = [&](const Vec3& pw) {
    if (auto idx = s.grid.locate(to_ego.apply(pw))) out.observed[*idx] = 1;
  };
  for (const auto& cam : s.cameras()) {
    FeatureMap fm(cam.height, cam.width, channels);
    const Vec3 origin = ego.apply(cam.center());
    for (int v = 0; v < cam.height; ++v)
      for (int u = 0; u < cam.width; ++u) {
        const Vec3 dir = ego.rotation * pixel_ray(cam, u, v);
        const RayHit h = march_ray(w, origin, dir, ray_step(s), s.max_range, mark);
        if (h.hit) encode_surface(h.category, h.point, s.num_classes(), fm.pixel(v, u));
      }
    out.features.push_back(std::move(fm));
  }
  return out;
}

inline FeatureMap render_camera_features(const SceneSpec& s, int frame, int camera, int channels) {
  require(camera >= 0 && camera < static_cast<int>(s.cameras().size()), "camera out of range");
  SceneSpec one = s;
  one.rig.cameras = {s.cameras()[camera]};
  return std::move(render_frame(one, frame, channels).features.front());
}

/// Ray-cast surface point of one pixel (world frame), for consistency checks.
inline RayHit cast_pixel(const SceneSpec& s, int frame, int camera, double u, double v) {
  const WorldSnapshot w = snapshot(s, frame);
  const Pose ego = s.frames[frame].ego_pose;
  const CameraModel& cam = s.cameras()[camera];
  return march_ray(w, ego.apply(cam.center()), ego.rotation * pixel_ray(cam, u, v), ray_step(s), s.max_range,
                   [](const Vec3&) {});
}

// ---------------------------------------------------------------------------
// Ground truth.

struct SceneTruth {
  std::vector<int> labels;  // per gt voxel, kFreeLabel if free
  FlowField flow;
  BEVFlowField bev_flow;
};

/// Labels follow priority dynamic > wall > ground; flow comes from the
/// tracked boxes in occupancy-flow mode, in the ego (grid) frame.
inline SceneTruth scene_ground_truth(const SceneSpec& s, int frame, FlowMode mode = FlowMode::kOccupancyFlow) {
  require(frame >= 0 && frame < s.num_frames(), "frame out of range");
  const WorldSnapshot w = snapshot(s, frame);
  const Pose ego = s.frames[frame].ego_pose;
  SceneTruth t;
  t.labels.resize(s.grid.voxels());
  for (std::size_t i = 0; i < s.grid.voxels(); ++i) t.labels[i] = w.classify(ego.apply(s.grid.center(i)));
  std::vector<BoxMotion> motions = box_motions(s.objects, frame, frame - 1);
  const double dt = frame > 0 ? s.frames[frame].timestamp - s.frames[frame - 1].timestamp : 1.0;
  if (frame == 0)
    for (auto& m : motions) m.at_prev.reset();
  t.flow = generate_flow_field(motions, s.grid, dt, mode, ego);
  t.bev_flow = reduce_bev_flow(t.flow);
  return t;
}

// ---------------------------------------------------------------------------
// Joint rotation of world and rig about z.

/// Rotates every world element by alpha about the world z axis and spins the
/// rig on the ego by the same angle, so each camera sees the rotated copy of
/// exactly what it saw before. Ego-frame query points rotate by alpha too.
inline SceneSpec rotate_scene(const SceneSpec& s, double alpha) {
  SceneSpec r = s;
  const Pose rot = Pose::from_yaw(alpha);
  const Mat3 rz = rot.rotation;
  for (auto& w : r.walls) {
    w.from = (rz * Vec3(w.from.x(), w.from.y(), 0)).head<2>();
    w.to = (rz * Vec3(w.to.x(), w.to.y(), 0)).head<2>();
  }
  for (auto& o : r.objects)
    for (auto& [f, p] : o.pose_per_frame) p = rot * p;
  for (auto& f : r.frames) f.ego_pose = rot * f.ego_pose * rot.inverse();
  for (auto& c : r.rig.cameras) c.extrinsics = c.extrinsics * rot.inverse();
  r.rig.preset.reset();
  return r;
}

// ---------------------------------------------------------------------------
// JSON.

inline json camera_to_json(const CameraModel& c) {
  return json{{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
              {"width", c.width}, {"height", c.height}, {"extrinsics", pose_to_json(c.extrinsics)}};
}

inline CameraModel camera_from_json(const json& j) {
  CameraModel c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.extrinsics = pose_from_json(j.at("extrinsics"));
  c.validate();
  return c;
}

inline json scene_to_json(const SceneSpec& s) {
  json rig;
  if (s.rig.preset) {
    rig = {{"preset", to_string(*s.rig.preset)}, {"image_size", s.rig.image_size},
           {"fov_degrees", s.rig.fov_degrees}};
  } else {
    rig = {{"cameras", json::array()}};
    for (const auto& c : s.rig.cameras) rig["cameras"].push_back(camera_to_json(c));
  }
  json j{{"name", s.name}, {"units", "meters, radians, seconds"}, {"seed", s.seed},
         {"max_range", s.max_range}, {"rig", rig}, {"grid", grid_to_json(s.grid)},
         {"classes", s.classes}, {"foreground", json::array()}};
  for (int c : s.foreground) j["foreground"].push_back(s.classes[c]);
  json st = json::object();
  if (s.ground)
    st["ground"] = {{"z_top", s.ground->z_top}, {"thickness", s.ground->thickness},
                    {"class", s.classes[s.ground->category]}};
  st["walls"] = json::array();
  for (const auto& w : s.walls)
    st["walls"].push_back({{"from", {w.from.x(), w.from.y()}}, {"to", {w.to.x(), w.to.y()}},
                           {"thickness", w.thickness}, {"height", w.height}, {"base", w.base},
                           {"class", s.classes[w.category]}});
  j["static"] = st;
  j["objects"] = json::array();
  for (const auto& o : s.objects) {
    json poses = json::array();
    for (const auto& [f, p] : o.pose_per_frame) {
      json e = pose_to_json(p);
      e["frame"] = f;
      poses.push_back(e);
    }
    j["objects"].push_back({{"track_id", o.track_id}, {"class", s.classes[o.category]},
                            {"size", {o.size.x(), o.size.y(), o.size.z()}}, {"poses", poses}});
  }
  j["frames"] = json::array();
  for (const auto& f : s.frames)
    j["frames"].push_back({{"timestamp", f.timestamp}, {"ego_pose", pose_to_json(f.ego_pose)}});
  return j;
}

inline SceneSpec scene_from_json(const json& j) {
  try {
    SceneSpec s;
    s.name = j.value("name", std::string("scene"));
    s.seed = j.value("seed", std::uint64_t{0});
    s.max_range = j.value("max_range", 30.0);
    s.classes = j.at("classes").get<std::vector<std::string>>();
    s.grid = j.contains("grid") ? grid_from_json(j.at("grid")) : GridSpec{};
    const json& rig = j.at("rig");
    if (rig.contains("cameras")) {
      for (const auto& c : rig.at("cameras")) s.rig.cameras.push_back(camera_from_json(c));
    } else {
      s.rig.preset = parse_rig_preset(rig.at("preset").get<std::string>());
      s.rig.image_size = rig.value("image_size", 64);
      s.rig.fov_degrees = rig.value("fov_degrees", 70.0);
      s.rig.cameras = build_rig(*s.rig.preset, s.rig.image_size, s.rig.fov_degrees);
    }
    for (const auto& f : j.value("foreground", json::array())) s.foreground.push_back(s.class_index(f));
    if (j.contains("static")) {
      const json& st = j.at("static");
      if (st.contains("ground")) {
        const json& g = st.at("ground");
        s.ground = GroundPlane{g.value("z_top", 0.0), g.value("thickness", 0.4),
                               s.class_index(g.at("class").get<std::string>())};
      }
      for (const auto& w : st.value("walls", json::array())) {
        Wall wall;
        wall.from = Vec2(w.at("from")[0].get<double>(), w.at("from")[1].get<double>());
        wall.to = Vec2(w.at("to")[0].get<double>(), w.at("to")[1].get<double>());
        wall.thickness = w.value("thickness", 0.4);
        wall.height = w.value("height", 2.0);
        wall.base = w.value("base", 0.0);
        wall.category = s.class_index(w.at("class").get<std::string>());
        s.walls.push_back(wall);
      }
    }
    for (const auto& f : j.at("frames"))
      s.frames.push_back({f.at("timestamp").get<double>(),
                          f.contains("ego_pose") ? pose_from_json(f.at("ego_pose")) : Pose::identity()});
    for (const auto& o : j.value("objects", json::array())) {
      TrackedBox b;
      b.track_id = o.at("track_id").get<int>();
      b.category = s.class_index(o.at("class").get<std::string>());
      const auto& sz = o.at("size");
      b.size = Vec3(sz[0].get<double>(), sz[1].get<double>(), sz[2].get<double>());
      for (const auto& p : o.at("poses")) b.pose_per_frame[p.at("frame").get<int>()] = pose_from_json(p);
      s.objects.push_back(std::move(b));
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("malformed scene JSON: ") + e.what());
  }
}

inline SceneSpec load_scene(const std::filesystem::path& p) { return scene_from_json(read_json(p)); }

// ---------------------------------------------------------------------------
// Built-in scenes.

struct SceneOptions {
  GridSpec grid;
  RigPreset rig = RigPreset::kSurround6;
  int image_size = 64;
  double fov_degrees = 70.0;
};

inline SceneSpec base_scene(const std::string& name, const SceneOptions& o) {
  SceneSpec s;
  s.name = name;
  s.grid = o.grid;
  s.classes = {"drivable", "wall", "car", "pedestrian"};
  s.foreground = {2, 3};
  s.rig.preset = o.rig;
  s.rig.image_size = o.image_size;
  s.rig.fov_degrees = o.fov_degrees;
  s.rig.cameras = build_rig(o.rig, o.image_size, o.fov_degrees);
  s.ground = GroundPlane{0.0, 0.4, 0};
  return s;
}

inline void add_frames(SceneSpec& s, int n, double dt, const Vec3& ego_velocity = Vec3::Zero()) {
  for (int f = 0; f < n; ++f) s.frames.push_back({f * dt, Pose::from_translation(ego_velocity * (f * dt))});
}

/// Box moving with constant planar velocity and yaw rate.
inline TrackedBox moving_box(int id, int category, const Vec3& size, const Vec3& start, double yaw0,
                             const Vec3& velocity, double yaw_rate, const SceneSpec& s) {
  TrackedBox b;
  b.track_id = id;
  b.category = category;
  b.size = size;
  for (int f = 0; f < s.num_frames(); ++f) {
    const double t = s.frames[f].timestamp;
    b.pose_per_frame[f] = Pose::from_yaw(yaw0 + yaw_rate * t, start + velocity * t);
  }
  return b;
}

/// Training suite sized for a grid of about +-4.8 m: walls, cars and a
/// pedestrian, with extents that stay resolvable on a 0.8 m query grid.
inline std::vector<SceneSpec> default_scene_suite(const SceneOptions& o, int frames = 4) {
  std::vector<SceneSpec> out;
  {
    SceneSpec s = base_scene("suite-a", o);
    s.seed = 11;
    add_frames(s, frames, 0.5, Vec3(0.4, 0.0, 0.0));
    s.walls.push_back({Vec2(-4.0, 3.2), Vec2(4.8, 3.2), 0.8, 2.0, 0.0, 1});
    s.objects.push_back(moving_box(1, 2, Vec3(2.4, 1.6, 1.6), Vec3(2.0, -2.4, 0.8), 0.0,
                                   Vec3(0.6, 0.0, 0.0), 0.0, s));
    s.objects.push_back(moving_box(2, 3, Vec3(0.8, 0.8, 1.6), Vec3(-2.4, 0.8, 0.8), 0.0,
                                   Vec3(0.0, 0.4, 0.0), 0.0, s));
    out.push_back(std::move(s));
  }
  {
    SceneSpec s = base_scene("suite-b", o);
    s.seed = 12;
    add_frames(s, frames, 0.5);
    s.walls.push_back({Vec2(-3.2, -4.0), Vec2(-3.2, 4.0), 0.8, 1.6, 0.0, 1});
    s.walls.push_back({Vec2(0.8, -3.6), Vec2(4.4, -3.6), 0.8, 2.4, 0.0, 1});
    s.objects.push_back(moving_box(1, 2, Vec3(2.4, 1.6, 1.6), Vec3(1.6, 2.0, 0.8), 0.3,
                                   Vec3(-0.5, 0.0, 0.0), 0.2, s));
    s.objects.push_back(moving_box(2, 3, Vec3(0.8, 0.8, 1.6), Vec3(-1.6, -2.0, 0.8), 0.0,
                                   Vec3(0.4, 0.0, 0.0), 0.0, s));
    out.push_back(std::move(s));
  }
  return out;
}

/// Wall segment centred on a ray whose azimuth falls just inside camera 0's
/// edge for a surround6 rig with a 55 deg field of view: a query there is
/// seen by one camera while 3D offsets can reach the next one.
inline SceneSpec boundary_scene(const SceneOptions& o) {
  SceneOptions b = o;
  b.rig = RigPreset::kSurround6;
  b.fov_degrees = 55.0;
  SceneSpec s = base_scene("boundary", b);
  add_frames(s, 1, 0.5);
  const double az = 27.0 * std::numbers::pi / 180.0, r = 4.0;
  const Vec2 c(r * std::cos(az), r * std::sin(az)), t(-std::sin(az), std::cos(az));
  s.walls.push_back({c - 1.2 * t, c + 1.2 * t, 0.4, 2.4, 0.0, 1});
  return s;
}

/// One car spinning about its own vertical axis at `omega` rad/s.
inline SceneSpec rotating_box_scene(const SceneOptions& o, double omega = 0.5, double dt = 0.5, int frames = 3) {
  SceneSpec s = base_scene("rotating-box", o);
  add_frames(s, frames, dt);
  s.objects.push_back(moving_box(1, 2, Vec3(2.4, 1.2, 1.2), Vec3(1.0, 1.0, 0.6), 0.2, Vec3::Zero(), omega, s));
  return s;
}

inline SceneSpec translating_box_scene(const SceneOptions& o, const Vec3& v = Vec3(1.2, -0.4, 0.0),
                                       double dt = 0.5, int frames = 3) {
  SceneSpec s = base_scene("translating-box", o);
  add_frames(s, frames, dt);
  s.objects.push_back(moving_box(1, 2, Vec3(2.0, 1.0, 1.2), Vec3(-1.0, 1.5, 0.6), 0.4, v, 0.0, s));
  return s;
}

/// Ground and walls only; the ego drives forward `step` metres per frame.
inline SceneSpec static_scene(const SceneOptions& o, double step = 0.4, int frames = 10) {
  SceneSpec s = base_scene("static", o);
  add_frames(s, frames, 0.5, Vec3(step / 0.5, 0.0, 0.0));
  s.walls.push_back({Vec2(-6.0, 3.0), Vec2(8.0, 3.0), 0.4, 2.0, 0.0, 1});
  s.walls.push_back({Vec2(-2.0, -3.6), Vec2(4.0, -3.6), 0.4, 1.2, 0.0, 1});
  return s;
}

}  // namespace vgocc
