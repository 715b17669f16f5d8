#pragma once

// Occupancy-flow ground truth from tracked rigid boxes.
//
// A voxel centre p_t inside a box at frame t is carried back through the
// box's rigid motion, p_{t-1} = O_{t-1} O_t^-1 p_t, and its flow is
// (p_t - p_{t-1}) / dt. The object-flow baseline instead copies the box
// centre velocity to every voxel of the box.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vgocc/geometry.hpp"
#include "vgocc/grid.hpp"
#include "vgocc/io.hpp"

namespace vgocc {

struct TrackedBox {
  int track_id = 0;
  int category = 0;         // index into the scene class table
  Vec3 size = Vec3::Ones(); // length (x), width (y), height (z) in metres
  std::map<int, Pose> pose_per_frame;  // frame -> box-to-global pose (centre + heading)

  std::optional<Pose> pose_at(int frame) const {
    auto it = pose_per_frame.find(frame);
    if (it == pose_per_frame.end()) return std::nullopt;
    return it->second;
  }
};

/// One box at frame t with its pose at t-1 when the track existed then.
struct BoxMotion {
  int track_id = 0;
  int category = 0;
  Vec3 size = Vec3::Ones();
  Pose at_t;
  std::optional<Pose> at_prev;
};

inline std::vector<BoxMotion> box_motions(std::span<const TrackedBox> boxes, int frame, int prev_frame) {
  std::vector<BoxMotion> out;
  for (const auto& b : boxes) {
    const auto pt = b.pose_at(frame);
    if (!pt) continue;
    out.push_back({b.track_id, b.category, b.size, *pt, b.pose_at(prev_frame)});
  }
  return out;
}

enum class FlowMode { kOccupancyFlow, kObjectFlow };

/// Per-voxel flow in m/s, expressed in the grid frame.
struct FlowField {
  GridSpec grid;
  Pose grid_pose;                   // grid-local -> global
  std::vector<double> flow;         // voxels x 3
  std::vector<std::uint8_t> occupied;
  std::vector<int> category;        // -1 where unoccupied
  std::vector<int> track;           // -1 where unoccupied

  FlowField() = default;
  FlowField(const GridSpec& g, const Pose& pose)
      : grid(g), grid_pose(pose), flow(g.voxels() * 3, 0.0), occupied(g.voxels(), 0),
        category(g.voxels(), -1), track(g.voxels(), -1) {}

  Vec3 at(std::size_t idx) const { return {flow[idx * 3], flow[idx * 3 + 1], flow[idx * 3 + 2]}; }
  void set(std::size_t idx, const Vec3& f) {
    flow[idx * 3] = f.x();
    flow[idx * 3 + 1] = f.y();
    flow[idx * 3 + 2] = f.z();
  }
};

/// Per-column planar flow.
struct BEVFlowField {
  int ny = 0, nx = 0;
  std::vector<double> flow;  // cells x 2
  std::vector<std::uint8_t> valid;
  std::vector<int> category;  // majority foreground class of the column, -1 if invalid

  BEVFlowField() = default;
  BEVFlowField(int h, int w)
      : ny(h), nx(w), flow(static_cast<std::size_t>(h) * w * 2, 0.0),
        valid(static_cast<std::size_t>(h) * w, 0), category(static_cast<std::size_t>(h) * w, -1) {}
  std::size_t cells() const { return valid.size(); }
};

inline Vec3 map_point_back(const Pose& o_t, const Pose& o_prev, const Vec3& p_t) {
  return o_prev.apply(o_t.inverse().apply(p_t));
}

inline Vec3 flow_vector(const Vec3& p_t, const Vec3& p_prev, double dt) {
  require(dt > 0.0, "flow_vector: dt must be positive");
  return (p_t - p_prev) / dt;
}

inline bool center_in_box(const Pose& box_pose, const Vec3& size, const Vec3& p) {
  const Vec3 local = box_pose.inverse().apply(p);
  return std::abs(local.x()) <= 0.5 * size.x() && std::abs(local.y()) <= 0.5 * size.y() &&
         std::abs(local.z()) <= 0.5 * size.z();
}

/// Flat indices of voxels whose centres lie inside the box. `grid_pose`
/// places the grid in the box's (global) frame.
inline std::vector<std::size_t> voxelize_box(const Pose& box_pose, const Vec3& size,
                                             const GridSpec& grid,
                                             const Pose& grid_pose = Pose::identity()) {
  grid.validate();
  // Box corners in grid coordinates bound the candidate range.
  const Pose box_in_grid = grid_pose.inverse() * box_pose;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (int i = 0; i < 8; ++i) {
    const Vec3 corner(((i & 1) ? 0.5 : -0.5) * size.x(), ((i & 2) ? 0.5 : -0.5) * size.y(),
                      ((i & 4) ? 0.5 : -0.5) * size.z());
    const Vec3 c = box_in_grid.apply(corner);
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }
  auto range = [&](double a, double b, double o, int n) {
    const int i0 = std::max(0, static_cast<int>(std::floor((a - o) / grid.pitch - 0.5)));
    const int i1 = std::min(n - 1, static_cast<int>(std::ceil((b - o) / grid.pitch - 0.5)));
    return std::pair{i0, i1};
  };
  const auto [w0, w1] = range(lo.x(), hi.x(), grid.origin.x(), grid.nx);
  const auto [h0, h1] = range(lo.y(), hi.y(), grid.origin.y(), grid.ny);
  const auto [z0, z1] = range(lo.z(), hi.z(), grid.origin.z(), grid.nz);
  std::vector<std::size_t> out;
  for (int z = z0; z <= z1; ++z)
    for (int h = h0; h <= h1; ++h)
      for (int w = w0; w <= w1; ++w)
        if (center_in_box(box_in_grid, size, grid.center(z, h, w))) out.push_back(grid.index(z, h, w));
  return out;
}

/// Builds the flow field of frame t. Overlaps go to the box whose centre is
/// nearest the voxel centre (ties: lower track id). Tracks without a t-1
/// pose get zero flow.
inline FlowField generate_flow_field(std::span<const BoxMotion> boxes, const GridSpec& grid,
                                     double dt, FlowMode mode,
                                     const Pose& grid_pose = Pose::identity()) {
  require(dt > 0.0, "generate_flow_field: dt must be positive");
  FlowField field(grid, grid_pose);
  std::vector<double> best(grid.voxels(), std::numeric_limits<double>::infinity());
  std::vector<int> owner(grid.voxels(), -1);
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    for (std::size_t idx : voxelize_box(boxes[b].at_t, boxes[b].size, grid, grid_pose)) {
      const double d = (grid_pose.apply(grid.center(idx)) - boxes[b].at_t.translation).norm();
      const bool take = owner[idx] < 0 || d < best[idx] ||
                        (d == best[idx] && boxes[b].track_id < boxes[owner[idx]].track_id);
      if (take) {
        best[idx] = d;
        owner[idx] = static_cast<int>(b);
      }
    }
  }
  const Mat3 to_grid = grid_pose.rotation.transpose();
  for (std::size_t idx = 0; idx < grid.voxels(); ++idx) {
    if (owner[idx] < 0) continue;
    const BoxMotion& bm = boxes[owner[idx]];
    field.occupied[idx] = 1;
    field.category[idx] = bm.category;
    field.track[idx] = bm.track_id;
    if (!bm.at_prev) continue;
    Vec3 f;
    if (mode == FlowMode::kOccupancyFlow) {
      const Vec3 p_t = grid_pose.apply(grid.center(idx));
      f = flow_vector(p_t, map_point_back(bm.at_t, *bm.at_prev, p_t), dt);
    } else {
      f = flow_vector(bm.at_t.translation, bm.at_prev->translation, dt);
    }
    field.set(idx, to_grid * f);
  }
  return field;
}

/// Column reduction: mean planar flow of the occupied (foreground) voxels.
inline BEVFlowField reduce_bev_flow(const FlowField& field) {
  const GridSpec& g = field.grid;
  BEVFlowField out(g.ny, g.nx);
  for (int h = 0; h < g.ny; ++h)
    for (int w = 0; w < g.nx; ++w) {
      double sx = 0, sy = 0;
      int n = 0;
      std::map<int, int> votes;
      for (int z = 0; z < g.nz; ++z) {
        const std::size_t idx = g.index(z, h, w);
        if (!field.occupied[idx]) continue;
        sx += field.flow[idx * 3];
        sy += field.flow[idx * 3 + 1];
        ++n;
        ++votes[field.category[idx]];
      }
      if (n == 0) continue;
      const std::size_t cell = static_cast<std::size_t>(h) * g.nx + w;
      out.valid[cell] = 1;
      out.flow[cell * 2] = sx / n;
      out.flow[cell * 2 + 1] = sy / n;
      // std::map iterates in ascending class order, so ties go to the lower class.
      int best = -1, best_n = 0;
      for (const auto& [c, k] : votes)
        if (k > best_n) {
          best = c;
          best_n = k;
        }
      out.category[cell] = best;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Binary blob + JSON header.

inline void save_flow_field(const FlowField& f, const std::filesystem::path& prefix) {
  BlobWriter blob;
  const std::size_t flow_off = blob.append(f.flow);
  const std::size_t occ_off = blob.append(f.occupied.data(), f.occupied.size());
  std::vector<std::int32_t> cat(f.category.begin(), f.category.end());
  const std::size_t cat_off = blob.append(cat.data(), cat.size() * sizeof(std::int32_t));
  std::vector<std::int32_t> trk(f.track.begin(), f.track.end());
  const std::size_t trk_off = blob.append(trk.data(), trk.size() * sizeof(std::int32_t));
  const auto bin = std::filesystem::path(prefix.string() + ".bin");
  json header{{"format", "vgocc-flow-field"},
              {"version", 1},
              {"grid", grid_to_json(f.grid)},
              {"grid_pose", pose_to_json(f.grid_pose)},
              {"units", "m/s"},
              {"frame", "grid-local axes"},
              {"layout", "index (z*H + h)*W + w"},
              {"byte_order", "little"},
              {"blob", bin.filename().string()},
              {"arrays",
               {{"flow", {{"dtype", "float64"}, {"shape", {f.grid.voxels(), 3}}, {"offset", flow_off}}},
                {"occupied", {{"dtype", "uint8"}, {"shape", {f.grid.voxels()}}, {"offset", occ_off}}},
                {"category", {{"dtype", "int32"}, {"shape", {f.grid.voxels()}}, {"offset", cat_off}}},
                {"track", {{"dtype", "int32"}, {"shape", {f.grid.voxels()}}, {"offset", trk_off}}}}}};
  blob.save(bin);
  write_text(prefix.string() + ".json", header.dump(2) + "\n");
}

inline FlowField load_flow_field(const std::filesystem::path& prefix) {
  const json header = read_json(prefix.string() + ".json");
  require(header.value("format", "") == "vgocc-flow-field", "not a flow-field header");
  FlowField f(grid_from_json(header.at("grid")), pose_from_json(header.at("grid_pose")));
  BlobReader blob(std::filesystem::path(prefix.string() + ".bin"));
  const auto& arr = header.at("arrays");
  const std::size_t n = f.grid.voxels();
  f.flow = blob.doubles(arr.at("flow").at("offset").get<std::size_t>(), n * 3);
  blob.read(arr.at("occupied").at("offset").get<std::size_t>(), f.occupied.data(), n);
  std::vector<std::int32_t> cat(n);
  blob.read(arr.at("category").at("offset").get<std::size_t>(), cat.data(), n * sizeof(std::int32_t));
  f.category.assign(cat.begin(), cat.end());
  blob.read(arr.at("track").at("offset").get<std::size_t>(), cat.data(), n * sizeof(std::int32_t));
  f.track.assign(cat.begin(), cat.end());
  return f;
}

}  // namespace vgocc
