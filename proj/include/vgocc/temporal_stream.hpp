#pragma once

// Streaming BEV temporal fusion: the FIFO memory queue, voxel <-> BEV
// squeeze/unsqueeze, ego-motion warping of past BEV grids and multi-frame
// deformable attention where every memory frame acts as one level.

#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vgocc/attention_core.hpp"
#include "vgocc/geometry.hpp"
#include "vgocc/grid.hpp"
#include "vgocc/io.hpp"
#include "vgocc/numerics.hpp"

namespace vgocc {

/// Z x H x W x C voxel features laid over a GridSpec.
struct VoxelGrid {
  GridSpec grid;
  int channels = 0;
  std::vector<double> data;

  VoxelGrid() = default;
  VoxelGrid(const GridSpec& g, int c) : grid(g), channels(c), data(g.voxels() * c, 0.0) {
    require(c > 0, "VoxelGrid channels must be positive");
  }
  std::span<double> voxel(std::size_t idx) {
    return {data.data() + idx * channels, static_cast<std::size_t>(channels)};
  }
  std::span<const double> voxel(std::size_t idx) const {
    return {data.data() + idx * channels, static_cast<std::size_t>(channels)};
  }
};

/// H x W x C_BEV top-down features. Cell (h, w) is centred at
/// origin + pitch * (w + 0.5, h + 0.5).
struct BEVGrid {
  FeatureMap features;
  double pitch = 0.4;
  Vec2 origin = Vec2::Zero();

  BEVGrid() = default;
  BEVGrid(int h, int w, int c, double cell_pitch, const Vec2& min_corner)
      : features(h, w, c), pitch(cell_pitch), origin(min_corner) {}

  static BEVGrid over(const GridSpec& g, int channels) {
    return BEVGrid(g.ny, g.nx, channels, g.pitch, g.origin.head<2>());
  }

  int height() const { return features.height; }
  int width() const { return features.width; }
  int channels() const { return features.channels; }
  Vec2 cell_center(int h, int w) const { return origin + pitch * Vec2(w + 0.5, h + 0.5); }
  /// Continuous (col, row) of a metric position.
  Vec2 to_cell(const Vec2& xy) const { return (xy - origin) / pitch - Vec2(0.5, 0.5); }

  bool same_layout(const BEVGrid& o) const {
    return features.same_shape(o.features) && pitch == o.pitch && origin == o.origin;
  }
};

// ---------------------------------------------------------------------------
// Squeeze / unsqueeze along z.

inline void check_squeeze(const VoxelGrid& v, const AffineMap& proj) {
  require(proj.in_dim == v.grid.nz * v.channels,
          "squeeze projection must take Z*C_Voxel = " + std::to_string(v.grid.nz * v.channels) +
              " inputs, got " + std::to_string(proj.in_dim));
}

/// Per column, concatenates the Z voxel features (z-major) and applies proj.
inline BEVGrid squeeze_bev(const VoxelGrid& v, const AffineMap& proj) {
  check_squeeze(v, proj);
  const GridSpec& g = v.grid;
  BEVGrid b = BEVGrid::over(g, proj.out_dim);
  std::vector<double> col(static_cast<std::size_t>(proj.in_dim));
  for (int h = 0; h < g.ny; ++h)
    for (int w = 0; w < g.nx; ++w) {
      for (int z = 0; z < g.nz; ++z) {
        auto src = v.voxel(g.index(z, h, w));
        std::copy(src.begin(), src.end(), col.begin() + static_cast<std::ptrdiff_t>(z) * v.channels);
      }
      proj.apply_into(col, b.features.pixel(h, w));
    }
  return b;
}

/// Accumulates proj gradients and d(voxels) from d(BEV).
inline void squeeze_bev_backward(const VoxelGrid& v, const AffineMap& proj, const FeatureMap& dbev,
                                 AffineMap& gproj, VoxelGrid& dvox) {
  const GridSpec& g = v.grid;
  std::vector<double> col(static_cast<std::size_t>(proj.in_dim));
  std::vector<double> dcol(static_cast<std::size_t>(proj.in_dim));
  for (int h = 0; h < g.ny; ++h)
    for (int w = 0; w < g.nx; ++w) {
      for (int z = 0; z < g.nz; ++z) {
        auto src = v.voxel(g.index(z, h, w));
        std::copy(src.begin(), src.end(), col.begin() + static_cast<std::ptrdiff_t>(z) * v.channels);
      }
      std::fill(dcol.begin(), dcol.end(), 0.0);
      proj.backward(col, dbev.pixel(h, w), gproj, dcol);
      for (int z = 0; z < g.nz; ++z) {
        auto dst = dvox.voxel(g.index(z, h, w));
        for (int c = 0; c < v.channels; ++c) dst[c] += dcol[static_cast<std::size_t>(z) * v.channels + c];
      }
    }
}

/// Per cell, applies proj (C_BEV -> Z*C_Voxel) and splits the result into Z layers.
inline VoxelGrid unsqueeze_voxel(const BEVGrid& b, const AffineMap& proj, const GridSpec& grid) {
  require(proj.in_dim == b.channels(), "unsqueeze projection must take C_BEV inputs");
  require(grid.ny == b.height() && grid.nx == b.width(), "unsqueeze grid must match the BEV extents");
  require(proj.out_dim % grid.nz == 0, "unsqueeze output must split evenly into Z layers");
  const int c = proj.out_dim / grid.nz;
  VoxelGrid v(grid, c);
  std::vector<double> col(static_cast<std::size_t>(proj.out_dim));
  for (int h = 0; h < grid.ny; ++h)
    for (int w = 0; w < grid.nx; ++w) {
      proj.apply_into(b.features.pixel(h, w), col);
      for (int z = 0; z < grid.nz; ++z) {
        auto dst = v.voxel(grid.index(z, h, w));
        std::copy_n(col.begin() + static_cast<std::ptrdiff_t>(z) * c, c, dst.begin());
      }
    }
  return v;
}

inline void unsqueeze_voxel_backward(const BEVGrid& b, const AffineMap& proj, const VoxelGrid& dvox,
                                     AffineMap& gproj, FeatureMap& dbev) {
  const GridSpec& grid = dvox.grid;
  const int c = dvox.channels;
  std::vector<double> dcol(static_cast<std::size_t>(proj.out_dim));
  for (int h = 0; h < grid.ny; ++h)
    for (int w = 0; w < grid.nx; ++w) {
      for (int z = 0; z < grid.nz; ++z) {
        auto src = dvox.voxel(grid.index(z, h, w));
        std::copy(src.begin(), src.end(), dcol.begin() + static_cast<std::ptrdiff_t>(z) * c);
      }
      proj.backward(b.features.pixel(h, w), dcol, gproj, dbev.pixel(h, w));
    }
}

// ---------------------------------------------------------------------------
// Ego-motion warping.

/// Resamples `prev` into the current ego frame. `rel` maps previous-ego
/// coordinates to current-ego coordinates; each current cell pulls from
/// rel^-1 * x_t. Cells that land outside `prev` become zero.
inline double snap_edge(double x, int hi) {
  constexpr double kEps = 1e-9;
  if (x < 0.0 && x > -kEps) return 0.0;
  if (x > hi && x < hi + kEps) return hi;
  return x;
}

inline BEVGrid warp_bev(const BEVGrid& prev, const Pose& rel) {
  require((rel.rotation * Vec3::UnitZ() - Vec3::UnitZ()).norm() < 1e-6,
          "warp_bev needs a planar relative pose (rotation about z only)");
  const Pose inv = rel.inverse();
  BEVGrid out(prev.height(), prev.width(), prev.channels(), prev.pitch, prev.origin);
  for (int h = 0; h < prev.height(); ++h)
    for (int w = 0; w < prev.width(); ++w) {
      const Vec2 c = prev.cell_center(h, w);
      const Vec3 xp = inv.apply(Vec3(c.x(), c.y(), 0.0));
      Vec2 uv = prev.to_cell(xp.head<2>());
      // Rounding can push an edge cell center a hair outside the grid.
      uv.x() = snap_edge(uv.x(), prev.width() - 1);
      uv.y() = snap_edge(uv.y(), prev.height() - 1);
      bilinear_accumulate(prev.features, uv.x(), uv.y(), 1.0, out.features.pixel(h, w));
    }
  return out;
}

// ---------------------------------------------------------------------------
// FIFO memory queue.

struct MemoryEntry {
  BEVGrid bev;
  Pose pose;  // absolute ego pose of the frame the BEV was computed in
};

class MemoryQueue {
 public:
  explicit MemoryQueue(int capacity = 4) : capacity_(capacity) {
    require(capacity >= 1, "queue capacity must be >= 1");
  }

  void push(BEVGrid bev, const Pose& pose) {
    if (layout_) require(layout_->same_layout(bev), "BEV layout does not match the queue");
    else layout_ = BEVGrid(bev.height(), bev.width(), bev.channels(), bev.pitch, bev.origin);
    entries_.push_back({std::move(bev), pose});
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
  }
  void clear() {
    entries_.clear();
    layout_.reset();
  }

  int capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  /// Oldest first, newest last.
  const std::deque<MemoryEntry>& entries() const { return entries_; }

 private:
  int capacity_;
  std::deque<MemoryEntry> entries_;
  std::optional<BEVGrid> layout_;  // zero-sized data is fine; only metadata is compared
};

/// JSON header at `<prefix>.json`, float64 blob at `<prefix>.bin`.
inline void save_queue(const MemoryQueue& q, const std::filesystem::path& prefix) {
  BlobWriter blob;
  json entries = json::array();
  for (const auto& e : q.entries()) {
    const std::size_t pose_off = blob.append(pose_to_doubles(e.pose));
    const std::size_t feat_off = blob.append(e.bev.features.data);
    entries.push_back({{"height", e.bev.height()},
                       {"width", e.bev.width()},
                       {"channels", e.bev.channels()},
                       {"pitch", e.bev.pitch},
                       {"origin", {e.bev.origin.x(), e.bev.origin.y()}},
                       {"pose", pose_to_json(e.pose)},
                       {"pose_offset", pose_off},
                       {"features_offset", feat_off}});
  }
  const auto bin = std::filesystem::path(prefix.string() + ".bin");
  json header{{"format", "vgocc-memory-queue"},
              {"version", 1},
              {"capacity", q.capacity()},
              {"order", "oldest-first"},
              {"dtype", "float64"},
              {"byte_order", "little"},
              {"layout", "entry: pose[12] (R row-major, t) then features[H][W][C]"},
              {"blob", bin.filename().string()},
              {"entries", entries}};
  blob.save(bin);
  write_text(prefix.string() + ".json", header.dump(2) + "\n");
}

inline MemoryQueue load_queue(const std::filesystem::path& prefix) {
  const json header = read_json(prefix.string() + ".json");
  require(header.value("format", "") == "vgocc-memory-queue", "not a memory queue header");
  const auto bin = std::filesystem::path(prefix.string() + ".bin");
  BlobReader blob(bin);
  MemoryQueue q(header.at("capacity").get<int>());
  for (const auto& e : header.at("entries")) {
    const int h = e.at("height").get<int>(), w = e.at("width").get<int>(),
              c = e.at("channels").get<int>();
    BEVGrid b(h, w, c, e.at("pitch").get<double>(),
              Vec2(e.at("origin")[0].get<double>(), e.at("origin")[1].get<double>()));
    b.features.data = blob.doubles(e.at("features_offset").get<std::size_t>(),
                                   static_cast<std::size_t>(h) * w * c);
    const Pose pose = pose_from_doubles(blob.doubles(e.at("pose_offset").get<std::size_t>(), 12));
    q.push(std::move(b), pose);
  }
  return q;
}

// ---------------------------------------------------------------------------
// Multi-frame BEV-to-BEV deformable attention.

struct TemporalAttnParams {
  int channels = 0, heads = 0, levels = 0, points = 0;
  std::vector<AffineMap> value_maps;   // C_BEV -> C_BEV/heads
  std::vector<AffineMap> output_maps;  // C_BEV/heads -> C_BEV
  AffineMap offset_head;               // C_BEV -> heads*levels*points*2 (cells)
  AffineMap logit_head;                // C_BEV -> heads*levels*points
  AffineMap ffn;                       // C_BEV -> C_BEV

  int head_dim() const { return channels / heads; }
  int slots() const { return heads * levels * points; }

  void validate() const {
    require(heads >= 1 && levels >= 1 && points >= 1, "temporal heads/levels/points must be >= 1");
    require(channels % heads == 0, "C_BEV must be divisible by the temporal head count");
    require(static_cast<int>(value_maps.size()) == heads &&
                static_cast<int>(output_maps.size()) == heads,
            "one value and output map per temporal head");
    require(offset_head.in_dim == channels && offset_head.out_dim == slots() * 2,
            "temporal offset head shape mismatch");
    require(logit_head.in_dim == channels && logit_head.out_dim == slots(),
            "temporal logit head shape mismatch");
    require(ffn.in_dim == channels && ffn.out_dim == channels, "feed-forward must be C_BEV -> C_BEV");
  }

  TemporalAttnParams zeros_like() const {
    TemporalAttnParams z = *this;
    z.for_each_buffer([](std::vector<double>& b) { std::fill(b.begin(), b.end(), 0.0); });
    return z;
  }

  template <typename F>
  void for_each_buffer(F&& f) {
    for (auto& m : value_maps) { f(m.weight); f(m.bias); }
    for (auto& m : output_maps) { f(m.weight); f(m.bias); }
    f(offset_head.weight); f(offset_head.bias);
    f(logit_head.weight); f(logit_head.bias);
    f(ffn.weight); f(ffn.bias);
  }
  template <typename F>
  void for_each_buffer(F&& f) const {
    for (const auto& m : value_maps) { f(m.weight); f(m.bias); }
    for (const auto& m : output_maps) { f(m.weight); f(m.bias); }
    f(offset_head.weight); f(offset_head.bias);
    f(logit_head.weight); f(logit_head.bias);
    f(ffn.weight); f(ffn.bias);
  }
};

/// Random value/output maps, zero logit head, star-biased offsets (in cells),
/// identity feed-forward.
inline TemporalAttnParams make_temporal_params(int channels, int heads, int levels, int points,
                                               Rng& rng, double star_radius = 0.5) {
  require(channels % heads == 0, "C_BEV must be divisible by the temporal head count");
  TemporalAttnParams p;
  p.channels = channels;
  p.heads = heads;
  p.levels = levels;
  p.points = points;
  for (int m = 0; m < heads; ++m) {
    p.value_maps.push_back(random_affine(channels / heads, channels, rng));
    p.output_maps.push_back(random_affine(channels, channels / heads, rng));
  }
  p.offset_head = AffineMap(p.slots() * 2, channels);
  // One star per (head, level) so every level gets the same spread.
  for (int hl = 0; hl < heads * levels; ++hl) {
    std::vector<double> b(static_cast<std::size_t>(points) * 2);
    detail::star_bias(b, points, 2, star_radius);
    std::copy(b.begin(), b.end(), p.offset_head.bias.begin() + static_cast<std::ptrdiff_t>(hl) * points * 2);
  }
  p.logit_head = AffineMap(p.slots(), channels);
  p.ffn = AffineMap::identity(channels);
  return p;
}

/// Warps every memory entry into the current frame; level 0 is the newest.
inline std::vector<BEVGrid> align_memory(const MemoryQueue& queue, const Pose& current_pose) {
  std::vector<BEVGrid> out;
  for (auto it = queue.entries().rbegin(); it != queue.entries().rend(); ++it)
    out.push_back(warp_bev(it->bev, relative_pose(current_pose, it->pose)));
  return out;
}

namespace detail {

struct TemporalCellScratch {
  std::vector<double> offsets, weights, agg, value, mixed, residual;
};

inline void temporal_cell_forward(const TemporalAttnParams& p, std::span<const BEVGrid> aligned,
                                  int h, int w, std::span<const double> q, TemporalCellScratch& s,
                                  std::span<double> out) {
  const int M = p.heads, N = p.levels, K = p.points, C = p.channels;
  const int L = static_cast<int>(aligned.size());
  s.offsets.resize(static_cast<std::size_t>(p.slots() * 2));
  p.offset_head.apply_into(q, s.offsets);
  s.weights.resize(static_cast<std::size_t>(p.slots()));
  p.logit_head.apply_into(q, s.weights);
  // Softmax over (present levels x points) per head; levels beyond the
  // queue fill get weight 0.
  for (int m = 0; m < M; ++m) {
    double* wm = s.weights.data() + static_cast<std::size_t>(m) * N * K;
    const std::size_t used = static_cast<std::size_t>(L) * K;
    std::span<double> live(wm, used);
    softmax_into(live, live);
    std::fill(wm + used, wm + static_cast<std::size_t>(N) * K, 0.0);
  }
  s.agg.assign(static_cast<std::size_t>(M * C), 0.0);
  for (int m = 0; m < M; ++m) {
    std::span<double> agg_m(s.agg.data() + m * C, static_cast<std::size_t>(C));
    for (int l = 0; l < L; ++l)
      for (int k = 0; k < K; ++k) {
        const int slot = (m * N + l) * K + k;
        bilinear_accumulate(aligned[l].features, w + s.offsets[slot * 2], h + s.offsets[slot * 2 + 1],
                            s.weights[slot], agg_m);
      }
  }
  s.value.resize(static_cast<std::size_t>(M * p.head_dim()));
  s.mixed.resize(static_cast<std::size_t>(C));
  mix_heads_forward(p.value_maps, p.output_maps, s.agg, s.value, s.mixed);
  s.residual.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) s.residual[c] = q[c] + s.mixed[c];
  p.ffn.apply_into(s.residual, out);
}

}  // namespace detail

inline void check_temporal(const BEVGrid& current, std::span<const BEVGrid> aligned,
                           const TemporalAttnParams& params) {
  params.validate();
  require(current.channels() == params.channels, "BEV channels must equal the temporal C_BEV");
  require(static_cast<int>(aligned.size()) <= params.levels,
          "more memory frames than temporal attention levels");
  for (const auto& a : aligned) require(a.same_layout(current), "memory BEV layout differs from current");
}

/// Temporal attention over already-aligned memory (level 0 newest).
/// out = ffn(current + attn(current, memory)); empty memory returns current.
inline BEVGrid temporal_attention_aligned(const BEVGrid& current, std::span<const BEVGrid> aligned,
                                          const TemporalAttnParams& params) {
  check_temporal(current, aligned, params);
  if (aligned.empty()) return current;
  BEVGrid out(current.height(), current.width(), current.channels(), current.pitch, current.origin);
  detail::TemporalCellScratch s;
  for (int h = 0; h < current.height(); ++h)
    for (int w = 0; w < current.width(); ++w)
      detail::temporal_cell_forward(params, aligned, h, w, current.features.pixel(h, w), s,
                                    out.features.pixel(h, w));
  return out;
}

inline BEVGrid temporal_attention(const BEVGrid& current, const MemoryQueue& queue,
                                  const Pose& current_pose, const TemporalAttnParams& params) {
  const std::vector<BEVGrid> aligned = align_memory(queue, current_pose);
  return temporal_attention_aligned(current, aligned, params);
}

/// Per-cell attention weights (heads x levels x points) for inspection.
inline std::vector<double> temporal_cell_weights(const BEVGrid& current,
                                                 std::span<const BEVGrid> aligned,
                                                 const TemporalAttnParams& params, int h, int w) {
  check_temporal(current, aligned, params);
  require(!aligned.empty(), "no memory frames");
  detail::TemporalCellScratch s;
  std::vector<double> out(static_cast<std::size_t>(params.channels));
  detail::temporal_cell_forward(params, aligned, h, w, current.features.pixel(h, w), s, out);
  return s.weights;
}

struct TemporalGrads {
  TemporalAttnParams params;
  FeatureMap current;  // d(loss)/d(current BEV)
};

/// Memory frames are constants (streaming: history is detached).
inline void temporal_attention_backward_into(const BEVGrid& current,
                                             std::span<const BEVGrid> aligned,
                                             const TemporalAttnParams& p,
                                             const FeatureMap& upstream, TemporalGrads& g) {
  if (aligned.empty()) {
    for (std::size_t i = 0; i < upstream.data.size(); ++i) g.current.data[i] += upstream.data[i];
    return;
  }
  const int M = p.heads, N = p.levels, K = p.points, C = p.channels;
  const int L = static_cast<int>(aligned.size());
  detail::TemporalCellScratch s;
  std::vector<double> out(static_cast<std::size_t>(C)), dres(static_cast<std::size_t>(C)),
      dagg(static_cast<std::size_t>(M * C)), dweights(static_cast<std::size_t>(p.slots())),
      doffsets(static_cast<std::size_t>(p.slots() * 2)), dlogits(static_cast<std::size_t>(p.slots())),
      sample(static_cast<std::size_t>(C));
  for (int h = 0; h < current.height(); ++h)
    for (int w = 0; w < current.width(); ++w) {
      auto q = current.features.pixel(h, w);
      auto dout = upstream.pixel(h, w);
      auto dq = g.current.pixel(h, w);
      detail::temporal_cell_forward(p, aligned, h, w, q, s, out);
      std::fill(dres.begin(), dres.end(), 0.0);
      p.ffn.backward(s.residual, dout, g.params.ffn, dres);
      for (int c = 0; c < C; ++c) dq[c] += dres[c];
      detail::mix_heads_backward(p.value_maps, p.output_maps, s.agg, s.value, dres,
                                 g.params.value_maps, g.params.output_maps, dagg);
      std::fill(dweights.begin(), dweights.end(), 0.0);
      std::fill(doffsets.begin(), doffsets.end(), 0.0);
      for (int m = 0; m < M; ++m) {
        std::span<const double> dagg_m(dagg.data() + m * C, static_cast<std::size_t>(C));
        for (int l = 0; l < L; ++l)
          for (int k = 0; k < K; ++k) {
            const int slot = (m * N + l) * K + k;
            const double u = w + s.offsets[slot * 2], v = h + s.offsets[slot * 2 + 1];
            std::fill(sample.begin(), sample.end(), 0.0);
            if (!bilinear_accumulate(aligned[l].features, u, v, 1.0, sample)) continue;
            dweights[slot] = dot(dagg_m, sample);
            const BilinearGrad bg = bilinear_sample_grad(aligned[l].features, u, v, dagg_m);
            doffsets[slot * 2] += s.weights[slot] * bg.grad_uv[0];
            doffsets[slot * 2 + 1] += s.weights[slot] * bg.grad_uv[1];
          }
      }
      std::fill(dlogits.begin(), dlogits.end(), 0.0);
      for (int m = 0; m < M; ++m) {
        const std::size_t off = static_cast<std::size_t>(m) * N * K, n = static_cast<std::size_t>(L) * K;
        softmax_backward({s.weights.data() + off, n}, {dweights.data() + off, n},
                         {dlogits.data() + off, n});
      }
      p.offset_head.backward(q, doffsets, g.params.offset_head, dq);
      p.logit_head.backward(q, dlogits, g.params.logit_head, dq);
    }
}

inline TemporalGrads temporal_attention_backward(const BEVGrid& current,
                                                 std::span<const BEVGrid> aligned,
                                                 const TemporalAttnParams& params,
                                                 const FeatureMap& upstream) {
  check_temporal(current, aligned, params);
  require(upstream.same_shape(current.features), "upstream must match the BEV shape");
  TemporalGrads g{params.zeros_like(),
                  FeatureMap(current.height(), current.width(), current.channels())};
  temporal_attention_backward_into(current, aligned, params, upstream, g);
  return g;
}

}  // namespace vgocc
