#pragma once

// Toy occupancy network used by the harness: voxel queries refined by L
// spatial view-attention layers, squeezed to BEV, fused with the streaming
// memory by one temporal attention block, then voxel and flow heads.
//
//   V_0      = embed(pe(reference point))
//   V_{l+1}  = V_l + attn_l(V_l)
//   B        = squeeze(V_L);  B' = temporal(B, memory)
//   V_t      = V_L + unsqueeze(B')
//   logits   = occ_head(V_t)           (1 occupancy + C_cls semantic)
//   flow     = flow_head(B')
//
// Predictions live on the query grid and are interpolated to the
// ground-truth grid before the loss.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vgocc/geometry.hpp"
#include "vgocc/grid.hpp"
#include "vgocc/io.hpp"
#include "vgocc/numerics.hpp"
#include "vgocc/objective.hpp"
#include "vgocc/temporal_stream.hpp"
#include "vgocc/view_attention.hpp"

namespace vgocc {

enum class Method { kViewAttn, kViewAttnNoVc, kProjectionFirst };

inline Method parse_method(const std::string& s) {
  if (s == "view-attn") return Method::kViewAttn;
  if (s == "view-attn-no-vc") return Method::kViewAttnNoVc;
  if (s == "projection-first") return Method::kProjectionFirst;
  throw ContractViolation("unknown method '" + s + "' (view-attn | view-attn-no-vc | projection-first)");
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kViewAttn: return "view-attn";
    case Method::kViewAttnNoVc: return "view-attn-no-vc";
    case Method::kProjectionFirst: return "projection-first";
  }
  return "?";
}

inline OffsetFrame parse_vc_mode(const std::string& s) {
  if (s == "one-dof") return OffsetFrame::kOneDof;
  if (s == "two-dof") return OffsetFrame::kTwoDof;
  throw ContractViolation("unknown mode '" + s + "' (one-dof | two-dof)");
}

inline std::string vc_mode_name(OffsetFrame f) {
  switch (f) {
    case OffsetFrame::kOneDof: return "one-dof";
    case OffsetFrame::kTwoDof: return "two-dof";
    case OffsetFrame::kEgo: return "ego";
  }
  return "?";
}

struct ModelConfig {
  GridSpec query_grid{4, 12, 12, 0.8, Vec3(-4.8, -4.8, -0.4)};
  int channels = 24;       // C_Voxel
  int bev_channels = 42;   // C_BEV
  int heads = 4;           // M
  int points = 4;          // K
  int layers = 2;
  int queue_len = 4;       // N; 0 disables memory
  int temporal_heads = 2;
  int temporal_points = 4;
  int pe_bands = 4;
  Method method = Method::kViewAttn;
  OffsetFrame vc_mode = OffsetFrame::kOneDof;
  double star_radius_m = 0.5;
  double star_radius_px = 2.0;
  double star_radius_cells = 0.5;

  OffsetFrame offset_frame() const {
    return method == Method::kViewAttnNoVc ? OffsetFrame::kEgo : vc_mode;
  }
  int pe_dim() const { return 3 * 2 * pe_bands; }

  void validate() const {
    query_grid.validate();
    require(channels > 0 && bev_channels > 0, "channel counts must be positive");
    require(heads >= 1 && points >= 1 && layers >= 1, "heads, points and layers must be >= 1");
    require(channels % heads == 0, "C_Voxel must be divisible by M");
    require(bev_channels % temporal_heads == 0, "C_BEV must be divisible by the temporal heads");
    require(queue_len >= 0, "queue length must be >= 0");
    require(pe_bands >= 1, "pe_bands must be >= 1");
  }
};

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"query_grid", grid_to_json(c.query_grid)}, {"channels", c.channels},
              {"bev_channels", c.bev_channels},           {"heads", c.heads},
              {"points", c.points},                       {"layers", c.layers},
              {"queue_len", c.queue_len},                 {"temporal_heads", c.temporal_heads},
              {"temporal_points", c.temporal_points},     {"pe_bands", c.pe_bands},
              {"method", to_string(c.method)},            {"mode", vc_mode_name(c.vc_mode)},
              {"star_radius_m", c.star_radius_m},         {"star_radius_px", c.star_radius_px},
              {"star_radius_cells", c.star_radius_cells}};
}

/// Reads keys present in `j` over the values already in `c`.
inline void merge_model_config(ModelConfig& c, const json& j) {
  if (j.contains("query_grid")) c.query_grid = grid_from_json(j.at("query_grid"));
  c.channels = j.value("channels", c.channels);
  c.bev_channels = j.value("bev_channels", c.bev_channels);
  c.heads = j.value("heads", c.heads);
  c.points = j.value("points", c.points);
  c.layers = j.value("layers", c.layers);
  c.queue_len = j.value("queue_len", c.queue_len);
  c.temporal_heads = j.value("temporal_heads", c.temporal_heads);
  c.temporal_points = j.value("temporal_points", c.temporal_points);
  c.pe_bands = j.value("pe_bands", c.pe_bands);
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("mode")) c.vc_mode = parse_vc_mode(j.at("mode").get<std::string>());
  c.star_radius_m = j.value("star_radius_m", c.star_radius_m);
  c.star_radius_px = j.value("star_radius_px", c.star_radius_px);
  c.star_radius_cells = j.value("star_radius_cells", c.star_radius_cells);
}

// ---------------------------------------------------------------------------

struct ModelParams {
  ModelConfig config;
  int num_classes = 0;
  AffineMap embed;                    // pe -> C_Voxel
  std::vector<ViewAttnParams> layers;
  AffineMap squeeze, unsqueeze;       // Z*C_Voxel <-> C_BEV
  TemporalAttnParams temporal;
  AffineMap occ_head;                 // C_Voxel -> 1 + classes
  AffineMap flow_head;                // C_BEV -> 2

  template <typename F>
  void for_each_buffer(F&& f) {
    f(embed.weight); f(embed.bias);
    for (auto& l : layers) l.for_each_buffer(f);
    f(squeeze.weight); f(squeeze.bias);
    f(unsqueeze.weight); f(unsqueeze.bias);
    temporal.for_each_buffer(f);
    f(occ_head.weight); f(occ_head.bias);
    f(flow_head.weight); f(flow_head.bias);
  }
  template <typename F>
  void for_each_buffer(F&& f) const {
    f(embed.weight); f(embed.bias);
    for (const auto& l : layers) l.for_each_buffer(f);
    f(squeeze.weight); f(squeeze.bias);
    f(unsqueeze.weight); f(unsqueeze.bias);
    temporal.for_each_buffer(f);
    f(occ_head.weight); f(occ_head.bias);
    f(flow_head.weight); f(flow_head.bias);
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each_buffer([](std::vector<double>& b) { std::fill(b.begin(), b.end(), 0.0); });
    return z;
  }
  std::size_t size() const {
    std::size_t n = 0;
    for_each_buffer([&](const std::vector<double>& b) { n += b.size(); });
    return n;
  }
  std::vector<double> flatten() const {
    std::vector<double> out;
    for_each_buffer([&](const std::vector<double>& b) { out.insert(out.end(), b.begin(), b.end()); });
    return out;
  }
};

inline ModelParams make_model(const ModelConfig& cfg, int num_classes, int cameras, std::uint64_t seed) {
  cfg.validate();
  require(num_classes >= 1, "model needs at least one class");
  require(cameras >= 1, "model needs at least one camera");
  Rng rng(seed);
  ModelParams p;
  p.config = cfg;
  p.num_classes = num_classes;
  const int nz = cfg.query_grid.nz;
  p.embed = random_affine(cfg.channels, cfg.pe_dim(), rng);
  const AttnShape s{cfg.channels, cfg.heads, cfg.points, cameras};
  for (int l = 0; l < cfg.layers; ++l) {
    if (cfg.method == Method::kProjectionFirst)
      p.layers.push_back(make_view_attn_params(s, rng, 2, cfg.star_radius_px));
    else
      p.layers.push_back(make_view_attn_params(s, rng, 3, cfg.star_radius_m));
  }
  p.squeeze = random_affine(cfg.bev_channels, nz * cfg.channels, rng);
  p.unsqueeze = random_affine(nz * cfg.channels, cfg.bev_channels, rng, 0.5);
  p.temporal = make_temporal_params(cfg.bev_channels, cfg.temporal_heads, std::max(cfg.queue_len, 1),
                                    cfg.temporal_points, rng, cfg.star_radius_cells);
  p.occ_head = random_affine(1 + num_classes, cfg.channels, rng, 0.1);
  p.flow_head = random_affine(2, cfg.bev_channels, rng, 0.1);
  return p;
}

/// Fixed sinusoidal code of a reference point normalised to the grid box.
inline void query_encoding(const GridSpec& g, const Vec3& p, int bands, std::span<double> out) {
  const Vec3 ext = g.pitch * Vec3(g.nx, g.ny, g.nz);
  std::size_t k = 0;
  for (int a = 0; a < 3; ++a) {
    const double u = (p[a] - g.origin[a]) / ext[a];
    for (int b = 0; b < bands; ++b) {
      const double w = std::numbers::pi * std::pow(2.0, b);
      out[k++] = std::sin(w * u);
      out[k++] = std::cos(w * u);
    }
  }
}

// ---------------------------------------------------------------------------
// Forward / backward.

struct FrameInput {
  std::span<const FeatureMap> features;
  std::span<const CameraModel> rig;
  Pose ego_pose;
};

struct ModelGeometry {
  GridSpec gt_grid;
  GridInterpolator voxel_interp;  // query -> gt voxels
  GridInterpolator bev_interp;    // query -> gt columns
  std::vector<double> encodings;  // queries x pe_dim

  ModelGeometry(const ModelConfig& cfg, const GridSpec& gt)
      : gt_grid(gt), voxel_interp(cfg.query_grid, gt, false), bev_interp(cfg.query_grid, gt, true) {
    const GridSpec& q = cfg.query_grid;
    encodings.resize(q.voxels() * cfg.pe_dim());
    for (std::size_t i = 0; i < q.voxels(); ++i)
      query_encoding(q, q.center(i), cfg.pe_bands,
                     std::span<double>(encodings).subspan(i * cfg.pe_dim(), cfg.pe_dim()));
  }
};

struct ForwardState {
  std::vector<VoxelGrid> voxels;   // V_0 .. V_L
  BEVGrid bev, fused;              // B, B'
  std::vector<BEVGrid> aligned;    // memory in the current frame, newest first
  VoxelGrid lifted;                // unsqueeze(B')
  VoxelGrid vt;                    // V_L + lifted
  std::vector<double> query_logits;  // query voxels x (1 + classes)
  std::vector<double> query_flow;    // query cells x 2
  PredictionBundle pred;           // on the gt grid
};

namespace detail {

inline void attend(const ModelParams& p, const ViewAttnParams& lp, const QueryContext& ctx,
                   const FrameInput& in, std::span<double> out, AttnTrace* trace = nullptr) {
  if (p.config.method == Method::kProjectionFirst)
    projection_first_apply(ctx, lp, in.features, in.rig, out, trace);
  else
    view_attn_apply(ctx, lp, in.features, in.rig, p.config.offset_frame(), out, trace);
}

inline void check_frame(const ModelParams& p, const FrameInput& in) {
  require(!p.layers.empty() && static_cast<int>(in.rig.size()) == p.layers.front().cameras,
          "model is bound to a different camera count than the frame's rig");
  require(in.features.size() == in.rig.size(), "one feature map per camera required");
  for (std::size_t j = 0; j < in.features.size(); ++j) {
    require(in.features[j].channels == p.config.channels, "feature channels must equal C_Voxel");
    require(in.features[j].width == in.rig[j].width && in.features[j].height == in.rig[j].height,
            "feature map size must equal the camera image size");
  }
}

}  // namespace detail

inline ForwardState model_forward(const ModelParams& p, const ModelGeometry& geo, const FrameInput& in,
                                  const MemoryQueue* memory) {
  detail::check_frame(p, in);
  const ModelConfig& cfg = p.config;
  const GridSpec& qg = cfg.query_grid;
  const int C = cfg.channels, ncls = p.num_classes;
  ForwardState s;
  s.voxels.emplace_back(qg, C);
  for (std::size_t i = 0; i < qg.voxels(); ++i)
    p.embed.apply_into(std::span<const double>(geo.encodings).subspan(i * cfg.pe_dim(), cfg.pe_dim()),
                       s.voxels[0].voxel(i));
  std::vector<double> delta(static_cast<std::size_t>(C));
  for (int l = 0; l < cfg.layers; ++l) {
    VoxelGrid next = s.voxels.back();
    for (std::size_t i = 0; i < qg.voxels(); ++i) {
      const QueryContext ctx{s.voxels.back().voxel(i), qg.center(i)};
      detail::attend(p, p.layers[l], ctx, in, delta);
      auto v = next.voxel(i);
      for (int c = 0; c < C; ++c) v[c] += delta[c];
    }
    s.voxels.push_back(std::move(next));
  }
  s.bev = squeeze_bev(s.voxels.back(), p.squeeze);
  if (memory && !memory->empty()) s.aligned = align_memory(*memory, in.ego_pose);
  s.fused = temporal_attention_aligned(s.bev, s.aligned, p.temporal);
  s.lifted = unsqueeze_voxel(s.fused, p.unsqueeze, qg);
  s.vt = s.voxels.back();
  for (std::size_t i = 0; i < s.vt.data.size(); ++i) s.vt.data[i] += s.lifted.data[i];

  const int nl = 1 + ncls;
  s.query_logits.resize(qg.voxels() * nl);
  for (std::size_t i = 0; i < qg.voxels(); ++i)
    p.occ_head.apply_into(s.vt.voxel(i), std::span<double>(s.query_logits).subspan(i * nl, nl));
  s.query_flow.resize(qg.cells() * 2);
  for (int h = 0; h < qg.ny; ++h)
    for (int w = 0; w < qg.nx; ++w)
      p.flow_head.apply_into(s.fused.features.pixel(h, w),
                             std::span<double>(s.query_flow).subspan((static_cast<std::size_t>(h) * qg.nx + w) * 2, 2));

  const std::vector<double> up = geo.voxel_interp.apply(s.query_logits, nl);
  const std::size_t nv = geo.gt_grid.voxels();
  s.pred = PredictionBundle::zeros(nv, geo.gt_grid.cells(), ncls);
  for (std::size_t i = 0; i < nv; ++i) {
    s.pred.occ_logit[i] = up[i * nl];
    std::copy_n(up.begin() + static_cast<std::ptrdiff_t>(i * nl + 1), ncls,
                s.pred.sem_logits.begin() + static_cast<std::ptrdiff_t>(i * ncls));
  }
  s.pred.bev_flow = geo.bev_interp.apply(s.query_flow, 2);
  return s;
}

/// Gradient of the loss whose prediction gradient is `dpred` (gt grid).
inline ModelParams model_backward(const ModelParams& p, const ModelGeometry& geo, const FrameInput& in,
                                  const ForwardState& s, const PredictionBundle& dpred) {
  const ModelConfig& cfg = p.config;
  const GridSpec& qg = cfg.query_grid;
  const int C = cfg.channels, ncls = p.num_classes, nl = 1 + ncls;
  ModelParams g = p.zeros_like();

  const std::size_t nv = geo.gt_grid.voxels();
  std::vector<double> dup(nv * nl);
  for (std::size_t i = 0; i < nv; ++i) {
    dup[i * nl] = dpred.occ_logit[i];
    std::copy_n(dpred.sem_logits.begin() + static_cast<std::ptrdiff_t>(i * ncls), ncls,
                dup.begin() + static_cast<std::ptrdiff_t>(i * nl + 1));
  }
  std::vector<double> dql(qg.voxels() * nl, 0.0), dqf(qg.cells() * 2, 0.0);
  geo.voxel_interp.transpose_add(dup, nl, dql);
  geo.bev_interp.transpose_add(dpred.bev_flow, 2, dqf);

  VoxelGrid dvt(qg, C);
  for (std::size_t i = 0; i < qg.voxels(); ++i)
    p.occ_head.backward(s.vt.voxel(i), std::span<const double>(dql).subspan(i * nl, nl), g.occ_head, dvt.voxel(i));
  FeatureMap dfused(qg.ny, qg.nx, cfg.bev_channels);
  for (int h = 0; h < qg.ny; ++h)
    for (int w = 0; w < qg.nx; ++w)
      p.flow_head.backward(s.fused.features.pixel(h, w),
                           std::span<const double>(dqf).subspan((static_cast<std::size_t>(h) * qg.nx + w) * 2, 2),
                           g.flow_head, dfused.pixel(h, w));
  unsqueeze_voxel_backward(s.fused, p.unsqueeze, dvt, g.unsqueeze, dfused);

  TemporalGrads tg{g.temporal, FeatureMap(qg.ny, qg.nx, cfg.bev_channels)};
  temporal_attention_backward_into(s.bev, s.aligned, p.temporal, dfused, tg);
  g.temporal = std::move(tg.params);

  VoxelGrid dv = dvt;  // d(V_L)
  squeeze_bev_backward(s.voxels.back(), p.squeeze, tg.current, g.squeeze, dv);

  std::vector<FeatureMap> no_features;
  for (int l = cfg.layers - 1; l >= 0; --l) {
    ViewAttnGrads lg = ViewAttnGrads::like(p.layers[l], no_features, false);
    VoxelGrid dprev = dv;
    for (std::size_t i = 0; i < qg.voxels(); ++i) {
      std::fill(lg.query.begin(), lg.query.end(), 0.0);
      const QueryContext ctx{s.voxels[l].voxel(i), qg.center(i)};
      if (cfg.method == Method::kProjectionFirst)
        projection_first_backward_into(ctx, p.layers[l], in.features, in.rig, dv.voxel(i), lg);
      else
        view_attn_backward_into(ctx, p.layers[l], in.features, in.rig, dv.voxel(i), cfg.offset_frame(), lg);
      auto d = dprev.voxel(i);
      for (int c = 0; c < C; ++c) d[c] += lg.query[c];
    }
    g.layers[l] = std::move(lg.params);
    dv = std::move(dprev);
  }
  for (std::size_t i = 0; i < qg.voxels(); ++i)
    p.embed.backward(std::span<const double>(geo.encodings).subspan(i * cfg.pe_dim(), cfg.pe_dim()), dv.voxel(i),
                     g.embed, {});
  return g;
}

// ---------------------------------------------------------------------------
// Parameter files: JSON header + float64 blob in for_each_buffer order.

inline void save_params(const ModelParams& p, const std::filesystem::path& prefix) {
  BlobWriter blob;
  const std::vector<double> flat = p.flatten();
  blob.append(flat);
  const auto bin = std::filesystem::path(prefix.string() + ".bin");
  json header{{"format", "vgocc-model-params"}, {"version", 1},
              {"model", model_config_to_json(p.config)}, {"num_classes", p.num_classes},
              {"cameras", p.layers.front().cameras}, {"count", flat.size()},
              {"dtype", "float64"}, {"byte_order", "little"}, {"blob", bin.filename().string()}};
  blob.save(bin);
  write_text(prefix.string() + ".json", header.dump(2) + "\n");
}

inline ModelParams load_params(const std::filesystem::path& prefix) {
  const json header = read_json(prefix.string() + ".json");
  require(header.value("format", "") == "vgocc-model-params", "not a model parameter header");
  ModelConfig cfg;
  merge_model_config(cfg, header.at("model"));
  ModelParams p = make_model(cfg, header.at("num_classes").get<int>(), header.at("cameras").get<int>(), 0);
  const std::size_t n = header.at("count").get<std::size_t>();
  require(n == p.size(), "parameter count does not match the model configuration");
  BlobReader blob(std::filesystem::path(prefix.string() + ".bin"));
  const std::vector<double> flat = blob.doubles(0, n);
  std::size_t off = 0;
  p.for_each_buffer([&](std::vector<double>& b) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), b.size(), b.begin());
    off += b.size();
  });
  return p;
}

}  // namespace vgocc
