#pragma once

// Learning-first view attention and the projection-first baseline.
//
// View attention generates 3D offsets for each (head, point) in the query's
// view-coordinate frame, turns them into ego-frame sample points and projects
// every sample onto every camera. Projection-first projects the fixed
// reference point first and learns 2D pixel offsets around it, so a camera
// that cannot see the reference point never contributes.
//
// Attention layout: weights[(m*K + k)*J + j]; per head the K*J entries are
// softmax-normalised. Samples that fall outside a camera contribute a zero
// feature and keep their weight (no renormalisation).

#include <algorithm>
#include <limits>
#include <set>
#include <span>
#include <vector>

#include "vgocc/attention_core.hpp"
#include "vgocc/geometry.hpp"
#include "vgocc/numerics.hpp"

namespace vgocc {

struct AttnShape {
  int channels = 24;  // C_Voxel
  int heads = 4;      // M
  int points = 4;     // K
  int cameras = 6;    // J
};

/// Parameters of one deformable attention block over camera images.
/// offset_dim is 3 for view attention (metric VC offsets) and 2 for the
/// projection-first baseline (pixel offsets).
struct ViewAttnParams {
  int channels = 0, heads = 0, points = 0, cameras = 0, offset_dim = 3;
  std::vector<AffineMap> value_maps;   // C_Voxel -> C_v
  std::vector<AffineMap> output_maps;  // C_v -> C_Voxel
  AffineMap offset_head;               // C_Voxel -> M*K*offset_dim
  AffineMap logit_head;                // C_Voxel -> M*K*J

  int head_dim() const { return channels / heads; }
  int slots() const { return heads * points; }

  void validate() const {
    require(heads >= 1 && points >= 1 && cameras >= 1, "heads, points and cameras must be >= 1");
    require(channels % heads == 0, "C_Voxel must be divisible by the number of heads");
    require(static_cast<int>(value_maps.size()) == heads &&
                static_cast<int>(output_maps.size()) == heads,
            "one value map and one output map per head");
    for (int m = 0; m < heads; ++m) {
      require(value_maps[m].in_dim == channels && value_maps[m].out_dim == head_dim(),
              "value map must be C_Voxel -> C_Voxel/M");
      require(output_maps[m].in_dim == head_dim() && output_maps[m].out_dim == channels,
              "output map must be C_Voxel/M -> C_Voxel");
    }
    require(offset_dim == 2 || offset_dim == 3, "offset_dim must be 2 or 3");
    require(offset_head.in_dim == channels && offset_head.out_dim == slots() * offset_dim,
            "offset head shape mismatch");
    require(logit_head.in_dim == channels && logit_head.out_dim == slots() * cameras,
            "logit head shape mismatch");
  }

  ViewAttnParams zeros_like() const {
    ViewAttnParams z = *this;
    z.for_each_buffer([](std::vector<double>& b) { std::fill(b.begin(), b.end(), 0.0); });
    return z;
  }

  template <typename F>
  void for_each_buffer(F&& f) {
    for (auto& m : value_maps) { f(m.weight); f(m.bias); }
    for (auto& m : output_maps) { f(m.weight); f(m.bias); }
    f(offset_head.weight); f(offset_head.bias);
    f(logit_head.weight); f(logit_head.bias);
  }
  template <typename F>
  void for_each_buffer(F&& f) const {
    for (const auto& m : value_maps) { f(m.weight); f(m.bias); }
    for (const auto& m : output_maps) { f(m.weight); f(m.bias); }
    f(offset_head.weight); f(offset_head.bias);
    f(logit_head.weight); f(logit_head.bias);
  }
};

/// Seeded initialisation: random value/output maps, zero logit head, and an
/// offset head with zero weights and a planar star bias of `star_radius`
/// (metres for offset_dim 3, pixels for offset_dim 2).
inline ViewAttnParams make_view_attn_params(const AttnShape& s, Rng& rng, int offset_dim = 3,
                                            double star_radius = 0.5) {
  require(s.channels % s.heads == 0, "C_Voxel must be divisible by the number of heads");
  ViewAttnParams p;
  p.channels = s.channels;
  p.heads = s.heads;
  p.points = s.points;
  p.cameras = s.cameras;
  p.offset_dim = offset_dim;
  const int hd = s.channels / s.heads;
  for (int m = 0; m < s.heads; ++m) {
    p.value_maps.push_back(random_affine(hd, s.channels, rng));
    p.output_maps.push_back(random_affine(s.channels, hd, rng));
  }
  p.offset_head = AffineMap(s.heads * s.points * offset_dim, s.channels);
  detail::star_bias(p.offset_head.bias, s.heads * s.points, offset_dim, star_radius);
  p.logit_head = AffineMap(s.heads * s.points * s.cameras, s.channels);
  return p;
}

struct QueryContext {
  std::span<const double> query;  // C_Voxel
  Vec3 reference_point = Vec3::Zero();
};

struct SampleRecord {
  int head = 0, point = 0, camera = 0;
  Vec3 sample_point = Vec3::Zero();  // ego frame; the reference point for projection-first
  Vec2 uv = Vec2::Zero();
  bool in_view = false;
  double weight = 0.0;
};

struct AttnTrace {
  std::vector<SampleRecord> samples;

  /// Distinct cameras that received at least one valid sample.
  int cameras_reached() const {
    std::set<int> cams;
    for (const auto& s : samples)
      if (s.in_view) cams.insert(s.camera);
    return static_cast<int>(cams.size());
  }
};

struct ViewAttnResult {
  std::vector<double> out;
  AttnTrace trace;
};

/// Offsets as M*K 3-vectors (or 2-vectors stored with z = 0 for planar params).
inline std::vector<Vec3> generate_offsets(const ViewAttnParams& params, std::span<const double> q) {
  const std::vector<double> raw = affine_apply(params.offset_head, q);
  std::vector<Vec3> out(static_cast<std::size_t>(params.slots()));
  const int d = params.offset_dim;
  for (int i = 0; i < params.slots(); ++i)
    out[i] = Vec3(raw[i * d], raw[i * d + 1], d == 3 ? raw[i * d + 2] : 0.0);
  return out;
}

inline std::vector<double> generate_attention(const ViewAttnParams& params,
                                              std::span<const double> q) {
  std::vector<double> w = affine_apply(params.logit_head, q);
  const std::size_t per_head = static_cast<std::size_t>(params.points) * params.cameras;
  for (int m = 0; m < params.heads; ++m) {
    std::span<double> h(w.data() + m * per_head, per_head);
    softmax_into(h, h);
  }
  return w;
}

namespace detail {

inline void check_inputs(const ViewAttnParams& params, std::span<const FeatureMap> features,
                         std::span<const CameraModel> rig, std::span<const double> q) {
  require(static_cast<int>(features.size()) == params.cameras &&
              static_cast<int>(rig.size()) == params.cameras,
          "features and rig must both have one entry per camera");
  require(static_cast<int>(q.size()) == params.channels, "query has wrong channel count");
  for (std::size_t j = 0; j < features.size(); ++j) {
    require(features[j].channels == params.channels, "feature map channels must equal C_Voxel");
    require(features[j].width == rig[j].width && features[j].height == rig[j].height,
            "feature map size must equal the camera image size");
  }
}

struct ViewAttnScratch {
  std::vector<double> offsets, weights, agg, value;
  std::vector<Vec3> sample_points;
};

/// Shared forward for view attention; fills scratch so the backward can reuse it.
inline void view_attn_core(const QueryContext& ctx, const ViewAttnParams& params,
                           std::span<const FeatureMap> features, std::span<const CameraModel> rig,
                           OffsetFrame mode, ViewAttnScratch& s, std::span<double> out,
                           AttnTrace* trace) {
  const int M = params.heads, K = params.points, J = params.cameras, C = params.channels;
  s.offsets.resize(static_cast<std::size_t>(M * K * 3));
  params.offset_head.apply_into(ctx.query, s.offsets);
  s.weights.resize(static_cast<std::size_t>(M * K * J));
  params.logit_head.apply_into(ctx.query, s.weights);
  for (int m = 0; m < M; ++m) {
    std::span<double> h(s.weights.data() + m * K * J, static_cast<std::size_t>(K * J));
    softmax_into(h, h);
  }
  const Mat3 rot = make_view_frame(ctx.reference_point, mode).rotation;
  s.agg.assign(static_cast<std::size_t>(M * C), 0.0);
  s.sample_points.resize(static_cast<std::size_t>(M * K));
  for (int m = 0; m < M; ++m) {
    std::span<double> agg_m(s.agg.data() + m * C, static_cast<std::size_t>(C));
    for (int k = 0; k < K; ++k) {
      const int slot = m * K + k;
      const Vec3 dp(s.offsets[slot * 3], s.offsets[slot * 3 + 1], s.offsets[slot * 3 + 2]);
      const Vec3 ps = ctx.reference_point + rot * dp;
      s.sample_points[slot] = ps;
      for (int j = 0; j < J; ++j) {
        const double a = s.weights[slot * J + j];
        const Projection pr = pinhole_project(rig[j], ps);
        if (pr.in_view) bilinear_accumulate(features[j], pr.uv.x(), pr.uv.y(), a, agg_m);
        if (trace) trace->samples.push_back({m, k, j, ps, pr.uv, pr.in_view, a});
      }
    }
  }
  s.value.resize(static_cast<std::size_t>(M * params.head_dim()));
  mix_heads_forward(params.value_maps, params.output_maps, s.agg, s.value, out);
}

}  // namespace detail

/// Hot-path forward: writes C_Voxel outputs into `out`, optional trace.
inline void view_attn_apply(const QueryContext& ctx, const ViewAttnParams& params,
                            std::span<const FeatureMap> features,
                            std::span<const CameraModel> rig, OffsetFrame mode,
                            std::span<double> out, AttnTrace* trace = nullptr) {
  detail::ViewAttnScratch s;
  detail::view_attn_core(ctx, params, features, rig, mode, s, out, trace);
}

inline ViewAttnResult view_attn_forward(const QueryContext& ctx, const ViewAttnParams& params,
                                        std::span<const FeatureMap> features,
                                        std::span<const CameraModel> rig,
                                        OffsetFrame mode = OffsetFrame::kOneDof) {
  params.validate();
  require(params.offset_dim == 3, "view attention needs a 3D offset head");
  detail::check_inputs(params, features, rig, ctx.query);
  ViewAttnResult r;
  r.out.assign(static_cast<std::size_t>(params.channels), 0.0);
  view_attn_apply(ctx, params, features, rig, mode, r.out, &r.trace);
  return r;
}

/// Gradient accumulators for one attention block.
struct ViewAttnGrads {
  ViewAttnParams params;
  std::vector<double> query;
  std::vector<FeatureMap> features;  // empty unless requested

  static ViewAttnGrads like(const ViewAttnParams& p, std::span<const FeatureMap> features,
                            bool with_features) {
    ViewAttnGrads g{p.zeros_like(), std::vector<double>(static_cast<std::size_t>(p.channels), 0.0),
                    {}};
    if (with_features)
      for (const auto& f : features) g.features.emplace_back(f.height, f.width, f.channels);
    return g;
  }
};

/// Accumulates d(upstream . out) into `grads`. Sample locations are
/// differentiated through the bilinear sampler, the projection Jacobian and
/// the fixed VC rotation; the view angle itself is a constant.
inline void view_attn_backward_into(const QueryContext& ctx, const ViewAttnParams& params,
                                    std::span<const FeatureMap> features,
                                    std::span<const CameraModel> rig,
                                    std::span<const double> upstream, OffsetFrame mode,
                                    ViewAttnGrads& grads) {
  const int M = params.heads, K = params.points, J = params.cameras, C = params.channels;
  detail::ViewAttnScratch s;
  std::vector<double> out(static_cast<std::size_t>(C));
  detail::view_attn_core(ctx, params, features, rig, mode, s, out, nullptr);

  std::vector<double> dagg(static_cast<std::size_t>(M * C));
  detail::mix_heads_backward(params.value_maps, params.output_maps, s.agg, s.value, upstream,
                             grads.params.value_maps, grads.params.output_maps, dagg);

  const Mat3 rot = make_view_frame(ctx.reference_point, mode).rotation;
  std::vector<double> dweights(static_cast<std::size_t>(M * K * J), 0.0);
  std::vector<double> doffsets(static_cast<std::size_t>(M * K * 3), 0.0);
  std::vector<double> sample(static_cast<std::size_t>(C));
  const bool want_features = !grads.features.empty();
  for (int m = 0; m < M; ++m) {
    std::span<const double> dagg_m(dagg.data() + m * C, static_cast<std::size_t>(C));
    for (int k = 0; k < K; ++k) {
      const int slot = m * K + k;
      const Vec3& ps = s.sample_points[slot];
      Vec3 dps = Vec3::Zero();
      for (int j = 0; j < J; ++j) {
        const Projection pr = pinhole_project(rig[j], ps);
        if (!pr.in_view) continue;
        const double a = s.weights[slot * J + j];
        std::fill(sample.begin(), sample.end(), 0.0);
        bilinear_accumulate(features[j], pr.uv.x(), pr.uv.y(), 1.0, sample);
        dweights[slot * J + j] = dot(dagg_m, sample);
        const BilinearGrad bg = bilinear_sample_grad(features[j], pr.uv.x(), pr.uv.y(), dagg_m);
        const Vec2 duv(a * bg.grad_uv[0], a * bg.grad_uv[1]);
        dps += projection_jacobian(rig[j], ps).transpose() * duv;
        if (want_features) {
          for (int i = 0; i < bg.count; ++i) {
            auto px = grads.features[j].pixel(bg.pixels[i].row, bg.pixels[i].col);
            const double w = a * bg.pixels[i].weight;
            for (int c = 0; c < C; ++c) px[c] += w * dagg_m[c];
          }
        }
      }
      const Vec3 ddp = rot.transpose() * dps;
      doffsets[slot * 3] += ddp.x();
      doffsets[slot * 3 + 1] += ddp.y();
      doffsets[slot * 3 + 2] += ddp.z();
    }
  }
  std::vector<double> dlogits(static_cast<std::size_t>(M * K * J), 0.0);
  for (int m = 0; m < M; ++m) {
    const std::size_t off = static_cast<std::size_t>(m * K * J), n = static_cast<std::size_t>(K * J);
    softmax_backward({s.weights.data() + off, n}, {dweights.data() + off, n},
                     {dlogits.data() + off, n});
  }
  params.offset_head.backward(ctx.query, doffsets, grads.params.offset_head, grads.query);
  params.logit_head.backward(ctx.query, dlogits, grads.params.logit_head, grads.query);
}

inline ViewAttnGrads view_attn_backward(const QueryContext& ctx, const ViewAttnParams& params,
                                        std::span<const FeatureMap> features,
                                        std::span<const CameraModel> rig,
                                        std::span<const double> upstream,
                                        OffsetFrame mode = OffsetFrame::kOneDof,
                                        bool feature_grads = true) {
  params.validate();
  detail::check_inputs(params, features, rig, ctx.query);
  require(static_cast<int>(upstream.size()) == params.channels, "upstream has wrong size");
  ViewAttnGrads g = ViewAttnGrads::like(params, features, feature_grads);
  view_attn_backward_into(ctx, params, features, rig, upstream, mode, g);
  return g;
}

// ---------------------------------------------------------------------------
// Projection-first baseline.

namespace detail {

struct PlanarScratch {
  std::vector<double> offsets, weights, agg, value;
  std::vector<Projection> ref;  // per camera
  std::vector<char> visible;
  int num_visible = 0;
};

inline void projection_first_core(const QueryContext& ctx, const ViewAttnParams& params,
                                  std::span<const FeatureMap> features,
                                  std::span<const CameraModel> rig, PlanarScratch& s,
                                  std::span<double> out, AttnTrace* trace) {
  const int M = params.heads, K = params.points, J = params.cameras, C = params.channels;
  s.ref.resize(static_cast<std::size_t>(J));
  s.visible.assign(static_cast<std::size_t>(J), 0);
  s.num_visible = 0;
  for (int j = 0; j < J; ++j) {
    s.ref[j] = pinhole_project(rig[j], ctx.reference_point);
    if (s.ref[j].in_view) {
      s.visible[j] = 1;
      ++s.num_visible;
    }
  }
  std::fill(out.begin(), out.end(), 0.0);
  if (s.num_visible == 0) return;

  s.offsets.resize(static_cast<std::size_t>(M * K * 2));
  params.offset_head.apply_into(ctx.query, s.offsets);
  s.weights.resize(static_cast<std::size_t>(M * K * J));
  params.logit_head.apply_into(ctx.query, s.weights);
  // Softmax restricted to visible cameras; masked entries get weight 0.
  for (int m = 0; m < M; ++m) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < J; ++j)
        if (s.visible[j]) mx = std::max(mx, s.weights[(m * K + k) * J + j]);
    double sum = 0.0;
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < J; ++j) {
        double& w = s.weights[(m * K + k) * J + j];
        w = s.visible[j] ? std::exp(w - mx) : 0.0;
        sum += w;
      }
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < J; ++j) s.weights[(m * K + k) * J + j] /= sum;
  }
  s.agg.assign(static_cast<std::size_t>(M * C), 0.0);
  for (int m = 0; m < M; ++m) {
    std::span<double> agg_m(s.agg.data() + m * C, static_cast<std::size_t>(C));
    for (int k = 0; k < K; ++k) {
      const int slot = m * K + k;
      const Vec2 off(s.offsets[slot * 2], s.offsets[slot * 2 + 1]);
      for (int j = 0; j < J; ++j) {
        if (!s.visible[j]) continue;
        const double a = s.weights[slot * J + j];
        const Vec2 uv = s.ref[j].uv + off;
        const bool ok = bilinear_accumulate(features[j], uv.x(), uv.y(), a, agg_m);
        if (trace) trace->samples.push_back({m, k, j, ctx.reference_point, uv, ok, a});
      }
    }
  }
  s.value.resize(static_cast<std::size_t>(M * params.head_dim()));
  mix_heads_forward(params.value_maps, params.output_maps, s.agg, s.value, out);
}

}  // namespace detail

inline void projection_first_apply(const QueryContext& ctx, const ViewAttnParams& params,
                                   std::span<const FeatureMap> features,
                                   std::span<const CameraModel> rig, std::span<double> out,
                                   AttnTrace* trace = nullptr) {
  detail::PlanarScratch s;
  detail::projection_first_core(ctx, params, features, rig, s, out, trace);
}

inline ViewAttnResult projection_first_forward(const QueryContext& ctx,
                                               const ViewAttnParams& params2d,
                                               std::span<const FeatureMap> features,
                                               std::span<const CameraModel> rig) {
  params2d.validate();
  require(params2d.offset_dim == 2, "projection-first needs a 2D offset head");
  detail::check_inputs(params2d, features, rig, ctx.query);
  ViewAttnResult r;
  r.out.assign(static_cast<std::size_t>(params2d.channels), 0.0);
  projection_first_apply(ctx, params2d, features, rig, r.out, &r.trace);
  return r;
}

inline void projection_first_backward_into(const QueryContext& ctx, const ViewAttnParams& params,
                                           std::span<const FeatureMap> features,
                                           std::span<const CameraModel> rig,
                                           std::span<const double> upstream,
                                           ViewAttnGrads& grads) {
  const int M = params.heads, K = params.points, J = params.cameras, C = params.channels;
  detail::PlanarScratch s;
  std::vector<double> out(static_cast<std::size_t>(C));
  detail::projection_first_core(ctx, params, features, rig, s, out, nullptr);
  if (s.num_visible == 0) return;

  std::vector<double> dagg(static_cast<std::size_t>(M * C));
  detail::mix_heads_backward(params.value_maps, params.output_maps, s.agg, s.value, upstream,
                             grads.params.value_maps, grads.params.output_maps, dagg);
  std::vector<double> dweights(static_cast<std::size_t>(M * K * J), 0.0);
  std::vector<double> doffsets(static_cast<std::size_t>(M * K * 2), 0.0);
  std::vector<double> sample(static_cast<std::size_t>(C));
  const bool want_features = !grads.features.empty();
  for (int m = 0; m < M; ++m) {
    std::span<const double> dagg_m(dagg.data() + m * C, static_cast<std::size_t>(C));
    for (int k = 0; k < K; ++k) {
      const int slot = m * K + k;
      const Vec2 off(s.offsets[slot * 2], s.offsets[slot * 2 + 1]);
      for (int j = 0; j < J; ++j) {
        if (!s.visible[j]) continue;
        const Vec2 uv = s.ref[j].uv + off;
        const double a = s.weights[slot * J + j];
        std::fill(sample.begin(), sample.end(), 0.0);
        if (!bilinear_accumulate(features[j], uv.x(), uv.y(), 1.0, sample)) continue;
        dweights[slot * J + j] = dot(dagg_m, sample);
        const BilinearGrad bg = bilinear_sample_grad(features[j], uv.x(), uv.y(), dagg_m);
        doffsets[slot * 2] += a * bg.grad_uv[0];
        doffsets[slot * 2 + 1] += a * bg.grad_uv[1];
        if (want_features) {
          for (int i = 0; i < bg.count; ++i) {
            auto px = grads.features[j].pixel(bg.pixels[i].row, bg.pixels[i].col);
            const double w = a * bg.pixels[i].weight;
            for (int c = 0; c < C; ++c) px[c] += w * dagg_m[c];
          }
        }
      }
    }
  }
  // Masked softmax backward: masked entries have weight 0 and drop out.
  std::vector<double> dlogits(static_cast<std::size_t>(M * K * J), 0.0);
  for (int m = 0; m < M; ++m) {
    const std::size_t off = static_cast<std::size_t>(m * K * J), n = static_cast<std::size_t>(K * J);
    softmax_backward({s.weights.data() + off, n}, {dweights.data() + off, n},
                     {dlogits.data() + off, n});
  }
  params.offset_head.backward(ctx.query, doffsets, grads.params.offset_head, grads.query);
  params.logit_head.backward(ctx.query, dlogits, grads.params.logit_head, grads.query);
}

inline ViewAttnGrads projection_first_backward(const QueryContext& ctx,
                                               const ViewAttnParams& params2d,
                                               std::span<const FeatureMap> features,
                                               std::span<const CameraModel> rig,
                                               std::span<const double> upstream,
                                               bool feature_grads = true) {
  params2d.validate();
  require(params2d.offset_dim == 2, "projection-first needs a 2D offset head");
  detail::check_inputs(params2d, features, rig, ctx.query);
  ViewAttnGrads g = ViewAttnGrads::like(params2d, features, feature_grads);
  projection_first_backward_into(ctx, params2d, features, rig, upstream, g);
  return g;
}

/// Number of cameras whose image contains the projection of p.
inline int camera_coverage(const Vec3& p, std::span<const CameraModel> rig) {
  return static_cast<int>(std::count_if(rig.begin(), rig.end(), [&](const CameraModel& c) {
    return pinhole_project(c, p).in_view;
  }));
}

}  // namespace vgocc
