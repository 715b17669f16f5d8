#pragma once

// Run orchestration: configs and presets, scene preparation, streaming toy
// training with momentum descent, evaluation, method comparison, coverage
// analysis and report emission.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vgocc/flow_annotation.hpp"
#include "vgocc/io.hpp"
#include "vgocc/model.hpp"
#include "vgocc/objective.hpp"
#include "vgocc/scene_sim.hpp"
#include "vgocc/temporal_stream.hpp"

namespace vgocc {

struct OptimConfig {
  double lr = 1e-2;
  double momentum = 0.9;
  int epochs = 200;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::string preset = "desk";
  ModelConfig model;
  OptimConfig optim;
  LossWeights loss;
  SceneOptions scene;   // used by the built-in scene suite
  int suite_frames = 4;
  std::vector<std::string> scene_paths;  // empty: built-in suite
  std::string out_dir = "out";

  void validate() const {
    model.validate();
    loss.validate();
    require(optim.lr > 0 && std::isfinite(optim.lr), "step size must be positive");
    require(optim.momentum >= 0 && optim.momentum < 1, "momentum must lie in [0, 1)");
    require(optim.epochs >= 0, "epochs must be >= 0");
    for (const auto& p : scene_paths)
      require(std::filesystem::exists(p), "scene file does not exist: " + p);
  }
};

inline GridSpec centered_grid(int nz, int n, double pitch, double z0) {
  return GridSpec{nz, n, n, pitch, Vec3(-0.5 * n * pitch, -0.5 * n * pitch, z0)};
}

/// paper:   query 100x100x8, gt 200x200x16 at 0.4 m, C 72/126, 4 layers, lr 2e-4.
/// desk:    query = gt = 50x50x8 at 0.4 m, C 24/42, 2 layers, lr 1e-2.
/// compact: gt 24x24x8 at 0.4 m, query 12x12x4 at 0.8 m, otherwise desk.
inline RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") {
    c.scene.grid = centered_grid(8, 50, 0.4, -0.4);
    c.model.query_grid = c.scene.grid;
  } else if (name == "paper") {
    c.scene.grid = centered_grid(16, 200, 0.4, -0.4);
    c.model.query_grid = centered_grid(8, 100, 0.8, -0.4);
    c.model.channels = 72;
    c.model.bev_channels = 126;
    c.model.layers = 4;
    c.model.temporal_heads = 6;
    c.optim.lr = 2e-4;
  } else if (name == "compact") {
    c.scene.grid = centered_grid(8, 24, 0.4, -0.4);
    c.model.query_grid = centered_grid(4, 12, 0.8, -0.4);
    c.scene.fov_degrees = 55.0;
    c.optim.lr = 3e-3;
  } else {
    throw ContractViolation("unknown preset '" + name + "' (desk | paper | compact)");
  }
  return c;
}

inline json run_config_to_json(const RunConfig& c) {
  json paths = json::array();
  for (const auto& p : c.scene_paths) paths.push_back(p);
  return json{{"preset", c.preset},
              {"model", model_config_to_json(c.model)},
              {"optim", {{"lr", c.optim.lr}, {"momentum", c.optim.momentum}, {"epochs", c.optim.epochs},
                         {"seed", c.optim.seed}}},
              {"loss", {{"lambda", c.loss.lambda}, {"focal_gamma", c.loss.focal_gamma},
                        {"focal_alpha", c.loss.focal_alpha}}},
              {"scene", {{"grid", grid_to_json(c.scene.grid)}, {"rig", to_string(c.scene.rig)},
                         {"image_size", c.scene.image_size}, {"fov_degrees", c.scene.fov_degrees},
                         {"frames", c.suite_frames}}},
              {"scenes", paths}};
}

/// Preset named by j["preset"] (or `base`), then every key in j on top.
inline RunConfig run_config_from_json(const json& j, const std::string& base = "desk") {
  try {
    RunConfig c = preset_config(j.value("preset", base));
    if (j.contains("model")) merge_model_config(c.model, j.at("model"));
    if (j.contains("optim")) {
      const json& o = j.at("optim");
      c.optim.lr = o.value("lr", c.optim.lr);
      c.optim.momentum = o.value("momentum", c.optim.momentum);
      c.optim.epochs = o.value("epochs", c.optim.epochs);
      c.optim.seed = o.value("seed", c.optim.seed);
    }
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      c.loss.lambda = l.value("lambda", c.loss.lambda);
      c.loss.focal_gamma = l.value("focal_gamma", c.loss.focal_gamma);
      c.loss.focal_alpha = l.value("focal_alpha", c.loss.focal_alpha);
    }
    if (j.contains("scene")) {
      const json& s = j.at("scene");
      if (s.contains("grid")) c.scene.grid = grid_from_json(s.at("grid"));
      if (s.contains("rig")) c.scene.rig = parse_rig_preset(s.at("rig").get<std::string>());
      c.scene.image_size = s.value("image_size", c.scene.image_size);
      c.scene.fov_degrees = s.value("fov_degrees", c.scene.fov_degrees);
      c.suite_frames = s.value("frames", c.suite_frames);
    }
    if (j.contains("scenes")) c.scene_paths = j.at("scenes").get<std::vector<std::string>>();
    c.out_dir = j.value("out_dir", c.out_dir);
    return c;
  } catch (const json::exception& e) {
    throw ContractViolation(std::string("malformed config JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scene preparation: features, visibility mask and targets cached per frame.

struct PreparedFrame {
  RenderedFrame rendered;
  SceneTruth truth;
  OccupancyTarget target;
};

struct PreparedScene {
  SceneSpec spec;
  std::vector<PreparedFrame> frames;

  FrameInput input(int f) const {
    return {frames[f].rendered.features, spec.cameras(), spec.frames[f].ego_pose};
  }
};

inline PreparedScene prepare_scene(const SceneSpec& s, int channels) {
  s.validate();
  PreparedScene p;
  p.spec = s;
  for (int f = 0; f < s.num_frames(); ++f) {
    PreparedFrame pf;
    pf.rendered = render_frame(s, f, channels);
    pf.truth = scene_ground_truth(s, f);
    pf.target = {pf.truth.labels, pf.truth.bev_flow};
    p.frames.push_back(std::move(pf));
  }
  return p;
}

inline std::vector<SceneSpec> run_scenes(const RunConfig& c) {
  std::vector<SceneSpec> out;
  if (c.scene_paths.empty()) return default_scene_suite(c.scene, c.suite_frames);
  for (const auto& p : c.scene_paths) out.push_back(load_scene(p));
  return out;
}

inline std::vector<PreparedScene> prepare_scenes(const std::vector<SceneSpec>& scenes, int channels) {
  require(!scenes.empty(), "no scenes");
  std::vector<PreparedScene> out;
  for (const auto& s : scenes) {
    require(s.grid == scenes.front().grid, "all scenes of a run must share one ground-truth grid");
    require(s.classes == scenes.front().classes, "all scenes of a run must share one class table");
    require(s.cameras().size() == scenes.front().cameras().size(), "all scenes must use the same camera count");
    out.push_back(prepare_scene(s, channels));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric accumulation.

struct EvalAccumulator {
  IouAccumulator iou;
  AveAccumulator ave;
  LossBreakdown loss_sum;
  int frames = 0;

  EvalAccumulator(int num_classes, const std::vector<int>& foreground)
      : iou([&] {
          std::vector<int> c(static_cast<std::size_t>(num_classes));
          std::iota(c.begin(), c.end(), 0);
          return c;
        }()),
        ave(foreground) {}

  void add_loss(const LossBreakdown& b) {
    loss_sum.focal += b.focal;
    loss_sum.ce += b.ce;
    loss_sum.lovasz += b.lovasz;
    loss_sum.l1 += b.l1;
    loss_sum.total += b.total;
    ++frames;
  }

  void add_prediction(std::span<const int> pred_labels, std::span<const double> pred_flow,
                      const PreparedFrame& f) {
    iou.add(pred_labels, f.truth.labels, f.rendered.observed);
    ave.add(pred_flow, f.truth.bev_flow, f.truth.bev_flow.category);
  }

  LossBreakdown mean_loss() const {
    LossBreakdown m = loss_sum;
    if (frames > 0) {
      const double k = 1.0 / frames;
      m.focal *= k; m.ce *= k; m.lovasz *= k; m.l1 *= k; m.total *= k;
    }
    return m;
  }
};

/// Occupied where the occupancy logit is positive, labelled by semantic argmax.
inline std::vector<int> predicted_labels(const PredictionBundle& p) {
  std::vector<int> out(p.occ_logit.size(), kFreeLabel);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(p.occ_logit[i] > 0.0)) continue;
    const auto row = p.sem_logits.begin() + static_cast<std::ptrdiff_t>(i * p.num_classes);
    out[i] = static_cast<int>(std::max_element(row, row + p.num_classes) - row);
  }
  return out;
}

struct CurveRow {
  int epoch = 0;
  LossBreakdown loss;
  double miou = 0, iou_geo = 0, mave = 0;
};

inline CurveRow curve_row(int epoch, const EvalAccumulator& acc) {
  return {epoch, acc.mean_loss(), miou_from(acc.iou).mean,
          acc.iou.geo_uni == 0 ? 1.0 : acc.iou.geo_inter / acc.iou.geo_uni, mave_from(acc.ave).mean};
}

// ---------------------------------------------------------------------------
// Streaming inference and training.

struct TrainingDiverged : std::runtime_error {
  int epoch, scene, frame;
  TrainingDiverged(int e, int s, int f)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(e) + ", scene " + std::to_string(s) +
                           ", frame " + std::to_string(f)),
        epoch(e), scene(s), frame(f) {}
};

struct FramePrediction {
  PredictionBundle pred;
  LossBreakdown loss;
};

inline void push_memory(MemoryQueue& q, const ModelConfig& cfg, const ForwardState& s, const Pose& pose) {
  if (cfg.queue_len > 0) q.push(s.fused, pose);
}

/// Frame-by-frame inference over [begin, end) with a live memory queue.
inline std::vector<FramePrediction> stream_inference(const ModelParams& p, const ModelGeometry& geo,
                                                     const PreparedScene& scene, int begin, int end,
                                                     MemoryQueue& memory, const LossWeights& w) {
  require(begin >= 0 && end <= scene.spec.num_frames() && begin <= end, "frame range out of bounds");
  std::vector<FramePrediction> out;
  for (int f = begin; f < end; ++f) {
    const FrameInput in = scene.input(f);
    ForwardState s = model_forward(p, geo, in, &memory);
    out.push_back({s.pred, total_loss(s.pred, scene.frames[f].target, w)});
    push_memory(memory, p.config, s, in.ego_pose);
  }
  return out;
}

inline EvalAccumulator evaluate_pass(const ModelParams& p, const ModelGeometry& geo,
                                     const std::vector<PreparedScene>& scenes, const LossWeights& w) {
  EvalAccumulator acc(p.num_classes, scenes.front().spec.foreground);
  for (const auto& sc : scenes) {
    MemoryQueue q(std::max(p.config.queue_len, 1));
    const std::vector<FramePrediction> preds = stream_inference(p, geo, sc, 0, sc.spec.num_frames(), q, w);
    for (std::size_t f = 0; f < preds.size(); ++f) {
      acc.add_loss(preds[f].loss);
      acc.add_prediction(predicted_labels(preds[f].pred), preds[f].pred.bev_flow, sc.frames[f]);
    }
  }
  return acc;
}

struct TrainResult {
  ModelParams params;
  std::vector<CurveRow> curves;  // row 0: initial parameters; row e: mean over training epoch e
};

inline ModelParams initial_model(const RunConfig& c, const std::vector<PreparedScene>& scenes) {
  return make_model(c.model, scenes.front().spec.num_classes(),
                    static_cast<int>(scenes.front().spec.cameras().size()), c.optim.seed);
}

inline TrainResult toy_train(const RunConfig& c, const std::vector<PreparedScene>& scenes) {
  c.validate();
  const ModelGeometry geo(c.model, scenes.front().spec.grid);
  TrainResult r{initial_model(c, scenes), {}};
  r.curves.push_back(curve_row(0, evaluate_pass(r.params, geo, scenes, c.loss)));
  ModelParams velocity = r.params.zeros_like();
  Rng order_rng(c.optim.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int> order(scenes.size());
  for (int epoch = 1; epoch <= c.optim.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    EvalAccumulator acc(r.params.num_classes, scenes.front().spec.foreground);
    for (int si : order) {
      const PreparedScene& sc = scenes[si];
      MemoryQueue memory(std::max(c.model.queue_len, 1));
      for (int f = 0; f < sc.spec.num_frames(); ++f) {
        const FrameInput in = sc.input(f);
        const ForwardState s = model_forward(r.params, geo, in, &memory);
        PredictionBundle dpred = PredictionBundle::zeros(s.pred.occ_logit.size(), s.pred.bev_flow.size() / 2,
                                                         r.params.num_classes);
        const LossBreakdown b = total_loss(s.pred, sc.frames[f].target, c.loss, &dpred);
        if (!std::isfinite(b.total)) throw TrainingDiverged(epoch, si, f);
        acc.add_loss(b);
        acc.add_prediction(predicted_labels(s.pred), s.pred.bev_flow, sc.frames[f]);
        const ModelParams g = model_backward(r.params, geo, in, s, dpred);
        // v <- mu v + g;  theta <- theta - lr v
        std::vector<const std::vector<double>*> gbufs;
        g.for_each_buffer([&](const std::vector<double>& b) { gbufs.push_back(&b); });
        std::size_t k = 0;
        velocity.for_each_buffer([&](std::vector<double>& v) {
          const std::vector<double>& gb = *gbufs[k++];
          for (std::size_t i = 0; i < v.size(); ++i) v[i] = c.optim.momentum * v[i] + gb[i];
        });
        std::vector<const std::vector<double>*> vbufs;
        velocity.for_each_buffer([&](const std::vector<double>& b) { vbufs.push_back(&b); });
        k = 0;
        r.params.for_each_buffer([&](std::vector<double>& t) {
          const std::vector<double>& vb = *vbufs[k++];
          for (std::size_t i = 0; i < t.size(); ++i) t[i] -= c.optim.lr * vb[i];
        });
        push_memory(memory, c.model, s, in.ego_pose);
      }
    }
    r.curves.push_back(curve_row(epoch, acc));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Coverage.

struct CoverageStats {
  std::vector<long> histogram;  // count of points seen by exactly j cameras
  long total = 0;
  double frac_zero = 0, frac_one = 0, frac_multi = 0;
};

inline CoverageStats coverage_from_counts(const std::vector<int>& counts, int cameras) {
  CoverageStats s;
  s.histogram.assign(static_cast<std::size_t>(cameras) + 1, 0);
  for (int c : counts) ++s.histogram[c];
  s.total = static_cast<long>(counts.size());
  if (s.total > 0) {
    long multi = 0;
    for (std::size_t j = 2; j < s.histogram.size(); ++j) multi += s.histogram[j];
    s.frac_zero = static_cast<double>(s.histogram[0]) / s.total;
    s.frac_one = s.histogram.size() > 1 ? static_cast<double>(s.histogram[1]) / s.total : 0.0;
    s.frac_multi = static_cast<double>(multi) / s.total;
  }
  return s;
}

/// Per-voxel-centre camera_coverage over the grid.
inline CoverageStats coverage_report(std::span<const CameraModel> rig, const GridSpec& grid) {
  require(!rig.empty(), "coverage needs a non-empty rig");
  for (const auto& c : rig) c.validate();
  grid.validate();
  std::vector<int> counts(grid.voxels());
  for (std::size_t i = 0; i < grid.voxels(); ++i) counts[i] = camera_coverage(grid.center(i), rig);
  return coverage_from_counts(counts, static_cast<int>(rig.size()));
}

/// Cameras reached by valid first-layer samples of every query of one frame.
inline CoverageStats trace_coverage(const ModelParams& p, const ModelGeometry& geo, const FrameInput& in,
                                    std::vector<SampleRecord>* samples = nullptr, std::size_t keep = 0) {
  const GridSpec& qg = p.config.query_grid;
  std::vector<double> q(static_cast<std::size_t>(p.config.channels)), out(q.size());
  std::vector<int> reached(qg.voxels());
  for (std::size_t i = 0; i < qg.voxels(); ++i) {
    p.embed.apply_into(std::span<const double>(geo.encodings).subspan(i * p.config.pe_dim(), p.config.pe_dim()), q);
    AttnTrace t;
    detail::attend(p, p.layers.front(), {q, qg.center(i)}, in, out, &t);
    reached[i] = t.cameras_reached();
    if (samples)
      for (const auto& s : t.samples)
        if (samples->size() < keep) samples->push_back(s);
  }
  return coverage_from_counts(reached, static_cast<int>(in.rig.size()));
}

// ---------------------------------------------------------------------------
// Reports.

inline constexpr const char* kReportSchema = "vgocc-report/1";

inline json coverage_to_json(const CoverageStats& s) {
  json h = json::array();
  for (long v : s.histogram) h.push_back(v);
  return json{{"histogram", h}, {"total", s.total}, {"fraction_0", num17(s.frac_zero)},
              {"fraction_1", num17(s.frac_one)}, {"fraction_ge2", num17(s.frac_multi)}};
}

inline json loss_to_json(const LossBreakdown& b) {
  return json{{"focal", num17(b.focal)}, {"ce", num17(b.ce)}, {"lovasz", num17(b.lovasz)},
              {"l1", num17(b.l1)}, {"total", num17(b.total)}};
}

inline json metrics_to_json(const EvalAccumulator& acc, const std::vector<std::string>& classes) {
  const MiouResult mi = miou_from(acc.iou);
  const MaveResult mv = mave_from(acc.ave);
  json per = json::object();
  for (std::size_t c = 0; c < mi.per_class.size(); ++c)
    per[classes[acc.iou.classes[c]]] = mi.per_class[c] ? json(num17(*mi.per_class[c])) : json(nullptr);
  json ave = json::object();
  for (std::size_t c = 0; c < mv.per_class.size(); ++c)
    ave[classes[acc.ave.classes[c]]] = mv.per_class[c] ? json(num17(*mv.per_class[c])) : json(nullptr);
  const double geo = acc.iou.geo_uni == 0 ? 1.0 : acc.iou.geo_inter / acc.iou.geo_uni;
  return json{{"miou", {{"per_class", per}, {"mean", num17(mi.mean)}}},
              {"iou_geo", num17(geo)},
              {"mave", {{"per_class", ave}, {"mean", num17(mv.mean)}}},
              {"loss", loss_to_json(acc.mean_loss())},
              {"frames", acc.frames}};
}

inline json curves_to_json(const std::vector<CurveRow>& rows) {
  json a = json::array();
  for (const auto& r : rows)
    a.push_back({{"epoch", r.epoch}, {"focal", num17(r.loss.focal)}, {"ce", num17(r.loss.ce)},
                 {"lovasz", num17(r.loss.lovasz)}, {"l1", num17(r.loss.l1)}, {"total", num17(r.loss.total)},
                 {"miou", num17(r.miou)}, {"iou_geo", num17(r.iou_geo)}, {"mave", num17(r.mave)}});
  return a;
}

inline std::string curves_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os << "epoch,L_focal,L_ce,L_ls,L_l1,total,mIoU,IoU_geo,mAVE\n";
  for (const auto& r : rows)
    os << r.epoch << ',' << num17(r.loss.focal) << ',' << num17(r.loss.ce) << ',' << num17(r.loss.lovasz) << ','
       << num17(r.loss.l1) << ',' << num17(r.loss.total) << ',' << num17(r.miou) << ',' << num17(r.iou_geo) << ','
       << num17(r.mave) << '\n';
  return os.str();
}

inline json trace_samples_to_json(const std::vector<SampleRecord>& s) {
  json a = json::array();
  for (const auto& r : s)
    a.push_back({{"head", r.head}, {"point", r.point}, {"camera", r.camera},
                 {"sample_point", {num17(r.sample_point.x()), num17(r.sample_point.y()), num17(r.sample_point.z())}},
                 {"uv", {num17(r.uv.x()), num17(r.uv.y())}}, {"in_view", r.in_view}, {"weight", num17(r.weight)}});
  return a;
}

inline json report_skeleton(const std::string& command, std::uint64_t seed) {
  return json{{"schema", kReportSchema}, {"command", command}, {"seed", std::to_string(seed)},
              {"config", json::object()}, {"scenes", json::array()}, {"metrics", json::object()},
              {"curves", json::array()}, {"coverage", json::object()}, {"trace_samples", json::array()},
              {"wall_clock_seconds", "0"}};
}

/// Empty when `r` is schema-complete.
inline std::vector<std::string> report_schema_errors(const json& r) {
  std::vector<std::string> errs;
  const auto need = [&](const json& o, const std::string& key, auto pred, const std::string& what) {
    if (!o.is_object() || !o.contains(key)) errs.push_back("missing " + key);
    else if (!pred(o.at(key))) errs.push_back(key + " must be " + what);
  };
  const auto is_str = [](const json& v) { return v.is_string(); };
  const auto is_obj = [](const json& v) { return v.is_object(); };
  const auto is_arr = [](const json& v) { return v.is_array(); };
  need(r, "schema", [](const json& v) { return v == kReportSchema; }, kReportSchema);
  need(r, "command", is_str, "a string");
  need(r, "seed", is_str, "a decimal string");
  need(r, "config", is_obj, "an object");
  need(r, "scenes", is_arr, "an array");
  need(r, "metrics", is_obj, "an object");
  need(r, "curves", is_arr, "an array");
  need(r, "coverage", is_obj, "an object");
  need(r, "trace_samples", is_arr, "an array");
  need(r, "wall_clock_seconds", is_str, "a string");
  if (!errs.empty()) return errs;
  const auto check_metrics = [&](const json& m) {
    need(m, "miou", is_obj, "an object");
    need(m, "iou_geo", is_str, "a string");
    need(m, "mave", is_obj, "an object");
    need(m, "loss", is_obj, "an object");
    if (m.contains("miou") && m.at("miou").is_object()) need(m.at("miou"), "mean", is_str, "a string");
    if (m.contains("mave") && m.at("mave").is_object()) need(m.at("mave"), "mean", is_str, "a string");
  };
  const json& m = r.at("metrics");
  if (m.contains("rows")) {
    for (const auto& row : m.at("rows")) {
      need(row, "method", is_str, "a string");
      if (row.contains("metrics")) check_metrics(row.at("metrics"));
      else errs.push_back("comparison row missing metrics");
    }
  } else if (!m.empty()) {
    check_metrics(m);
  }
  for (const auto& row : r.at("curves"))
    for (const char* k : {"focal", "ce", "lovasz", "l1", "total", "miou", "iou_geo", "mave"})
      if (!row.contains(k) || !row.at(k).is_string()) {
        errs.push_back(std::string("curve row missing ") + k);
        break;
      }
  return errs;
}

/// Copy without the wall-clock field, for reproducibility comparisons.
inline json strip_wall_clock(json r) {
  if (r.is_object()) {
    r.erase("wall_clock_seconds");
    for (auto& [k, v] : r.items()) v = strip_wall_clock(v);
  } else if (r.is_array()) {
    for (auto& v : r) v = strip_wall_clock(v);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Top-level operations.

struct RunOutcome {
  TrainResult train;
  EvalAccumulator final_eval;
  CoverageStats trace;
  json report;
};

inline json scene_names(const std::vector<PreparedScene>& scenes) {
  json a = json::array();
  for (const auto& s : scenes) a.push_back(s.spec.name);
  return a;
}

inline RunOutcome train_and_evaluate(const RunConfig& c, const std::vector<PreparedScene>& scenes,
                                     const std::string& command = "train") {
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult tr = toy_train(c, scenes);
  const ModelGeometry geo(c.model, scenes.front().spec.grid);
  EvalAccumulator ev = evaluate_pass(tr.params, geo, scenes, c.loss);
  std::vector<SampleRecord> samples;
  CoverageStats cov = trace_coverage(tr.params, geo, scenes.front().input(0), &samples, 32);
  json rep = report_skeleton(command, c.optim.seed);
  rep["config"] = run_config_to_json(c);
  rep["scenes"] = scene_names(scenes);
  rep["metrics"] = metrics_to_json(ev, scenes.front().spec.classes);
  rep["curves"] = curves_to_json(tr.curves);
  rep["coverage"] = {{"trace", coverage_to_json(cov)}};
  rep["trace_samples"] = trace_samples_to_json(samples);
  rep["wall_clock_seconds"] = num17(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return {std::move(tr), std::move(ev), cov, std::move(rep)};
}

inline json evaluate_model(const ModelParams& p, const std::vector<PreparedScene>& scenes, const LossWeights& w,
                           std::uint64_t seed = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelGeometry geo(p.config, scenes.front().spec.grid);
  const EvalAccumulator ev = evaluate_pass(p, geo, scenes, w);
  std::vector<SampleRecord> samples;
  const CoverageStats cov = trace_coverage(p, geo, scenes.front().input(0), &samples, 32);
  json rep = report_skeleton("eval", seed);
  rep["config"] = {{"model", model_config_to_json(p.config)}};
  rep["scenes"] = scene_names(scenes);
  rep["metrics"] = metrics_to_json(ev, scenes.front().spec.classes);
  rep["coverage"] = {{"trace", coverage_to_json(cov)}};
  rep["trace_samples"] = trace_samples_to_json(samples);
  rep["wall_clock_seconds"] = num17(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return rep;
}

struct CompareRow {
  Method method;
  int queue_len;
  RunOutcome outcome;
};

/// Trains every (method, queue length) combination under the same seed and budget.
inline std::vector<CompareRow> compare_methods(const RunConfig& base, const std::vector<PreparedScene>& scenes,
                                               const std::vector<Method>& methods,
                                               const std::vector<int>& queue_lens) {
  require(!methods.empty(), "compare needs at least one method");
  require(!queue_lens.empty(), "compare needs at least one queue length");
  std::vector<CompareRow> rows;
  for (Method m : methods)
    for (int n : queue_lens) {
      RunConfig c = base;
      c.model.method = m;
      c.model.queue_len = n;
      rows.push_back({m, n, train_and_evaluate(c, scenes, "compare")});
    }
  return rows;
}

inline json compare_report(const RunConfig& base, const std::vector<PreparedScene>& scenes,
                           const std::vector<CompareRow>& rows, double seconds) {
  json rep = report_skeleton("compare", base.optim.seed);
  rep["config"] = run_config_to_json(base);
  rep["scenes"] = scene_names(scenes);
  json table = json::array(), cov = json::object();
  for (const auto& r : rows) {
    const std::string key = to_string(r.method) + "/N=" + std::to_string(r.queue_len);
    table.push_back({{"method", to_string(r.method)}, {"queue_len", r.queue_len},
                     {"metrics", r.outcome.report.at("metrics")}, {"curves", r.outcome.report.at("curves")}});
    cov[key] = coverage_to_json(r.outcome.trace);
  }
  rep["metrics"] = {{"rows", table}};
  if (!rows.empty()) rep["curves"] = rows.front().outcome.report.at("curves");
  rep["coverage"] = cov;
  rep["wall_clock_seconds"] = num17(seconds);
  return rep;
}

}  // namespace vgocc
