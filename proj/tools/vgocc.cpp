// vgocc command-line driver.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vgocc/flow_annotation.hpp"
#include "vgocc/harness.hpp"
#include "vgocc/io.hpp"
#include "vgocc/scene_sim.hpp"

namespace fs = std::filesystem;
using namespace vgocc;

namespace {

struct Common {
  std::vector<std::string> scenes;
  std::string config;
  std::string preset;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string mode;
  std::string method;
  int queue_len = -1;
  int epochs = -1;
  double lr = -1;
};

void add_common(CLI::App* app, Common& c, bool model_flags) {
  app->add_option("--scene", c.scenes, "scene JSON (repeatable); default: built-in suite");
  app->add_option("--config", c.config, "run config JSON");
  app->add_option("--preset", c.preset, "desk | paper | compact");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "RNG seed")->each([&](const std::string&) { c.seed_set = true; });
  if (model_flags) {
    app->add_option("--mode", c.mode, "one-dof | two-dof");
    app->add_option("--method", c.method, "view-attn | view-attn-no-vc | projection-first");
    app->add_option("--queue-len", c.queue_len, "memory queue length N");
    app->add_option("--epochs", c.epochs, "training epochs");
    app->add_option("--lr", c.lr, "step size");
  }
}

RunConfig resolve_config(const Common& c) {
  RunConfig rc;
  if (!c.config.empty()) {
    json j = read_json(c.config);
    if (!c.preset.empty()) j["preset"] = c.preset;
    rc = run_config_from_json(j);
  } else {
    rc = preset_config(c.preset.empty() ? "desk" : c.preset);
  }
  if (!c.scenes.empty()) rc.scene_paths = c.scenes;
  if (c.seed_set) rc.optim.seed = c.seed;
  if (!c.mode.empty()) rc.model.vc_mode = parse_vc_mode(c.mode);
  if (!c.method.empty()) rc.model.method = parse_method(c.method);
  if (c.queue_len >= 0) rc.model.queue_len = c.queue_len;
  if (c.epochs >= 0) rc.optim.epochs = c.epochs;
  if (c.lr > 0) rc.optim.lr = c.lr;
  rc.out_dir = c.out;
  rc.validate();
  return rc;
}

void write_report(const fs::path& dir, const json& report) {
  write_text(dir / "report.json", report.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void save_features(const FeatureMap& f, const fs::path& prefix, int camera, int frame) {
  BlobWriter blob;
  blob.append(f.data);
  const fs::path bin = prefix.string() + ".bin";
  json header{{"format", "vgocc-features"}, {"version", 1}, {"frame", frame}, {"camera", camera},
              {"height", f.height}, {"width", f.width}, {"channels", f.channels},
              {"layout", "row, column, channel"}, {"dtype", "float64"}, {"byte_order", "little"},
              {"blob", bin.filename().string()}};
  blob.save(bin);
  write_text(prefix.string() + ".json", header.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

int run_scene(const std::string& name, const Common& c) {
  RunConfig rc = resolve_config(c);
  std::vector<SceneSpec> scenes;
  if (name == "default") scenes = default_scene_suite(rc.scene, rc.suite_frames);
  else if (name == "boundary") scenes = {boundary_scene(rc.scene)};
  else if (name == "rotating-box") scenes = {rotating_box_scene(rc.scene)};
  else if (name == "translating-box") scenes = {translating_box_scene(rc.scene)};
  else if (name == "static") scenes = {static_scene(rc.scene)};
  else throw ContractViolation("unknown scene '" + name + "' (default | boundary | rotating-box | translating-box | static)");
  for (const auto& s : scenes) write_text(fs::path(c.out) / (s.name + ".json"), scene_to_json(s).dump(2) + "\n");
  return 0;
}

int run_coverage(const Common& c, const std::string& rig_name, double fov, int image_size) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = resolve_config(c);
  std::vector<CameraModel> rig;
  GridSpec grid = rc.scene.grid;
  json scenes = json::array();
  if (!c.scenes.empty()) {
    const SceneSpec s = load_scene(c.scenes.front());
    rig = s.cameras();
    grid = s.grid;
    scenes.push_back(s.name);
  } else {
    rig = build_rig(parse_rig_preset(rig_name), image_size, fov);
  }
  const CoverageStats st = coverage_report(rig, grid);
  json rep = report_skeleton("coverage", rc.optim.seed);
  rep["config"] = {{"rig", c.scenes.empty() ? rig_name : "scene"}, {"fov_degrees", fov},
                   {"image_size", image_size}, {"grid", grid_to_json(grid)}};
  rep["scenes"] = scenes;
  rep["coverage"] = {{"voxels", coverage_to_json(st)}};
  rep["wall_clock_seconds"] = num17(seconds_since(t0));
  write_report(c.out, rep);
  return 0;
}

int run_gen_flow(const Common& c, const std::string& flow_mode) {
  const auto t0 = std::chrono::steady_clock::now();
  require(!c.scenes.empty(), "gen-flow needs --scene");
  const FlowMode mode = flow_mode == "object" ? FlowMode::kObjectFlow
                        : flow_mode == "occupancy" ? FlowMode::kOccupancyFlow
                                                   : throw ContractViolation("flow mode must be occupancy | object");
  const SceneSpec s = load_scene(c.scenes.front());
  json frames = json::array();
  for (int f = 0; f < s.num_frames(); ++f) {
    const SceneTruth t = scene_ground_truth(s, f, mode);
    char name[32];
    std::snprintf(name, sizeof name, "flow_%03d", f);
    save_flow_field(t.flow, fs::path(c.out) / name);
    double max_speed = 0;
    long occupied = 0;
    for (std::size_t i = 0; i < s.grid.voxels(); ++i)
      if (t.flow.occupied[i]) {
        ++occupied;
        max_speed = std::max(max_speed, t.flow.at(i).norm());
      }
    frames.push_back({{"frame", f}, {"file", std::string(name) + ".json"}, {"occupied_voxels", occupied},
                      {"max_speed", num17(max_speed)}});
  }
  json rep = report_skeleton("gen-flow", s.seed);
  rep["config"] = {{"flow_mode", flow_mode}, {"grid", grid_to_json(s.grid)}};
  rep["scenes"] = {s.name};
  rep["metrics"] = json::object();
  rep["flow_frames"] = frames;
  rep["wall_clock_seconds"] = num17(seconds_since(t0));
  write_report(c.out, rep);
  return 0;
}

int run_render(const Common& c, int frame, int channels) {
  const auto t0 = std::chrono::steady_clock::now();
  require(!c.scenes.empty(), "render needs --scene");
  RunConfig rc = resolve_config(c);
  const SceneSpec s = load_scene(c.scenes.front());
  const int ch = channels > 0 ? channels : rc.model.channels;
  json files = json::array();
  const int f0 = frame >= 0 ? frame : 0, f1 = frame >= 0 ? frame + 1 : s.num_frames();
  require(f0 < s.num_frames(), "frame out of range");
  for (int f = f0; f < f1; ++f) {
    const RenderedFrame r = render_frame(s, f, ch);
    for (std::size_t j = 0; j < r.features.size(); ++j) {
      char name[48];
      std::snprintf(name, sizeof name, "features_f%03d_c%zu", f, j);
      save_features(r.features[j], fs::path(c.out) / name, static_cast<int>(j), f);
      files.push_back(std::string(name) + ".json");
    }
  }
  json rep = report_skeleton("render", s.seed);
  rep["config"] = {{"channels", ch}};
  rep["scenes"] = {s.name};
  rep["feature_files"] = files;
  rep["wall_clock_seconds"] = num17(seconds_since(t0));
  write_report(c.out, rep);
  return 0;
}

int run_train(const Common& c) {
  RunConfig rc = resolve_config(c);
  const auto scenes = prepare_scenes(run_scenes(rc), rc.model.channels);
  RunOutcome o = train_and_evaluate(rc, scenes);
  write_report(c.out, o.report);
  write_text(fs::path(c.out) / "curves.csv", curves_csv(o.train.curves));
  save_params(o.train.params, fs::path(c.out) / "params");
  return 0;
}

struct EvalFlags {
  std::string params;
  int save_queue_at = -1;
  std::string resume_queue;
  int start_frame = 0;
};

int run_eval(const Common& c, const EvalFlags& e) {
  const auto t0 = std::chrono::steady_clock::now();
  require(!e.params.empty(), "eval needs --params");
  RunConfig rc = resolve_config(c);
  const ModelParams p = load_params(e.params);
  const auto scenes = prepare_scenes(run_scenes(rc), p.config.channels);
  json rep = evaluate_model(p, scenes, rc.loss, rc.optim.seed);
  if (e.save_queue_at >= 0 || !e.resume_queue.empty()) {
    // Streaming segment over the first scene, optionally split by a queue file.
    const ModelGeometry geo(p.config, scenes.front().spec.grid);
    const PreparedScene& sc = scenes.front();
    MemoryQueue q(std::max(p.config.queue_len, 1));
    int begin = 0;
    if (!e.resume_queue.empty()) {
      q = load_queue(e.resume_queue);
      begin = e.start_frame;
    }
    const int end = e.save_queue_at >= 0 ? e.save_queue_at : sc.spec.num_frames();
    const auto preds = stream_inference(p, geo, sc, begin, end, q, rc.loss);
    if (e.save_queue_at >= 0) save_queue(q, fs::path(c.out) / "queue");
    json stream = json::array();
    for (std::size_t i = 0; i < preds.size(); ++i)
      stream.push_back({{"frame", begin + static_cast<int>(i)}, {"loss", loss_to_json(preds[i].loss)}});
    rep["stream"] = stream;
  }
  rep["wall_clock_seconds"] = num17(seconds_since(t0));
  write_report(c.out, rep);
  return 0;
}

int run_compare(const Common& c, const std::string& methods_arg, const std::string& queues_arg) {
  const auto t0 = std::chrono::steady_clock::now();
  Common cc = c;
  cc.method.clear();
  cc.queue_len = -1;
  RunConfig rc = resolve_config(cc);
  std::vector<Method> methods;
  for (const auto& m : split_list(methods_arg.empty() ? "view-attn,view-attn-no-vc,projection-first" : methods_arg))
    methods.push_back(parse_method(m));
  std::vector<int> queues;
  if (queues_arg.empty()) queues.push_back(rc.model.queue_len);
  for (const auto& q : split_list(queues_arg)) queues.push_back(std::stoi(q));
  const auto scenes = prepare_scenes(run_scenes(rc), rc.model.channels);
  const auto rows = compare_methods(rc, scenes, methods, queues);
  for (const auto& r : rows)
    write_text(fs::path(c.out) / ("curves_" + to_string(r.method) + "_N" + std::to_string(r.queue_len) + ".csv"),
               curves_csv(r.outcome.train.curves));
  write_report(c.out, compare_report(rc, scenes, rows, seconds_since(t0)));
  return 0;
}

void diagnostic(const std::string& kind, const std::string& message) {
  const json d{{"error", kind}, {"message", message}};
  std::cerr << d.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vgocc: view-attention occupancy toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* scene = app.add_subcommand("scene", "write a built-in scene as JSON");
  std::string scene_name = "default";
  scene->add_option("--name", scene_name, "default | boundary | rotating-box | translating-box | static");
  add_common(scene, common, false);

  auto* coverage = app.add_subcommand("coverage", "camera coverage histogram over a grid");
  std::string rig_name = "surround6";
  double fov = 70.0;
  int image_size = 64;
  coverage->add_option("--rig", rig_name, "surround6 | stereo2 | mono1");
  coverage->add_option("--fov", fov, "field of view in degrees");
  coverage->add_option("--image-size", image_size, "square image size");
  add_common(coverage, common, false);

  auto* gen_flow = app.add_subcommand("gen-flow", "occupancy-flow ground truth per frame");
  std::string flow_mode = "occupancy";
  gen_flow->add_option("--flow-mode", flow_mode, "occupancy | object");
  add_common(gen_flow, common, false);

  auto* train = app.add_subcommand("train", "seeded streaming toy training");
  add_common(train, common, true);

  auto* eval = app.add_subcommand("eval", "streaming evaluation of saved parameters");
  EvalFlags ef;
  eval->add_option("--params", ef.params, "parameter prefix written by train");
  eval->add_option("--save-queue-at", ef.save_queue_at, "stop the first scene's stream at this frame and save the queue");
  eval->add_option("--resume-queue", ef.resume_queue, "queue prefix to resume the first scene's stream from");
  eval->add_option("--start-frame", ef.start_frame, "frame the resumed stream starts at");
  add_common(eval, common, true);

  auto* compare = app.add_subcommand("compare", "train and compare methods and queue lengths");
  add_common(compare, common, true);

  auto* render = app.add_subcommand("render", "ray-cast per-camera feature maps");
  int frame = -1, channels = 0;
  render->add_option("--frame", frame, "single frame (default all)");
  render->add_option("--channels", channels, "feature channels (default C_Voxel)");
  add_common(render, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*scene) return run_scene(scene_name, common);
    if (*coverage) return run_coverage(common, rig_name, fov, image_size);
    if (*gen_flow) return run_gen_flow(common, flow_mode);
    if (*train) return run_train(common);
    if (*eval) return run_eval(common, ef);
    if (*compare) return run_compare(common, common.method, common.queue_len >= 0 ? std::to_string(common.queue_len) : "");
    if (*render) return run_render(common, frame, channels);
  } catch (const TrainingDiverged& e) {
    json rep = report_skeleton("train", common.seed);
    rep["diverged"] = {{"epoch", e.epoch}, {"scene", e.scene}, {"frame", e.frame}, {"message", e.what()}};
    write_report(common.out, rep);
    diagnostic("diverged", e.what());
    return 3;
  } catch (const ContractViolation& e) {
    diagnostic("contract_violation", e.what());
    return 2;
  } catch (const std::exception& e) {
    diagnostic("runtime_error", e.what());
    return 1;
  }
  return 0;
}
