// Copyright 2026 The wildslam Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "wildslam/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "wildslam/io.hpp"
#include "wildslam/pipeline.hpp"

namespace fs = std::filesystem;

namespace wildslam::cli {

namespace {

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

std::string g6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_events(const std::vector<Event>& events, const std::string& path) {
  std::string out;
  for (const Event& e : events) {
    nlohmann::json j;
    j["frame"] = e.frame;
    j["type"] = e.type;
    for (const auto& [key, value] : e.data) j[key] = value;
    out += j.dump() + "\n";
  }
  write_text_file(path, out);
}

void write_keyframes(const ReconstructionState& state, const std::string& path) {
  std::string out = "# frame_id timestamp tx ty tz qx qy qz qw\n";
  for (int kf : state.keyframe_ids()) {
    const FrameRecord& rec = state.frames[kf];
    const Vec3 c = -(rec.pose.q.conjugate() * rec.pose.t);
    Quat q = rec.pose.q.conjugate();
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    out += std::to_string(kf) + " " + g6(rec.timestamp) + " " + g6(c.x()) + " " +
           g6(c.y()) + " " + g6(c.z()) + " " + g6(q.x()) + " " + g6(q.y()) + " " +
           g6(q.z()) + " " + g6(q.w()) + "\n";
  }
  write_text_file(path, out);
}

nlohmann::json config_echo(const PipelineConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["n_init"] = c.n_init;
  j["flow_threshold_px"] = c.flow_threshold_px;
  j["window_size"] = c.window_size;
  j["patches_per_frame"] = c.patches_per_frame;
  j["patch_footprint"] = c.patch_footprint;
  j["mu"] = c.mu;
  j["huber_delta"] = c.huber_delta;
  j["keyframe_flow_px"] = c.keyframe_flow_px;
  j["temporal_exclusion"] = c.temporal_exclusion;
  j["loop_tau"] = c.loop_tau;
  j["loop_streak"] = c.loop_streak;
  j["loop_min_covisible"] = c.loop_min_covisible;
  j["pgo_cooldown"] = c.pgo_cooldown;
  j["solver_iterations"] = c.solver_iterations;
  j["focal_override"] = c.focal_override;
  j["use_masks"] = c.use_masks;
  j["use_loop"] = c.use_loop;
  j["post_refine"] = c.post_refine;
  j["depth_residual_space"] = c.depth_residual_space;
  return j;
}

int do_simulate(const std::string& world_arg, const std::string& out_dir,
                std::uint64_t seed_override, bool has_seed) {
  WorldSpec spec;
  const auto worlds = standard_worlds();
  auto it = worlds.find(world_arg);
  if (it != worlds.end()) {
    spec = it->second;
  } else if (fs::exists(world_arg)) {
    spec = world_from_json(read_text_file(world_arg));
  } else {
    std::string names;
    for (const auto& [name, unused] : worlds) names += " " + name;
    throw InvalidValue("unknown world '" + world_arg + "'; presets:" + names);
  }
  if (has_seed) spec.seed = seed_override;

  Stopwatch watch;
  const SimOutput out = generate(spec);
  const double t_generate = watch.lap();
  write_bundle(out.bundle, out_dir);
  const double t_write = watch.lap();

  nlohmann::json manifest;
  manifest["tool_version"] = kVersion;
  manifest["command"] = "simulate";
  manifest["seed"] = spec.seed;
  manifest["world"] = world_arg;
  manifest["bundle_digest"] =
      "0x" + (std::ostringstream() << std::hex << bundle_digest(out.bundle)).str();
  manifest["frames"] = out.bundle.frames.size();
  manifest["patches"] = out.bundle.patches.size();
  manifest["edges"] = out.bundle.edges.size();
  manifest["timings"] = {{"generate_s", t_generate}, {"write_s", t_write}};
  write_text_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");

  std::cout << "bundle written to " << out_dir << " (" << out.bundle.frames.size()
            << " frames, " << out.bundle.edges.size() << " edges)\n";
  return 0;
}

int do_run(const std::string& bundle_dir, const std::string& config_path,
           const std::string& out_dir, const CLI::App& cmd, std::uint64_t seed,
           double mu, bool no_mask, bool no_loop) {
  Stopwatch watch;
  const DatasetBundle bundle = read_bundle(bundle_dir);
  const double t_read = watch.lap();

  PipelineConfig config;
  if (!config_path.empty()) config = parse_config(config_path);
  if (cmd.count("--seed")) config.seed = seed;
  if (cmd.count("--mu")) config.mu = mu;
  if (no_mask) config.use_masks = false;
  if (no_loop) config.use_loop = false;
  config.validate();

  Pipeline pipeline(bundle, config);
  ReconstructionState state = pipeline.run();
  const double t_run = watch.lap();

  fs::create_directories(out_dir);
  const Trajectory traj = export_trajectory(state, bundle);
  write_tum(traj, out_dir + "/traj_est.txt");
  write_keyframes(state, out_dir + "/keyframes.txt");
  write_events(state.events, out_dir + "/events.jsonl");
  if (!state.last_graph.nodes.empty())
    write_pose_graph(state.last_graph, out_dir + "/pose_graph.txt");
  else
    write_text_file(out_dir + "/pose_graph.txt", "");

  const BreakReport breaks = detect_breaks(traj);
  std::string report;
  report += "frames = " + std::to_string(traj.points.size()) + "\n";
  report += "registered = " + std::to_string(count_registered(traj)) + "\n";
  report += "models = " + std::to_string(count_models(traj)) + "\n";
  report += "breaks = " + std::to_string(breaks.break_indices.size()) + "\n";
  report += "keyframes = " + std::to_string(state.keyframe_ids().size()) + "\n";
  report += "loops = " + std::to_string(state.loops_confirmed) + "\n";
  report += "loops_rejected = " + std::to_string(state.loops_rejected) + "\n";
  report += "pgo_runs = " + std::to_string(state.pgo_runs) + "\n";
  report += "tracking_lost = " + std::to_string(state.tracking_lost_count) + "\n";
  report += "focal_px = " + g6(state.camera.fx) + "\n";
  report += "final_reprojection_cost = " + g6(state.final_cost) + "\n";
  if (!bundle.gt_poses.empty()) {
    Trajectory ref;
    for (size_t f = 0; f < bundle.gt_poses.size(); ++f) {
      TrajectoryPoint p;
      p.frame_id = static_cast<int>(f);
      p.timestamp = bundle.frames[f].timestamp;
      p.pose = bundle.gt_poses[f];
      ref.points.push_back(p);
    }
    try {
      const Alignment align = align_sim3(traj, ref);
      report += "ate_rmse = " + g6(align.rmse) + "\n";
      report += "align_scale = " + g6(align.transform.s) + "\n";
    } catch (const Error&) {
      report += "ate_rmse = nan\n";
    }
  }
  write_text_file(out_dir + "/report.txt", report);
  const double t_write = watch.lap();

  nlohmann::json manifest;
  manifest["tool_version"] = kVersion;
  manifest["command"] = "run";
  manifest["seed"] = config.seed;
  manifest["config"] = config_echo(config);
  manifest["bundle_digest"] =
      "0x" + (std::ostringstream() << std::hex << bundle_digest(bundle)).str();
  nlohmann::json outputs;
  for (const char* name :
       {"traj_est.txt", "keyframes.txt", "events.jsonl", "pose_graph.txt",
        "report.txt"}) {
    outputs[name] = "0x" + (std::ostringstream()
                            << std::hex << fnv1a_file(out_dir + "/" + name))
                               .str();
  }
  manifest["outputs"] = outputs;
  manifest["timings"] = {
      {"read_s", t_read}, {"run_s", t_run}, {"write_s", t_write}};
  write_text_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");

  std::cout << report;
  return 0;
}

int do_eval(const std::string& est_path, const std::string& ref_path, int k,
            double threshold, int rpe_delta, const std::string& report_path) {
  const Trajectory est = read_tum(est_path);
  const Trajectory ref = read_tum(ref_path);

  std::string report;
  report += "est_frames = " + std::to_string(est.points.size()) + "\n";
  report += "registered = " + std::to_string(count_registered(est)) + "\n";
  report += "models = " + std::to_string(count_models(est)) + "\n";
  const BreakReport breaks = detect_breaks(est, k, threshold);
  report += "breaks = " + std::to_string(breaks.break_indices.size()) + "\n";
  std::string indices;
  for (int i : breaks.break_indices)
    indices += (indices.empty() ? "" : " ") + std::to_string(i);
  report += "break_indices = [" + indices + "]\n";
  const Alignment align = align_sim3(est, ref);
  report += "align_scale = " + g6(align.transform.s) + "\n";
  report += "ate_rmse = " + g6(align.rmse) + "\n";
  const Trajectory aligned = transform_trajectory(est, align.transform);
  report += "rpe_" + std::to_string(rpe_delta) + " = " +
            g6(rpe(aligned, ref, rpe_delta)) + "\n";
  if (!report_path.empty()) write_text_file(report_path, report);
  std::cout << report;
  return 0;
}

int do_focal(const std::string& bundle_dir, const std::string& config_path) {
  const DatasetBundle bundle = read_bundle(bundle_dir);
  PipelineConfig config;
  if (!config_path.empty()) config = parse_config(config_path);
  Pipeline pipeline(bundle, config);
  const std::vector<int> init = pipeline.select_init_frames();
  const double focal = pipeline.estimate_focal(init);
  std::string init_list;
  for (int f : init) init_list += (init_list.empty() ? "" : " ") + std::to_string(f);
  std::cout << "init_frames = [" << init_list << "]\n";
  std::cout << "focal_px = " << g6(focal) << "\n";
  return 0;
}

}  // namespace

int run_main(const std::vector<std::string>& args) {
  CLI::App app{"monocular SLAM backend for unconstrained walking footage"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset bundle");
  std::string world = "city_loop";
  std::string sim_out;
  std::uint64_t sim_seed = 0;
  sim->add_option("--world", world, "preset name or world-spec JSON file");
  sim->add_option("--out", sim_out, "output bundle directory")->required();
  sim->add_option("--seed", sim_seed, "override the world seed");

  auto* run = app.add_subcommand("run", "reconstruct a trajectory from a bundle");
  std::string bundle_dir, config_path, run_out;
  std::uint64_t run_seed = 0;
  double mu = 0.05;
  bool no_mask = false, no_loop = false;
  run->add_option("--bundle", bundle_dir, "dataset bundle directory")->required();
  run->add_option("--config", config_path, "pipeline config file (key = value)");
  run->add_option("--out", run_out, "output directory")->required();
  run->add_option("--seed", run_seed, "sampling seed override");
  run->add_option("--mu", mu, "depth regularization weight override");
  run->add_flag("--no-mask", no_mask, "ignore dynamic-object masks");
  run->add_flag("--no-loop", no_loop, "disable loop closure and PGO");

  auto* eval = app.add_subcommand("eval", "evaluate a trajectory against a reference");
  std::string est_path, ref_path, report_path;
  int k = 10, rpe_delta = 1;
  double threshold = 10.0;
  eval->add_option("--est", est_path, "estimated trajectory (TUM)")->required();
  eval->add_option("--ref", ref_path, "reference trajectory (TUM)")->required();
  eval->add_option("--k", k, "break-detector window half-width");
  eval->add_option("--threshold", threshold, "break-detector ratio threshold");
  eval->add_option("--rpe-delta", rpe_delta, "frame spacing for the RPE");
  eval->add_option("--report", report_path, "write the report to this file");

  auto* focal = app.add_subcommand("focal", "recover the focal length from a bundle");
  std::string focal_bundle, focal_config;
  focal->add_option("--bundle", focal_bundle, "dataset bundle directory")->required();
  focal->add_option("--config", focal_config, "pipeline config file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return do_simulate(world, sim_out, sim_seed, sim->count("--seed") > 0);
    if (run->parsed())
      return do_run(bundle_dir, config_path, run_out, *run, run_seed, mu, no_mask,
                    no_loop);
    if (eval->parsed())
      return do_eval(est_path, ref_path, k, threshold, rpe_delta, report_path);
    if (focal->parsed()) return do_focal(focal_bundle, focal_config);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const MissingFile& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const UnknownKey& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const InvalidValue& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const InvalidSpec& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 2;
}

int run_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_main(args);
}

}  // namespace wildslam::cli
