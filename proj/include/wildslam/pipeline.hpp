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

#pragma once

#include <deque>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "wildslam/eval_metrics.hpp"
#include "wildslam/frontend_sim.hpp"
#include "wildslam/loop_detection.hpp"
#include "wildslam/pipeline_config.hpp"
#include "wildslam/pose_graph.hpp"
#include "wildslam/window_ba.hpp"

namespace wildslam {

struct FrameRecord {
  int frame_id = -1;
  double timestamp = 0;
  Pose pose;
  bool registered = false;
  bool keyframe = false;
  bool tracking_lost = false;
  // demoted frames keep their pose through a relative anchor:
  // G_f = anchor_rel * G_anchor
  int anchor_keyframe = -1;
  Pose anchor_rel;
};

struct MapPatch {
  Patch patch;  // frame_id, patch_id, center, optimized inverse depth
  std::int64_t track_id = -1;
  double prior_depth = 0;  // <= 0 when no prior shipped
};

struct Event {
  int frame = -1;
  std::string type;
  std::vector<std::pair<std::string, double>> data;
};

struct ReconstructionState {
  CameraIntrinsics camera;
  std::vector<FrameRecord> frames;  // indexed by frame id
  std::vector<MapPatch> map;        // keyframe-hosted patches
  std::deque<int> window;           // active keyframe ids, newest last
  std::map<int, double> frame_alpha;
  DescriptorStore store;
  LoopConfirmer confirmer;
  PoseGraph last_graph;
  int last_pgo_frame = -1000000000;
  int loops_confirmed = 0;
  int loops_rejected = 0;
  int pgo_runs = 0;
  int tracking_lost_count = 0;
  double final_cost = 0;
  std::vector<Event> events;

  std::vector<int> keyframe_ids() const;  // current keyframes, ordered
  Pose exported_pose(int frame_id) const; // resolves anchors
};

class Pipeline {
 public:
  Pipeline(const DatasetBundle& bundle, const PipelineConfig& config);

  // Initialization (focal recovery + seed map), every frame, loop handling,
  // then the configured post-refinement.
  ReconstructionState run();

  // individual stages, exposed for targeted tests
  std::vector<int> select_init_frames() const;
  double estimate_focal(const std::vector<int>& init_frames) const;
  // midpoint-densified frame set the init solves run on
  std::vector<int> densify_init(const std::vector<int>& init_frames) const;
  std::vector<int> sample_patches(int frame_id) const;  // bundle patch indices
  void initialize(ReconstructionState& state) const;
  void process_frame(ReconstructionState& state, int frame_id) const;
  void post_refine(ReconstructionState& state, PostRefineMode mode) const;

  const PipelineConfig& config() const { return config_; }

 private:
  // -1 when unmeasurable; with compensate_rotation the best pure-rotation
  // fit is removed first, leaving parallax-only displacement
  struct FocalWarmState {
    bool valid = false;
    std::map<int, Pose> poses;
    std::map<std::uint64_t, double> depths;
  };

  double mean_flow(int frame_a, int frame_b, bool compensate_rotation = false) const;
  double focal_score(double focal, const std::vector<int>& init_frames,
                     const std::vector<std::vector<int>>& sampled,
                     FocalWarmState* warm = nullptr) const;
  double estimate_focal_impl(const std::vector<int>& init_frames,
                             FocalWarmState* warm_out,
                             std::vector<int>* solve_frames_out) const;
  bool rotation_only_explains(const std::vector<int>& init_frames) const;
  BAWindow build_window(ReconstructionState& state) const;
  void solve_window(ReconstructionState& state, int current_frame,
                    double huber_override = -1) const;
  double compute_alpha(ReconstructionState& state, int frame_id,
                       const std::vector<int>& patch_indices) const;
  void handle_loop(ReconstructionState& state, int frame_id) const;
  void retriangulate(ReconstructionState& state) const;
  // pose-only re-solve of demoted frames against the refined keyframe map
  void refine_anchored_frames(ReconstructionState& state) const;
  double refine_focal_only(ReconstructionState& state) const;
  double global_cost(const ReconstructionState& state) const;

  const DatasetBundle& bundle_;
  PipelineConfig config_;
  // indexes over the bundle
  std::vector<std::vector<int>> edges_by_src_;   // frame -> edge indices
  std::vector<std::vector<int>> patches_of_;     // frame -> bundle patch indices
  std::unordered_map<std::uint64_t, int> patch_index_;  // (frame,patch) -> idx
  std::unordered_map<std::uint64_t, double> prior_of_;  // (frame,patch) -> depth
};

Trajectory export_trajectory(const ReconstructionState& state,
                             const DatasetBundle& bundle);

}  // namespace wildslam
