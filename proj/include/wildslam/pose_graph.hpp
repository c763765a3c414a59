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

#include <map>
#include <vector>

#include "wildslam/geometry.hpp"
#include "wildslam/window_ba.hpp"

namespace wildslam {

struct Sim3Node {
  int frame_id = 0;
  SimPose pose;  // lifted from the SE(3) keyframe pose with scale 1
  bool fixed = false;
};

enum class EdgeKind { kOdometry, kLoop };

// Measures the relative similarity S_j * S_i^{-1}.
struct Sim3Edge {
  int src = 0;  // i
  int dst = 0;  // j
  SimPose measurement;
  EdgeKind kind = EdgeKind::kOdometry;
  double information = 1.0;  // isotropic weight (scaled identity)
};

struct PoseGraph {
  std::vector<Sim3Node> nodes;
  std::vector<Sim3Edge> edges;
};

// Keyframe poses -> scale-1 nodes plus consecutive odometry edges whose
// measurements are the current relative poses (zero residual at lift time).
PoseGraph lift_trajectory(const std::vector<std::pair<int, Pose>>& keyframes);

// r = log_SIM3(meas^{-1} S_j S_i^{-1}).
Twist7 loop_residual(const Sim3Edge& edge, const SimPose& s_i, const SimPose& s_j);

struct ResidualExpansion {
  Twist7 r;
  Mat7 d_i;  // d r / d left-tangent of S_i
  Mat7 d_j;
};
ResidualExpansion loop_residual_with_jacobians(const Sim3Edge& edge,
                                               const SimPose& s_i, const SimPose& s_j);

struct PgoOptions {
  int max_iterations = 50;
  double initial_lambda = 1e-6;
  double max_lambda = 1e8;
  double min_step_norm = 1e-8;
};

struct PgoResult {
  double initial_cost = 0;
  double final_cost = 0;
  int iterations = 0;
  double loop_residual_before = 0;  // max loop-edge residual norm
  double loop_residual_after = 0;
};

// Damped Gauss-Newton on the 7-dof tangents over the sparse chain + loop
// structure. Exactly one node must be fixed (the loop frame). Throws
// DisconnectedGraph / SingularSystem / InvalidValue.
PgoResult optimize(PoseGraph& graph, const PgoOptions& options = {});

double graph_cost(const PoseGraph& graph);

// Re-absorbs per-node scale into the metric map: every node's keyframe pose
// becomes (R, t/s) and the inverse depth of each patch hosted at the node is
// multiplied by s, which rescales each local neighbourhood onto the common
// gauge while leaving reprojections unchanged. Returns the per-frame scale
// so callers can update relative anchors the same way.
std::map<int, double> apply_correction(const PoseGraph& graph,
                                       std::map<int, Pose>& keyframe_poses,
                                       std::vector<Patch>& patches);

}  // namespace wildslam
