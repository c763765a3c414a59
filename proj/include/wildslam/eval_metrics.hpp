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

#include <vector>

#include "wildslam/geometry.hpp"

namespace wildslam {

struct TrajectoryPoint {
  double timestamp = 0;
  int frame_id = 0;
  Pose pose;  // world-to-camera
  bool registered = true;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;

  Vec3 position(std::size_t i) const {  // camera center in the world frame
    const Pose& g = points[i].pose;
    return -(g.q.conjugate() * g.t);
  }
};

struct BreakReport {
  std::vector<int> break_indices;  // index i of the step p_i -> p_{i+1}
  std::vector<double> ratios;      // locally normalized step ratios, per step
  int k = 10;
  double threshold = 10.0;
};

// Step ratio: |p_i - p_{i+1}| / mean(|steps| over [i-k, i+k] excluding i),
// windows truncated at sequence ends and split at unregistered frames. A
// break is a ratio above the threshold. `literal_global_mean` switches to
// the variant that additionally multiplies the threshold by the global mean
// step (for comparison only).
BreakReport detect_breaks(const Trajectory& traj, int k = 10, double threshold = 10.0,
                          bool literal_global_mean = false);

// Frames with finite pose in the largest contiguous registered segment.
int count_registered(const Trajectory& traj);
// Number of maximal contiguous registered segments.
int count_models(const Trajectory& traj);

struct Alignment {
  SimPose transform;  // maps est positions onto ref positions
  double rmse = 0;
};

// Closed-form similarity over camera centers of frames registered in both
// trajectories (matched by frame id). Throws DegenerateCollinear /
// FrameMismatch.
Alignment align_sim3(const Trajectory& est, const Trajectory& ref);

// RMSE over matched camera centers: sqrt(mean |c_est - c_ref|^2). Expects
// pre-aligned inputs; compose with align_sim3 for the usual metric.
double ate_rmse(const Trajectory& est, const Trajectory& ref);

// Relative pose error at spacing delta: for each i, the translation norm of
// rel_ref^{-1} rel_est with rel = G_{i+delta} G_i^{-1}; returns the RMSE.
double rpe(const Trajectory& est, const Trajectory& ref, int delta);

// Convenience: apply a similarity to every pose of a trajectory (the pose
// becomes the one whose camera center is T(center), same viewing rotation
// up to the similarity's rotation).
Trajectory transform_trajectory(const Trajectory& traj, const SimPose& t);

}  // namespace wildslam
