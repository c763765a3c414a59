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

#include <cstdint>
#include <map>
#include <set>
#include <unordered_map>
#include <vector>

#include "wildslam/geometry.hpp"

namespace wildslam {

// A tracked patch: one optimized inverse depth at the center pixel; the
// p x p footprint moves rigidly and only matters to the front end.
struct Patch {
  int frame_id = 0;
  int patch_id = 0;
  Vec2 center = Vec2::Zero();
  double inv_depth = 1.0;
  int footprint = 3;
};

// Predicted 2D location of patch (src_frame, patch_id) observed in dst_frame.
struct CorrespondenceEdge {
  int src_frame = 0;
  int patch_id = 0;
  int dst_frame = 0;
  Vec2 observed = Vec2::Zero();
  double confidence = 1.0;
};

// Per-patch monocular prior depth sample (metric-ambiguous units). The
// per-frame scale alpha lives in BAWindow::frame_alpha.
struct DepthPrior {
  int frame_id = 0;
  int patch_id = 0;
  double prior_depth = 0.0;
};

enum class DepthResidualSpace { kInverse, kMetric };

struct BAWindow {
  CameraIntrinsics camera;
  std::vector<int> frames;  // ordered frame ids
  std::map<int, Pose> poses;
  std::vector<Patch> patches;
  std::vector<CorrespondenceEdge> edges;
  std::vector<DepthPrior> priors;
  std::map<int, double> frame_alpha;  // set by align_prior_scale at registration
  double mu = 0.05;
  double huber_delta = 2.0;
  std::set<int> fixed_frames;
  int pinned_patch = -1;  // index into patches held constant (scale gauge)
  DepthResidualSpace residual_space = DepthResidualSpace::kInverse;
  // joint refinement of the shared focal length (fx = fy), used by the
  // global post-refinement pass
  bool optimize_focal = false;
  // pose-only solves (PnP-style warm starts) keep every inverse depth fixed
  bool freeze_depths = false;
};

// alpha_i = median(prior depths) / median(patch depths), patch depth taken
// as 1 / inv_depth. Throws EmptyHistory when either side is empty; callers
// fall back to alpha = 1.
double align_prior_scale(const std::vector<double>& prior_depths,
                         const std::vector<double>& recent_patch_inv_depths);

// Huber influence weight: 1 inside delta, delta/|r| outside.
double robust_weight(double residual_norm, double huber_delta);

// Huber cost of a residual with norm x: x^2 inside delta, delta(2x - delta)
// outside. Consistent with robust_weight under IRLS.
double robust_cost(double residual_norm, double huber_delta);

// r = predicted - observed. Active flag false when the point falls behind
// the destination camera; the contribution is then zero.
struct ReprojectionResidual {
  Vec2 r = Vec2::Zero();
  bool active = false;
};
ReprojectionResidual residual_reprojection(const CorrespondenceEdge& edge,
                                           const BAWindow& window);

// Depth regularizer, sqrt(mu) already applied. Inverse space (default):
// sqrt(mu) (d - 1/(alpha D)); metric space: sqrt(mu) (1/d - alpha D).
double residual_depth(double inv_depth, double prior_depth, double alpha, double mu,
                      DepthResidualSpace space);

// Parameter layout shared by the production Schur solve and the dense
// oracle in the tests: free frames in window order, free depths in patch
// order.
struct WindowIndex {
  std::vector<int> free_frames;              // frame ids
  std::unordered_map<int, int> frame_block;  // frame id -> block
  std::vector<int> free_patches;             // indices into window.patches
  std::vector<int> patch_param;              // patch idx -> param (-1 if none)
  bool has_focal = false;                    // one extra column after the poses
  int pose_dim() const {
    return 6 * static_cast<int>(free_frames.size()) + (has_focal ? 1 : 0);
  }
  int depth_dim() const { return static_cast<int>(free_patches.size()); }
};
WindowIndex build_index(const BAWindow& window);

// Damping rule used on both solve paths: H + lambda * max(diag(H), floor).
constexpr double kDampingDiagFloor = 1e-12;

// One Levenberg step at the current state (Huber weights included), with
// the depth block eliminated patch-by-patch. Exposed so the dense
// normal-equations oracle can be compared against it directly.
struct StepResult {
  Eigen::VectorXd pose_step;   // 6 per free frame
  Eigen::VectorXd depth_step;  // 1 per free patch
  bool ok = false;
};
StepResult compute_damped_step(const BAWindow& window, const WindowIndex& index,
                               double lambda);

double evaluate_cost(const BAWindow& window);

enum class SolveStatus { kConverged, kMaxIterations, kStalled };

struct SolveOptions {
  int max_iterations = 12;
  double initial_lambda = 1e-4;
  double max_lambda = 1e8;
  double min_step_norm = 1e-10;
  double min_rel_decrease = 1e-12;
};

struct SolveResult {
  SolveStatus status = SolveStatus::kMaxIterations;
  double initial_cost = 0;
  double final_cost = 0;
  int iterations = 0;
  int accepted_steps = 0;
  std::vector<double> edge_weights;        // robust weight per window edge
  std::vector<std::uint8_t> edge_active;   // false when behind camera
  std::vector<double> edge_residual_norm;  // at the final state
};

// Damped Gauss-Newton with accept/reject on the true robust cost; inverse
// depths are clamped at 1e-6 after every update. Throws
// NotEnoughConstraints / SingularSystem.
SolveResult solve(BAWindow& window, const SolveOptions& options = {});

}  // namespace wildslam
