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
#include <string>
#include <vector>

#include "wildslam/geometry.hpp"
#include "wildslam/loop_detection.hpp"

namespace wildslam {

enum class SegmentKind { kForward, kArc, kPureRotation, kPause };

struct TrajectorySegment {
  SegmentKind kind = SegmentKind::kForward;
  int frames = 0;
  double speed = 0.0;         // scene units per frame
  double yaw_rate_deg = 0.0;  // degrees per frame
};

struct NoiseSpec {
  double pixel_sigma = 0.0;
  double prior_depth_lognormal_sigma = 0.0;
  double prior_scale_walk_sigma = 0.0;
  double descriptor_sigma = 0.0;  // total perturbation norm on unit vectors
};

enum class LandmarkLayout { kCorridor, kSphere };

struct WorldSpec {
  std::uint64_t seed = 1;
  int landmark_count = 4000;
  double scene_extent = 30.0;
  std::vector<TrajectorySegment> trajectory_script;
  int dynamic_object_count = 0;
  double dynamic_fraction_of_view = 0.0;
  NoiseSpec noise;
  CameraIntrinsics camera{410.0, 410.0, 256.0, 144.0, 512, 288};
  // front-end shape
  int candidates_per_frame = 96;
  int edge_radius = 10;
  int descriptor_dim = 64;
  LandmarkLayout layout = LandmarkLayout::kCorridor;
  // per-frame multiplicative log-scale drift baked into the correspondences;
  // exercises the SIM(3) correction path
  double odometry_scale_drift = 0.0;
  // handheld look-around: a sinusoidal viewing-yaw offset on top of the
  // walking direction. Positions are unaffected, so pauses, pure-rotation
  // segments and loop closures stay exact; the rotation-translation mix is
  // what makes the focal length observable from walking footage.
  double heading_sway_deg = 4.0;
  int sway_period_frames = 45;
  double fps = 10.0;
};

struct FrameInfo {
  int id = 0;
  double timestamp = 0.0;
};

struct BundlePatch {
  int frame_id = 0;
  int patch_id = 0;
  Vec2 center = Vec2::Zero();
  std::int64_t track_id = -1;  // stable front-end track identity
};

struct BundleEdge {
  int src_frame = 0;
  int patch_id = 0;
  int dst_frame = 0;
  Vec2 observed = Vec2::Zero();
  double confidence = 1.0;
};

struct BundlePrior {
  int frame_id = 0;
  int patch_id = 0;
  double depth = 0.0;
};

struct FrameMask {
  int width = 0, height = 0;
  std::vector<std::uint8_t> data;  // row-major, 255 = masked; empty = clear

  bool empty_mask() const { return data.empty(); }
  bool masked(int x, int y) const {
    if (data.empty() || x < 0 || y < 0 || x >= width || y >= height) return false;
    return data[static_cast<size_t>(y) * width + x] != 0;
  }
  void ensure(int w, int h) {
    if (data.empty()) {
      width = w;
      height = h;
      data.assign(static_cast<size_t>(w) * h, 0);
    }
  }
  void fill_disc(double cx, double cy, double radius);
  void fill_box(int cx, int cy, int half);
  double coverage() const;
};

struct DatasetBundle {
  int width = 0, height = 0;
  double fps = 10.0;
  std::vector<FrameInfo> frames;
  std::vector<BundlePatch> patches;
  std::vector<BundleEdge> edges;
  std::vector<BundlePrior> priors;
  std::vector<FrameMask> masks;        // per frame
  std::vector<Descriptor> descriptors; // per frame
  std::vector<Pose> gt_poses;          // empty when no ground truth shipped
  std::string world_echo;              // JSON text of the generating spec
};

struct GroundTruth {
  std::vector<Pose> poses;
  std::vector<Vec3> landmarks;  // statics first, then dynamic points
  std::vector<std::uint8_t> landmark_dynamic;
  std::vector<Vec3> landmark_velocity;  // zero for statics
  std::vector<int> place_ids;           // per frame
  std::vector<double> patch_true_depth; // parallel to bundle.patches
  std::vector<std::uint8_t> patch_dynamic;
  double measured_extent = 0.0;  // bounding-box diagonal of the trajectory
  double true_focal = 0.0;
};

struct SimOutput {
  DatasetBundle bundle;
  GroundTruth gt;
};

// Deterministic for a fixed spec: all randomness is counter-hashed from the
// seed, split per subsystem. Throws InvalidSpec.
SimOutput generate(const WorldSpec& spec);

// Per-frame multiplicative random-walk scale on the prior depths:
// frame t gets exp(sum_{u<=t} eps_u), eps ~ N(0, walk_sigma^2). Returns the
// applied per-frame scale so tests can check recovery.
std::vector<double> corrupt_prior_scale(std::vector<BundlePrior>& priors,
                                        int frame_count, double walk_sigma,
                                        std::uint64_t seed);

// Per-frame descriptors: one near-orthogonal random base per place id plus a
// perturbation of total norm sigma.
std::vector<Descriptor> render_descriptors(const std::vector<int>& place_ids,
                                           double sigma, std::uint64_t seed, int dim);

std::map<std::string, WorldSpec> standard_worlds();

// JSON round trip for WorldSpec (world.json echo and spec-file input).
std::string world_to_json(const WorldSpec& spec);
WorldSpec world_from_json(const std::string& text);

}  // namespace wildslam
