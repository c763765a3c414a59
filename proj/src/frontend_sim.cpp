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

#include "wildslam/frontend_sim.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "wildslam/rng.hpp"

namespace wildslam {

namespace {

constexpr double kCameraHeight = 1.6;
constexpr int kVisibilityMargin = 6;
constexpr double kMinVisibleDepth = 0.6;
constexpr double kMaxVisibleDepth = 150.0;
constexpr int kMaskDilation = 2;

Vec3 heading_of(double yaw) { return Vec3(std::sin(yaw), 0.0, std::cos(yaw)); }
Vec3 side_of(double yaw) { return Vec3(-std::cos(yaw), 0.0, std::sin(yaw)); }

// world-to-camera pose for a camera at `pos` looking along heading(yaw),
// x right, y down, z forward
Pose pose_from(const Vec3& pos, double yaw) {
  Mat3 cam_to_world;
  cam_to_world.col(0) = side_of(yaw);
  cam_to_world.col(1) = Vec3(0, -1, 0);
  cam_to_world.col(2) = heading_of(yaw);
  const Mat3 r = cam_to_world.transpose();
  return Pose(Quat(r), -(r * pos));
}

struct Trajectory {
  std::vector<Vec3> positions;
  std::vector<double> yaws;       // walking direction
  std::vector<double> view_yaws;  // camera viewing direction (yaw + sway)
};

Trajectory run_script(const std::vector<TrajectorySegment>& script) {
  Trajectory t;
  Vec3 pos(0.0, kCameraHeight, 0.0);
  double yaw = 0.0;
  for (const TrajectorySegment& seg : script) {
    if (seg.frames < 0) throw InvalidSpec("trajectory segment with negative frames");
    for (int i = 0; i < seg.frames; ++i) {
      t.positions.push_back(pos);
      t.yaws.push_back(yaw);
      switch (seg.kind) {
        case SegmentKind::kForward:
          pos += seg.speed * heading_of(yaw);
          break;
        case SegmentKind::kArc:
          pos += seg.speed * heading_of(yaw);
          yaw += seg.yaw_rate_deg * M_PI / 180.0;
          break;
        case SegmentKind::kPureRotation:
          yaw += seg.yaw_rate_deg * M_PI / 180.0;
          break;
        case SegmentKind::kPause:
          break;
      }
    }
  }
  if (t.positions.size() < 2)
    throw InvalidSpec("trajectory script must produce at least 2 frames");
  return t;
}

void apply_sway(Trajectory* t, double amplitude_deg, int period, std::uint64_t seed) {
  t->view_yaws = t->yaws;
  if (amplitude_deg == 0 || period <= 0) return;
  CounterRng rng(seed, RngStream::kTrajectory);
  const double phase = 2.0 * M_PI * rng.double_at(0);
  const double amp = amplitude_deg * M_PI / 180.0;
  for (std::size_t f = 0; f < t->view_yaws.size(); ++f)
    t->view_yaws[f] += amp * std::sin(2.0 * M_PI * static_cast<double>(f) / period + phase);
}

struct DynamicObject {
  Vec3 pos0;  // position at frame 0
  Vec3 velocity;
  double radius = 0.0;
  int first_point = 0, point_count = 0;  // range in the landmark arrays
};

struct ProjectedPoint {
  int landmark = -1;
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
};

bool project_visible(const CameraIntrinsics& k, const Pose& g, const Vec3& p,
                     Vec2* pixel, double* depth) {
  const Vec3 x = g.act(p);
  if (x.z() < kMinVisibleDepth || x.z() > kMaxVisibleDepth) return false;
  const Vec2 px(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
  if (px.x() < kVisibilityMargin || px.x() > k.width - kVisibilityMargin ||
      px.y() < kVisibilityMargin || px.y() > k.height - kVisibilityMargin)
    return false;
  *pixel = px;
  *depth = x.z();
  return true;
}

}  // namespace

void FrameMask::fill_disc(double cx, double cy, double radius) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + radius)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r2) data[static_cast<size_t>(y) * width + x] = 255;
    }
}

void FrameMask::fill_box(int cx, int cy, int half) {
  const int x0 = std::max(0, cx - half);
  const int x1 = std::min(width - 1, cx + half);
  const int y0 = std::max(0, cy - half);
  const int y1 = std::min(height - 1, cy + half);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) data[static_cast<size_t>(y) * width + x] = 255;
}

double FrameMask::coverage() const {
  if (data.empty()) return 0.0;
  std::size_t on = 0;
  for (std::uint8_t v : data) on += v ? 1 : 0;
  return static_cast<double>(on) / static_cast<double>(data.size());
}

SimOutput generate(const WorldSpec& spec) {
  if (spec.scene_extent <= 0) throw InvalidSpec("scene_extent must be positive");
  if (spec.noise.pixel_sigma < 0 || spec.noise.prior_depth_lognormal_sigma < 0 ||
      spec.noise.prior_scale_walk_sigma < 0 || spec.noise.descriptor_sigma < 0)
    throw InvalidSpec("noise sigmas must be non-negative");
  if (spec.candidates_per_frame <= 0 || spec.edge_radius < 1 ||
      spec.descriptor_dim < 2 || spec.landmark_count < 10)
    throw InvalidSpec("degenerate front-end parameters");
  spec.camera.validate();

  SimOutput out;
  DatasetBundle& bundle = out.bundle;
  GroundTruth& gt = out.gt;
  const CameraIntrinsics& k = spec.camera;

  Trajectory traj = run_script(spec.trajectory_script);
  apply_sway(&traj, spec.heading_sway_deg, spec.sway_period_frames, spec.seed);
  const int n_frames = static_cast<int>(traj.positions.size());
  bundle.width = k.width;
  bundle.height = k.height;
  bundle.fps = spec.fps;
  for (int f = 0; f < n_frames; ++f)
    bundle.frames.push_back({f, static_cast<double>(f) / spec.fps});

  gt.poses.reserve(n_frames);
  for (int f = 0; f < n_frames; ++f)
    gt.poses.push_back(pose_from(traj.positions[f], traj.view_yaws[f]));
  gt.true_focal = k.fx;

  Vec3 lo = traj.positions[0], hi = traj.positions[0];
  for (const Vec3& p : traj.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  gt.measured_extent = std::max((hi - lo).norm(), 1e-6);

  // drifted poses consumed by the correspondences (identical to gt when the
  // drift rate is zero)
  std::vector<Pose> drifted = gt.poses;
  if (spec.odometry_scale_drift != 0.0) {
    for (int f = 1; f < n_frames; ++f) {
      Pose rel = relative(gt.poses[f - 1], gt.poses[f]);
      rel.t *= std::exp(spec.odometry_scale_drift * (f - 1));
      drifted[f] = rel * drifted[f - 1];
    }
  }

  // --- static landmarks ----------------------------------------------------
  CounterRng lm_rng(spec.seed, RngStream::kLandmarks);
  for (int i = 0; i < spec.landmark_count; ++i) {
    const std::uint64_t c = static_cast<std::uint64_t>(i) * 8;
    Vec3 p;
    if (spec.layout == LandmarkLayout::kCorridor) {
      const int t = static_cast<int>(lm_rng.at(c) % n_frames);
      const Vec3 anchor(traj.positions[t].x(), 0.0, traj.positions[t].z());
      const double yaw = traj.yaws[t];
      // populate the corridor ahead of the anchor so late frames still see
      // structure in front of them; quadratic skew puts realistic mass in
      // the near field where optical flow is strong
      const double u_along = lm_rng.double_at(c + 1);
      const double along = 1.5 + 28.0 * u_along * u_along;
      const bool ground = lm_rng.double_at(c + 2) < 0.3;
      const double sign = lm_rng.double_at(c + 3) < 0.5 ? -1.0 : 1.0;
      if (ground) {
        const double lateral = 0.5 + 5.0 * lm_rng.double_at(c + 4);
        p = anchor + sign * lateral * side_of(yaw) + along * heading_of(yaw) +
            Vec3(0, 0.05, 0);
      } else {
        const double lateral = 1.5 + 12.0 * lm_rng.double_at(c + 4);
        const double height = 0.2 + 6.8 * lm_rng.double_at(c + 5);
        p = anchor + sign * lateral * side_of(yaw) + along * heading_of(yaw) +
            Vec3(0, height, 0);
      }
    } else {
      Vec3 dir(lm_rng.normal_at(c), lm_rng.normal_at(c + 2), lm_rng.normal_at(c + 4));
      if (dir.norm() < 1e-9) dir = Vec3(1, 0, 0);
      const double r = (0.3 + 0.7 * lm_rng.double_at(c + 6)) * spec.scene_extent;
      p = Vec3(0, kCameraHeight, 0) + dir.normalized() * r;
    }
    gt.landmarks.push_back(p);
    gt.landmark_dynamic.push_back(0);
    gt.landmark_velocity.push_back(Vec3::Zero());
  }

  // --- dynamic objects ------------------------------------------------------
  std::vector<DynamicObject> objects;
  if (spec.dynamic_object_count > 0 && spec.dynamic_fraction_of_view > 0) {
    CounterRng dyn_rng(spec.seed, RngStream::kDynamics);
    const double area = spec.dynamic_fraction_of_view * k.width * k.height /
                        spec.dynamic_object_count;
    const double disc_radius_px = std::sqrt(area / M_PI);
    const double typical_depth = 7.0;
    const double radius_world = disc_radius_px * typical_depth / k.fx;
    for (int o = 0; o < spec.dynamic_object_count; ++o) {
      const std::uint64_t c = static_cast<std::uint64_t>(o) * 32;
      DynamicObject obj;
      obj.radius = radius_world;
      // pedestrians cross the path rather than walking down the lens
      const int active = ((o + 1) * n_frames) / (spec.dynamic_object_count + 1);
      const double yaw = traj.yaws[active];
      const double lateral_sign = dyn_rng.double_at(c + 3) < 0.5 ? -1.0 : 1.0;
      const Vec3 center = traj.positions[active] +
                          (6.0 + 5.0 * dyn_rng.double_at(c)) * heading_of(yaw) +
                          lateral_sign * (2.0 + 1.8 * dyn_rng.double_at(c + 1)) *
                              side_of(yaw) +
                          Vec3(0, -0.4 + 1.2 * dyn_rng.double_at(c + 2), 0);
      const double speed = 0.03 + 0.03 * dyn_rng.double_at(c + 5);
      obj.velocity = -lateral_sign * speed * side_of(yaw) +
                     (dyn_rng.double_at(c + 4) - 0.5) * 0.02 * heading_of(yaw);
      obj.pos0 = center - obj.velocity * active;
      obj.first_point = static_cast<int>(gt.landmarks.size());
      obj.point_count = 30;
      for (int i = 0; i < obj.point_count; ++i) {
        Vec3 dir(dyn_rng.normal_at(c + 8 + 3 * i), dyn_rng.normal_at(c + 9 + 3 * i),
                 dyn_rng.normal_at(c + 10 + 3 * i));
        if (dir.norm() < 1e-9) dir = Vec3(0, 1, 0);
        const double rr =
            obj.radius * 0.9 * std::cbrt(dyn_rng.double_at(c + 11 + 3 * i));
        gt.landmarks.push_back(obj.pos0 + dir.normalized() * rr);
        gt.landmark_dynamic.push_back(1);
        gt.landmark_velocity.push_back(obj.velocity);
      }
      objects.push_back(obj);
    }
  }
  const int n_landmarks = static_cast<int>(gt.landmarks.size());

  auto landmark_at = [&](int id, int frame) -> Vec3 {
    return gt.landmarks[id] + gt.landmark_velocity[id] * frame;
  };

  // --- masks ----------------------------------------------------------------
  bundle.masks.resize(n_frames);
  std::vector<double> coverage(n_frames, 0.0);
  if (!objects.empty()) {
    auto rasterize = [&]() {
      for (int f = 0; f < n_frames; ++f) {
        FrameMask& mask = bundle.masks[f];
        mask.data.clear();
        for (const DynamicObject& obj : objects) {
          const Vec3 center = obj.pos0 + obj.velocity * f;
          const Vec3 x = gt.poses[f].act(center);
          if (x.z() < kMinVisibleDepth || x.z() > 60.0) continue;
          const Vec2 px(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
          const double r = k.fx * obj.radius / x.z() + kMaskDilation;
          if (px.x() < -r || px.x() > k.width + r || px.y() < -r ||
              px.y() > k.height + r)
            continue;
          mask.ensure(k.width, k.height);
          mask.fill_disc(px.x(), px.y(), r);
          // guarantee the dilation invariant for every member point
          for (int i = 0; i < obj.point_count; ++i) {
            Vec2 ppx;
            double d;
            if (project_visible(k, gt.poses[f], landmark_at(obj.first_point + i, f),
                                &ppx, &d))
              mask.fill_box(static_cast<int>(ppx.x()), static_cast<int>(ppx.y()),
                            kMaskDilation + 1);
          }
        }
        coverage[f] = mask.coverage();
      }
    };
    rasterize();
    // objects wander closer or farther than the depth the radius was sized
    // for; one calibration pass pins the mean on-screen coverage to the spec
    for (int pass = 0; pass < 2; ++pass) {
      double sum = 0;
      int n_on = 0;
      for (int f = 0; f < n_frames; ++f) {
        if (coverage[f] > 0.005) {
          sum += coverage[f];
          ++n_on;
        }
      }
      if (n_on == 0) break;
      const double mean = sum / n_on;
      const double gain = std::sqrt(spec.dynamic_fraction_of_view / mean);
      if (std::abs(gain - 1.0) < 0.05) break;
      for (DynamicObject& obj : objects) obj.radius *= gain;
      rasterize();
    }
  }

  // --- place ids and descriptors ---------------------------------------------
  // half-cell offsets keep the trajectory origin away from cell corners,
  // where a closing loop would straddle four different place ids
  const double cell = std::max(spec.scene_extent / 10.0, 1.0);
  std::map<std::tuple<int, int, int>, int> cells;
  for (int f = 0; f < n_frames; ++f) {
    double yaw = std::fmod(traj.view_yaws[f] + M_PI / 6.0, 2.0 * M_PI);
    if (yaw < 0) yaw += 2.0 * M_PI;
    const std::tuple<int, int, int> key(
        static_cast<int>(std::floor(traj.positions[f].x() / cell + 0.5)),
        static_cast<int>(std::floor(traj.positions[f].z() / cell + 0.5)),
        static_cast<int>(yaw / (M_PI / 3.0)));
    auto [it, fresh] = cells.emplace(key, static_cast<int>(cells.size()));
    gt.place_ids.push_back(it->second);
  }
  bundle.descriptors = render_descriptors(gt.place_ids, spec.noise.descriptor_sigma,
                                          spec.seed, spec.descriptor_dim);

  // --- per-frame candidate patches -------------------------------------------
  CounterRng pick_rng(spec.seed, RngStream::kPatchSampling);
  CounterRng noise_rng(spec.seed, RngStream::kPixelNoise);
  CounterRng prior_rng(spec.seed, RngStream::kPriorNoise);
  const int slots = 2 * spec.edge_radius + 1;
  const double beta = spec.odometry_scale_drift;

  std::vector<ProjectedPoint> static_vis, dynamic_vis;
  std::vector<double> static_cdf;
  std::vector<std::int64_t> used;
  for (int f = 0; f < n_frames; ++f) {
    static_vis.clear();
    dynamic_vis.clear();
    static_cdf.clear();
    for (int id = 0; id < n_landmarks; ++id) {
      Vec2 px;
      double depth;
      if (!project_visible(k, gt.poses[f], landmark_at(id, f), &px, &depth)) continue;
      if (gt.landmark_dynamic[id]) {
        dynamic_vis.push_back({id, px, depth});
      } else {
        static_vis.push_back({id, px, depth});
        // image-area weighting: a pixel-uniform sampler lands on nearby
        // structure far more often than on the skyline
        const double w = 1.0 / (depth * depth);
        static_cdf.push_back((static_cdf.empty() ? 0.0 : static_cdf.back()) + w);
      }
    }
    used.clear();
    const double drift_scale = std::exp(beta * f);
    for (int cand = 0; cand < spec.candidates_per_frame; ++cand) {
      const std::uint64_t base =
          (static_cast<std::uint64_t>(f) * spec.candidates_per_frame + cand) * 24;
      const bool want_dynamic =
          !dynamic_vis.empty() && pick_rng.double_at(base) < coverage[f];
      const auto& pool = want_dynamic ? dynamic_vis : static_vis;
      if (pool.empty()) continue;
      int chosen = -1;
      for (int attempt = 0; attempt < 16; ++attempt) {
        int idx;
        if (want_dynamic) {
          idx = static_cast<int>(pick_rng.at(base + 1 + attempt) % pool.size());
        } else {
          const double u =
              pick_rng.double_at(base + 1 + attempt) * static_cdf.back();
          idx = static_cast<int>(
              std::lower_bound(static_cdf.begin(), static_cdf.end(), u) -
              static_cdf.begin());
          idx = std::min(idx, static_cast<int>(pool.size()) - 1);
        }
        const std::int64_t track = pool[idx].landmark;
        if (std::find(used.begin(), used.end(), track) == used.end()) {
          chosen = idx;
          break;
        }
      }
      if (chosen < 0) continue;
      const ProjectedPoint& pp = pool[chosen];
      used.push_back(pp.landmark);

      BundlePatch patch;
      patch.frame_id = f;
      patch.patch_id = cand;
      patch.center = pp.pixel;
      patch.track_id = pp.landmark;
      const int patch_global = static_cast<int>(bundle.patches.size());
      bundle.patches.push_back(patch);
      gt.patch_true_depth.push_back(pp.depth);
      gt.patch_dynamic.push_back(gt.landmark_dynamic[pp.landmark]);

      // prior depth: lognormal noise now, per-frame scale walk applied below
      const double lognoise =
          spec.noise.prior_depth_lognormal_sigma *
          prior_rng.normal_at(static_cast<std::uint64_t>(patch_global));
      bundle.priors.push_back({f, cand, pp.depth * std::exp(lognoise)});

      // correspondence edges within the temporal radius
      for (int j = std::max(0, f - spec.edge_radius);
           j <= std::min(n_frames - 1, f + spec.edge_radius); ++j) {
        if (j == f) continue;
        const Vec3 point_now = landmark_at(pp.landmark, j);
        Vec3 x_obs;
        if (beta == 0.0) {
          x_obs = gt.poses[j].act(point_now);
        } else {
          const Vec3 in_host = gt.poses[f].act(point_now);
          x_obs = (drifted[j] * drifted[f].inverse()).act(drift_scale * in_host);
        }
        if (x_obs.z() < kMinVisibleDepth) continue;
        Vec2 obs(k.fx * x_obs.x() / x_obs.z() + k.cx,
                 k.fy * x_obs.y() / x_obs.z() + k.cy);
        if (obs.x() < 0 || obs.x() > k.width || obs.y() < 0 || obs.y() > k.height)
          continue;
        if (spec.noise.pixel_sigma > 0) {
          const std::uint64_t ec =
              (static_cast<std::uint64_t>(patch_global) * slots + (j - f + spec.edge_radius)) * 2;
          obs.x() += spec.noise.pixel_sigma * noise_rng.normal_at(ec);
          obs.y() += spec.noise.pixel_sigma * noise_rng.normal_at(ec + 1);
        }
        bundle.edges.push_back({f, cand, j, obs, 1.0});
      }
    }
  }

  if (spec.noise.prior_scale_walk_sigma > 0)
    corrupt_prior_scale(bundle.priors, n_frames, spec.noise.prior_scale_walk_sigma,
                        spec.seed);

  bundle.gt_poses = gt.poses;
  bundle.world_echo = world_to_json(spec);
  return out;
}

std::vector<double> corrupt_prior_scale(std::vector<BundlePrior>& priors,
                                        int frame_count, double walk_sigma,
                                        std::uint64_t seed) {
  std::vector<double> scale(frame_count, 1.0);
  if (walk_sigma > 0) {
    CounterRng rng(seed, RngStream::kPriorWalk);
    double log_scale = 0.0;
    for (int t = 0; t < frame_count; ++t) {
      log_scale += walk_sigma * rng.normal_at(static_cast<std::uint64_t>(t));
      scale[t] = std::exp(log_scale);
    }
    for (BundlePrior& p : priors) {
      if (p.frame_id >= 0 && p.frame_id < frame_count) p.depth *= scale[p.frame_id];
    }
  }
  return scale;
}

std::vector<Descriptor> render_descriptors(const std::vector<int>& place_ids,
                                           double sigma, std::uint64_t seed, int dim) {
  CounterRng base_rng(seed, RngStream::kDescriptorBase);
  CounterRng noise_rng(seed, RngStream::kDescriptorNoise);
  std::map<int, Eigen::VectorXd> bases;
  std::vector<Descriptor> out;
  out.reserve(place_ids.size());
  for (size_t f = 0; f < place_ids.size(); ++f) {
    const int place = place_ids[f];
    auto it = bases.find(place);
    if (it == bases.end()) {
      Eigen::VectorXd v(dim);
      for (int i = 0; i < dim; ++i)
        v[i] = base_rng.normal_at(static_cast<std::uint64_t>(place) * dim + i);
      it = bases.emplace(place, v.normalized()).first;
    }
    Eigen::VectorXd d = it->second;
    if (sigma > 0) {
      Eigen::VectorXd n(dim);
      for (int i = 0; i < dim; ++i)
        n[i] = noise_rng.normal_at(f * static_cast<std::uint64_t>(dim) + i);
      d = (d + sigma * n.normalized()).normalized();
    }
    out.push_back({static_cast<int>(f), d});
  }
  return out;
}

std::map<std::string, WorldSpec> standard_worlds() {
  std::map<std::string, WorldSpec> worlds;

  // speeds reflect walking footage sampled at ~3 fps
  {
    WorldSpec w;
    w.seed = 1001;
    w.scene_extent = 95;
    w.landmark_count = 3500;
    w.fps = 3.0;
    w.trajectory_script = {{SegmentKind::kForward, 200, 0.45, 0}};
    worlds["corridor_forward"] = w;
  }
  {
    WorldSpec w;
    w.seed = 1002;
    w.scene_extent = 50;
    w.landmark_count = 3000;
    w.fps = 3.0;
    w.trajectory_script = {{SegmentKind::kForward, 60, 0.4, 0},
                           {SegmentKind::kPureRotation, 40, 0, 3.0},  // 120 degrees
                           {SegmentKind::kForward, 60, 0.4, 0}};
    worlds["plaza_rotation"] = w;
  }
  {
    WorldSpec w;
    w.seed = 1003;
    w.scene_extent = 60;
    w.landmark_count = 4200;
    w.fps = 3.0;
    for (int side = 0; side < 4; ++side) {
      w.trajectory_script.push_back({SegmentKind::kForward, 100, 0.45, 0});
      w.trajectory_script.push_back({SegmentKind::kArc, 25, 0.45, 90.0 / 25});
    }
    w.noise.descriptor_sigma = 0.02;
    worlds["city_loop"] = w;
  }
  {
    WorldSpec w;
    w.seed = 1004;
    w.scene_extent = 65;
    w.landmark_count = 3200;
    w.fps = 3.0;
    w.trajectory_script = {{SegmentKind::kForward, 60, 0.4, 0},
                           {SegmentKind::kArc, 40, 0.4, 0.8},
                           {SegmentKind::kForward, 60, 0.4, 0}};
    w.dynamic_object_count = 6;
    w.dynamic_fraction_of_view = 0.2;
    worlds["crowded"] = w;
  }
  return worlds;
}

std::string world_to_json(const WorldSpec& spec) {
  nlohmann::json j;
  j["seed"] = spec.seed;
  j["landmark_count"] = spec.landmark_count;
  j["scene_extent"] = spec.scene_extent;
  j["dynamic_object_count"] = spec.dynamic_object_count;
  j["dynamic_fraction_of_view"] = spec.dynamic_fraction_of_view;
  j["noise"] = {{"pixel_sigma", spec.noise.pixel_sigma},
                {"prior_depth_lognormal_sigma", spec.noise.prior_depth_lognormal_sigma},
                {"prior_scale_walk_sigma", spec.noise.prior_scale_walk_sigma},
                {"descriptor_sigma", spec.noise.descriptor_sigma}};
  j["camera"] = {{"fx", spec.camera.fx},     {"fy", spec.camera.fy},
                 {"cx", spec.camera.cx},     {"cy", spec.camera.cy},
                 {"width", spec.camera.width}, {"height", spec.camera.height}};
  j["candidates_per_frame"] = spec.candidates_per_frame;
  j["edge_radius"] = spec.edge_radius;
  j["descriptor_dim"] = spec.descriptor_dim;
  j["layout"] = spec.layout == LandmarkLayout::kCorridor ? "corridor" : "sphere";
  j["odometry_scale_drift"] = spec.odometry_scale_drift;
  j["heading_sway_deg"] = spec.heading_sway_deg;
  j["sway_period_frames"] = spec.sway_period_frames;
  j["fps"] = spec.fps;
  nlohmann::json segs = nlohmann::json::array();
  for (const TrajectorySegment& s : spec.trajectory_script) {
    const char* kind = "forward";
    if (s.kind == SegmentKind::kArc) kind = "arc";
    if (s.kind == SegmentKind::kPureRotation) kind = "pure_rotation";
    if (s.kind == SegmentKind::kPause) kind = "pause";
    segs.push_back({{"kind", kind},
                    {"frames", s.frames},
                    {"speed", s.speed},
                    {"yaw_rate_deg", s.yaw_rate_deg}});
  }
  j["trajectory_script"] = segs;
  return j.dump(2) + "\n";
}

WorldSpec world_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("world spec: ") + e.what());
  }
  WorldSpec spec;
  try {
    spec.seed = j.value("seed", spec.seed);
    spec.landmark_count = j.value("landmark_count", spec.landmark_count);
    spec.scene_extent = j.value("scene_extent", spec.scene_extent);
    spec.dynamic_object_count = j.value("dynamic_object_count", 0);
    spec.dynamic_fraction_of_view = j.value("dynamic_fraction_of_view", 0.0);
    if (j.contains("noise")) {
      const auto& n = j["noise"];
      spec.noise.pixel_sigma = n.value("pixel_sigma", 0.0);
      spec.noise.prior_depth_lognormal_sigma =
          n.value("prior_depth_lognormal_sigma", 0.0);
      spec.noise.prior_scale_walk_sigma = n.value("prior_scale_walk_sigma", 0.0);
      spec.noise.descriptor_sigma = n.value("descriptor_sigma", 0.0);
    }
    if (j.contains("camera")) {
      const auto& c = j["camera"];
      spec.camera.fx = c.value("fx", spec.camera.fx);
      spec.camera.fy = c.value("fy", spec.camera.fy);
      spec.camera.cx = c.value("cx", spec.camera.cx);
      spec.camera.cy = c.value("cy", spec.camera.cy);
      spec.camera.width = c.value("width", spec.camera.width);
      spec.camera.height = c.value("height", spec.camera.height);
    }
    spec.candidates_per_frame = j.value("candidates_per_frame", spec.candidates_per_frame);
    spec.edge_radius = j.value("edge_radius", spec.edge_radius);
    spec.descriptor_dim = j.value("descriptor_dim", spec.descriptor_dim);
    spec.odometry_scale_drift = j.value("odometry_scale_drift", 0.0);
    spec.heading_sway_deg = j.value("heading_sway_deg", spec.heading_sway_deg);
    spec.sway_period_frames = j.value("sway_period_frames", spec.sway_period_frames);
    spec.fps = j.value("fps", spec.fps);
    const std::string layout = j.value("layout", "corridor");
    spec.layout =
        layout == "sphere" ? LandmarkLayout::kSphere : LandmarkLayout::kCorridor;
    if (j.contains("trajectory_script")) {
      spec.trajectory_script.clear();
      for (const auto& s : j["trajectory_script"]) {
        TrajectorySegment seg;
        const std::string kind = s.value("kind", "forward");
        if (kind == "forward")
          seg.kind = SegmentKind::kForward;
        else if (kind == "arc")
          seg.kind = SegmentKind::kArc;
        else if (kind == "pure_rotation")
          seg.kind = SegmentKind::kPureRotation;
        else if (kind == "pause")
          seg.kind = SegmentKind::kPause;
        else
          throw FormatError("world spec: unknown segment kind '" + kind + "'");
        seg.frames = s.value("frames", 0);
        seg.speed = s.value("speed", 0.0);
        seg.yaw_rate_deg = s.value("yaw_rate_deg", 0.0);
        spec.trajectory_script.push_back(seg);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("world spec: ") + e.what());
  }
  return spec;
}

}  // namespace wildslam
