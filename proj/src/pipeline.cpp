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

#include "wildslam/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "wildslam/rng.hpp"

namespace wildslam {

namespace {

constexpr double kTrackingLostMedianPx = 8.0;
constexpr double kLoopInformation = 10.0;
constexpr double kRotationOnlyMedianPx = 1.5;
// identity-seeded init solves start with huge residuals; a tight Huber
// would flatten their gradients, so the init stage runs wider
constexpr double kInitHuberDelta = 10.0;
constexpr double kFocalBound = 0.2;  // post-refine focal change limit

std::uint64_t pkey(int frame, int patch) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(frame)) << 32) |
         static_cast<std::uint32_t>(patch);
}

double median_or(std::vector<double> v, double fallback) {
  if (v.empty()) return fallback;
  const size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  return v[n / 2];
}

}  // namespace

std::vector<int> ReconstructionState::keyframe_ids() const {
  std::vector<int> out;
  for (const FrameRecord& f : frames)
    if (f.registered && f.keyframe) out.push_back(f.frame_id);
  return out;
}

Pose ReconstructionState::exported_pose(int frame_id) const {
  const FrameRecord& rec = frames.at(frame_id);
  if (rec.anchor_keyframe >= 0)
    return rec.anchor_rel * frames.at(rec.anchor_keyframe).pose;
  return rec.pose;
}

Pipeline::Pipeline(const DatasetBundle& bundle, const PipelineConfig& config)
    : bundle_(bundle), config_(config) {
  config_.validate();
  const int n = static_cast<int>(bundle.frames.size());
  if (n < 2) throw InvalidSpec("bundle: need at least two frames");
  for (int f = 0; f < n; ++f)
    if (bundle.frames[f].id != f)
      throw InvalidSpec("bundle: frame ids must be contiguous from zero");

  edges_by_src_.resize(n);
  patches_of_.resize(n);
  for (int i = 0; i < static_cast<int>(bundle.edges.size()); ++i) {
    const BundleEdge& e = bundle.edges[i];
    if (e.src_frame < 0 || e.src_frame >= n || e.dst_frame < 0 || e.dst_frame >= n)
      throw InvalidSpec("bundle: edge references a missing frame");
    edges_by_src_[e.src_frame].push_back(i);
  }
  for (int i = 0; i < static_cast<int>(bundle.patches.size()); ++i) {
    const BundlePatch& p = bundle.patches[i];
    if (p.frame_id < 0 || p.frame_id >= n)
      throw InvalidSpec("bundle: patch references a missing frame");
    patches_of_[p.frame_id].push_back(i);
    patch_index_[pkey(p.frame_id, p.patch_id)] = i;
  }
  for (const BundlePrior& p : bundle.priors)
    if (p.depth > 0) prior_of_[pkey(p.frame_id, p.patch_id)] = p.depth;
}

double Pipeline::mean_flow(int frame_a, int frame_b, bool compensate_rotation) const {
  std::vector<Vec2> from, to;
  auto scan = [&](int src, int dst, bool forward) {
    for (int ei : edges_by_src_[src]) {
      const BundleEdge& e = bundle_.edges[ei];
      if (e.dst_frame != dst) continue;
      auto it = patch_index_.find(pkey(e.src_frame, e.patch_id));
      if (it == patch_index_.end()) continue;
      const Vec2& center = bundle_.patches[it->second].center;
      from.push_back(forward ? center : e.observed);
      to.push_back(forward ? e.observed : center);
    }
  };
  scan(frame_a, frame_b, true);
  scan(frame_b, frame_a, false);
  if (from.empty()) return -1.0;

  if (!compensate_rotation) {
    double sum = 0;
    for (size_t i = 0; i < from.size(); ++i) sum += (to[i] - from[i]).norm();
    return sum / from.size();
  }

  // remove the best pure-rotation fit at a nominal focal; what remains is
  // parallax, which is what initialization actually needs
  const double f0 = bundle_.width;
  const double cx = 0.5 * bundle_.width, cy = 0.5 * bundle_.height;
  auto ray = [&](const Vec2& px) {
    return Vec3((px.x() - cx) / f0, (px.y() - cy) / f0, 1.0).normalized();
  };
  Mat3 m = Mat3::Zero();
  for (size_t i = 0; i < from.size(); ++i)
    m += ray(to[i]) * ray(from[i]).transpose();
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2, 2) = -1;
  const Mat3 rot = svd.matrixU() * d * svd.matrixV().transpose();
  double sum = 0;
  int count = 0;
  for (size_t i = 0; i < from.size(); ++i) {
    const Vec3 pred = rot * ray(from[i]);
    if (pred.z() <= 1e-6) continue;
    const Vec2 pred_px(f0 * pred.x() / pred.z() + cx, f0 * pred.y() / pred.z() + cy);
    sum += (to[i] - pred_px).norm();
    ++count;
  }
  return count > 0 ? sum / count : -1.0;
}

std::vector<int> Pipeline::select_init_frames() const {
  const int n = static_cast<int>(bundle_.frames.size());
  if (n < config_.n_init)
    throw InsufficientParallax("bundle shorter than n_init frames");
  auto greedy = [&](bool compensate) {
    std::vector<int> accepted = {0};
    int last = 0;
    for (int t = 1; t < n && static_cast<int>(accepted.size()) < config_.n_init;
         ++t) {
      const double flow = mean_flow(last, t, compensate);
      if (flow < 0) continue;
      if (flow >= config_.flow_threshold_px) {
        accepted.push_back(t);
        last = t;
      }
    }
    return accepted;
  };
  // rotation-compensated flow spaces the frames by parallax, which a swaying
  // camera needs; if only rotational flow exists, fall back to raw flow and
  // let estimate_focal diagnose the degeneracy
  std::vector<int> accepted = greedy(true);
  if (static_cast<int>(accepted.size()) < config_.n_init) {
    const std::vector<int> raw = greedy(false);
    if (static_cast<int>(raw.size()) >= config_.n_init) return raw;
    throw InsufficientParallax(
        "not enough optical-flow parallax to collect init frames (got " +
        std::to_string(std::max(accepted.size(), raw.size())) + ")");
  }
  return accepted;
}

std::vector<int> Pipeline::sample_patches(int frame_id) const {
  const std::vector<int>& candidates = patches_of_.at(frame_id);
  const FrameMask* mask = nullptr;
  if (config_.use_masks && frame_id < static_cast<int>(bundle_.masks.size()) &&
      !bundle_.masks[frame_id].empty_mask())
    mask = &bundle_.masks[frame_id];

  std::vector<int> usable;
  usable.reserve(candidates.size());
  for (int ci : candidates) {
    const BundlePatch& p = bundle_.patches[ci];
    if (mask && mask->masked(static_cast<int>(p.center.x()),
                             static_cast<int>(p.center.y())))
      continue;
    usable.push_back(ci);
  }
  if (usable.empty() && !candidates.empty())
    throw FullyMasked("frame " + std::to_string(frame_id) +
                      ": every candidate patch is masked");
  if (mask && mask->coverage() > 0.9)
    std::cerr << "warning: frame " << frame_id
              << ": less than 10% of the image is unmasked\n";

  if (static_cast<int>(usable.size()) <= config_.patches_per_frame) return usable;

  // partial Fisher-Yates, counter-seeded per frame
  CounterRng rng(config_.seed, RngStream::kPipelineSampling);
  const std::uint64_t base = static_cast<std::uint64_t>(frame_id) * 1024;
  for (int i = 0; i < config_.patches_per_frame; ++i) {
    const int j =
        i + static_cast<int>(rng.at(base + i) % (usable.size() - i));
    std::swap(usable[i], usable[j]);
  }
  usable.resize(config_.patches_per_frame);
  std::sort(usable.begin(), usable.end());
  return usable;
}

bool Pipeline::rotation_only_explains(const std::vector<int>& init_frames) const {
  // candidate focals for the ray geometry; pure rotation must fit for some
  // focal before we call the segment degenerate
  std::vector<double> grid;
  for (int i = 0; i < 7; ++i)
    grid.push_back(0.3 * bundle_.width *
                   std::pow(10.0, i / 6.0));  // 0.3..3.0 x width

  double best_over_f = 1e9;
  for (double f : grid) {
    double worst_pair = 0;
    for (size_t k = 0; k + 1 < init_frames.size(); ++k) {
      const int a = init_frames[k];
      const int b = init_frames[k + 1];
      std::vector<Vec3> da, db;
      auto ray = [&](const Vec2& px) {
        return Vec3((px.x() - 0.5 * bundle_.width) / f,
                    (px.y() - 0.5 * bundle_.height) / f, 1.0)
            .normalized();
      };
      auto add = [&](int src, int dst, bool forward) {
        for (int ei : edges_by_src_[src]) {
          const BundleEdge& e = bundle_.edges[ei];
          if (e.dst_frame != dst) continue;
          auto it = patch_index_.find(pkey(e.src_frame, e.patch_id));
          if (it == patch_index_.end()) continue;
          const Vec2& center = bundle_.patches[it->second].center;
          if (forward) {
            da.push_back(ray(center));
            db.push_back(ray(e.observed));
          } else {
            da.push_back(ray(e.observed));
            db.push_back(ray(center));
          }
        }
      };
      add(a, b, true);
      add(b, a, false);
      if (da.size() < 8) return false;  // cannot judge: assume parallax
      Mat3 m = Mat3::Zero();
      for (size_t i = 0; i < da.size(); ++i) m += db[i] * da[i].transpose();
      Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
      Mat3 d = Mat3::Identity();
      if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2, 2) = -1;
      const Mat3 rot = svd.matrixU() * d * svd.matrixV().transpose();
      std::vector<double> errs;
      errs.reserve(da.size());
      for (size_t i = 0; i < da.size(); ++i) {
        const Vec3 pred = rot * da[i];
        if (pred.z() <= 1e-6) {
          errs.push_back(1e6);
          continue;
        }
        const Vec2 px(f * pred.x() / pred.z() + 0.5 * bundle_.width,
                      f * pred.y() / pred.z() + 0.5 * bundle_.height);
        const Vec3 obs = db[i];
        const Vec2 obs_px(f * obs.x() / obs.z() + 0.5 * bundle_.width,
                          f * obs.y() / obs.z() + 0.5 * bundle_.height);
        errs.push_back((px - obs_px).norm());
      }
      worst_pair = std::max(worst_pair, median_or(errs, 1e6));
    }
    best_over_f = std::min(best_over_f, worst_pair);
  }
  return best_over_f < kRotationOnlyMedianPx;
}




namespace {

struct Correspondence {
  Vec2 a;  // pixel in frame a
  Vec2 b;  // pixel in frame b
};

// Normalized eight-point relative pose (x_b ~ R x_a + t, |t| = 1) with the
// cheirality check over the triangulated points. Returns false when the
// geometry is too thin to decide.
bool eight_point_pose(const std::vector<Correspondence>& corrs,
                      const CameraIntrinsics& k, Pose* rel) {
  if (corrs.size() < 12) return false;
  const int n = static_cast<int>(corrs.size());
  auto normalize = [&](const Vec2& px) {
    return Vec2((px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy);
  };
  Eigen::MatrixXd a_mat(n, 9);
  for (int i = 0; i < n; ++i) {
    const Vec2 xa = normalize(corrs[i].a);
    const Vec2 xb = normalize(corrs[i].b);
    a_mat.row(i) << xb.x() * xa.x(), xb.x() * xa.y(), xb.x(), xb.y() * xa.x(),
        xb.y() * xa.y(), xb.y(), xa.x(), xa.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd_a(a_mat, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> e_vec = svd_a.matrixV().col(8);
  Mat3 e_mat;
  e_mat << e_vec(0), e_vec(1), e_vec(2), e_vec(3), e_vec(4), e_vec(5), e_vec(6),
      e_vec(7), e_vec(8);
  Eigen::JacobiSVD<Mat3> svd_e(e_mat, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd_e.matrixU();
  Mat3 v = svd_e.matrixV();
  if (u.determinant() < 0) u.col(2) *= -1;
  if (v.determinant() < 0) v.col(2) *= -1;
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;

  const Mat3 rots[2] = {u * w * v.transpose(), u * w.transpose() * v.transpose()};
  const Vec3 ts[2] = {u.col(2), -u.col(2)};

  // midpoint triangulation depth in frame a for candidate (R, t)
  auto depth_a = [&](const Mat3& r, const Vec3& t, const Correspondence& c,
                     double* za, double* zb) {
    const Vec2 xa = normalize(c.a);
    const Vec2 xb = normalize(c.b);
    const Vec3 da(xa.x(), xa.y(), 1.0);
    const Vec3 db_b(xb.x(), xb.y(), 1.0);
    // solve za * da ~ R^T (zb * db - t) in least squares
    Eigen::Matrix<double, 3, 2> m;
    m.col(0) = da;
    m.col(1) = -(r.transpose() * db_b);
    const Vec3 rhs = -(r.transpose() * t);
    const Eigen::Vector2d z =
        (m.transpose() * m).ldlt().solve(m.transpose() * rhs);
    *za = z(0);
    *zb = z(1);
  };

  int best_front = -1;
  for (const Mat3& r : rots) {
    for (const Vec3& t : ts) {
      int front = 0;
      for (int i = 0; i < n; i += std::max(1, n / 40)) {
        double za, zb;
        depth_a(r, t, corrs[i], &za, &zb);
        if (za > 0 && zb > 0) ++front;
      }
      if (front > best_front) {
        best_front = front;
        *rel = Pose(Quat(r), t);
      }
    }
  }
  return best_front > 0;
}

// triangulated depth of a pixel in frame a under relative pose (x_b = R x_a + t)
double triangulate_depth(const Pose& rel, const CameraIntrinsics& k, const Vec2& pa,
                         const Vec2& pb) {
  const Vec3 da((pa.x() - k.cx) / k.fx, (pa.y() - k.cy) / k.fy, 1.0);
  const Vec3 db((pb.x() - k.cx) / k.fx, (pb.y() - k.cy) / k.fy, 1.0);
  const Mat3 r = rel.q.toRotationMatrix();
  Eigen::Matrix<double, 3, 2> m;
  m.col(0) = da;
  m.col(1) = -(r.transpose() * db);
  const Vec3 rhs = -(r.transpose() * rel.t);
  const Eigen::Vector2d z = (m.transpose() * m).ldlt().solve(m.transpose() * rhs);
  return z(0);
}

}  // namespace

double Pipeline::focal_score(double focal, const std::vector<int>& init_frames,
                             const std::vector<std::vector<int>>& sampled,
                             FocalWarmState* warm) const {
  BAWindow w;
  w.camera = CameraIntrinsics{focal, focal, 0.5 * bundle_.width, 0.5 * bundle_.height,
                              bundle_.width, bundle_.height};
  w.mu = 0;
  w.huber_delta = std::max(config_.huber_delta, kInitHuberDelta);
  w.fixed_frames = {init_frames[0]};
  w.pinned_patch = 0;  // scale gauge

  const bool use_warm = warm != nullptr && warm->valid;
  std::set<int> in_window;
  SolveOptions incremental;
  incremental.max_iterations = 6;
  for (size_t k = 0; k < init_frames.size(); ++k) {
    const int t = init_frames[k];
    w.frames.push_back(t);
    if (use_warm) {
      w.poses[t] = warm->poses.at(t);
    } else if (k == 0) {
      w.poses[t] = Pose::identity();
    } else if (k == 1) {
      // essential-matrix bootstrap: two-view BA from identity seeds has
      // well-known spurious minima at these baselines
      std::vector<Correspondence> corrs;
      for (int ei : edges_by_src_[init_frames[0]]) {
        const BundleEdge& e = bundle_.edges[ei];
        if (e.dst_frame != t) continue;
        auto it = patch_index_.find(pkey(e.src_frame, e.patch_id));
        if (it == patch_index_.end()) continue;
        corrs.push_back({bundle_.patches[it->second].center, e.observed});
      }
      for (int ei : edges_by_src_[t]) {
        const BundleEdge& e = bundle_.edges[ei];
        if (e.dst_frame != init_frames[0]) continue;
        auto it = patch_index_.find(pkey(e.src_frame, e.patch_id));
        if (it == patch_index_.end()) continue;
        corrs.push_back({e.observed, bundle_.patches[it->second].center});
      }
      Pose rel;
      if (eight_point_pose(corrs, w.camera, &rel)) {
        // rescale so the pinned patch keeps inverse depth 1
        double pin_depth = -1;
        if (!w.patches.empty()) {
          const Patch& pin = w.patches[0];
          for (int ei : edges_by_src_[pin.frame_id]) {
            const BundleEdge& e = bundle_.edges[ei];
            if (e.dst_frame != t || e.patch_id != pin.patch_id) continue;
            pin_depth = triangulate_depth(rel, w.camera, pin.center, e.observed);
          }
        }
        if (pin_depth > 0.05) {
          // rescale the whole two-view solution so the pinned patch keeps
          // inverse depth 1, then seed the host depths from triangulation
          rel.t /= pin_depth;
          for (Patch& patch : w.patches) {
            if (patch.frame_id != init_frames[0]) continue;
            for (int ei : edges_by_src_[patch.frame_id]) {
              const BundleEdge& e = bundle_.edges[ei];
              if (e.dst_frame != t || e.patch_id != patch.patch_id) continue;
              const double z =
                  triangulate_depth(rel, w.camera, patch.center, e.observed);
              if (z > 0.01) patch.inv_depth = 1.0 / z;
            }
          }
        }
        w.poses[t] = rel * w.poses.at(init_frames[0]);
      }
    } else {  // constant-velocity extrapolation over the init spacing
      w.poses[t] = relative(w.poses.at(init_frames[k - 2]),
                            w.poses.at(init_frames[k - 1])) *
                   w.poses.at(init_frames[k - 1]);
    }
    for (int ci : sampled[k]) {
      const BundlePatch& bp = bundle_.patches[ci];
      Patch patch;
      patch.frame_id = bp.frame_id;
      patch.patch_id = bp.patch_id;
      patch.center = bp.center;
      patch.inv_depth = 1.0;
      patch.footprint = config_.patch_footprint;
      w.patches.push_back(patch);
    }
    in_window.insert(t);
    for (int prev : in_window) {
      for (int ei : edges_by_src_[prev]) {
        const BundleEdge& e = bundle_.edges[ei];
        if (e.dst_frame != t && !(prev == t && in_window.count(e.dst_frame)))
          continue;
        if (prev == t && e.dst_frame == t) continue;
        bool selected = false;
        for (const Patch& p : w.patches)
          if (p.frame_id == e.src_frame && p.patch_id == e.patch_id) selected = true;
        if (!selected) continue;
        w.edges.push_back({e.src_frame, e.patch_id, e.dst_frame, e.observed,
                           e.confidence});
      }
    }
    if (!use_warm && k >= 1) {
      try {
        // PnP-style warmup: settle the new pose against the existing map
        // before letting structure move
        BAWindow pose_warm = w;
        pose_warm.freeze_depths = true;
        pose_warm.fixed_frames = std::set<int>(w.frames.begin(), w.frames.end());
        pose_warm.fixed_frames.erase(t);
        SolveOptions pose_only;
        pose_only.max_iterations = 3;
        solve(pose_warm, pose_only);
        w.poses[t] = pose_warm.poses.at(t);
        solve(w, incremental);
      } catch (const Error&) {
        return 1e9;
      }
    }
  }
  if (use_warm) {
    for (Patch& patch : w.patches) {
      auto it = warm->depths.find(pkey(patch.frame_id, patch.patch_id));
      if (it != warm->depths.end()) patch.inv_depth = it->second;
    }
  }

  SolveOptions final_opts;
  final_opts.max_iterations = use_warm ? 10 : 20;
  SolveResult result;
  try {
    solve(w, final_opts);
    result = solve(w, final_opts);
  } catch (const Error&) {
    return 1e9;
  }
  if (warm != nullptr) {
    warm->valid = true;
    warm->poses = w.poses;
    warm->depths.clear();
    for (const Patch& patch : w.patches)
      warm->depths[pkey(patch.frame_id, patch.patch_id)] = patch.inv_depth;
  }
  // mean robust cost per edge: smooth in f, which the refinement stage needs
  int active = 0;
  for (double n : result.edge_residual_norm)
    if (n >= 0) ++active;
  if (active == 0) return 1e9;
  return result.final_cost / active;
}

std::vector<int> Pipeline::densify_init(const std::vector<int>& init_frames) const {
  // midpoint frames: their correspondences are already in the bundle and
  // they triple the information the init solves can draw on
  std::vector<int> solve_frames;
  for (size_t k = 0; k + 1 < init_frames.size(); ++k) {
    solve_frames.push_back(init_frames[k]);
    const int mid = (init_frames[k] + init_frames[k + 1]) / 2;
    if (mid != init_frames[k] && mid != init_frames[k + 1])
      solve_frames.push_back(mid);
  }
  solve_frames.push_back(init_frames.back());
  return solve_frames;
}

double Pipeline::estimate_focal(const std::vector<int>& init_frames) const {
  return estimate_focal_impl(init_frames, nullptr, nullptr);
}

double Pipeline::estimate_focal_impl(const std::vector<int>& init_frames,
                                     FocalWarmState* warm_out,
                                     std::vector<int>* solve_frames_out) const {
  if (rotation_only_explains(init_frames))
    throw DegenerateGeometry(
        "init segment is explained by pure rotation; focal length is "
        "unobservable, extend the init window");

  const std::vector<int> solve_frames = densify_init(init_frames);
  std::vector<std::vector<int>> sampled;
  for (int t : solve_frames) sampled.push_back(sample_patches(t));

  const double lo = 0.3 * bundle_.width;
  const double hi = 3.0 * bundle_.width;
  const int grid_n = 20;
  double best_f = lo, best_score = 1e18;
  std::vector<double> grid(grid_n);
  for (int i = 0; i < grid_n; ++i)
    grid[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (grid_n - 1));
  int best_i = 0;
  for (int i = 0; i < grid_n; ++i) {
    const double s = focal_score(grid[i], solve_frames, sampled);
    if (s < best_score) {
      best_score = s;
      best_f = grid[i];
      best_i = i;
    }
  }

  // golden-section refinement on log f around the best grid cell, with
  // warm-started solves so the score stays smooth in f
  FocalWarmState warm;
  focal_score(best_f, solve_frames, sampled, &warm);
  double a = std::log(grid[std::max(0, best_i - 1)]);
  double b = std::log(grid[std::min(grid_n - 1, best_i + 1)]);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - phi * (b - a);
  double x2 = a + phi * (b - a);
  double f1 = focal_score(std::exp(x1), solve_frames, sampled, &warm);
  double f2 = focal_score(std::exp(x2), solve_frames, sampled, &warm);
  for (int it = 0; it < 24 && (b - a) > 2e-4; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = focal_score(std::exp(x1), solve_frames, sampled, &warm);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = focal_score(std::exp(x2), solve_frames, sampled, &warm);
    }
  }
  const double refined = std::exp(0.5 * (a + b));
  if (std::min(f1, f2) <= best_score) best_f = refined;
  if (warm_out != nullptr) {
    focal_score(best_f, solve_frames, sampled, &warm);
    *warm_out = warm;
  }
  if (solve_frames_out != nullptr) *solve_frames_out = solve_frames;
  return best_f;
}

double Pipeline::compute_alpha(ReconstructionState& state, int frame_id,
                               const std::vector<int>& patch_indices) const {
  std::vector<double> priors;
  for (int ci : patch_indices) {
    const BundlePatch& p = bundle_.patches[ci];
    auto it = prior_of_.find(pkey(p.frame_id, p.patch_id));
    if (it != prior_of_.end()) priors.push_back(it->second);
  }
  // depths from the latest three keyframes' patches
  std::vector<int> recent;
  for (auto it = state.window.rbegin(); it != state.window.rend(); ++it) {
    if (*it == frame_id) continue;
    recent.push_back(*it);
    if (recent.size() == 3) break;
  }
  std::vector<double> inv_depths;
  for (const MapPatch& mp : state.map)
    if (std::find(recent.begin(), recent.end(), mp.patch.frame_id) != recent.end())
      inv_depths.push_back(mp.patch.inv_depth);
  try {
    return align_prior_scale(priors, inv_depths);
  } catch (const EmptyHistory&) {
    return 1.0;
  }
}

BAWindow Pipeline::build_window(ReconstructionState& state) const {
  BAWindow w;
  w.camera = state.camera;
  w.mu = config_.mu;
  w.huber_delta = config_.huber_delta;
  w.residual_space = config_.depth_residual_space == "metric"
                         ? DepthResidualSpace::kMetric
                         : DepthResidualSpace::kInverse;
  std::set<int> in_window(state.window.begin(), state.window.end());
  for (int f : state.window) {
    w.frames.push_back(f);
    w.poses[f] = state.frames[f].pose;
    if (config_.mu > 0 && state.frame_alpha.count(f))
      w.frame_alpha[f] = state.frame_alpha.at(f);
  }

  std::set<std::uint64_t> selected;
  bool has_prior = false;
  for (const MapPatch& mp : state.map) {
    if (!in_window.count(mp.patch.frame_id)) continue;
    w.patches.push_back(mp.patch);
    selected.insert(pkey(mp.patch.frame_id, mp.patch.patch_id));
    if (mp.prior_depth > 0) {
      w.priors.push_back({mp.patch.frame_id, mp.patch.patch_id, mp.prior_depth});
      has_prior = true;
    }
  }

  for (int f : state.window) {
    for (int ei : edges_by_src_[f]) {
      const BundleEdge& e = bundle_.edges[ei];
      if (!in_window.count(e.dst_frame)) continue;
      if (!selected.count(pkey(e.src_frame, e.patch_id))) continue;
      w.edges.push_back(
          {e.src_frame, e.patch_id, e.dst_frame, e.observed, e.confidence});
    }
  }

  // gauge: oldest pose fixed; scale comes from the priors when active,
  // otherwise fix the second-oldest pose as well
  w.fixed_frames = {state.window.front()};
  if (!(config_.mu > 0 && has_prior) && state.window.size() >= 2)
    w.fixed_frames.insert(state.window[1]);
  return w;
}

void Pipeline::solve_window(ReconstructionState& state, int current_frame,
                            double huber_override) const {
  BAWindow w = build_window(state);
  if (huber_override > 0) w.huber_delta = huber_override;
  SolveOptions opts;
  opts.max_iterations = config_.solver_iterations;
  SolveResult result;
  try {
    result = solve(w, opts);
  } catch (const SingularSystem&) {
    Event ev;
    ev.frame = current_frame;
    ev.type = "singular_system";
    state.events.push_back(ev);
    return;  // keep motion-model poses for this round
  }

  for (int f : state.window) state.frames[f].pose = w.poses.at(f);
  std::map<std::uint64_t, double> new_depths;
  for (const Patch& p : w.patches)
    new_depths[pkey(p.frame_id, p.patch_id)] = p.inv_depth;
  for (MapPatch& mp : state.map) {
    auto it = new_depths.find(pkey(mp.patch.frame_id, mp.patch.patch_id));
    if (it != new_depths.end()) mp.patch.inv_depth = it->second;
  }
  state.final_cost = result.final_cost;

  if (current_frame >= 0) {
    std::vector<double> touching;
    for (size_t i = 0; i < w.edges.size(); ++i) {
      if (w.edges[i].src_frame != current_frame &&
          w.edges[i].dst_frame != current_frame)
        continue;
      if (result.edge_residual_norm[i] >= 0)
        touching.push_back(result.edge_residual_norm[i]);
    }
    const double median = median_or(std::move(touching), -1.0);
    if (median > kTrackingLostMedianPx) {
      state.frames[current_frame].tracking_lost = true;
      ++state.tracking_lost_count;
      Event ev;
      ev.frame = current_frame;
      ev.type = "tracking_lost";
      ev.data.emplace_back("median_px", median);
      state.events.push_back(ev);
    }
  }
}

void Pipeline::initialize(ReconstructionState& state) const {
  const std::vector<int> init_frames = select_init_frames();

  // the focal search's incremental solve doubles as the init reconstruction;
  // reuse its converged window instead of solving again from scratch
  FocalWarmState warm;
  std::vector<int> solve_frames;
  double focal;
  if (config_.focal_override > 0) {
    focal = config_.focal_override;
    solve_frames = densify_init(init_frames);
    std::vector<std::vector<int>> sampled;
    for (int t : solve_frames) sampled.push_back(sample_patches(t));
    focal_score(focal, solve_frames, sampled, &warm);
  } else {
    focal = estimate_focal_impl(init_frames, &warm, &solve_frames);
  }
  if (!warm.valid)
    throw DegenerateGeometry("initialization failed to build a seed window");

  state.camera = CameraIntrinsics{focal, focal, 0.5 * bundle_.width,
                                  0.5 * bundle_.height, bundle_.width,
                                  bundle_.height};
  state.confirmer = LoopConfirmer(config_.loop_streak, 2);
  state.frames.resize(bundle_.frames.size());
  for (size_t f = 0; f < bundle_.frames.size(); ++f) {
    state.frames[f].frame_id = static_cast<int>(f);
    state.frames[f].timestamp = bundle_.frames[f].timestamp;
  }

  Event ev;
  ev.frame = init_frames.back();
  ev.type = "initialized";
  ev.data.emplace_back("focal_px", focal);
  ev.data.emplace_back("n_init", static_cast<double>(init_frames.size()));
  state.events.push_back(ev);

  std::vector<std::vector<int>> sampled;
  for (int t : solve_frames) sampled.push_back(sample_patches(t));

  // put the map into prior units once, so the depth regularizer starts
  // consistent instead of dragging the solution along the scale direction
  double scale = 1.0;
  if (config_.mu > 0) {
    std::vector<double> prior_depths, map_depths;
    for (size_t k = 0; k < solve_frames.size(); ++k) {
      for (int ci : sampled[k]) {
        const BundlePatch& bp = bundle_.patches[ci];
        auto pit = prior_of_.find(pkey(bp.frame_id, bp.patch_id));
        auto dit = warm.depths.find(pkey(bp.frame_id, bp.patch_id));
        if (pit == prior_of_.end() || dit == warm.depths.end()) continue;
        if (!(dit->second > 0)) continue;
        prior_depths.push_back(pit->second);
        map_depths.push_back(1.0 / dit->second);
      }
    }
    if (!prior_depths.empty() && !map_depths.empty())
      scale = median_or(std::move(prior_depths), 1.0) /
              median_or(std::move(map_depths), 1.0);
  }

  for (size_t k = 0; k < solve_frames.size(); ++k) {
    const int t = solve_frames[k];
    FrameRecord& rec = state.frames[t];
    rec.registered = true;
    rec.keyframe = true;
    rec.pose = warm.poses.at(t);
    rec.pose.t *= scale;

    for (int ci : sampled[k]) {
      const BundlePatch& bp = bundle_.patches[ci];
      MapPatch mp;
      mp.patch.frame_id = bp.frame_id;
      mp.patch.patch_id = bp.patch_id;
      mp.patch.center = bp.center;
      mp.patch.footprint = config_.patch_footprint;
      mp.track_id = bp.track_id;
      auto pit = prior_of_.find(pkey(bp.frame_id, bp.patch_id));
      if (pit != prior_of_.end()) mp.prior_depth = pit->second;
      auto dit = warm.depths.find(pkey(bp.frame_id, bp.patch_id));
      mp.patch.inv_depth =
          dit != warm.depths.end() ? dit->second / scale : 1.0 / scale;
      state.map.push_back(mp);
    }

    state.window.push_back(t);
    if (config_.mu > 0)
      state.frame_alpha[t] = k == 0 ? 1.0 : compute_alpha(state, t, sampled[k]);
  }
  while (static_cast<int>(state.window.size()) > config_.window_size)
    state.window.pop_front();

  // settle at the configured robustifier
  solve_window(state, -1);
  solve_window(state, -1);
}

void Pipeline::process_frame(ReconstructionState& state, int frame_id) const {
  // constant-velocity seed from the two nearest registered frames, scaled
  // to the id gap so catch-up frames between init keyframes interpolate
  int p1 = -1, p2 = -1;
  for (int f = frame_id - 1; f >= 0 && p2 < 0; --f) {
    if (!state.frames[f].registered) continue;
    if (p1 < 0)
      p1 = f;
    else
      p2 = f;
  }
  FrameRecord& rec = state.frames[frame_id];
  if (p1 < 0) {
    rec.pose = Pose::identity();
  } else if (p2 < 0) {
    rec.pose = state.frames[p1].pose;
  } else {
    const Twist6 xi = se3_log(relative(state.frames[p2].pose, state.frames[p1].pose));
    const double ratio = static_cast<double>(frame_id - p1) / (p1 - p2);
    rec.pose = se3_exp(ratio * xi) * state.frames[p1].pose;
  }
  rec.registered = true;
  rec.keyframe = true;

  std::vector<int> selected;
  try {
    selected = sample_patches(frame_id);
  } catch (const FullyMasked&) {
    Event ev;
    ev.frame = frame_id;
    ev.type = "fully_masked";
    state.events.push_back(ev);
  }
  double alpha = 1.0;
  if (config_.mu > 0) {
    alpha = compute_alpha(state, frame_id, selected);
    state.frame_alpha[frame_id] = alpha;
  }
  std::vector<double> prev_inv;
  if (!state.window.empty()) {
    const int prev = state.window.back();
    for (const MapPatch& mp : state.map)
      if (mp.patch.frame_id == prev) prev_inv.push_back(mp.patch.inv_depth);
  }
  const double fallback = median_or(prev_inv, 1.0);

  for (int ci : selected) {
    const BundlePatch& bp = bundle_.patches[ci];
    MapPatch mp;
    mp.patch.frame_id = bp.frame_id;
    mp.patch.patch_id = bp.patch_id;
    mp.patch.center = bp.center;
    mp.patch.footprint = config_.patch_footprint;
    mp.track_id = bp.track_id;
    auto it = prior_of_.find(pkey(bp.frame_id, bp.patch_id));
    if (it != prior_of_.end()) mp.prior_depth = it->second;
    if (config_.mu > 0 && mp.prior_depth > 0)
      mp.patch.inv_depth = 1.0 / (alpha * mp.prior_depth);
    else
      mp.patch.inv_depth = fallback;
    state.map.push_back(mp);
  }

  state.window.push_back(frame_id);
  const Pose seed = rec.pose;
  solve_window(state, frame_id);
  if (rec.tracking_lost) rec.pose = seed;  // fall back to dead reckoning

  // keyframe retention: drop the newest-but-one frame when its flow to the
  // previous keyframe is small; its pose stays anchored
  if (state.window.size() >= 4) {
    const int candidate = state.window[state.window.size() - 2];
    const int previous = state.window[state.window.size() - 3];
    const double flow = mean_flow(candidate, previous);
    if (flow >= 0 && flow < config_.keyframe_flow_px) {
      FrameRecord& crec = state.frames[candidate];
      crec.keyframe = false;
      crec.anchor_keyframe = previous;
      crec.anchor_rel = crec.pose * state.frames[previous].pose.inverse();
      state.window.erase(state.window.end() - 2);
      state.map.erase(std::remove_if(state.map.begin(), state.map.end(),
                                     [&](const MapPatch& mp) {
                                       return mp.patch.frame_id == candidate;
                                     }),
                      state.map.end());
    }
  }
  while (static_cast<int>(state.window.size()) > config_.window_size)
    state.window.pop_front();

  if (config_.use_loop) handle_loop(state, frame_id);
}

void Pipeline::handle_loop(ReconstructionState& state, int frame_id) const {
  if (frame_id >= static_cast<int>(bundle_.descriptors.size())) return;
  const Descriptor& desc = bundle_.descriptors[frame_id];
  if (desc.vector.size() == 0) return;

  const auto candidate =
      state.store.query(desc, config_.temporal_exclusion, config_.loop_tau);
  const auto confirmed = state.confirmer.feed(frame_id, candidate);
  state.store.add(desc);
  if (!confirmed.has_value()) return;
  if (frame_id - state.last_pgo_frame < config_.pgo_cooldown) return;

  ++state.loops_confirmed;
  const int match = confirmed->second;
  const std::vector<int> kfs = state.keyframe_ids();
  if (kfs.size() < 2) return;

  // nearest keyframes to the matched frame and the query
  int m_idx = 0;
  for (size_t i = 0; i < kfs.size(); ++i)
    if (std::abs(kfs[i] - match) < std::abs(kfs[m_idx] - match))
      m_idx = static_cast<int>(i);
  const int q_idx = static_cast<int>(kfs.size()) - 1;  // current frame
  const int m_kf = kfs[m_idx];
  const int q_kf = kfs[q_idx];

  // covisible tracks between the two neighbourhoods
  auto side_points = [&](int center_idx) {
    std::map<std::int64_t, Vec3> tracks;
    for (const MapPatch& mp : state.map) {
      if (mp.track_id < 0) continue;
      // host keyframe must lie near the neighbourhood centre (keyframe order)
      bool near = false;
      for (int d = -config_.window_size; d <= config_.window_size; ++d) {
        const int idx = center_idx + d;
        if (idx < 0 || idx >= static_cast<int>(kfs.size())) continue;
        if (kfs[idx] == mp.patch.frame_id) near = true;
      }
      if (!near || tracks.count(mp.track_id)) continue;
      const Pose& host = state.frames[mp.patch.frame_id].pose;
      tracks[mp.track_id] = host.inverse().act(
          backproject(state.camera, mp.patch.center, mp.patch.inv_depth));
    }
    return tracks;
  };
  const auto m_tracks = side_points(m_idx);
  const auto q_tracks = side_points(q_idx);

  std::vector<Vec3> match_side, query_side;
  const Pose& g_m = state.frames[m_kf].pose;
  const Pose& g_q = state.frames[q_kf].pose;
  for (const auto& [track, p_world] : m_tracks) {
    auto it = q_tracks.find(track);
    if (it == q_tracks.end()) continue;
    match_side.push_back(g_m.act(p_world));
    query_side.push_back(g_q.act(it->second));
  }
  if (static_cast<int>(match_side.size()) < config_.loop_min_covisible) {
    ++state.loops_rejected;
    Event ev;
    ev.frame = frame_id;
    ev.type = "loop_rejected";
    ev.data.emplace_back("covisible", static_cast<double>(match_side.size()));
    state.events.push_back(ev);
    return;
  }

  SimPose measurement;
  try {
    measurement = umeyama_alignment(match_side, query_side);
  } catch (const DegenerateCollinear&) {
    ++state.loops_rejected;
    Event ev;
    ev.frame = frame_id;
    ev.type = "loop_rejected";
    ev.data.emplace_back("covisible", static_cast<double>(match_side.size()));
    state.events.push_back(ev);
    return;
  }

  Event loop_ev;
  loop_ev.frame = frame_id;
  loop_ev.type = "loop_confirmed";
  loop_ev.data.emplace_back("match_frame", static_cast<double>(match));
  loop_ev.data.emplace_back("match_keyframe", static_cast<double>(m_kf));
  loop_ev.data.emplace_back("covisible", static_cast<double>(match_side.size()));
  loop_ev.data.emplace_back("scale", measurement.s);
  state.events.push_back(loop_ev);

  // lift, optimize with the current loop frame fixed, absorb the scales
  std::vector<std::pair<int, Pose>> kf_poses;
  for (int kf : kfs) kf_poses.emplace_back(kf, state.frames[kf].pose);
  PoseGraph graph = lift_trajectory(kf_poses);
  for (Sim3Node& node : graph.nodes) node.fixed = node.frame_id == q_kf;
  Sim3Edge loop;
  loop.src = m_kf;
  loop.dst = q_kf;
  loop.measurement = measurement;
  loop.kind = EdgeKind::kLoop;
  loop.information = kLoopInformation;
  graph.edges.push_back(loop);

  const PgoResult pgo = optimize(graph);
  ++state.pgo_runs;
  state.last_pgo_frame = frame_id;

  std::map<int, Pose> poses;
  for (int kf : kfs) poses[kf] = state.frames[kf].pose;
  std::vector<Patch> patches;
  patches.reserve(state.map.size());
  for (const MapPatch& mp : state.map) patches.push_back(mp.patch);
  const std::map<int, double> scales = apply_correction(graph, poses, patches);
  for (int kf : kfs) state.frames[kf].pose = poses.at(kf);
  for (size_t i = 0; i < state.map.size(); ++i)
    state.map[i].patch.inv_depth = patches[i].inv_depth;
  for (FrameRecord& rec : state.frames) {
    if (rec.anchor_keyframe < 0) continue;
    auto it = scales.find(rec.anchor_keyframe);
    if (it != scales.end()) rec.anchor_rel.t /= it->second;
  }
  state.last_graph = graph;

  Event ev;
  ev.frame = frame_id;
  ev.type = "pgo";
  ev.data.emplace_back("loop_residual_before", pgo.loop_residual_before);
  ev.data.emplace_back("loop_residual_after", pgo.loop_residual_after);
  ev.data.emplace_back("iterations", static_cast<double>(pgo.iterations));
  state.events.push_back(ev);

  // one settling pass over the window
  solve_window(state, -1);
}

double Pipeline::global_cost(const ReconstructionState& state) const {
  std::map<std::uint64_t, const MapPatch*> by_key;
  for (const MapPatch& mp : state.map)
    by_key[pkey(mp.patch.frame_id, mp.patch.patch_id)] = &mp;
  double cost = 0;
  for (const BundleEdge& e : bundle_.edges) {
    auto it = by_key.find(pkey(e.src_frame, e.patch_id));
    if (it == by_key.end()) continue;
    if (!state.frames[e.dst_frame].registered) continue;
    const MapPatch& mp = *it->second;
    const Reprojection rep = reproject_with_jacobians(
        state.camera, state.exported_pose(e.src_frame),
        state.exported_pose(e.dst_frame), mp.patch.center, mp.patch.inv_depth, false);
    if (!rep.valid) continue;
    cost += e.confidence *
            robust_cost((rep.pixel - e.observed).norm(), config_.huber_delta);
  }
  return cost;
}

void Pipeline::retriangulate(ReconstructionState& state) const {
  std::map<std::uint64_t, std::vector<int>> edges_of;
  for (int i = 0; i < static_cast<int>(bundle_.edges.size()); ++i)
    edges_of[pkey(bundle_.edges[i].src_frame, bundle_.edges[i].patch_id)].push_back(i);

  for (MapPatch& mp : state.map) {
    auto it = edges_of.find(pkey(mp.patch.frame_id, mp.patch.patch_id));
    if (it == edges_of.end()) continue;
    const Pose host = state.exported_pose(mp.patch.frame_id);
    double d = mp.patch.inv_depth;
    for (int iter = 0; iter < 8; ++iter) {
      double num = 0, den = 0;
      for (int ei : it->second) {
        const BundleEdge& e = bundle_.edges[ei];
        if (!state.frames[e.dst_frame].registered) continue;
        const Reprojection rep = reproject_with_jacobians(
            state.camera, host, state.exported_pose(e.dst_frame), mp.patch.center, d);
        if (!rep.valid) continue;
        const Vec2 r = rep.pixel - e.observed;
        const double w = e.confidence * robust_weight(r.norm(), config_.huber_delta);
        num += w * rep.d_inv_depth.dot(r);
        den += w * rep.d_inv_depth.squaredNorm();
      }
      if (den <= 0) break;
      d = std::max(d - num / den, 1e-6);
    }
    mp.patch.inv_depth = d;
  }
}

void Pipeline::refine_anchored_frames(ReconstructionState& state) const {
  std::set<std::uint64_t> selected;
  for (const MapPatch& mp : state.map)
    selected.insert(pkey(mp.patch.frame_id, mp.patch.patch_id));

  for (FrameRecord& rec : state.frames) {
    if (!rec.registered || rec.keyframe || rec.anchor_keyframe < 0) continue;
    const int f = rec.frame_id;
    BAWindow w;
    w.camera = state.camera;
    w.mu = 0;
    w.huber_delta = config_.huber_delta;
    w.freeze_depths = true;
    std::set<int> hosts;
    for (const BundleEdge& e : bundle_.edges) {
      if (e.dst_frame != f) continue;
      if (!selected.count(pkey(e.src_frame, e.patch_id))) continue;
      if (!state.frames[e.src_frame].keyframe) continue;
      hosts.insert(e.src_frame);
    }
    if (hosts.empty()) continue;
    for (int h : hosts) {
      w.frames.push_back(h);
      w.poses[h] = state.frames[h].pose;
      w.fixed_frames.insert(h);
    }
    w.frames.push_back(f);
    w.poses[f] = state.exported_pose(f);
    for (const MapPatch& mp : state.map)
      if (hosts.count(mp.patch.frame_id)) w.patches.push_back(mp.patch);
    for (const BundleEdge& e : bundle_.edges) {
      if (e.dst_frame != f || !hosts.count(e.src_frame)) continue;
      if (!selected.count(pkey(e.src_frame, e.patch_id))) continue;
      w.edges.push_back({e.src_frame, e.patch_id, e.dst_frame, e.observed,
                         e.confidence});
    }
    SolveOptions opts;
    opts.max_iterations = 6;
    try {
      solve(w, opts);
      rec.anchor_rel = w.poses.at(f) * state.frames[rec.anchor_keyframe].pose.inverse();
    } catch (const Error&) {
      // keep the stale anchor; the divergence check has the final say
    }
  }
}

double Pipeline::refine_focal_only(ReconstructionState& state) const {
  const double f_init = state.camera.fx;
  for (int iter = 0; iter < 4; ++iter) {
    std::map<std::uint64_t, const MapPatch*> by_key;
    for (const MapPatch& mp : state.map)
      by_key[pkey(mp.patch.frame_id, mp.patch.patch_id)] = &mp;
    double num = 0, den = 0;
    for (const BundleEdge& e : bundle_.edges) {
      auto it = by_key.find(pkey(e.src_frame, e.patch_id));
      if (it == by_key.end()) continue;
      if (!state.frames[e.dst_frame].registered) continue;
      const MapPatch& mp = *it->second;
      const Reprojection rep = reproject_with_jacobians(
          state.camera, state.exported_pose(e.src_frame),
          state.exported_pose(e.dst_frame), mp.patch.center, mp.patch.inv_depth);
      if (!rep.valid) continue;
      const Vec2 r = rep.pixel - e.observed;
      const double w = e.confidence * robust_weight(r.norm(), config_.huber_delta);
      num += w * rep.d_focal.dot(r);
      den += w * rep.d_focal.squaredNorm();
    }
    if (den <= 0) break;
    double f = state.camera.fx - num / den;
    f = std::clamp(f, (1.0 - kFocalBound) * f_init, (1.0 + kFocalBound) * f_init);
    state.camera.fx = state.camera.fy = f;
  }
  return state.camera.fx;
}

void Pipeline::post_refine(ReconstructionState& state, PostRefineMode mode) const {
  if (mode == PostRefineMode::kOff) return;
  const double cost_before = global_cost(state);
  ReconstructionState snapshot = state;

  if (mode == PostRefineMode::kRetriangulate) {
    for (int round = 0; round < 3; ++round) {
      retriangulate(state);
      refine_focal_only(state);
    }
    retriangulate(state);
  } else {
    retriangulate(state);
    // one global adjustment over the keyframes with a shared focal; pure
    // reprojection, matching a classical global bundle adjustment stage
    const std::vector<int> kfs = state.keyframe_ids();
    BAWindow w;
    w.camera = state.camera;
    w.mu = 0;
    w.huber_delta = config_.huber_delta;
    w.optimize_focal = true;
    std::set<int> in_window(kfs.begin(), kfs.end());
    for (int kf : kfs) {
      w.frames.push_back(kf);
      w.poses[kf] = state.frames[kf].pose;
      if (config_.mu > 0 && state.frame_alpha.count(kf))
        w.frame_alpha[kf] = state.frame_alpha.at(kf);
    }
    std::set<std::uint64_t> selected;
    for (const MapPatch& mp : state.map) {
      if (!in_window.count(mp.patch.frame_id)) continue;
      w.patches.push_back(mp.patch);
      selected.insert(pkey(mp.patch.frame_id, mp.patch.patch_id));
      if (mp.prior_depth > 0)
        w.priors.push_back({mp.patch.frame_id, mp.patch.patch_id, mp.prior_depth});
    }
    for (const BundleEdge& e : bundle_.edges) {
      if (!in_window.count(e.src_frame) || !in_window.count(e.dst_frame)) continue;
      if (!selected.count(pkey(e.src_frame, e.patch_id))) continue;
      w.edges.push_back(
          {e.src_frame, e.patch_id, e.dst_frame, e.observed, e.confidence});
    }
    if (kfs.size() >= 2) {
      // gauge: first keyframe pose plus one pinned depth; fixing a second
      // pose would freeze its accumulated error into the refinement
      w.fixed_frames = {kfs[0]};
      for (int i = 0; i < static_cast<int>(w.patches.size()); ++i) {
        if (w.patches[i].frame_id == kfs[0]) {
          w.pinned_patch = i;
          break;
        }
      }
      if (w.pinned_patch < 0 && !w.patches.empty()) w.pinned_patch = 0;
      SolveOptions opts;
      opts.max_iterations = 60;
      try {
        // graduated robustification: frozen-in pose errors leave residuals
        // far outside the tracking-time Huber band
        w.huber_delta = std::max(config_.huber_delta, kInitHuberDelta);
        solve(w, opts);
        w.huber_delta = config_.huber_delta;
        solve(w, opts);
        const double f_init = state.camera.fx;
        double f = std::clamp(w.camera.fx, (1.0 - kFocalBound) * f_init,
                              (1.0 + kFocalBound) * f_init);
        state.camera.fx = state.camera.fy = f;
        for (int kf : kfs) state.frames[kf].pose = w.poses.at(kf);
        std::map<std::uint64_t, double> new_depths;
        for (const Patch& p : w.patches)
          new_depths[pkey(p.frame_id, p.patch_id)] = p.inv_depth;
        for (MapPatch& mp : state.map) {
          auto it = new_depths.find(pkey(mp.patch.frame_id, mp.patch.patch_id));
          if (it != new_depths.end()) mp.patch.inv_depth = it->second;
        }
      } catch (const Error&) {
        // fall through to the divergence check, which restores the snapshot
      }
    }
    refine_anchored_frames(state);
  }

  const double cost_after = global_cost(state);
  Event ev;
  ev.frame = static_cast<int>(bundle_.frames.size()) - 1;
  if (cost_after > cost_before) {
    state = std::move(snapshot);
    ev.type = "refine_diverged";
    ev.data.emplace_back("cost_before", cost_before);
    ev.data.emplace_back("cost_after", cost_after);
  } else {
    ev.type = "post_refine";
    ev.data.emplace_back("cost_before", cost_before);
    ev.data.emplace_back("cost_after", cost_after);
    ev.data.emplace_back("focal_px", state.camera.fx);
  }
  state.events.push_back(ev);
}

ReconstructionState Pipeline::run() {
  ReconstructionState state;
  initialize(state);
  for (int f = 0; f < static_cast<int>(bundle_.frames.size()); ++f) {
    if (state.frames[f].registered) continue;
    process_frame(state, f);
  }
  state.final_cost = global_cost(state);
  post_refine(state, config_.post_refine_mode());
  return state;
}

Trajectory export_trajectory(const ReconstructionState& state,
                             const DatasetBundle& bundle) {
  Trajectory traj;
  for (size_t f = 0; f < state.frames.size(); ++f) {
    TrajectoryPoint p;
    p.frame_id = static_cast<int>(f);
    p.timestamp =
        f < bundle.frames.size() ? bundle.frames[f].timestamp : static_cast<double>(f);
    p.registered = state.frames[f].registered;
    if (p.registered) p.pose = state.exported_pose(static_cast<int>(f));
    traj.points.push_back(p);
  }
  return traj;
}

}  // namespace wildslam
