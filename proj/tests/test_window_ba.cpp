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

#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "wildslam/window_ba.hpp"

using namespace wildslam;

namespace {

CameraIntrinsics test_camera() {
  CameraIntrinsics k;
  k.fx = k.fy = 400;
  k.cx = 256;
  k.cy = 144;
  k.width = 512;
  k.height = 288;
  return k;
}

struct TestScene {
  BAWindow window;
  std::map<int, Pose> gt_poses;
  std::vector<double> gt_inv_depths;  // parallel to window.patches
};

// Forward-ish trajectory looking at a cloud of points in front of frame 0.
// Patches host exact landmark projections; edges carry optional pixel noise.
TestScene make_scene(std::uint64_t seed, int n_frames, int n_patches,
                     double pixel_noise, bool with_priors, bool pure_rotation = false,
                     double scale = 1.0) {
  CounterRng rng(seed, RngStream::kTest);
  TestScene scene;
  BAWindow& w = scene.window;
  w.camera = test_camera();

  for (int f = 0; f < n_frames; ++f) {
    Twist6 xi = Twist6::Zero();
    if (pure_rotation) {
      xi[4] = 0.05 * f;  // yaw
    } else {
      xi[0] = -0.25 * f * scale;  // sideways sweep keeps parallax strong
      xi[2] = -0.1 * f * scale;
      xi[4] = 0.02 * f;
    }
    const Pose g = se3_exp(xi);
    w.frames.push_back(f);
    w.poses[f] = g;
    scene.gt_poses[f] = g;
  }

  std::vector<Vec3> landmarks;
  for (int i = 0; i < n_patches; ++i) {
    landmarks.emplace_back(rng.uniform(-4, 4) * scale, rng.uniform(-2.5, 2.5) * scale,
                           rng.uniform(5, 14) * scale);
  }

  for (int i = 0; i < n_patches; ++i) {
    const int host = i % n_frames;
    const Vec3 in_host = scene.gt_poses[host].act(landmarks[i]);
    if (in_host.z() < 0.5 * scale) continue;
    const Vec2 center = project(w.camera, in_host);
    if (center.x() < 8 || center.x() > w.camera.width - 8 || center.y() < 8 ||
        center.y() > w.camera.height - 8)
      continue;
    Patch p;
    p.frame_id = host;
    p.patch_id = i;
    p.center = center;
    p.inv_depth = 1.0 / in_host.z();
    w.patches.push_back(p);
    scene.gt_inv_depths.push_back(p.inv_depth);

    if (with_priors) {
      w.priors.push_back({host, i, in_host.z()});
    }

    for (int f = 0; f < n_frames; ++f) {
      if (f == host) continue;
      const Vec3 in_f = scene.gt_poses[f].act(landmarks[i]);
      if (in_f.z() < 0.5 * scale) continue;
      const Vec2 obs = project(w.camera, in_f);
      if (obs.x() < 0 || obs.x() > w.camera.width || obs.y() < 0 ||
          obs.y() > w.camera.height)
        continue;
      CorrespondenceEdge e;
      e.src_frame = host;
      e.patch_id = i;
      e.dst_frame = f;
      e.observed = obs + pixel_noise * Vec2(rng.normal(), rng.normal());
      w.edges.push_back(e);
    }
  }
  if (with_priors) {
    for (int f = 0; f < n_frames; ++f) w.frame_alpha[f] = 1.0;
  }
  return scene;
}

void perturb(TestScene& scene, CounterRng& rng, double rot, double trans,
             double depth_factor) {
  for (int f : scene.window.frames) {
    if (scene.window.fixed_frames.count(f)) continue;
    Twist6 xi;
    for (int i = 0; i < 3; ++i) xi[i] = rng.uniform(-trans, trans);
    for (int i = 3; i < 6; ++i) xi[i] = rng.uniform(-rot, rot);
    scene.window.poses[f] = se3_exp(xi) * scene.window.poses[f];
  }
  for (Patch& p : scene.window.patches)
    p.inv_depth *= std::pow(depth_factor, rng.uniform(-1, 1));
}

}  // namespace

TEST_CASE("align_prior_scale: constant medians") {
  CHECK(align_prior_scale({4, 4, 4}, {0.5, 0.5}) == doctest::Approx(2.0));
}

TEST_CASE("align_prior_scale: median arithmetic") {
  // priors {2,4,6}, patch depths {1,2,3}
  CHECK(align_prior_scale({2, 4, 6}, {1.0, 0.5, 1.0 / 3.0}) == doctest::Approx(2.0));
}

TEST_CASE("align_prior_scale: scaling priors scales alpha exactly") {
  CounterRng rng(3, RngStream::kTest);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> priors, invs;
    const int n = 1 + rng.next_int(20);
    for (int i = 0; i < n; ++i) priors.push_back(rng.uniform(0.5, 20));
    for (int i = 0; i < 1 + rng.next_int(20); ++i) invs.push_back(rng.uniform(0.05, 2));
    const double c = rng.uniform(0.1, 10);
    std::vector<double> scaled = priors;
    for (double& p : scaled) p *= c;
    const double a = align_prior_scale(priors, invs);
    const double a_scaled = align_prior_scale(scaled, invs);
    CHECK(a_scaled == doctest::Approx(c * a).epsilon(1e-12));
  }
}

TEST_CASE("align_prior_scale: empty history throws") {
  CHECK_THROWS_AS(align_prior_scale({}, {0.5}), EmptyHistory);
  CHECK_THROWS_AS(align_prior_scale({1.0}, {}), EmptyHistory);
}

TEST_CASE("robust_weight definition") {
  CHECK(robust_weight(0.0, 2.0) == doctest::Approx(1.0));
  CHECK(robust_weight(2.0, 2.0) == doctest::Approx(1.0));
  CHECK(robust_weight(4.0, 2.0) == doctest::Approx(0.5));
}

TEST_CASE("residual_reprojection: perfect edge and shifted observation") {
  TestScene scene = make_scene(5, 4, 12, 0.0, false);
  REQUIRE(!scene.window.edges.empty());
  const CorrespondenceEdge& e = scene.window.edges.front();
  const ReprojectionResidual exact = residual_reprojection(e, scene.window);
  CHECK(exact.active);
  CHECK(exact.r.norm() < 1e-9);

  CorrespondenceEdge shifted = e;
  shifted.observed -= Vec2(1, 0);  // r = predicted - observed
  const ReprojectionResidual r1 = residual_reprojection(shifted, scene.window);
  CHECK(r1.r.x() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r1.r.y() == doctest::Approx(0.0));
}

TEST_CASE("residual_reprojection total matches independent recomputation") {
  TestScene scene = make_scene(7, 5, 30, 0.7, false);
  double total = 0;
  for (const CorrespondenceEdge& e : scene.window.edges) {
    const ReprojectionResidual r = residual_reprojection(e, scene.window);
    if (r.active) total += r.r.squaredNorm();
  }
  // independent evaluation straight from the geometry primitives
  double expected = 0;
  for (const CorrespondenceEdge& e : scene.window.edges) {
    const Patch* patch = nullptr;
    for (const Patch& p : scene.window.patches)
      if (p.frame_id == e.src_frame && p.patch_id == e.patch_id) patch = &p;
    REQUIRE(patch != nullptr);
    try {
      const Vec2 px =
          reproject_patch(scene.window.camera, scene.window.poses.at(e.src_frame),
                          scene.window.poses.at(e.dst_frame), patch->center,
                          patch->inv_depth);
      expected += (px - e.observed).squaredNorm();
    } catch (const BehindCamera&) {
    }
  }
  CHECK(total == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("residual_depth examples") {
  CHECK(residual_depth(0.25, 4.0, 1.0, 0.5, DepthResidualSpace::kInverse) ==
        doctest::Approx(0.0));
  CHECK(residual_depth(0.7, 3.0, 2.0, 0.0, DepthResidualSpace::kInverse) ==
        doctest::Approx(0.0));
  // mu = 0.25, inv_depth = 0.5, alpha*D = 4 -> 0.5 * (0.5 - 0.25) = 0.125
  CHECK(residual_depth(0.5, 4.0, 1.0, 0.25, DepthResidualSpace::kInverse) ==
        doctest::Approx(0.125));
}

TEST_CASE("depth residual jacobian matches finite differences") {
  const double h = 1e-7;
  for (DepthResidualSpace space :
       {DepthResidualSpace::kInverse, DepthResidualSpace::kMetric}) {
    for (double d : {0.1, 0.5, 1.4}) {
      const double mu = 0.3, target = 3.0, alpha = 1.7;
      const double fd = (residual_depth(d + h, target, alpha, mu, space) -
                         residual_depth(d - h, target, alpha, mu, space)) /
                        (2 * h);
      const double analytic = space == DepthResidualSpace::kInverse
                                  ? std::sqrt(mu)
                                  : -std::sqrt(mu) / (d * d);
      CHECK(fd == doctest::Approx(analytic).epsilon(1e-5));
    }
  }
}

TEST_CASE("solve: zero-noise window recovers ground truth") {
  TestScene scene = make_scene(11, 6, 60, 0.0, false);
  scene.window.mu = 0;
  scene.window.fixed_frames = {0, 1};
  CounterRng rng(13, RngStream::kTest);
  perturb(scene, rng, 0.02, 0.05, 1.1);

  SolveOptions opts;
  opts.max_iterations = 30;
  const SolveResult result = solve(scene.window, opts);
  CHECK(result.final_cost < 1e-10);
  for (int f : scene.window.frames) {
    const double err =
        se3_log(scene.window.poses[f].inverse() * scene.gt_poses[f]).norm();
    CHECK(err < 1e-6);
  }
}

TEST_CASE("solve: pure rotation with priors recovers depths") {
  TestScene scene = make_scene(17, 5, 40, 0.0, true, true);
  scene.window.mu = 0.05;
  scene.window.fixed_frames = {0};
  CounterRng rng(19, RngStream::kTest);
  for (Patch& p : scene.window.patches) p.inv_depth *= rng.uniform(0.8, 1.25);

  SolveOptions opts;
  opts.max_iterations = 40;
  solve(scene.window, opts);
  for (size_t i = 0; i < scene.window.patches.size(); ++i) {
    CHECK(scene.window.patches[i].inv_depth ==
          doctest::Approx(scene.gt_inv_depths[i]).epsilon(0.01));
  }
}

TEST_CASE("solve: under-determined window throws NotEnoughConstraints") {
  BAWindow w;
  w.camera = test_camera();
  w.frames = {0, 1};
  w.poses[0] = Pose::identity();
  w.poses[1] = Pose::identity();
  w.fixed_frames = {0};
  w.mu = 0;
  Patch p;
  p.frame_id = 0;
  p.patch_id = 0;
  p.center = Vec2(256, 144);
  w.patches.push_back(p);
  w.edges.push_back({0, 0, 1, Vec2(250, 140), 1.0});
  CHECK_THROWS_AS(solve(w), NotEnoughConstraints);
}

TEST_CASE("schur step equals dense normal-equations step") {
  CounterRng rng(23, RngStream::kTest);
  for (int trial = 0; trial < 20; ++trial) {
    const int n_frames = 3 + rng.next_int(3);     // <= 5
    const int n_patches = 8 + rng.next_int(13);   // <= 20
    TestScene scene =
        make_scene(100 + trial, n_frames, n_patches, 0.5, trial % 2 == 0);
    BAWindow& w = scene.window;
    w.mu = trial % 2 == 0 ? 0.1 : 0.0;
    w.fixed_frames = {0, 1};
    CounterRng prng(31 + trial, RngStream::kTest);
    perturb(scene, prng, 0.01, 0.02, 1.05);

    const WindowIndex idx = build_index(w);
    const double lambda = std::pow(10.0, rng.uniform(-5, -1));
    const StepResult schur = compute_damped_step(w, idx, lambda);
    REQUIRE(schur.ok);

    // dense oracle: assemble the full (pose + depth) normal equations from
    // the public primitives and solve them in one piece
    const int np = idx.pose_dim();
    const int nd = idx.depth_dim();
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(np + nd, np + nd);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(np + nd);
    for (const CorrespondenceEdge& e : w.edges) {
      int patch_idx = -1;
      for (int i = 0; i < static_cast<int>(w.patches.size()); ++i)
        if (w.patches[i].frame_id == e.src_frame && w.patches[i].patch_id == e.patch_id)
          patch_idx = i;
      REQUIRE(patch_idx >= 0);
      const Patch& patch = w.patches[patch_idx];
      const Reprojection rep =
          reproject_with_jacobians(w.camera, w.poses.at(e.src_frame),
                                   w.poses.at(e.dst_frame), patch.center, patch.inv_depth);
      if (!rep.valid) continue;
      const Vec2 r = rep.pixel - e.observed;
      const double weight = e.confidence * robust_weight(r.norm(), w.huber_delta);

      // stack jacobian columns for this edge
      std::vector<std::pair<int, Eigen::Matrix<double, 2, Eigen::Dynamic>>> cols;
      auto src_it = idx.frame_block.find(e.src_frame);
      auto dst_it = idx.frame_block.find(e.dst_frame);
      if (src_it != idx.frame_block.end())
        cols.emplace_back(6 * src_it->second, rep.d_pose_i);
      if (dst_it != idx.frame_block.end())
        cols.emplace_back(6 * dst_it->second, rep.d_pose_j);
      if (idx.patch_param[patch_idx] >= 0)
        cols.emplace_back(np + idx.patch_param[patch_idx], rep.d_inv_depth);
      for (const auto& [ci, ji] : cols) {
        b.segment(ci, ji.cols()) += weight * ji.transpose() * r;
        for (const auto& [cj, jj] : cols)
          h.block(ci, cj, ji.cols(), jj.cols()) += weight * ji.transpose() * jj;
      }
    }
    if (w.mu > 0) {
      for (const DepthPrior& prior : w.priors) {
        int patch_idx = -1;
        for (int i = 0; i < static_cast<int>(w.patches.size()); ++i)
          if (w.patches[i].frame_id == prior.frame_id &&
              w.patches[i].patch_id == prior.patch_id)
            patch_idx = i;
        if (patch_idx < 0 || idx.patch_param[patch_idx] < 0) continue;
        if (!w.frame_alpha.count(prior.frame_id)) continue;
        const double target = w.frame_alpha.at(prior.frame_id) * prior.prior_depth;
        const double d = w.patches[patch_idx].inv_depth;
        const double rd = std::sqrt(w.mu) * (d - 1.0 / target);
        const double jd = std::sqrt(w.mu);
        const int col = np + idx.patch_param[patch_idx];
        h(col, col) += jd * jd;
        b(col) += jd * rd;
      }
    }
    for (int i = 0; i < np + nd; ++i)
      h(i, i) += lambda * std::max(h(i, i), kDampingDiagFloor);
    const Eigen::VectorXd dense = h.ldlt().solve(-b);

    CHECK((schur.pose_step - dense.head(np)).norm() < 1e-8);
    CHECK((schur.depth_step - dense.tail(nd)).norm() < 1e-8);
  }
}

TEST_CASE("accepted steps never increase the robust cost") {
  TestScene scene = make_scene(37, 6, 50, 1.5, true);
  scene.window.mu = 0.05;
  scene.window.fixed_frames = {0, 1};
  CounterRng rng(41, RngStream::kTest);
  perturb(scene, rng, 0.03, 0.08, 1.2);

  double prev = evaluate_cost(scene.window);
  for (int i = 0; i < 8; ++i) {
    SolveOptions opts;
    opts.max_iterations = 1;
    const SolveResult r = solve(scene.window, opts);
    CHECK(r.final_cost <= prev + 1e-9);
    prev = r.final_cost;
  }
}

TEST_CASE("scale equivariance of the solution") {
  // Moderate factor: the minimizer is exactly equivariant, but inverse-depth
  // curvature shrinks as 1/c^4 in pixel units, so huge c values push the
  // scale direction below double precision in the normal equations.
  const double c = 16.0;
  TestScene base = make_scene(43, 5, 40, 0.0, true, false, 1.0);
  TestScene big = make_scene(43, 5, 40, 0.0, true, false, c);
  REQUIRE(base.window.patches.size() == big.window.patches.size());

  for (TestScene* s : {&base, &big}) {
    s->window.mu = 2.0;
    s->window.fixed_frames = {0};
  }
  // identical relative perturbations
  for (size_t i = 0; i < base.window.patches.size(); ++i) {
    base.window.patches[i].inv_depth *= 1.1;
    big.window.patches[i].inv_depth *= 1.1;
  }
  CounterRng rng(47, RngStream::kTest);
  for (int f : base.window.frames) {
    if (base.window.fixed_frames.count(f)) continue;
    Twist6 xi;
    for (int i = 0; i < 3; ++i) xi[i] = rng.uniform(-0.02, 0.02);
    for (int i = 3; i < 6; ++i) xi[i] = rng.uniform(-0.01, 0.01);
    base.window.poses[f] = se3_exp(xi) * base.window.poses[f];
    Twist6 xi_big = xi;
    xi_big.head<3>() *= c;
    big.window.poses[f] = se3_exp(xi_big) * big.window.poses[f];
  }

  SolveOptions opts;
  opts.max_iterations = 150;
  for (int round = 0; round < 2; ++round) {
    solve(base.window, opts);
    solve(big.window, opts);
  }

  for (int f : base.window.frames) {
    const Pose& a = base.window.poses[f];
    const Pose& b = big.window.poses[f];
    CHECK(a.q.angularDistance(b.q) < 1e-8);
    CHECK((c * a.t - b.t).norm() / std::max(1.0, c * a.t.norm()) < 1e-8);
  }
  for (size_t i = 0; i < base.window.patches.size(); ++i) {
    const double da = 1.0 / base.window.patches[i].inv_depth;
    const double db = 1.0 / big.window.patches[i].inv_depth;
    CHECK(db == doctest::Approx(c * da).epsilon(1e-8));
  }
}

TEST_CASE("joint focal refinement recovers a perturbed focal length") {
  TestScene scene = make_scene(53, 6, 60, 0.0, false);
  BAWindow& w = scene.window;
  w.mu = 0;
  w.fixed_frames = {0, 1};
  w.optimize_focal = true;
  w.camera.fx = w.camera.fy = 400 * 1.05;  // 5 percent off

  SolveOptions opts;
  opts.max_iterations = 60;
  const SolveResult r = solve(w, opts);
  CHECK(w.camera.fx == doctest::Approx(400.0).epsilon(1e-3));
  CHECK(r.final_cost < 1e-8);
}
