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
#include "wildslam/pose_graph.hpp"

using namespace wildslam;

namespace {

// camera-to-world step: move forward along +z of the local frame, then yaw
Pose forward_step(double dist, double yaw) {
  Twist6 xi = Twist6::Zero();
  xi[2] = dist;
  const Pose move = se3_exp(xi);
  Twist6 rot = Twist6::Zero();
  rot[4] = yaw;
  return move * se3_exp(rot);
}

// Square-ish loop of N world-to-camera keyframe poses.
std::vector<std::pair<int, Pose>> square_loop(int steps_per_side) {
  std::vector<std::pair<int, Pose>> kfs;
  Pose cam_to_world = Pose::identity();
  int id = 0;
  for (int side = 0; side < 4; ++side) {
    for (int s = 0; s < steps_per_side; ++s) {
      kfs.emplace_back(id++, cam_to_world.inverse());
      const double yaw = (s == steps_per_side - 1) ? M_PI / 2 : 0.0;
      cam_to_world = cam_to_world * forward_step(1.0, yaw);
    }
  }
  return kfs;
}

// Independent reference: dense Gauss-Newton with finite-difference
// jacobians over the same cost, same retraction.
void reference_optimize(PoseGraph& g, int iterations) {
  std::vector<int> free_nodes;
  for (size_t i = 0; i < g.nodes.size(); ++i)
    if (!g.nodes[i].fixed) free_nodes.push_back(static_cast<int>(i));
  const int dim = 7 * static_cast<int>(free_nodes.size());
  const double h = 1e-7;
  double lambda = 1e-8;
  double cost = graph_cost(g);
  for (int iter = 0; iter < iterations; ++iter) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(dim, dim);
    // stack sqrt(info)-weighted residuals, differentiate numerically
    auto residual_stack = [&](const PoseGraph& graph) {
      std::map<int, const SimPose*> by_frame;
      for (const Sim3Node& n : graph.nodes) by_frame[n.frame_id] = &n.pose;
      Eigen::VectorXd r(7 * graph.edges.size());
      for (size_t e = 0; e < graph.edges.size(); ++e)
        r.segment<7>(7 * e) =
            std::sqrt(graph.edges[e].information) *
            loop_residual(graph.edges[e], *by_frame.at(graph.edges[e].src),
                          *by_frame.at(graph.edges[e].dst));
      return r;
    };
    const Eigen::VectorXd r0 = residual_stack(g);
    Eigen::MatrixXd jac(r0.size(), dim);
    for (int p = 0; p < dim; ++p) {
      PoseGraph plus = g, minus = g;
      const int node = free_nodes[p / 7];
      Twist7 xi = Twist7::Zero();
      xi[p % 7] = h;
      plus.nodes[node].pose = sim3_exp(xi) * plus.nodes[node].pose;
      minus.nodes[node].pose = sim3_exp(-xi) * minus.nodes[node].pose;
      jac.col(p) = (residual_stack(plus) - residual_stack(minus)) / (2 * h);
    }
    grad = jac.transpose() * r0;
    jtj = jac.transpose() * jac;
    while (true) {
      Eigen::MatrixXd damped = jtj;
      damped.diagonal().array() += lambda;
      const Eigen::VectorXd step = damped.ldlt().solve(-grad);
      PoseGraph candidate = g;
      for (size_t k = 0; k < free_nodes.size(); ++k) {
        const Twist7 xi = step.segment<7>(7 * static_cast<int>(k));
        candidate.nodes[free_nodes[k]].pose =
            sim3_exp(xi) * candidate.nodes[free_nodes[k]].pose;
      }
      const double new_cost = graph_cost(candidate);
      if (new_cost <= cost) {
        g = std::move(candidate);
        cost = new_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        break;
      }
      lambda *= 10;
      if (lambda > 1e10) return;
    }
  }
}

}  // namespace

TEST_CASE("lift: identical poses give an identity odometry edge") {
  const Pose g = se3_exp((Twist6() << 1, 2, 3, 0.2, -0.1, 0.3).finished());
  const PoseGraph graph = lift_trajectory({{0, g}, {1, g}});
  REQUIRE(graph.edges.size() == 1);
  CHECK(sim3_log(graph.edges[0].measurement).norm() < 1e-12);
  CHECK(graph.nodes[0].pose.s == doctest::Approx(1.0));
}

TEST_CASE("lift: straight-line trajectory gives equal odometry translations") {
  std::vector<std::pair<int, Pose>> kfs;
  for (int i = 0; i < 6; ++i) kfs.emplace_back(i, Pose(Quat::Identity(), Vec3(0, 0, -0.5 * i)));
  const PoseGraph graph = lift_trajectory(kfs);
  for (const Sim3Edge& e : graph.edges) {
    CHECK((e.measurement.t - graph.edges[0].measurement.t).norm() < 1e-12);
    CHECK(e.measurement.s == doctest::Approx(1.0));
  }
}

TEST_CASE("lift: odometry residuals are zero at lift time") {
  CounterRng rng(51, RngStream::kTest);
  std::vector<std::pair<int, Pose>> kfs;
  for (int i = 0; i < 8; ++i) kfs.emplace_back(i, oracle::random_pose(rng));
  const PoseGraph graph = lift_trajectory(kfs);
  CHECK(graph_cost(graph) < 1e-20);
}

TEST_CASE("loop_residual: consistent edge gives zero") {
  CounterRng rng(53, RngStream::kTest);
  const SimPose s_i = oracle::random_simpose(rng);
  const SimPose s_j = oracle::random_simpose(rng);
  Sim3Edge e;
  e.measurement = relative(s_i, s_j);
  CHECK(loop_residual(e, s_i, s_j).norm() < 1e-12);
}

TEST_CASE("loop_residual: pure scale offset shows up in the scale channel") {
  CounterRng rng(59, RngStream::kTest);
  const SimPose s_i = SimPose::identity();
  const SimPose s_j = oracle::random_simpose(rng);
  Sim3Edge e;
  e.measurement = relative(s_i, s_j);  // = s_j
  const double sigma = 0.37;
  Twist7 scale_only = Twist7::Zero();
  scale_only[6] = sigma;
  const SimPose s_j_off = s_j * sim3_exp(scale_only);
  const Twist7 r = loop_residual(e, s_i, s_j_off);
  CHECK(r[6] == doctest::Approx(sigma).epsilon(1e-12));
  CHECK(r.head<6>().norm() < 1e-12);
}

TEST_CASE("loop_residual: identity graph residuals vanish") {
  Sim3Edge e;
  CHECK(loop_residual(e, SimPose::identity(), SimPose::identity()).norm() == 0.0);
}

TEST_CASE("pgo jacobians match finite differences") {
  CounterRng rng(61, RngStream::kTest);
  const double h = 1e-7;
  for (int trial = 0; trial < 100; ++trial) {
    const SimPose s_i = oracle::random_simpose(rng);
    const SimPose s_j = oracle::random_simpose(rng);
    Sim3Edge e;
    // keep residual moderate so log stays far from the branch cut
    Twist7 noise = 0.2 * oracle::random_twist7(rng, 1.0, 0.5);
    e.measurement = relative(s_i, s_j) * sim3_exp(noise);
    const ResidualExpansion lin = loop_residual_with_jacobians(e, s_i, s_j);
    for (int axis = 0; axis < 7; ++axis) {
      Twist7 d = Twist7::Zero();
      d[axis] = h;
      const Twist7 fd_j =
          (loop_residual(e, s_i, sim3_exp(d) * s_j) -
           loop_residual(e, s_i, sim3_exp(-d) * s_j)) /
          (2 * h);
      const Twist7 fd_i =
          (loop_residual(e, sim3_exp(d) * s_i, s_j) -
           loop_residual(e, sim3_exp(-d) * s_i, s_j)) /
          (2 * h);
      CHECK((fd_j - lin.d_j.col(axis)).norm() /
                std::max(1.0, lin.d_j.col(axis).norm()) <
            1e-5);
      CHECK((fd_i - lin.d_i.col(axis)).norm() /
                std::max(1.0, lin.d_i.col(axis).norm()) <
            1e-5);
    }
  }
}

TEST_CASE("optimize: consistent graph terminates immediately") {
  CounterRng rng(67, RngStream::kTest);
  std::vector<std::pair<int, Pose>> kfs;
  for (int i = 0; i < 10; ++i) kfs.emplace_back(i, oracle::random_pose(rng));
  PoseGraph graph = lift_trajectory(kfs);
  graph.nodes.back().fixed = true;
  const PgoResult r = optimize(graph);
  CHECK(r.iterations <= 1);
  CHECK(r.final_cost < 1e-20);
}

TEST_CASE("optimize: single free node with one edge hits the closed form") {
  CounterRng rng(71, RngStream::kTest);
  const SimPose s_i = oracle::random_simpose(rng);
  PoseGraph g;
  g.nodes.push_back({0, s_i, true});
  g.nodes.push_back({1, oracle::random_simpose(rng), false});
  Sim3Edge e;
  e.src = 0;
  e.dst = 1;
  e.measurement = oracle::random_simpose(rng);
  g.edges.push_back(e);
  optimize(g);
  // zero residual: S_j = meas * S_i
  const SimPose expected = e.measurement * s_i;
  CHECK(sim3_log(g.nodes[1].pose.inverse() * expected).norm() < 1e-9);
}

TEST_CASE("optimize: square loop with accumulated scale drift") {
  const int steps = 4;  // 16 nodes
  const auto true_kfs = square_loop(steps);
  const int n = static_cast<int>(true_kfs.size());
  const double beta = std::log(1.2) / (n - 1);  // 20% total drift

  // drifted trajectory: relative translations stretched by exp(beta k)
  std::vector<std::pair<int, Pose>> drifted = true_kfs;
  for (int k = 1; k < n; ++k) {
    Pose rel = relative(true_kfs[k - 1].second, true_kfs[k].second);
    rel.t *= std::exp(beta * (k - 1));
    drifted[k].second = rel * drifted[k - 1].second;
  }

  PoseGraph graph = lift_trajectory(drifted);
  graph.nodes.back().fixed = true;  // current loop frame held fixed

  // exact loop edge from covisible points, fit match-side -> query-side
  CounterRng rng(73, RngStream::kTest);
  const int q = n - 1, m = 0;
  const double c_q = std::exp(beta * (q - 1));
  std::vector<Vec3> match_side, query_side;
  for (int i = 0; i < 30; ++i) {
    const Vec3 p(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    match_side.push_back(true_kfs[m].second.act(p));          // old map, scale 1
    query_side.push_back(c_q * true_kfs[q].second.act(p));    // drifted local map
  }
  Sim3Edge loop;
  loop.src = m;
  loop.dst = q;
  loop.measurement = umeyama_alignment(match_side, query_side);
  loop.kind = EdgeKind::kLoop;
  loop.information = 1e8;
  graph.edges.push_back(loop);

  PoseGraph reference = graph;
  const PgoResult r = optimize(graph);
  CHECK(r.loop_residual_before > 0.1);
  CHECK(r.loop_residual_after < 1e-6);

  reference_optimize(reference, 60);
  for (int k = 0; k < n; ++k) {
    CHECK(graph.nodes[k].pose.s ==
          doctest::Approx(reference.nodes[k].pose.s).epsilon(1e-3));
  }

  // after correction, camera centers line up with truth under one similarity
  std::map<int, Pose> poses;
  for (const auto& [id, pose] : drifted) poses[id] = pose;
  std::vector<Patch> no_patches;
  apply_correction(graph, poses, no_patches);
  std::vector<Vec3> est, ref;
  for (int k = 0; k < n; ++k) {
    const Pose& g = poses[k];
    est.push_back(-(g.q.conjugate() * g.t));
    const Pose& t = true_kfs[k].second;
    ref.push_back(-(t.q.conjugate() * t.t));
  }
  const SimPose align = umeyama_alignment(est, ref);
  double rmse = 0;
  for (int k = 0; k < n; ++k) rmse += (align.act(est[k]) - ref[k]).squaredNorm();
  rmse = std::sqrt(rmse / n);
  CHECK(rmse < 0.02);  // scene extent is ~4 units
}

TEST_CASE("residuals are invariant to a global world-frame transform") {
  CounterRng rng(79, RngStream::kTest);
  std::vector<std::pair<int, Pose>> kfs;
  for (int i = 0; i < 6; ++i) kfs.emplace_back(i, oracle::random_pose(rng));
  PoseGraph graph = lift_trajectory(kfs);
  Sim3Edge loop;
  loop.src = 0;
  loop.dst = 5;
  loop.measurement = oracle::random_simpose(rng);
  loop.kind = EdgeKind::kLoop;
  graph.edges.push_back(loop);

  std::map<int, const SimPose*> by_frame;
  std::vector<Twist7> before;
  for (const Sim3Node& node : graph.nodes) by_frame[node.frame_id] = &node.pose;
  for (const Sim3Edge& e : graph.edges)
    before.push_back(loop_residual(e, *by_frame.at(e.src), *by_frame.at(e.dst)));

  const SimPose global = oracle::random_simpose(rng);
  for (Sim3Node& node : graph.nodes) node.pose = node.pose * global;
  for (size_t e = 0; e < graph.edges.size(); ++e) {
    const Twist7 after = loop_residual(graph.edges[e], *by_frame.at(graph.edges[e].src),
                                       *by_frame.at(graph.edges[e].dst));
    CHECK((after - before[e]).norm() < 1e-10);
  }
}

TEST_CASE("optimize rejects graphs without exactly one fixed node") {
  CounterRng rng(83, RngStream::kTest);
  std::vector<std::pair<int, Pose>> kfs;
  for (int i = 0; i < 3; ++i) kfs.emplace_back(i, oracle::random_pose(rng));
  PoseGraph graph = lift_trajectory(kfs);
  CHECK_THROWS_AS(optimize(graph), InvalidValue);
}

TEST_CASE("optimize detects disconnected graphs") {
  PoseGraph g;
  for (int i = 0; i < 4; ++i) g.nodes.push_back({i, SimPose::identity(), i == 0});
  Sim3Edge e;
  e.src = 0;
  e.dst = 1;
  g.edges.push_back(e);  // nodes 2, 3 unreachable
  CHECK_THROWS_AS(optimize(g), DisconnectedGraph);
}

TEST_CASE("apply_correction: unit scales leave the map unchanged") {
  CounterRng rng(89, RngStream::kTest);
  PoseGraph g;
  std::map<int, Pose> poses;
  for (int i = 0; i < 3; ++i) {
    const Pose p = oracle::random_pose(rng);
    poses[i] = p;
    g.nodes.push_back({i, SimPose(p), i == 0});
  }
  std::vector<Patch> patches(2);
  patches[0].frame_id = 1;
  patches[0].inv_depth = 0.5;
  patches[1].frame_id = 2;
  patches[1].inv_depth = 0.25;
  const std::map<int, Pose> before = poses;
  apply_correction(g, poses, patches);
  for (int i = 0; i < 3; ++i)
    CHECK(se3_log(before.at(i).inverse() * poses.at(i)).norm() < 1e-12);
  CHECK(patches[0].inv_depth == doctest::Approx(0.5));
}

TEST_CASE("apply_correction: uniform node scale preserves reprojections") {
  CameraIntrinsics k;
  k.fx = k.fy = 400;
  k.cx = 256;
  k.cy = 144;
  k.width = 512;
  k.height = 288;

  CounterRng rng(97, RngStream::kTest);
  for (double s : {0.5, 1.0, 2.0}) {
    const Pose g0 = oracle::random_pose(rng);
    Twist6 small = 0.05 * oracle::random_twist6(rng, 0.5);
    const Pose g1 = se3_exp(small) * g0;
    Patch patch;
    patch.frame_id = 0;
    patch.center = Vec2(300, 150);
    patch.inv_depth = 0.2;
    const Vec2 before = reproject_patch(k, g0, g1, patch.center, patch.inv_depth);

    PoseGraph graph;
    graph.nodes.push_back({0, SimPose(s, g0.q, g0.t), true});
    graph.nodes.push_back({1, SimPose(s, g1.q, g1.t), false});
    std::map<int, Pose> poses{{0, g0}, {1, g1}};
    std::vector<Patch> patches{patch};
    apply_correction(graph, poses, patches);
    const Vec2 after =
        reproject_patch(k, poses[0], poses[1], patches[0].center, patches[0].inv_depth);
    CHECK((after - before).norm() < 1e-9);
    CHECK(patches[0].inv_depth == doctest::Approx(s * patch.inv_depth));
  }
}
