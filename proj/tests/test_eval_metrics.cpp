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
#include "wildslam/eval_metrics.hpp"

using namespace wildslam;

namespace {

Trajectory from_positions(const std::vector<Vec3>& positions) {
  Trajectory t;
  for (size_t i = 0; i < positions.size(); ++i) {
    TrajectoryPoint p;
    p.timestamp = 0.1 * static_cast<double>(i);
    p.frame_id = static_cast<int>(i);
    p.pose = Pose(Quat::Identity(), -positions[i]);  // center = position
    t.points.push_back(p);
  }
  return t;
}

}  // namespace

TEST_CASE("detect_breaks: constant-speed trajectory has none") {
  std::vector<Vec3> pos;
  for (int i = 0; i < 60; ++i) pos.emplace_back(0.3 * i, 0, 0);
  const BreakReport r = detect_breaks(from_positions(pos));
  CHECK(r.break_indices.empty());
  for (double ratio : r.ratios) CHECK(ratio == doctest::Approx(1.0));
}

TEST_CASE("detect_breaks: one 50x jump is reported at exactly that index") {
  std::vector<Vec3> pos;
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < 80; ++i) {
    pos.push_back(p);
    p.x() += (i == 39) ? 50.0 : 1.0;
  }
  const BreakReport r = detect_breaks(from_positions(pos));
  REQUIRE(r.break_indices.size() == 1);
  CHECK(r.break_indices[0] == 39);
}

TEST_CASE("detect_breaks: invariant under global similarity transforms") {
  CounterRng rng(201, RngStream::kTest);
  std::vector<Vec3> pos;
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < 100; ++i) {
    pos.push_back(p);
    p += Vec3(0.2 + 0.1 * rng.normal(), 0.05 * rng.normal(), 0.3);
    if (i == 20 || i == 70) p += Vec3(30, 0, 0);  // two injected jumps
  }
  const Trajectory base = from_positions(pos);
  const BreakReport r0 = detect_breaks(base);
  const SimPose t(1000.0, so3_exp(Vec3(0.3, -0.2, 1.0)), Vec3(5, -9, 2));
  const BreakReport r1 = detect_breaks(transform_trajectory(base, t));
  CHECK(r0.break_indices == r1.break_indices);
}

TEST_CASE("detect_breaks: pauses do not trigger") {
  std::vector<Vec3> pos;
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < 30; ++i) {
    pos.push_back(p);
    p.x() += 0.2;
  }
  for (int i = 0; i < 30; ++i) pos.push_back(p);  // exact pause
  for (int i = 0; i < 30; ++i) {
    p.x() += 0.2;
    pos.push_back(p);
  }
  const BreakReport r = detect_breaks(from_positions(pos));
  CHECK(r.break_indices.empty());
}

TEST_CASE("count_registered / count_models") {
  std::vector<Vec3> pos;
  for (int i = 0; i < 20; ++i) pos.emplace_back(i, 0, 0);
  Trajectory t = from_positions(pos);
  CHECK(count_registered(t) == 20);
  CHECK(count_models(t) == 1);

  t.points[7].registered = false;  // gap -> two models
  CHECK(count_models(t) == 2);
  CHECK(count_registered(t) == 12);  // frames 8..19
}

TEST_CASE("align_sim3: identity and exact similarity recovery") {
  CounterRng rng(203, RngStream::kTest);
  std::vector<Vec3> pos;
  for (int i = 0; i < 30; ++i)
    pos.emplace_back(rng.normal() * 3, rng.normal() * 2, 0.4 * i);
  const Trajectory ref = from_positions(pos);

  const Alignment self = align_sim3(ref, ref);
  CHECK(self.rmse < 1e-12);
  CHECK(self.transform.s == doctest::Approx(1.0));

  const SimPose truth = oracle::random_simpose(rng);
  const Trajectory est = transform_trajectory(ref, truth.inverse());
  const Alignment fit = align_sim3(est, ref);
  CHECK(fit.rmse < 1e-10);
  CHECK(sim3_log(fit.transform.inverse() * truth).norm() < 1e-9);
}

TEST_CASE("align_sim3: result is a local optimum and beats identity") {
  CounterRng rng(207, RngStream::kTest);
  std::vector<Vec3> pos;
  for (int i = 0; i < 40; ++i)
    pos.emplace_back(rng.normal() * 2, rng.normal(), 0.3 * i);
  const Trajectory ref = from_positions(pos);
  Trajectory est = ref;
  for (auto& p : est.points) {  // sigma = 0.1 position noise
    const Vec3 c = Vec3(-(p.pose.q.conjugate() * p.pose.t)) +
                   0.1 * Vec3(rng.normal(), rng.normal(), rng.normal());
    p.pose = Pose(p.pose.q, -(p.pose.q * c));
  }
  const Alignment fit = align_sim3(est, ref);
  CHECK(fit.rmse <= ate_rmse(est, ref) + 1e-12);  // no worse than identity

  // brute-force oracle: no random similarity perturbation improves the rmse
  auto rmse_of = [&](const SimPose& t) {
    return ate_rmse(transform_trajectory(est, t), ref);
  };
  const double best = rmse_of(fit.transform);
  for (int trial = 0; trial < 300; ++trial) {
    Twist7 d = 0.02 * oracle::random_twist7(rng, 0.5, 0.2);
    CHECK(rmse_of(sim3_exp(d) * fit.transform) >= best - 1e-9);
  }
}

TEST_CASE("ate_rmse: identical and hand-computed drift") {
  CounterRng rng(211, RngStream::kTest);
  std::vector<Vec3> pos;
  for (int i = 0; i < 25; ++i) pos.emplace_back(0.5 * i, 0.1 * i, 0);
  const Trajectory ref = from_positions(pos);
  CHECK(ate_rmse(ref, ref) == 0.0);

  std::vector<Vec3> drifted = pos;
  double expected = 0;
  const Vec3 v(0.3, -0.2, 0.1);
  for (size_t i = 0; i < pos.size(); ++i) {
    const double a = static_cast<double>(i) / pos.size();
    drifted[i] += a * v;
    expected += (a * v).squaredNorm();
  }
  expected = std::sqrt(expected / pos.size());
  CHECK(ate_rmse(from_positions(drifted), ref) ==
        doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("ate after alignment absorbs a constant offset") {
  std::vector<Vec3> pos;
  for (int i = 0; i < 20; ++i) pos.emplace_back(i, std::sin(0.4 * i), 0.2 * i);
  const Trajectory ref = from_positions(pos);
  std::vector<Vec3> shifted = pos;
  for (Vec3& p : shifted) p += Vec3(4, 5, 6);
  const Trajectory est = from_positions(shifted);
  const Alignment fit = align_sim3(est, ref);
  CHECK(fit.rmse < 1e-10);
}

TEST_CASE("rpe basics") {
  CounterRng rng(213, RngStream::kTest);
  Trajectory ref;
  for (int i = 0; i < 30; ++i) {
    TrajectoryPoint p;
    p.frame_id = i;
    p.timestamp = 0.1 * i;
    p.pose = oracle::random_pose(rng);
    ref.points.push_back(p);
  }
  CHECK(rpe(ref, ref, 1) < 1e-14);
  CHECK(rpe(ref, ref, 5) < 1e-14);
  CHECK_THROWS_AS(rpe(ref, ref, 0), InvalidValue);
}

TEST_CASE("metrics raise FrameMismatch without common frames") {
  std::vector<Vec3> a = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {2, 1, 0}};
  Trajectory ta = from_positions(a);
  Trajectory tb = from_positions(a);
  for (auto& p : tb.points) p.frame_id += 100;
  CHECK_THROWS_AS(ate_rmse(ta, tb), FrameMismatch);
  CHECK_THROWS_AS(align_sim3(ta, tb), FrameMismatch);
}
