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

// Test-only reference implementations, deliberately brute force and kept
// independent of the library code paths they check.

#pragma once

#include <Eigen/Dense>

#include "wildslam/geometry.hpp"
#include "wildslam/rng.hpp"

namespace wildslam::oracle {

// exp of an arbitrary 4x4 generator by truncated power series (30 terms).
inline Mat4 matrix_exp_series(const Mat4& m, int terms = 30) {
  Mat4 result = Mat4::Identity();
  Mat4 power = Mat4::Identity();
  for (int n = 1; n <= terms; ++n) {
    power = (power * m).eval() / static_cast<double>(n);
    result += power;
  }
  return result;
}

// se(3) generator: [hat(phi), rho; 0, 0].
inline Mat4 se3_generator(const Twist6& xi) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.tail<3>());
  m.topRightCorner<3, 1>() = xi.head<3>();
  return m;
}

// sim(3) generator: [hat(phi) + sigma I, rho; 0, 0].
inline Mat4 sim3_generator(const Twist7& xi) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<3, 3>() =
      skew(xi.segment<3>(3)) + xi[6] * Mat3::Identity();
  m.topRightCorner<3, 1>() = xi.head<3>();
  return m;
}

inline Twist6 random_twist6(CounterRng& rng, double rot_max = 3.0) {
  Twist6 xi;
  for (int i = 0; i < 3; ++i) xi[i] = rng.uniform(-5.0, 5.0);
  Vec3 phi(rng.normal(), rng.normal(), rng.normal());
  if (phi.norm() < 1e-12) phi = Vec3(1, 0, 0);
  phi = phi.normalized() * rng.uniform(0.0, rot_max);
  xi.tail<3>() = phi;
  return xi;
}

inline Twist7 random_twist7(CounterRng& rng, double rot_max = 3.0,
                            double sigma_max = 1.5) {
  Twist7 xi;
  xi.head<6>() = random_twist6(rng, rot_max);
  xi[6] = rng.uniform(-sigma_max, sigma_max);
  return xi;
}

inline Pose random_pose(CounterRng& rng) { return se3_exp(random_twist6(rng)); }

inline SimPose random_simpose(CounterRng& rng) {
  return sim3_exp(random_twist7(rng));
}

}  // namespace wildslam::oracle
