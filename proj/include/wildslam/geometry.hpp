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

#include <Eigen/Dense>
#include <vector>

#include "wildslam/errors.hpp"

namespace wildslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

// se(3) tangent, ordered [translational rho | rotational phi].
using Twist6 = Eigen::Matrix<double, 6, 1>;
// sim(3) tangent, ordered [rho | phi | log-scale sigma].
using Twist7 = Eigen::Matrix<double, 7, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat7 = Eigen::Matrix<double, 7, 7>;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Rigid transform, world-to-camera: x_cam = R * x_world + t.
struct Pose {
  Quat q = Quat::Identity();
  Vec3 t = Vec3::Zero();

  Pose() = default;
  Pose(const Quat& q_in, const Vec3& t_in) : q(q_in.normalized()), t(t_in) {}

  static Pose identity() { return Pose(); }

  Vec3 act(const Vec3& p) const { return q * p + t; }

  Pose inverse() const {
    Quat qi = q.conjugate();
    return Pose(qi, -(qi * t));
  }

  Pose operator*(const Pose& o) const { return Pose(q * o.q, q * o.t + t); }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = q.toRotationMatrix();
    m.topRightCorner<3, 1>() = t;
    return m;
  }
};

// Similarity transform, world-to-camera: x = s * (R * p) + t, scale s > 0.
struct SimPose {
  double s = 1.0;
  Quat q = Quat::Identity();
  Vec3 t = Vec3::Zero();

  SimPose() = default;
  SimPose(double s_in, const Quat& q_in, const Vec3& t_in)
      : s(s_in), q(q_in.normalized()), t(t_in) {}
  explicit SimPose(const Pose& g) : s(1.0), q(g.q), t(g.t) {}

  static SimPose identity() { return SimPose(); }

  Vec3 act(const Vec3& p) const { return s * (q * p) + t; }

  SimPose inverse() const {
    Quat qi = q.conjugate();
    return SimPose(1.0 / s, qi, -(qi * t) / s);
  }

  SimPose operator*(const SimPose& o) const {
    return SimPose(s * o.s, q * o.q, s * (q * o.t) + t);
  }

  Pose se3_part() const { return Pose(q, t); }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = s * q.toRotationMatrix();
    m.topRightCorner<3, 1>() = t;
    return m;
  }
};

// Pinhole camera, no distortion.
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw InvalidValue("focal length must be positive");
    if (!(cx > 0 && cx < width) || !(cy > 0 && cy < height))
      throw InvalidValue("principal point must lie inside the image");
  }
};

// --- SO(3) -------------------------------------------------------------

Quat so3_exp(const Vec3& phi);

// Principal branch. At rotation angle pi the axis sign is ambiguous; we
// flip it so that the largest-magnitude component is positive, which keeps
// the result deterministic and the tests reproducible.
Vec3 so3_log(const Quat& q);

// --- SE(3) / SIM(3) exponential maps ------------------------------------

Pose se3_exp(const Twist6& xi);
Twist6 se3_log(const Pose& g);

SimPose sim3_exp(const Twist7& xi);
Twist7 sim3_log(const SimPose& s);

// Relative transform taking frame-i camera coordinates to frame-j:
// G_ij = G_j * G_i^{-1}.
inline Pose relative(const Pose& g_i, const Pose& g_j) { return g_j * g_i.inverse(); }
inline SimPose relative(const SimPose& s_i, const SimPose& s_j) {
  return s_j * s_i.inverse();
}

// Adjoint of a group element: exp(Ad_S xi) = S exp(xi) S^{-1}.
Mat7 sim3_adjoint(const SimPose& s);
// Adjoint of a tangent vector (the Lie bracket in matrix form).
Mat7 sim3_ad(const Twist7& xi);

// Inverse left Jacobian of SIM(3): log(exp(d) exp(xi)) ~= xi + Jl^{-1}(xi) d.
// Evaluated as the inverse of the convergent series sum ad^n / (n+1)!,
// exact to machine precision for |xi| below pi-ish magnitudes.
Mat7 sim3_left_jacobian_inv(const Twist7& xi);

// --- Camera model --------------------------------------------------------

constexpr double kMinDepth = 1e-8;

// u = fx x/z + cx, v = fy y/z + cy. Throws DepthNonPositive for z <= 1e-8.
Vec2 project(const CameraIntrinsics& k, const Vec3& p_cam);

// Inverse projection at inverse depth d: returns ((u-cx)/fx, (v-cy)/fy, 1)/d.
Vec3 backproject(const CameraIntrinsics& k, const Vec2& pixel, double inv_depth);

// Maps the patch center observed in frame i into frame j using the hosted
// inverse depth. Throws BehindCamera when the point lands behind camera j;
// callers drop or deweight the edge.
Vec2 reproject_patch(const CameraIntrinsics& k, const Pose& g_i, const Pose& g_j,
                     const Vec2& center, double inv_depth);

// Non-throwing variant for solver hot loops.
struct Reprojection {
  Vec2 pixel = Vec2::Zero();
  bool valid = false;
  // d pixel / d left-tangent of G_i and G_j, and d pixel / d inv_depth.
  Eigen::Matrix<double, 2, 6> d_pose_i = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 6> d_pose_j = Eigen::Matrix<double, 2, 6>::Zero();
  Vec2 d_inv_depth = Vec2::Zero();
  // Derivative w.r.t. a shared focal parameter (fx = fy = f).
  Vec2 d_focal = Vec2::Zero();
};

Reprojection reproject_with_jacobians(const CameraIntrinsics& k, const Pose& g_i,
                                      const Pose& g_j, const Vec2& center,
                                      double inv_depth, bool want_jacobians = true);

// --- Closed-form similarity alignment ------------------------------------

// Fits dst ~= s R src + t in least squares (Umeyama). Throws
// DegenerateCollinear when the source points do not span a plane.
SimPose umeyama_alignment(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

}  // namespace wildslam
