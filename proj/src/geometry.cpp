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

#include "wildslam/geometry.hpp"

#include <cmath>

namespace wildslam {

namespace {

constexpr double kSmallAngle = 1e-8;   // squared-term threshold for sin/cos Taylor
constexpr double kTaylorTheta = 1e-4;  // switch to series for the V / W blocks

// V = I + (1-cos)/theta^2 hat + (theta-sin)/theta^3 hat^2, the SE(3)
// translation block. Coefficients via Taylor below the branch point.
Mat3 se3_v_matrix(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 hat = skew(phi);
  double a, b;
  if (theta2 < kTaylorTheta * kTaylorTheta) {
    a = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
    b = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + a * hat + b * hat * hat;
}

Mat3 se3_v_inverse(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 hat = skew(phi);
  double c2;
  if (theta2 < kTaylorTheta * kTaylorTheta) {
    c2 = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0;
  } else {
    const double theta = std::sqrt(theta2);
    // (1/theta^2) * (1 - (theta/2) cot(theta/2)); stable through theta = pi.
    c2 = (1.0 - 0.5 * theta * std::cos(0.5 * theta) / std::sin(0.5 * theta)) / theta2;
  }
  return Mat3::Identity() - 0.5 * hat + c2 * hat * hat;
}

// W = integral_0^1 e^{sigma u} exp(hat(phi) u) du, the SIM(3) translation
// block: W = A hat + B hat^2 + C I. Three regimes keep every coefficient
// accurate to ~1e-12: general, small theta (exact sigma), both small.
Mat3 sim3_w_matrix(const Vec3& phi, double sigma) {
  const double theta2 = phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 hat = skew(phi);
  const double s = std::exp(sigma);

  double A, B, C;
  C = (std::abs(sigma) < 1e-12) ? 1.0 + 0.5 * sigma : std::expm1(sigma) / sigma;

  if (theta >= kTaylorTheta) {
    const double a = s * std::sin(theta);
    const double b = s * std::cos(theta);
    const double c = theta2 + sigma * sigma;
    A = (a * sigma + (1.0 - b) * theta) / (theta * c);
    B = (C - ((b - 1.0) * sigma + a * theta) / c) / theta2;
  } else if (std::abs(sigma) >= 1e-2) {
    const double s2 = sigma * sigma;
    const double s3 = s2 * sigma;
    const double s4 = s3 * sigma;
    const double A0 = ((sigma - 1.0) * s + 1.0) / s2;
    const double A2 = (s * (s3 - 3.0 * s2 + 6.0 * sigma - 6.0) + 6.0) / s4;
    const double B0 = (s * (0.5 * s2 - sigma + 1.0) - 1.0) / s3;
    const double B2 = (s * (s4 - 4.0 * s3 + 12.0 * s2 - 24.0 * sigma + 24.0) - 24.0) /
                      (s4 * sigma);
    A = A0 - theta2 / 6.0 * A2;
    B = B0 - theta2 / 24.0 * B2;
  } else {
    // doubly small: series in sigma with theta^2 corrections
    const double sg = sigma;
    A = 1.0 / 2.0 + sg / 3.0 + sg * sg / 8.0 + sg * sg * sg / 30.0 +
        sg * sg * sg * sg / 144.0 + sg * sg * sg * sg * sg / 840.0 -
        theta2 * (1.0 / 24.0 + sg / 30.0 + sg * sg / 72.0);
    B = 1.0 / 6.0 + sg / 8.0 + sg * sg / 20.0 + sg * sg * sg / 72.0 +
        sg * sg * sg * sg / 336.0 -
        theta2 * (1.0 / 120.0 + sg / 144.0 + sg * sg / 336.0);
  }
  return A * hat + B * hat * hat + C * Mat3::Identity();
}

}  // namespace

Quat so3_exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  double half_sinc;  // sin(theta/2)/theta
  double w;
  if (theta2 < kSmallAngle * kSmallAngle) {
    half_sinc = 0.5 - theta2 / 48.0;
    w = 1.0 - theta2 / 8.0;
  } else {
    const double theta = std::sqrt(theta2);
    half_sinc = std::sin(0.5 * theta) / theta;
    w = std::cos(0.5 * theta);
  }
  Quat q(w, half_sinc * phi.x(), half_sinc * phi.y(), half_sinc * phi.z());
  q.normalize();
  return q;
}

Vec3 so3_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  Vec3 v(q.x(), q.y(), q.z());
  const double n = v.norm();
  const double w = q.w();
  if (n < kSmallAngle) {
    return v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w));
  }
  const double theta = 2.0 * std::atan2(n, w);
  Vec3 phi = v * (theta / n);
  if (w < 1e-9) {
    // angle ~ pi: pick the branch with positive dominant axis component
    int idx = 0;
    phi.cwiseAbs().maxCoeff(&idx);
    if (phi[idx] < 0) phi = -phi;
  }
  return phi;
}

Pose se3_exp(const Twist6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return Pose(so3_exp(phi), se3_v_matrix(phi) * rho);
}

Twist6 se3_log(const Pose& g) {
  Twist6 xi;
  const Vec3 phi = so3_log(g.q);
  xi.tail<3>() = phi;
  xi.head<3>() = se3_v_inverse(phi) * g.t;
  return xi;
}

SimPose sim3_exp(const Twist7& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.segment<3>(3);
  const double sigma = xi[6];
  return SimPose(std::exp(sigma), so3_exp(phi), sim3_w_matrix(phi, sigma) * rho);
}

Twist7 sim3_log(const SimPose& s) {
  if (!(s.s > 0)) throw InvalidValue("sim3_log: scale must be positive");
  Twist7 xi;
  const double sigma = std::log(s.s);
  const Vec3 phi = so3_log(s.q);
  xi.segment<3>(3) = phi;
  xi[6] = sigma;
  xi.head<3>() = sim3_w_matrix(phi, sigma).partialPivLu().solve(s.t);
  return xi;
}

Mat7 sim3_adjoint(const SimPose& s) {
  Mat7 adj = Mat7::Zero();
  const Mat3 r = s.q.toRotationMatrix();
  adj.topLeftCorner<3, 3>() = s.s * r;
  adj.block<3, 3>(0, 3) = skew(s.t) * r;
  adj.block<3, 1>(0, 6) = -s.t;
  adj.block<3, 3>(3, 3) = r;
  adj(6, 6) = 1.0;
  return adj;
}

Mat7 sim3_ad(const Twist7& xi) {
  Mat7 ad = Mat7::Zero();
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.segment<3>(3);
  const double sigma = xi[6];
  ad.topLeftCorner<3, 3>() = skew(phi) + sigma * Mat3::Identity();
  ad.block<3, 3>(0, 3) = skew(rho);
  ad.block<3, 1>(0, 6) = -rho;
  ad.block<3, 3>(3, 3) = skew(phi);
  return ad;
}

Mat7 sim3_left_jacobian_inv(const Twist7& xi) {
  const Mat7 ad = sim3_ad(xi);
  Mat7 jl = Mat7::Identity();
  Mat7 term = Mat7::Identity();
  for (int n = 1; n <= 24; ++n) {
    term = (term * ad).eval() / static_cast<double>(n);
    jl += term / static_cast<double>(n + 1);  // ad^n / (n+1)!
  }
  return jl.partialPivLu().inverse();
}

Vec2 project(const CameraIntrinsics& k, const Vec3& p_cam) {
  if (p_cam.z() <= kMinDepth) throw DepthNonPositive("project: point depth <= 1e-8");
  return Vec2(k.fx * p_cam.x() / p_cam.z() + k.cx, k.fy * p_cam.y() / p_cam.z() + k.cy);
}

Vec3 backproject(const CameraIntrinsics& k, const Vec2& pixel, double inv_depth) {
  if (inv_depth <= kMinDepth)
    throw DepthNonPositive("backproject: inverse depth <= 1e-8");
  return Vec3((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0) / inv_depth;
}

Vec2 reproject_patch(const CameraIntrinsics& k, const Pose& g_i, const Pose& g_j,
                     const Vec2& center, double inv_depth) {
  const Reprojection r = reproject_with_jacobians(k, g_i, g_j, center, inv_depth, false);
  if (!r.valid) throw BehindCamera("reproject_patch: point behind destination camera");
  return r.pixel;
}

Reprojection reproject_with_jacobians(const CameraIntrinsics& k, const Pose& g_i,
                                      const Pose& g_j, const Vec2& center,
                                      double inv_depth, bool want_jacobians) {
  Reprojection out;
  if (inv_depth <= kMinDepth) return out;

  const Vec3 x_i((center.x() - k.cx) / k.fx / inv_depth,
                 (center.y() - k.cy) / k.fy / inv_depth, 1.0 / inv_depth);
  const Pose g_ij = relative(g_i, g_j);
  const Vec3 x_j = g_ij.act(x_i);
  if (x_j.z() <= kMinDepth) return out;

  const double iz = 1.0 / x_j.z();
  out.pixel = Vec2(k.fx * x_j.x() * iz + k.cx, k.fy * x_j.y() * iz + k.cy);
  out.valid = true;
  if (!want_jacobians) return out;

  Eigen::Matrix<double, 2, 3> dp;  // d pixel / d x_j
  dp << k.fx * iz, 0, -k.fx * x_j.x() * iz * iz, 0, k.fy * iz,
      -k.fy * x_j.y() * iz * iz;

  // Left-multiplicative retraction G <- exp(xi) G on both poses.
  Eigen::Matrix<double, 3, 6> dx_j;
  dx_j.leftCols<3>() = Mat3::Identity();
  dx_j.rightCols<3>() = -skew(x_j);
  out.d_pose_j = dp * dx_j;

  const Mat3 r_ij = g_ij.q.toRotationMatrix();
  Eigen::Matrix<double, 3, 6> dx_i;
  dx_i.leftCols<3>() = Mat3::Identity();
  dx_i.rightCols<3>() = -skew(x_i);
  out.d_pose_i = -dp * r_ij * dx_i;

  out.d_inv_depth = dp * (r_ij * (-x_i / inv_depth));

  // fx = fy = f: pixel depends on f through the projection and through the
  // backprojected ray (x_i, y_i scale as 1/f).
  const Vec2 ray_d(-(center.x() - k.cx) / (k.fx * k.fx) / inv_depth,
                   -(center.y() - k.cy) / (k.fy * k.fy) / inv_depth);
  Vec3 dxi_df(ray_d.x(), ray_d.y(), 0.0);
  out.d_focal = Vec2(x_j.x() * iz, x_j.y() * iz) + dp * (r_ij * dxi_df);
  return out;
}

SimPose umeyama_alignment(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size()) throw FrameMismatch("umeyama: size mismatch");
  const int n = static_cast<int>(src.size());
  if (n < 3) throw DegenerateCollinear("umeyama: need at least 3 points");

  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= n;
  mu_d /= n;

  Mat3 cov = Mat3::Zero();
  double var_s = 0;
  for (int i = 0; i < n; ++i) {
    const Vec3 a = src[i] - mu_s;
    const Vec3 b = dst[i] - mu_d;
    cov += b * a.transpose();
    var_s += a.squaredNorm();
  }
  cov /= n;
  var_s /= n;

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv(1) < 1e-12 * std::max(sv(0), 1e-300) || var_s < 1e-24)
    throw DegenerateCollinear("umeyama: source points are (near-)collinear");

  Mat3 d = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) d(2, 2) = -1;
  const Mat3 rot = svd.matrixU() * d * svd.matrixV().transpose();
  const double scale = (sv(0) * d(0, 0) + sv(1) * d(1, 1) + sv(2) * d(2, 2)) / var_s;
  if (!(scale > 0)) throw DegenerateCollinear("umeyama: non-positive scale");
  const Vec3 t = mu_d - scale * (rot * mu_s);
  return SimPose(scale, Quat(rot), t);
}

}  // namespace wildslam
