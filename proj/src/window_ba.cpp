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

#include "wildslam/window_ba.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>

namespace wildslam {

namespace {

constexpr double kInvDepthClamp = 1e-6;

double median_of(std::vector<double> v) {
  const size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double upper = v[n / 2];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + n / 2);
  return 0.5 * (lower + upper);
}

struct ResolvedEdge {
  int patch_idx;
  int src_frame, dst_frame;
  int src_block, dst_block;  // -1 when the pose is fixed
  Vec2 observed;
  double confidence;
};

struct ResolvedPrior {
  int patch_idx;
  double target;  // alpha * D
};

struct Resolved {
  std::vector<ResolvedEdge> edges;
  std::vector<ResolvedPrior> priors;
};

std::uint64_t patch_key(int frame, int patch) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(frame)) << 32) |
         static_cast<std::uint32_t>(patch);
}

Resolved resolve(const BAWindow& w, const WindowIndex& idx) {
  std::unordered_map<std::uint64_t, int> patch_index;
  patch_index.reserve(w.patches.size());
  for (int i = 0; i < static_cast<int>(w.patches.size()); ++i)
    patch_index.emplace(patch_key(w.patches[i].frame_id, w.patches[i].patch_id), i);

  auto block_of = [&](int frame) {
    auto it = idx.frame_block.find(frame);
    return it == idx.frame_block.end() ? -1 : it->second;
  };

  Resolved out;
  out.edges.reserve(w.edges.size());
  for (const CorrespondenceEdge& e : w.edges) {
    auto pit = patch_index.find(patch_key(e.src_frame, e.patch_id));
    if (pit == patch_index.end())
      throw InvalidValue("window edge references a patch outside the window");
    if (!w.poses.count(e.src_frame) || !w.poses.count(e.dst_frame))
      throw InvalidValue("window edge references a frame outside the window");
    out.edges.push_back({pit->second, e.src_frame, e.dst_frame, block_of(e.src_frame),
                         block_of(e.dst_frame), e.observed, e.confidence});
  }

  if (w.mu > 0) {
    for (const DepthPrior& p : w.priors) {
      auto pit = patch_index.find(patch_key(p.frame_id, p.patch_id));
      if (pit == patch_index.end()) continue;
      auto ait = w.frame_alpha.find(p.frame_id);
      if (ait == w.frame_alpha.end()) continue;  // alpha unset: term omitted
      if (!(p.prior_depth > 0)) continue;
      out.priors.push_back({pit->second, ait->second * p.prior_depth});
    }
  }
  return out;
}

struct Linearization {
  Eigen::MatrixXd h_pp;  // poses plus the optional trailing focal column
  Eigen::VectorXd b_p;
  std::vector<double> h_dd, b_d;
  // per free patch: accumulated pose-depth couplings, keyed by pose block
  std::vector<std::vector<std::pair<int, Eigen::Matrix<double, 6, 1>>>> h_pd;
  std::vector<double> h_fd;  // focal-depth coupling per free patch
};

void add_coupling(std::vector<std::pair<int, Eigen::Matrix<double, 6, 1>>>& list,
                  int block, const Eigen::Matrix<double, 6, 1>& v) {
  for (auto& [b, acc] : list) {
    if (b == block) {
      acc += v;
      return;
    }
  }
  list.emplace_back(block, v);
}

Linearization linearize(const BAWindow& w, const WindowIndex& idx, const Resolved& res,
                        std::vector<double>* edge_weights,
                        std::vector<std::uint8_t>* edge_active) {
  Linearization lin;
  const int np = idx.pose_dim();
  const int nd = idx.depth_dim();
  lin.h_pp = Eigen::MatrixXd::Zero(np, np);
  lin.b_p = Eigen::VectorXd::Zero(np);
  lin.h_dd.assign(nd, 0.0);
  lin.b_d.assign(nd, 0.0);
  lin.h_pd.assign(nd, {});
  lin.h_fd.assign(nd, 0.0);
  const int nf = idx.has_focal ? np - 1 : -1;

  for (size_t ei = 0; ei < res.edges.size(); ++ei) {
    const ResolvedEdge& e = res.edges[ei];
    const Patch& patch = w.patches[e.patch_idx];
    const Reprojection rep =
        reproject_with_jacobians(w.camera, w.poses.at(e.src_frame),
                                 w.poses.at(e.dst_frame), patch.center, patch.inv_depth);
    if (!rep.valid) {
      if (edge_weights) (*edge_weights)[ei] = 0.0;
      if (edge_active) (*edge_active)[ei] = 0;
      continue;
    }
    const Vec2 r = rep.pixel - e.observed;
    const double weight = e.confidence * robust_weight(r.norm(), w.huber_delta);
    if (edge_weights) (*edge_weights)[ei] = weight;
    if (edge_active) (*edge_active)[ei] = 1;
    if (weight <= 0) continue;

    const int dparam = idx.patch_param[e.patch_idx];
    if (e.src_block >= 0) {
      const auto& j = rep.d_pose_i;
      lin.h_pp.block<6, 6>(6 * e.src_block, 6 * e.src_block) +=
          weight * j.transpose() * j;
      lin.b_p.segment<6>(6 * e.src_block) += weight * j.transpose() * r;
    }
    if (e.dst_block >= 0) {
      const auto& j = rep.d_pose_j;
      lin.h_pp.block<6, 6>(6 * e.dst_block, 6 * e.dst_block) +=
          weight * j.transpose() * j;
      lin.b_p.segment<6>(6 * e.dst_block) += weight * j.transpose() * r;
    }
    if (e.src_block >= 0 && e.dst_block >= 0) {
      const Mat6 cross = weight * rep.d_pose_i.transpose() * rep.d_pose_j;
      lin.h_pp.block<6, 6>(6 * e.src_block, 6 * e.dst_block) += cross;
      lin.h_pp.block<6, 6>(6 * e.dst_block, 6 * e.src_block) += cross.transpose();
    }
    if (nf >= 0) {
      lin.h_pp(nf, nf) += weight * rep.d_focal.squaredNorm();
      lin.b_p(nf) += weight * rep.d_focal.dot(r);
      if (e.src_block >= 0) {
        const Eigen::Matrix<double, 6, 1> c =
            weight * rep.d_pose_i.transpose() * rep.d_focal;
        lin.h_pp.block<6, 1>(6 * e.src_block, nf) += c;
        lin.h_pp.block<1, 6>(nf, 6 * e.src_block) += c.transpose();
      }
      if (e.dst_block >= 0) {
        const Eigen::Matrix<double, 6, 1> c =
            weight * rep.d_pose_j.transpose() * rep.d_focal;
        lin.h_pp.block<6, 1>(6 * e.dst_block, nf) += c;
        lin.h_pp.block<1, 6>(nf, 6 * e.dst_block) += c.transpose();
      }
    }
    if (dparam >= 0) {
      lin.h_dd[dparam] += weight * rep.d_inv_depth.squaredNorm();
      lin.b_d[dparam] += weight * rep.d_inv_depth.dot(r);
      if (nf >= 0) lin.h_fd[dparam] += weight * rep.d_focal.dot(rep.d_inv_depth);
      if (e.src_block >= 0)
        add_coupling(lin.h_pd[dparam], e.src_block,
                     weight * rep.d_pose_i.transpose() * rep.d_inv_depth);
      if (e.dst_block >= 0)
        add_coupling(lin.h_pd[dparam], e.dst_block,
                     weight * rep.d_pose_j.transpose() * rep.d_inv_depth);
    }
  }

  const double sqrt_mu = std::sqrt(w.mu);
  for (const ResolvedPrior& p : res.priors) {
    const int dparam = idx.patch_param[p.patch_idx];
    if (dparam < 0) continue;
    const double d = w.patches[p.patch_idx].inv_depth;
    double r, j;
    if (w.residual_space == DepthResidualSpace::kInverse) {
      r = sqrt_mu * (d - 1.0 / p.target);
      j = sqrt_mu;
    } else {
      r = sqrt_mu * (1.0 / d - p.target);
      j = -sqrt_mu / (d * d);
    }
    lin.h_dd[dparam] += j * j;
    lin.b_d[dparam] += j * r;
  }
  return lin;
}

StepResult solve_damped(const Linearization& lin, const WindowIndex& idx,
                        double lambda) {
  StepResult out;
  const int np = idx.pose_dim();
  const int nd = idx.depth_dim();

  Eigen::MatrixXd s = lin.h_pp;
  for (int i = 0; i < np; ++i)
    s(i, i) += lambda * std::max(lin.h_pp(i, i), kDampingDiagFloor);

  std::vector<double> hdd_damped(nd);
  for (int p = 0; p < nd; ++p)
    hdd_damped[p] = lin.h_dd[p] + lambda * std::max(lin.h_dd[p], kDampingDiagFloor);

  const int nf = idx.has_focal ? np - 1 : -1;
  Eigen::VectorXd rhs = -lin.b_p;
  for (int p = 0; p < nd; ++p) {
    if (hdd_damped[p] <= 0) continue;
    const double inv = 1.0 / hdd_damped[p];
    for (const auto& [bi, vi] : lin.h_pd[p]) {
      rhs.segment<6>(6 * bi) += vi * (lin.b_d[p] * inv);
      for (const auto& [bj, vj] : lin.h_pd[p])
        s.block<6, 6>(6 * bi, 6 * bj) -= vi * vj.transpose() * inv;
      if (nf >= 0 && lin.h_fd[p] != 0.0) {
        s.block<6, 1>(6 * bi, nf) -= vi * (lin.h_fd[p] * inv);
        s.block<1, 6>(nf, 6 * bi) -= vi.transpose() * (lin.h_fd[p] * inv);
      }
    }
    if (nf >= 0 && lin.h_fd[p] != 0.0) {
      s(nf, nf) -= lin.h_fd[p] * lin.h_fd[p] * inv;
      rhs(nf) += lin.h_fd[p] * (lin.b_d[p] * inv);
    }
  }

  out.pose_step = Eigen::VectorXd::Zero(np);
  if (np > 0) {
    // Jacobi scaling keeps the soft directions of long trajectories
    // resolvable in double precision
    Eigen::VectorXd scale(np);
    for (int i = 0; i < np; ++i)
      scale(i) = 1.0 / std::sqrt(std::max(s(i, i), kDampingDiagFloor));
    const Eigen::MatrixXd s_scaled = scale.asDiagonal() * s * scale.asDiagonal();
    const Eigen::VectorXd rhs_scaled = scale.asDiagonal() * rhs;
    Eigen::VectorXd y;
    // beyond sliding-window sizes the reduced pose system is banded
    // (chain + loop structure); a sparse factorization keeps the global
    // refinement pass tractable
    if (np > 240) {
      const Eigen::SparseMatrix<double> sp = s_scaled.sparseView();
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(sp);
      if (ldlt.info() != Eigen::Success) return out;
      y = ldlt.solve(rhs_scaled);
    } else {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(s_scaled);
      if (ldlt.info() != Eigen::Success) return out;
      y = ldlt.solve(rhs_scaled);
    }
    out.pose_step = scale.asDiagonal() * y;
    if (!out.pose_step.allFinite()) return out;
  }

  out.depth_step = Eigen::VectorXd::Zero(nd);
  for (int p = 0; p < nd; ++p) {
    if (hdd_damped[p] <= 0) continue;
    double coupled = lin.b_d[p];
    for (const auto& [bi, vi] : lin.h_pd[p])
      coupled += vi.dot(out.pose_step.segment<6>(6 * bi));
    if (nf >= 0) coupled += lin.h_fd[p] * out.pose_step(nf);
    out.depth_step[p] = -coupled / hdd_damped[p];
  }
  if (!out.depth_step.allFinite()) return out;
  out.ok = true;
  return out;
}

void apply_step(BAWindow& w, const WindowIndex& idx, const StepResult& step) {
  for (size_t b = 0; b < idx.free_frames.size(); ++b) {
    const Twist6 xi = step.pose_step.segment<6>(6 * static_cast<int>(b));
    Pose& g = w.poses.at(idx.free_frames[b]);
    g = se3_exp(xi) * g;
  }
  if (idx.has_focal) {
    const double f = std::max(w.camera.fx + step.pose_step(idx.pose_dim() - 1), 1.0);
    w.camera.fx = w.camera.fy = f;
  }
  for (size_t p = 0; p < idx.free_patches.size(); ++p) {
    double& d = w.patches[idx.free_patches[p]].inv_depth;
    d = std::max(d + step.depth_step[static_cast<int>(p)], kInvDepthClamp);
  }
}

double cost_of(const BAWindow& w, const Resolved& res,
               std::vector<double>* edge_norms = nullptr) {
  double cost = 0;
  for (size_t ei = 0; ei < res.edges.size(); ++ei) {
    const ResolvedEdge& e = res.edges[ei];
    const Patch& patch = w.patches[e.patch_idx];
    const Reprojection rep =
        reproject_with_jacobians(w.camera, w.poses.at(e.src_frame),
                                 w.poses.at(e.dst_frame), patch.center,
                                 patch.inv_depth, false);
    if (!rep.valid) {
      if (edge_norms) (*edge_norms)[ei] = -1.0;
      continue;
    }
    const double norm = (rep.pixel - e.observed).norm();
    if (edge_norms) (*edge_norms)[ei] = norm;
    cost += e.confidence * robust_cost(norm, w.huber_delta);
  }
  for (const ResolvedPrior& p : res.priors) {
    const double r = residual_depth(w.patches[p.patch_idx].inv_depth, p.target, 1.0,
                                    w.mu, w.residual_space);
    cost += r * r;
  }
  return cost;
}

void check_preconditions(const BAWindow& w, const WindowIndex& idx,
                         const Resolved& res) {
  if (w.frames.size() < 2)
    throw NotEnoughConstraints("window needs at least two frames");
  if (w.fixed_frames.empty())
    throw NotEnoughConstraints("window needs at least one fixed frame (gauge)");
  const bool priors_fix_scale = w.mu > 0 && !res.priors.empty();
  if (!priors_fix_scale && w.fixed_frames.size() < 2 && w.pinned_patch < 0)
    throw NotEnoughConstraints(
        "scale gauge unfixed: mu = 0 requires two fixed frames or a pinned depth");
  const long rows = 2 * static_cast<long>(res.edges.size()) +
                    static_cast<long>(res.priors.size());
  const long params = idx.pose_dim() + idx.depth_dim();
  if (rows < params)
    throw NotEnoughConstraints("fewer residual rows than free parameters");
}

}  // namespace

double align_prior_scale(const std::vector<double>& prior_depths,
                         const std::vector<double>& recent_patch_inv_depths) {
  if (prior_depths.empty() || recent_patch_inv_depths.empty())
    throw EmptyHistory("align_prior_scale: no priors or no recent patches");
  std::vector<double> depths;
  depths.reserve(recent_patch_inv_depths.size());
  for (double inv : recent_patch_inv_depths) depths.push_back(1.0 / inv);
  return median_of(prior_depths) / median_of(depths);
}

double robust_weight(double residual_norm, double huber_delta) {
  return residual_norm <= huber_delta ? 1.0 : huber_delta / residual_norm;
}

double robust_cost(double residual_norm, double huber_delta) {
  if (residual_norm <= huber_delta) return residual_norm * residual_norm;
  return huber_delta * (2.0 * residual_norm - huber_delta);
}

ReprojectionResidual residual_reprojection(const CorrespondenceEdge& edge,
                                           const BAWindow& window) {
  ReprojectionResidual out;
  const Patch* patch = nullptr;
  for (const Patch& p : window.patches) {
    if (p.frame_id == edge.src_frame && p.patch_id == edge.patch_id) {
      patch = &p;
      break;
    }
  }
  if (patch == nullptr)
    throw InvalidValue("residual_reprojection: patch not in window");
  const Reprojection rep = reproject_with_jacobians(
      window.camera, window.poses.at(edge.src_frame), window.poses.at(edge.dst_frame),
      patch->center, patch->inv_depth, false);
  if (!rep.valid) return out;
  out.r = rep.pixel - edge.observed;
  out.active = true;
  return out;
}

double residual_depth(double inv_depth, double target_depth, double alpha, double mu,
                      DepthResidualSpace space) {
  if (mu <= 0) return 0.0;
  const double sqrt_mu = std::sqrt(mu);
  const double scaled = alpha * target_depth;
  if (space == DepthResidualSpace::kInverse)
    return sqrt_mu * (inv_depth - 1.0 / scaled);
  return sqrt_mu * (1.0 / inv_depth - scaled);
}

WindowIndex build_index(const BAWindow& w) {
  WindowIndex idx;
  idx.has_focal = w.optimize_focal;
  for (int f : w.frames) {
    if (w.fixed_frames.count(f)) continue;
    idx.frame_block.emplace(f, static_cast<int>(idx.free_frames.size()));
    idx.free_frames.push_back(f);
  }

  std::vector<int> obs_count(w.patches.size(), 0);
  std::unordered_map<std::uint64_t, int> patch_index;
  for (int i = 0; i < static_cast<int>(w.patches.size()); ++i)
    patch_index.emplace(patch_key(w.patches[i].frame_id, w.patches[i].patch_id), i);
  for (const CorrespondenceEdge& e : w.edges) {
    auto it = patch_index.find(patch_key(e.src_frame, e.patch_id));
    if (it != patch_index.end()) ++obs_count[it->second];
  }
  std::vector<bool> has_prior(w.patches.size(), false);
  if (w.mu > 0) {
    for (const DepthPrior& p : w.priors) {
      auto it = patch_index.find(patch_key(p.frame_id, p.patch_id));
      if (it != patch_index.end() && w.frame_alpha.count(p.frame_id) &&
          p.prior_depth > 0)
        has_prior[it->second] = true;
    }
  }

  idx.patch_param.assign(w.patches.size(), -1);
  if (w.freeze_depths) return idx;
  for (int i = 0; i < static_cast<int>(w.patches.size()); ++i) {
    if (i == w.pinned_patch) continue;
    if (obs_count[i] == 0 && !has_prior[i]) continue;
    idx.patch_param[i] = static_cast<int>(idx.free_patches.size());
    idx.free_patches.push_back(i);
  }
  return idx;
}

StepResult compute_damped_step(const BAWindow& window, const WindowIndex& index,
                               double lambda) {
  const Resolved res = resolve(window, index);
  const Linearization lin = linearize(window, index, res, nullptr, nullptr);
  return solve_damped(lin, index, lambda);
}

double evaluate_cost(const BAWindow& window) {
  const WindowIndex idx = build_index(window);
  return cost_of(window, resolve(window, idx));
}

SolveResult solve(BAWindow& window, const SolveOptions& options) {
  const WindowIndex idx = build_index(window);
  const Resolved res = resolve(window, idx);
  check_preconditions(window, idx, res);

  SolveResult result;
  result.edge_weights.assign(window.edges.size(), 0.0);
  result.edge_active.assign(window.edges.size(), 0);
  result.edge_residual_norm.assign(window.edges.size(), -1.0);

  double cost = cost_of(window, res);
  result.initial_cost = cost;
  double lambda = options.initial_lambda;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    ++result.iterations;
    const Linearization lin =
        linearize(window, idx, res, &result.edge_weights, &result.edge_active);

    bool accepted = false;
    double step_norm = 0;
    while (true) {
      const StepResult step = solve_damped(lin, idx, lambda);
      if (!step.ok) {
        lambda *= 10;
        if (lambda > options.max_lambda)
          throw SingularSystem(
              "window solve: damping reached 1e8 with a non-finite system "
              "(free poses or depths without constraints?)");
        continue;
      }
      const auto saved_poses = window.poses;
      const auto saved_patches = window.patches;
      const CameraIntrinsics saved_camera = window.camera;
      apply_step(window, idx, step);
      const double new_cost = cost_of(window, res);
      if (std::isfinite(new_cost) && new_cost <= cost) {
        step_norm = std::sqrt(step.pose_step.squaredNorm() +
                              step.depth_step.squaredNorm());
        const double decrease = cost - new_cost;
        cost = new_cost;
        ++result.accepted_steps;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (step_norm < options.min_step_norm ||
            decrease <= options.min_rel_decrease * cost) {
          result.status = SolveStatus::kConverged;
        }
        break;
      }
      window.poses = saved_poses;
      window.patches = saved_patches;
      window.camera = saved_camera;
      lambda *= 10;
      if (lambda > options.max_lambda) break;  // cannot improve: stalled
    }
    if (!accepted) {
      result.status = SolveStatus::kStalled;
      break;
    }
    if (result.status == SolveStatus::kConverged) break;
  }

  result.final_cost = cost_of(window, res, &result.edge_residual_norm);
  return result;
}

}  // namespace wildslam
