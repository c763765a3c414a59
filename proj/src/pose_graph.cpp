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

#include "wildslam/pose_graph.hpp"

#include <Eigen/Sparse>
#include <cmath>
#include <numeric>

namespace wildslam {

namespace {

std::vector<int> node_index_of(const PoseGraph& g) {
  std::vector<int> param(g.nodes.size(), -1);
  int next = 0;
  for (size_t i = 0; i < g.nodes.size(); ++i)
    if (!g.nodes[i].fixed) param[i] = next++;
  return param;
}

std::map<int, int> frame_to_node(const PoseGraph& g) {
  std::map<int, int> out;
  for (size_t i = 0; i < g.nodes.size(); ++i)
    out[g.nodes[i].frame_id] = static_cast<int>(i);
  return out;
}

void check_graph(const PoseGraph& g) {
  int fixed = 0;
  for (const Sim3Node& n : g.nodes) fixed += n.fixed ? 1 : 0;
  if (fixed != 1) throw InvalidValue("pose graph needs exactly one fixed node");

  // union-find connectivity over edges
  std::vector<int> parent(g.nodes.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  const std::map<int, int> by_frame = frame_to_node(g);
  for (const Sim3Edge& e : g.edges) {
    auto a = by_frame.find(e.src);
    auto b = by_frame.find(e.dst);
    if (a == by_frame.end() || b == by_frame.end())
      throw InvalidValue("pose graph edge references an unknown frame");
    parent[find(a->second)] = find(b->second);
  }
  const int root = find(0);
  for (size_t i = 1; i < g.nodes.size(); ++i)
    if (find(static_cast<int>(i)) != root)
      throw DisconnectedGraph("pose graph is not connected");
}

double max_loop_residual(const PoseGraph& g) {
  const std::map<int, int> by_frame = frame_to_node(g);
  double worst = 0;
  for (const Sim3Edge& e : g.edges) {
    if (e.kind != EdgeKind::kLoop) continue;
    const Twist7 r = loop_residual(e, g.nodes[by_frame.at(e.src)].pose,
                                   g.nodes[by_frame.at(e.dst)].pose);
    worst = std::max(worst, r.norm());
  }
  return worst;
}

}  // namespace

PoseGraph lift_trajectory(const std::vector<std::pair<int, Pose>>& keyframes) {
  if (keyframes.size() < 2)
    throw NotEnoughConstraints("lift_trajectory: need at least two keyframes");
  PoseGraph g;
  g.nodes.reserve(keyframes.size());
  for (const auto& [id, pose] : keyframes) g.nodes.push_back({id, SimPose(pose), false});
  for (size_t k = 0; k + 1 < keyframes.size(); ++k) {
    Sim3Edge e;
    e.src = keyframes[k].first;
    e.dst = keyframes[k + 1].first;
    e.measurement = SimPose(relative(keyframes[k].second, keyframes[k + 1].second));
    e.kind = EdgeKind::kOdometry;
    g.edges.push_back(e);
  }
  return g;
}

Twist7 loop_residual(const Sim3Edge& edge, const SimPose& s_i, const SimPose& s_j) {
  return sim3_log(edge.measurement.inverse() * s_j * s_i.inverse());
}

ResidualExpansion loop_residual_with_jacobians(const Sim3Edge& edge,
                                               const SimPose& s_i, const SimPose& s_j) {
  ResidualExpansion out;
  out.r = loop_residual(edge, s_i, s_j);
  // S_j <- exp(e) S_j conjugates through meas^{-1}; S_i <- exp(e) S_i enters
  // on the right of the product.
  out.d_j = sim3_left_jacobian_inv(out.r) * sim3_adjoint(edge.measurement.inverse());
  out.d_i = -sim3_left_jacobian_inv(Twist7(-out.r));
  return out;
}

double graph_cost(const PoseGraph& g) {
  const std::map<int, int> by_frame = frame_to_node(g);
  double cost = 0;
  for (const Sim3Edge& e : g.edges) {
    const Twist7 r = loop_residual(e, g.nodes[by_frame.at(e.src)].pose,
                                   g.nodes[by_frame.at(e.dst)].pose);
    cost += e.information * r.squaredNorm();
  }
  return cost;
}

PgoResult optimize(PoseGraph& graph, const PgoOptions& options) {
  check_graph(graph);
  const std::map<int, int> by_frame = frame_to_node(graph);
  const std::vector<int> param = node_index_of(graph);
  const int n_free = static_cast<int>(graph.nodes.size()) -
                     1;  // exactly one fixed node, checked above
  const int dim = 7 * n_free;

  PgoResult result;
  result.loop_residual_before = max_loop_residual(graph);
  double cost = graph_cost(graph);
  result.initial_cost = cost;

  double lambda = options.initial_lambda;
  if (cost > 1e-20 && dim > 0) {
    for (int iter = 0; iter < options.max_iterations; ++iter) {
      ++result.iterations;
      std::vector<Eigen::Triplet<double>> triplets;
      Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
      for (const Sim3Edge& e : graph.edges) {
        const int ni = by_frame.at(e.src);
        const int nj = by_frame.at(e.dst);
        const ResidualExpansion lin = loop_residual_with_jacobians(
            e, graph.nodes[ni].pose, graph.nodes[nj].pose);
        const int pi = param[ni];
        const int pj = param[nj];
        const Mat7 hii = e.information * lin.d_i.transpose() * lin.d_i;
        const Mat7 hjj = e.information * lin.d_j.transpose() * lin.d_j;
        const Mat7 hij = e.information * lin.d_i.transpose() * lin.d_j;
        auto add_block = [&](int r0, int c0, const Mat7& m) {
          for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 7; ++c)
              triplets.emplace_back(7 * r0 + r, 7 * c0 + c, m(r, c));
        };
        if (pi >= 0) {
          add_block(pi, pi, hii);
          b.segment<7>(7 * pi) += e.information * lin.d_i.transpose() * lin.r;
        }
        if (pj >= 0) {
          add_block(pj, pj, hjj);
          b.segment<7>(7 * pj) += e.information * lin.d_j.transpose() * lin.r;
        }
        if (pi >= 0 && pj >= 0) {
          add_block(pi, pj, hij);
          add_block(pj, pi, hij.transpose());
        }
      }
      Eigen::SparseMatrix<double> h(dim, dim);
      h.setFromTriplets(triplets.begin(), triplets.end());

      bool accepted = false;
      while (true) {
        Eigen::SparseMatrix<double> damped = h;
        for (int i = 0; i < dim; ++i)
          damped.coeffRef(i, i) +=
              lambda * std::max(h.coeff(i, i), kDampingDiagFloor);
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(damped);
        Eigen::VectorXd step;
        bool ok = ldlt.info() == Eigen::Success;
        if (ok) {
          step = ldlt.solve(-b);
          ok = step.allFinite();
        }
        if (!ok) {
          lambda *= 10;
          if (lambda > options.max_lambda)
            throw SingularSystem("pose graph: damping reached limit, system singular");
          continue;
        }
        PoseGraph candidate = graph;
        for (size_t n = 0; n < graph.nodes.size(); ++n) {
          if (param[n] < 0) continue;
          const Twist7 xi = step.segment<7>(7 * param[n]);
          candidate.nodes[n].pose = sim3_exp(xi) * candidate.nodes[n].pose;
        }
        const double new_cost = graph_cost(candidate);
        if (std::isfinite(new_cost) && new_cost <= cost) {
          graph = std::move(candidate);
          const double step_norm = step.norm();
          cost = new_cost;
          lambda = std::max(lambda * 0.1, 1e-12);
          accepted = true;
          if (step_norm < options.min_step_norm) iter = options.max_iterations;
          break;
        }
        lambda *= 10;
        if (lambda > options.max_lambda) break;
      }
      if (!accepted) break;
      if (cost < 1e-24) break;
    }
  }

  result.final_cost = cost;
  result.loop_residual_after = max_loop_residual(graph);
  return result;
}

std::map<int, double> apply_correction(const PoseGraph& graph,
                                       std::map<int, Pose>& keyframe_poses,
                                       std::vector<Patch>& patches) {
  std::map<int, double> scales;
  for (const Sim3Node& n : graph.nodes) {
    scales[n.frame_id] = n.pose.s;
    keyframe_poses[n.frame_id] = Pose(n.pose.q, n.pose.t / n.pose.s);
  }
  for (Patch& p : patches) {
    auto it = scales.find(p.frame_id);
    if (it != scales.end()) p.inv_depth *= it->second;
  }
  return scales;
}

}  // namespace wildslam
