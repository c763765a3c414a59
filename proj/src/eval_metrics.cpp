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

#include "wildslam/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace wildslam {

namespace {

// registered runs as [first, last] index ranges
std::vector<std::pair<int, int>> segments_of(const Trajectory& t) {
  std::vector<std::pair<int, int>> segs;
  const int n = static_cast<int>(t.points.size());
  int start = -1;
  for (int i = 0; i < n; ++i) {
    const bool ok = t.points[i].registered;
    if (ok && start < 0) start = i;
    if ((!ok || i == n - 1) && start >= 0) {
      segs.emplace_back(start, ok ? i : i - 1);
      start = -1;
    }
  }
  return segs;
}

std::map<int, int> registered_index(const Trajectory& t) {
  std::map<int, int> out;
  for (int i = 0; i < static_cast<int>(t.points.size()); ++i)
    if (t.points[i].registered) out[t.points[i].frame_id] = i;
  return out;
}

}  // namespace

BreakReport detect_breaks(const Trajectory& traj, int k, double threshold,
                          bool literal_global_mean) {
  BreakReport report;
  report.k = k;
  report.threshold = threshold;

  double global_mean = 0;
  int global_count = 0;

  for (const auto& [first, last] : segments_of(traj)) {
    for (int i = first; i < last; ++i) {
      global_mean += (traj.position(i + 1) - traj.position(i)).norm();
      ++global_count;
    }
  }
  if (global_count == 0) return report;
  global_mean /= global_count;

  for (const auto& [first, last] : segments_of(traj)) {
    const int n_steps = last - first;  // steps i..i+1 for i in [first, last)
    if (n_steps <= 0) continue;
    std::vector<double> step(n_steps);
    for (int i = 0; i < n_steps; ++i)
      step[i] = (traj.position(first + i + 1) - traj.position(first + i)).norm();
    for (int i = 0; i < n_steps; ++i) {
      const int lo = std::max(0, i - k);
      const int hi = std::min(n_steps - 1, i + k);
      double mean = 0;
      int count = 0;
      for (int j = lo; j <= hi; ++j) {
        if (j == i) continue;  // the step cannot mask itself
        mean += step[j];
        ++count;
      }
      double ratio;
      if (count == 0) {
        ratio = 0.0;
      } else {
        mean /= count;
        if (mean == 0.0)
          ratio = step[i] == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        else
          ratio = step[i] / mean;
      }
      report.ratios.push_back(ratio);
      const double limit = literal_global_mean ? threshold * global_mean : threshold;
      if (ratio > limit) report.break_indices.push_back(first + i);
    }
  }
  return report;
}

int count_registered(const Trajectory& traj) {
  int best = 0;
  for (const auto& [first, last] : segments_of(traj))
    best = std::max(best, last - first + 1);
  return best;
}

int count_models(const Trajectory& traj) {
  return static_cast<int>(segments_of(traj).size());
}

Alignment align_sim3(const Trajectory& est, const Trajectory& ref) {
  const std::map<int, int> ref_at = registered_index(ref);
  std::vector<Vec3> src, dst;
  for (int i = 0; i < static_cast<int>(est.points.size()); ++i) {
    if (!est.points[i].registered) continue;
    auto it = ref_at.find(est.points[i].frame_id);
    if (it == ref_at.end()) continue;
    src.push_back(est.position(i));
    dst.push_back(ref.position(it->second));
  }
  if (src.size() < 3) throw FrameMismatch("align_sim3: fewer than 3 common frames");

  Alignment out;
  out.transform = umeyama_alignment(src, dst);
  double sum = 0;
  for (size_t i = 0; i < src.size(); ++i)
    sum += (out.transform.act(src[i]) - dst[i]).squaredNorm();
  out.rmse = std::sqrt(sum / src.size());
  return out;
}

double ate_rmse(const Trajectory& est, const Trajectory& ref) {
  const std::map<int, int> ref_at = registered_index(ref);
  double sum = 0;
  int n = 0;
  for (int i = 0; i < static_cast<int>(est.points.size()); ++i) {
    if (!est.points[i].registered) continue;
    auto it = ref_at.find(est.points[i].frame_id);
    if (it == ref_at.end()) continue;
    sum += (est.position(i) - ref.position(it->second)).squaredNorm();
    ++n;
  }
  if (n == 0) throw FrameMismatch("ate_rmse: no common registered frames");
  return std::sqrt(sum / n);
}

double rpe(const Trajectory& est, const Trajectory& ref, int delta) {
  if (delta < 1) throw InvalidValue("rpe: delta must be >= 1");
  const std::map<int, int> est_at = registered_index(est);
  const std::map<int, int> ref_at = registered_index(ref);
  double sum = 0;
  int n = 0;
  for (const auto& [frame, i] : est_at) {
    auto i2 = est_at.find(frame + delta);
    auto r1 = ref_at.find(frame);
    auto r2 = ref_at.find(frame + delta);
    if (i2 == est_at.end() || r1 == ref_at.end() || r2 == ref_at.end()) continue;
    const Pose rel_est = relative(est.points[i].pose, est.points[i2->second].pose);
    const Pose rel_ref =
        relative(ref.points[r1->second].pose, ref.points[r2->second].pose);
    sum += (rel_ref.inverse() * rel_est).t.squaredNorm();
    ++n;
  }
  if (n == 0) throw FrameMismatch("rpe: no common frame pairs at this delta");
  return std::sqrt(sum / n);
}

Trajectory transform_trajectory(const Trajectory& traj, const SimPose& t) {
  Trajectory out = traj;
  for (size_t i = 0; i < traj.points.size(); ++i) {
    if (!traj.points[i].registered) continue;
    const Vec3 center = t.act(traj.position(i));
    const Quat rot = traj.points[i].pose.q * t.q.conjugate();
    out.points[i].pose = Pose(rot, -(rot * center));
  }
  return out;
}

}  // namespace wildslam
