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

#include "wildslam/loop_detection.hpp"

#include <cmath>

namespace wildslam {

void DescriptorStore::add(const Descriptor& descriptor) {
  if (frames_.count(descriptor.frame_id))
    throw DuplicateFrame("descriptor store: frame " +
                         std::to_string(descriptor.frame_id) + " already present");
  Descriptor d = descriptor;
  const double norm = d.vector.norm();
  if (!(norm > 0)) throw InvalidValue("descriptor store: zero vector");
  d.vector /= norm;
  frames_.insert(d.frame_id);
  descriptors_.push_back(std::move(d));
}

std::optional<LoopCandidate> DescriptorStore::query(const Descriptor& descriptor,
                                                    int temporal_exclusion,
                                                    double tau) const {
  const Eigen::VectorXd v = descriptor.vector.normalized();
  double best = -2.0;
  int best_frame = -1;
  for (const Descriptor& d : descriptors_) {
    if (d.frame_id >= descriptor.frame_id - temporal_exclusion) continue;
    const double sim = d.vector.dot(v);
    if (sim > best) {
      best = sim;
      best_frame = d.frame_id;
    }
  }
  if (best_frame < 0 || best < tau) return std::nullopt;
  LoopCandidate c;
  c.query_frame = descriptor.frame_id;
  c.match_frame = best_frame;
  c.similarity = best;
  return c;
}

std::optional<std::pair<int, int>> LoopConfirmer::feed(
    int query_frame, const std::optional<LoopCandidate>& candidate) {
  if (!candidate.has_value()) {
    streak_ = 0;
    last_query_ = query_frame;
    return std::nullopt;
  }
  const int match = candidate->match_frame;
  const bool continues =
      streak_ > 0 && query_frame == last_query_ + 1 &&
      std::abs(match - (last_match_ + (query_frame - last_query_))) <= tolerance_;
  streak_ = continues ? streak_ + 1 : 1;
  last_query_ = query_frame;
  last_match_ = match;
  if (streak_ >= required_) {
    streak_ = 0;
    return std::make_pair(query_frame, match);
  }
  return std::nullopt;
}

}  // namespace wildslam
