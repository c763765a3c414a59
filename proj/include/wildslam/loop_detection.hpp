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
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "wildslam/errors.hpp"

namespace wildslam {

struct Descriptor {
  int frame_id = 0;
  Eigen::VectorXd vector;  // unit norm
};

struct LoopCandidate {
  int query_frame = 0;
  int match_frame = 0;
  double similarity = 0;
  int streak = 0;
};

// Flat linear-scan place-recognition store. At desk scale (thousands of
// frames) an ANN index buys nothing.
class DescriptorStore {
 public:
  // Renormalizes on ingest. Throws DuplicateFrame.
  void add(const Descriptor& descriptor);

  // Best inner-product match among frames older than
  // query.frame_id - temporal_exclusion, if its similarity reaches tau.
  std::optional<LoopCandidate> query(const Descriptor& descriptor,
                                     int temporal_exclusion, double tau = 0.9) const;

  std::size_t size() const { return descriptors_.size(); }

 private:
  std::vector<Descriptor> descriptors_;
  std::set<int> frames_;
};

// The consecutive-match rule: a loop is confirmed when `required` successive
// query frames hit matches whose ids follow a linear progression within
// +-tolerance; any gap resets the streak.
class LoopConfirmer {
 public:
  explicit LoopConfirmer(int required = 3, int tolerance = 2)
      : required_(required), tolerance_(tolerance) {}

  // Candidates must arrive in query-frame order.
  std::optional<std::pair<int, int>> feed(int query_frame,
                                          const std::optional<LoopCandidate>& candidate);

  int streak() const { return streak_; }

 private:
  int required_;
  int tolerance_;
  int streak_ = 0;
  int last_query_ = -1;
  int last_match_ = -1;
};

}  // namespace wildslam
