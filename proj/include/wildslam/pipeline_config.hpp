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

#include <cstdint>
#include <string>

#include "wildslam/errors.hpp"

namespace wildslam {

enum class PostRefineMode { kOff, kRetriangulate, kRetriangulateGlobalBa };

// Config file keys are exactly these field names (line-oriented
// `key = value`, `#` comments).
struct PipelineConfig {
  std::uint64_t seed = 0;
  int n_init = 8;
  double flow_threshold_px = 12.0;
  int window_size = 10;
  int patches_per_frame = 64;
  int patch_footprint = 3;
  double mu = 0.05;
  double huber_delta = 2.0;
  double keyframe_flow_px = 6.0;
  int temporal_exclusion = 90;
  double loop_tau = 0.9;
  int loop_streak = 3;
  int loop_min_covisible = 8;
  int pgo_cooldown = 50;
  int solver_iterations = 6;
  double focal_override = 0.0;  // 0 = estimate from the data
  bool use_masks = true;
  bool use_loop = true;
  std::string post_refine = "off";  // off | retriangulate | retriangulate_global_ba
  std::string depth_residual_space = "metric";  // metric | inverse

  PostRefineMode post_refine_mode() const {
    if (post_refine == "off") return PostRefineMode::kOff;
    if (post_refine == "retriangulate") return PostRefineMode::kRetriangulate;
    if (post_refine == "retriangulate_global_ba")
      return PostRefineMode::kRetriangulateGlobalBa;
    throw InvalidValue("post_refine: unknown mode '" + post_refine + "'");
  }

  void validate() const {
    if (n_init < 5) throw InvalidValue("n_init: must be >= 5");
    if (window_size < 4) throw InvalidValue("window_size: must be >= 4");
    if (!(flow_threshold_px >= 0)) throw InvalidValue("flow_threshold_px: must be >= 0");
    if (patches_per_frame < 1) throw InvalidValue("patches_per_frame: must be >= 1");
    if (patch_footprint < 1 || patch_footprint % 2 == 0)
      throw InvalidValue("patch_footprint: must be odd and positive");
    if (!(mu >= 0)) throw InvalidValue("mu: must be >= 0");
    if (!(huber_delta > 0)) throw InvalidValue("huber_delta: must be > 0");
    if (!(keyframe_flow_px > 0)) throw InvalidValue("keyframe_flow_px: must be > 0");
    if (temporal_exclusion < 0) throw InvalidValue("temporal_exclusion: must be >= 0");
    if (!(loop_tau > 0 && loop_tau <= 1)) throw InvalidValue("loop_tau: must be in (0,1]");
    if (loop_streak < 1) throw InvalidValue("loop_streak: must be >= 1");
    if (loop_min_covisible < 3) throw InvalidValue("loop_min_covisible: must be >= 3");
    if (pgo_cooldown < 0) throw InvalidValue("pgo_cooldown: must be >= 0");
    if (solver_iterations < 1) throw InvalidValue("solver_iterations: must be >= 1");
    if (!(focal_override >= 0)) throw InvalidValue("focal_override: must be >= 0");
    if (depth_residual_space != "inverse" && depth_residual_space != "metric")
      throw InvalidValue("depth_residual_space: expected 'inverse' or 'metric'");
    post_refine_mode();  // validates the string
  }
};

}  // namespace wildslam
