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
#include <vector>

#include "wildslam/eval_metrics.hpp"
#include "wildslam/frontend_sim.hpp"
#include "wildslam/pipeline_config.hpp"
#include "wildslam/pose_graph.hpp"

namespace wildslam {

// Bundle directory layout: frames.csv, patches.csv, edges.csv, priors.csv,
// masks/ (PGM, 255 = masked; absent file = unmasked frame), descriptors.bin,
// gt_traj.txt (TUM, optional), world.json (optional config echo). CSVs carry
// documented headers; unknown extra columns are accepted with a warning.
void write_bundle(const DatasetBundle& bundle, const std::string& dir);
DatasetBundle read_bundle(const std::string& dir);

// TUM lines: `timestamp tx ty tz qx qy qz qw`, 9 significant digits,
// unregistered frames written as nan fields. Frame ids are assigned by line
// order on read.
void write_tum(const Trajectory& traj, const std::string& path);
Trajectory read_tum(const std::string& path);

// descriptors.bin: magic 'WSDB', D u32, count u32, then count records of
// (frame_id u64, D float32), little-endian.
void write_descriptors(const std::vector<Descriptor>& descriptors,
                       const std::string& path);
std::vector<Descriptor> read_descriptors(const std::string& path);

// One line per node `NODE id s qx qy qz qw tx ty tz`, one per edge
// `EDGE i j kind s qx qy qz qw tx ty tz`.
void write_pose_graph(const PoseGraph& graph, const std::string& path);

PipelineConfig parse_config_text(const std::string& text);
PipelineConfig parse_config(const std::string& path);

std::uint64_t fnv1a(const void* data, std::size_t size);
std::uint64_t fnv1a_file(const std::string& path);
std::uint64_t bundle_digest(const DatasetBundle& bundle);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace wildslam
