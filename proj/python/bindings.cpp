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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "wildslam/cli.hpp"
#include "wildslam/io.hpp"
#include "wildslam/pipeline.hpp"

namespace py = pybind11;
using namespace wildslam;

namespace {

py::dict run_bundle(const std::string& bundle_dir, const std::string& out_dir,
                    const std::string& config_path, std::uint64_t seed, double mu,
                    bool use_masks, bool use_loop, const std::string& post_refine) {
  std::vector<std::string> args = {"run", "--bundle", bundle_dir, "--out", out_dir};
  if (!config_path.empty()) {
    args.push_back("--config");
    args.push_back(config_path);
  }
  args.push_back("--seed");
  args.push_back(std::to_string(seed));
  args.push_back("--mu");
  args.push_back(std::to_string(mu));
  if (!use_masks) args.push_back("--no-mask");
  if (!use_loop) args.push_back("--no-loop");
  (void)post_refine;  // set through the config file; kept for signature clarity
  const int rc = cli::run_main(args);
  py::dict result;
  result["exit_code"] = rc;
  if (rc == 0) {
    // parse the machine-readable report back into a dict
    const std::string report = read_text_file(out_dir + "/report.txt");
    std::istringstream in(report);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 3);
      try {
        result[key.c_str()] = std::stod(value);
      } catch (...) {
        result[key.c_str()] = value;
      }
    }
  }
  return result;
}

py::dict evaluate(const std::string& est_path, const std::string& ref_path, int k,
                  double threshold, int rpe_delta) {
  const Trajectory est = read_tum(est_path);
  const Trajectory ref = read_tum(ref_path);
  const BreakReport breaks = detect_breaks(est, k, threshold);
  const Alignment align = align_sim3(est, ref);
  py::dict out;
  out["registered"] = count_registered(est);
  out["models"] = count_models(est);
  out["breaks"] = breaks.break_indices;
  out["ate_rmse"] = align.rmse;
  out["align_scale"] = align.transform.s;
  out["rpe"] = rpe(transform_trajectory(est, align.transform), ref, rpe_delta);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "monocular SLAM backend for unconstrained walking footage";
  m.attr("__version__") = cli::kVersion;

  m.def("cli_main", [](const std::vector<std::string>& args) {
    return cli::run_main(args);
  },
        py::arg("args"), "invoke the command-line interface in-process");

  m.def("world_names", [] {
    std::vector<std::string> names;
    for (const auto& [name, spec] : standard_worlds()) names.push_back(name);
    return names;
  });

  m.def("simulate", [](const std::string& world, const std::string& out_dir,
                       std::uint64_t seed) {
    std::vector<std::string> args = {"simulate", "--world", world, "--out", out_dir};
    if (seed != 0) {
      args.push_back("--seed");
      args.push_back(std::to_string(seed));
    }
    return cli::run_main(args);
  },
        py::arg("world"), py::arg("out_dir"), py::arg("seed") = 0,
        "generate a synthetic dataset bundle");

  m.def("run", &run_bundle, py::arg("bundle_dir"), py::arg("out_dir"),
        py::arg("config_path") = "", py::arg("seed") = 0, py::arg("mu") = 0.05,
        py::arg("use_masks") = true, py::arg("use_loop") = true,
        py::arg("post_refine") = "off",
        "reconstruct a trajectory from a bundle; returns the report metrics");

  m.def("evaluate", &evaluate, py::arg("est_path"), py::arg("ref_path"),
        py::arg("k") = 10, py::arg("threshold") = 10.0, py::arg("rpe_delta") = 1,
        "trajectory metrics against a reference (TUM files)");

  m.def("estimate_focal", [](const std::string& bundle_dir) {
    const DatasetBundle bundle = read_bundle(bundle_dir);
    PipelineConfig config;
    Pipeline pipeline(bundle, config);
    return pipeline.estimate_focal(pipeline.select_init_frames());
  },
        py::arg("bundle_dir"), "recover the shared focal length from a bundle");

  py::register_exception<Error>(m, "WildslamError");
}
