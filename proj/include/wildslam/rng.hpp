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

#include <cmath>
#include <cstdint>

namespace wildslam {

// Counter-based generator: every draw is a pure hash of
// (seed, stream, counter), so independent subsystems can share one seed
// without perturbing each other's sequences and results are identical
// across platforms.
enum class RngStream : std::uint64_t {
  kLandmarks = 1,
  kTrajectory = 2,
  kDynamics = 3,
  kPatchSampling = 4,
  kPixelNoise = 5,
  kPriorNoise = 6,
  kPriorWalk = 7,
  kDescriptorBase = 8,
  kDescriptorNoise = 9,
  kPipelineSampling = 10,
  kTest = 99,
};

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, RngStream stream)
      : state_(mix(mix(seed + 0x9e3779b97f4a7c15ULL) ^
                   (static_cast<std::uint64_t>(stream) * 0xbf58476d1ce4e5b9ULL))),
        counter_(0) {}

  // Stateless access at an explicit counter; does not advance the sequence.
  std::uint64_t at(std::uint64_t counter) const {
    return mix(state_ + counter * 0x94d049bb133111ebULL + 1);
  }

  std::uint64_t next_u64() { return at(counter_++); }

  // Stateless draws at explicit counters (each consumes two counter slots
  // worth of space in its own right; callers manage counter layout).
  double double_at(std::uint64_t counter) const {
    return static_cast<double>(at(counter) >> 11) * 0x1.0p-53;
  }

  double normal_at(std::uint64_t counter) const {
    double u1 = double_at(2 * counter);
    const double u2 = double_at(2 * counter + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double next_double() {  // uniform in [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  int next_int(int n) {  // uniform in [0, n)
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Box-Muller; draws two uniforms per normal to stay branch-free.
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {  // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  std::uint64_t counter_;
};

}  // namespace wildslam
