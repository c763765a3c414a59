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

#include <stdexcept>
#include <string>

namespace wildslam {

// Base class for all recoverable pipeline errors. CLI maps these to exit
// code 3 (format) or 4 (numerical), see cli.cpp.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define WILDSLAM_DEFINE_ERROR(name)      \
  class name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

WILDSLAM_DEFINE_ERROR(DepthNonPositive);
WILDSLAM_DEFINE_ERROR(BehindCamera);
WILDSLAM_DEFINE_ERROR(EmptyHistory);
WILDSLAM_DEFINE_ERROR(NotEnoughConstraints);
WILDSLAM_DEFINE_ERROR(SingularSystem);
WILDSLAM_DEFINE_ERROR(DisconnectedGraph);
WILDSLAM_DEFINE_ERROR(DuplicateFrame);
WILDSLAM_DEFINE_ERROR(InsufficientParallax);
WILDSLAM_DEFINE_ERROR(DegenerateGeometry);
WILDSLAM_DEFINE_ERROR(FullyMasked);
WILDSLAM_DEFINE_ERROR(DegenerateCollinear);
WILDSLAM_DEFINE_ERROR(FrameMismatch);
WILDSLAM_DEFINE_ERROR(InvalidSpec);
WILDSLAM_DEFINE_ERROR(FormatError);
WILDSLAM_DEFINE_ERROR(MissingFile);
WILDSLAM_DEFINE_ERROR(UnknownKey);
WILDSLAM_DEFINE_ERROR(InvalidValue);

#undef WILDSLAM_DEFINE_ERROR

}  // namespace wildslam
