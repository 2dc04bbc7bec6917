// Copyright 2026 The EchoQA Authors
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

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "echoqa/error.hpp"

namespace echoqa::geometry {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// z is depth along the beam axis.
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

class ProjectionSingularity : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

inline constexpr double kProjectionEpsilon = 1e-12;

/// Closed-form on-axis projection (-d*x/z, d*y/z).
Point2 perspective_project(Point3 p, double d);

/// Homogeneous 4x4 projection matrix for distance d. Multiplying [x y z 1]
/// and dividing by the last coordinate yields perspective_project(p, d).
std::array<std::array<double, 4>, 4> projection_matrix(double d);

/// Projection via projection_matrix(); independent route to the closed form.
Point2 perspective_project_homogeneous(Point3 p, double d);

/// Apex landmark per frame plus the ED/ES frame indices.
struct ApexTrack {
  std::vector<Point2> apex_positions;
  std::size_t ed_index = 0;
  std::size_t es_index = 10;
  double frame_height = 227.0;

  void validate() const;
};

/// |apex(ES) - apex(ED)| / frame height.
double foreshortening_index(const ApexTrack& track);

enum class Foreshortening { zero, mild, severe };

std::string_view foreshortening_key(Foreshortening f);
Foreshortening parse_foreshortening(std::string_view key);

/// Class boundaries as fractions of frame height; a boundary value belongs to the higher class.
struct ForeshorteningThresholds {
  double mild = 0.02;
  double severe = 0.06;
};

Foreshortening foreshortening_severity(double index, ForeshorteningThresholds thresholds = {});

}  // namespace echoqa::geometry
