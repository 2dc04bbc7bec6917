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

#include "echoqa/geometry/geometry.hpp"

#include <cmath>
#include <string>

namespace echoqa::geometry {

namespace {

void check_distance(double d) {
  if (!(d > 0.0)) throw ValidationError("projection distance must be positive");
}

}  // namespace

Point2 perspective_project(Point3 p, double d) {
  check_distance(d);
  if (std::abs(p.z) <= kProjectionEpsilon) throw ProjectionSingularity("projection of a point at z = 0");
  return {-d * p.x / p.z, d * p.y / p.z};
}

std::array<std::array<double, 4>, 4> projection_matrix(double d) {
  check_distance(d);
  // The y row is negated so the homogeneous route reproduces the closed
  // form's sign convention (x flips, y does not).
  return {{{1.0, 0.0, 0.0, 0.0},
           {0.0, -1.0, 0.0, 0.0},
           {0.0, 0.0, 1.0, 0.0},
           {0.0, 0.0, -1.0 / d, 0.0}}};
}

Point2 perspective_project_homogeneous(Point3 p, double d) {
  const auto m = projection_matrix(d);
  const std::array<double, 4> v{p.x, p.y, p.z, 1.0};
  std::array<double, 4> out{};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[r] += m[r][c] * v[c];
  if (std::abs(out[3]) <= kProjectionEpsilon / d) throw ProjectionSingularity("projection of a point at z = 0");
  return {out[0] / out[3], out[1] / out[3]};
}

void ApexTrack::validate() const {
  if (apex_positions.empty()) throw ValidationError("apex track is empty");
  if (ed_index >= apex_positions.size() || es_index >= apex_positions.size()) {
    throw ValidationError("apex track ED/ES index out of range");
  }
  if (ed_index == es_index) throw ValidationError("apex track ED and ES indices coincide");
  if (!(frame_height > 0.0)) throw ValidationError("apex track frame height must be positive");
}

double foreshortening_index(const ApexTrack& track) {
  track.validate();
  const auto& ed = track.apex_positions[track.ed_index];
  const auto& es = track.apex_positions[track.es_index];
  return std::hypot(es.x - ed.x, es.y - ed.y) / track.frame_height;
}

std::string_view foreshortening_key(Foreshortening f) {
  switch (f) {
    case Foreshortening::zero: return "zero";
    case Foreshortening::mild: return "mild";
    case Foreshortening::severe: return "severe";
  }
  return "";
}

Foreshortening parse_foreshortening(std::string_view key) {
  if (key == "zero") return Foreshortening::zero;
  if (key == "mild") return Foreshortening::mild;
  if (key == "severe") return Foreshortening::severe;
  throw ValidationError("unknown foreshortening level '" + std::string(key) + "'");
}

Foreshortening foreshortening_severity(double index, ForeshorteningThresholds t) {
  if (index >= t.severe) return Foreshortening::severe;
  if (index >= t.mild) return Foreshortening::mild;
  return Foreshortening::zero;
}

}  // namespace echoqa::geometry
