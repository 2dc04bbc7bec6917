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
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoqa/geometry/geometry.hpp"
#include "echoqa/metrics/frame.hpp"
#include "echoqa/rubric/rubric.hpp"
#include "echoqa/types.hpp"

namespace echoqa::phantom {

inline constexpr std::size_t kClipLength = 20;
inline constexpr std::size_t kFrameSize = 227;
inline constexpr std::size_t kEdIndex = 0;
inline constexpr std::size_t kEsIndex = 10;
inline constexpr int kGeneratorVersion = 1;

struct PhantomParams {
  std::uint64_t seed = 0;
  double contrast_level = 0.8;      // [0,1]; 0.8 renders native contrast
  double gain_gradient = 0.0;       // [-1,1]; negative darkens the far field
  double axis_rotation_deg = 0.0;   // [-30,30]
  geometry::Foreshortening foreshorten_level = geometry::Foreshortening::zero;
  double noise_amplitude = 0.0;     // [0,0.2], multiplicative speckle
  View view = View::A4C;

  void validate() const;
  nlohmann::json to_json() const;
  static PhantomParams from_json(const nlohmann::json& j);
  friend bool operator==(const PhantomParams&, const PhantomParams&) = default;
};

/// Quality ordinal per attribute: 0 poor, 1 average, 2 optimum.
using QualityLevels = std::array<int, 4>;

struct CineClip {
  std::string clip_id;
  View view = View::A4C;
  std::vector<Frame> frames;
  rubric::AttributeScores labels;
  geometry::ApexTrack apex_track;
  std::optional<PhantomParams> params;
  std::optional<QualityLevels> levels;
  std::string annotator = "phantom";

  /// Frame count, dimensions, apex track and label consistency.
  void validate(const rubric::Rubric& rubric = rubric::Rubric::standard()) const;
};

/// Rendered pixels before labelling.
struct RenderedClip {
  std::vector<Frame> frames;
  /// End-diastolic frame at the requested contrast with no rotation, gain,
  /// noise or quantisation; clarity labels are measured on it.
  Frame reference;
  geometry::ApexTrack apex_track;
};

RenderedClip render_clip(const PhantomParams& params);

/// Reference frame for a view and contrast level (what render_clip stores).
Frame reference_frame(View view, double contrast_level);

/// Contrast gain applied about the tissue level: c/0.8 up to 0.8, then
/// rising by 1.2 per unit so that c = 1 stays inside [0,1] unclipped.
double contrast_gain(double contrast_level);

/// Rubric criterion values implied by the generating parameters.
std::array<std::vector<rubric::CriterionScore>, 4> label_criteria(const RenderedClip& clip, const PhantomParams& params,
                                                                  const rubric::Rubric& rubric = rubric::Rubric::standard());

rubric::AttributeScores label_clip(const RenderedClip& clip, const PhantomParams& params,
                                   const rubric::Rubric& rubric = rubric::Rubric::standard());

CineClip generate_clip(const PhantomParams& params, std::string clip_id = "phantom",
                       const rubric::Rubric& rubric = rubric::Rubric::standard());

/// RMS contrast of the reference frame at contrast levels 0.2, 0.8 and 1.0.
rubric::ContrastAnchors calibrate_contrast_anchors(View view);

/// Probability of each quality level per attribute; must sum to 1.
struct LevelMix {
  double poor = 1.0 / 3.0;
  double average = 1.0 / 3.0;
  double optimum = 1.0 / 3.0;
};

/// Raw-score interval targeted for a quality level (0 poor, 1 average, 2 optimum).
struct TargetRange {
  double lo = 0.0;
  double hi = 0.0;
};
TargetRange target_range(int level);

/// Parameters whose labels land on the requested quality levels.
PhantomParams params_for_levels(const QualityLevels& levels, std::uint64_t seed,
                                const rubric::Rubric& rubric = rubric::Rubric::standard());

std::vector<CineClip> generate_dataset(std::size_t count, std::uint64_t seed, LevelMix mix = {},
                                       const rubric::Rubric& rubric = rubric::Rubric::standard());

/// Assigns round(p * count) slots per level by largest remainder.
std::array<std::size_t, 3> level_quotas(std::size_t count, const LevelMix& mix);

}  // namespace echoqa::phantom
