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
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoqa/types.hpp"

namespace echoqa::rubric {

inline constexpr double kScoreCap = 9.0;

/// One row of the manual scoring table: the value awarded per quality column.
struct CriterionSpec {
  std::string name;
  double poor = 0.0;
  double average = 0.0;
  double optimum = 0.0;  // also the ceiling for any submitted value
};

struct CriterionScore {
  Attribute attribute = Attribute::OnAxis;
  std::string criterion;
  double value = 0.0;
};

struct BandThresholds {
  double unsuitable_below = 4.4;
  double poor_max = 4.5;
  double average_max = 6.9;
};

/// Raw-contrast values that map onto the clinical anchors.
struct ContrastAnchors {
  double poor = 0.0;
  double optimum = 0.0;
  double over = 0.0;
};

struct ClinicalAnchors {
  double poor = 4.5;
  double optimum = 9.0;
  double over = 6.0;
};

enum class Column { poor, average, optimum };

class Rubric {
 public:
  /// The built-in table, identical to the shipped config/rubric.json.
  static const Rubric& standard();

  static Rubric from_json(const nlohmann::json& j);
  static Rubric load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  int version() const { return version_; }
  const std::vector<CriterionSpec>& criteria(Attribute a) const { return criteria_[index_of(a)]; }
  const CriterionSpec& criterion(Attribute a, std::string_view name) const;
  const BandThresholds& bands() const { return bands_; }
  const ContrastAnchors& contrast_anchors(View v) const { return anchors_[v == View::A4C ? 0 : 1]; }
  const ClinicalAnchors& clinical_anchors() const { return clinical_; }

  /// Problems with a criterion set (unknown, missing or duplicate names,
  /// negative or over-ceiling values); empty when valid.
  std::vector<std::string> validate(Attribute a, std::span<const CriterionScore> scores) const;

  /// Sum of criterion values capped at 9.0. Throws ValidationError listing every problem.
  double composite_score(Attribute a, std::span<const CriterionScore> scores) const;
  double composite_score(Attribute a, const std::map<std::string, double>& values) const;

  /// Criterion values for one printed column.
  std::vector<CriterionScore> column(Attribute a, Column c) const;

  /// Criterion values at a continuous severity s in [0,2]: s = 0, 0.5, 1
  /// reproduce the optimum, average and poor columns; s = 2 scores zero.
  /// Values are linear between those knots.
  std::vector<CriterionScore> criteria_at_severity(Attribute a, double severity) const;
  double score_at_severity(Attribute a, double severity) const;

  /// Inverse of score_at_severity (strictly decreasing) by bisection.
  double severity_for_score(Attribute a, double raw) const;

  QualityBand quality_band(double raw) const;

  /// Non-monotone map from raw RMS contrast to a clinical score: rises
  /// through the poor anchor to the optimum, then falls to the over-contrast
  /// anchor and keeps falling beyond it. Clamped to [0, 9].
  double contrast_to_clinical(double raw_contrast, View view = View::A4C) const;

  void set_contrast_anchors(View v, ContrastAnchors a);

 private:
  void check() const;

  int version_ = 1;
  std::array<std::vector<CriterionSpec>, 4> criteria_;
  BandThresholds bands_;
  std::array<ContrastAnchors, 2> anchors_;
  ClinicalAnchors clinical_;
};

/// raw / 9 for raw in [0, 9].
double normalize_score(double raw);

/// Band under the standard thresholds.
QualityBand quality_band(double raw);

struct AttributeScore {
  double raw = 0.0;
  double normalized = 0.0;
  QualityBand band = QualityBand::unsuitable;
};

/// Per-attribute scores for one clip.
struct AttributeScores {
  std::array<AttributeScore, 4> values{};

  static AttributeScores from_raw(const std::array<double, 4>& raw, const Rubric& rubric = Rubric::standard());
  static AttributeScores from_normalized(const std::array<double, 4>& normalized,
                                         const Rubric& rubric = Rubric::standard());

  const AttributeScore& operator[](Attribute a) const { return values[index_of(a)]; }
  std::array<double, 4> normalized() const;
  std::array<double, 4> raw() const;

  /// Throws ValidationError when normalisation or bands are inconsistent.
  void validate(const Rubric& rubric = Rubric::standard()) const;

  nlohmann::json to_json() const;
  static AttributeScores from_json(const nlohmann::json& j, const Rubric& rubric = Rubric::standard());
};

}  // namespace echoqa::rubric
