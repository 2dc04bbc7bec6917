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

#include "echoqa/rubric/rubric.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace echoqa::rubric {

using nlohmann::json;

namespace {

Rubric build_standard() {
  json j = {
      {"version", 1},
      {"bands", {{"unsuitable_below", 4.4}, {"poor_max", 4.5}, {"average_max", 6.9}}},
      {"attributes",
       json::array({
           {{"attribute", "OnAxis"},
            {"criteria", json::array({{{"name", "Correct Cardiac Apex"}, {"poor", 2.0}, {"average", 4.0}, {"optimum", 6.0}},
                                      {{"name", "Septum Visible"}, {"poor", 1.0}, {"average", 1.5}, {"optimum", 2.0}},
                                      {{"name", "Interatrial Septum Visible"}, {"poor", 1.0}, {"average", 1.0}, {"optimum", 1.0}}})}},
           {{"attribute", "LVClarity"},
            {"criteria", json::array({{{"name", "2/4 Chambers Clarity"}, {"poor", 1.5}, {"average", 2.5}, {"optimum", 4.0}},
                                      {{"name", "Mitral Valve Clarity"}, {"poor", 1.5}, {"average", 2.0}, {"optimum", 3.0}},
                                      {{"name", "Tricuspid Valve Clarity"}, {"poor", 1.0}, {"average", 1.5}, {"optimum", 2.0}}})}},
           {{"attribute", "DepthGain"},
            {"criteria", json::array({{{"name", "Apex Signal Gain"}, {"poor", 2.0}, {"average", 3.0}, {"optimum", 5.0}},
                                      {{"name", "Basal Signal Gain"}, {"poor", 1.0}, {"average", 2.0}, {"optimum", 3.0}},
                                      {{"name", "No Excess Gain Artefacts"}, {"poor", 1.0}, {"average", 1.0}, {"optimum", 1.0}}})}},
           {{"attribute", "Foreshorten"},
            {"criteria", json::array({{{"name", "LV Apex Visibility"}, {"poor", 1.0}, {"average", 2.0}, {"optimum", 3.0}},
                                      {{"name", "Normal-Shaped Diastole"}, {"poor", 1.5}, {"average", 2.0}, {"optimum", 3.0}},
                                      {{"name", "Normal-Shaped Systole"}, {"poor", 1.5}, {"average", 2.0}, {"optimum", 3.0}}})}},
       })},
      {"contrast",
       {{"clinical", {{"poor", 4.5}, {"optimum", 9.0}, {"over", 6.0}}},
        // RMS contrast of the phantom reference frame at contrast levels 0.2 / 0.8 / 1.0.
        {"anchors",
         {{"A4C", {{"poor", 0.17146126217648941}, {"optimum", 0.30431459555968793}, {"over", 0.36307012678689293}}},
          {"A2C", {{"poor", 0.16476451070343134}, {"optimum", 0.26972423739795487}, {"over", 0.31836740729138213}}}}}}},
  };
  return Rubric::from_json(j);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

const Rubric& Rubric::standard() {
  static const Rubric r = build_standard();
  return r;
}

Rubric Rubric::from_json(const json& j) {
  Rubric r;
  try {
    r.version_ = j.at("version").get<int>();
    if (r.version_ != 1) throw ConfigurationError("unsupported rubric version " + std::to_string(r.version_));
    const auto& b = j.at("bands");
    r.bands_ = {b.at("unsuitable_below").get<double>(), b.at("poor_max").get<double>(), b.at("average_max").get<double>()};
    std::array<bool, 4> seen{};
    for (const auto& entry : j.at("attributes")) {
      const Attribute a = parse_attribute(entry.at("attribute").get<std::string>());
      if (seen[index_of(a)]) throw ConfigurationError("rubric lists an attribute twice");
      seen[index_of(a)] = true;
      for (const auto& c : entry.at("criteria")) {
        r.criteria_[index_of(a)].push_back({c.at("name").get<std::string>(), c.at("poor").get<double>(),
                                            c.at("average").get<double>(), c.at("optimum").get<double>()});
      }
    }
    if (!std::all_of(seen.begin(), seen.end(), [](bool s) { return s; })) {
      throw ConfigurationError("rubric must define all four attributes");
    }
    const auto& c = j.at("contrast");
    const auto& cl = c.at("clinical");
    r.clinical_ = {cl.at("poor").get<double>(), cl.at("optimum").get<double>(), cl.at("over").get<double>()};
    for (View v : {View::A4C, View::A2C}) {
      const auto& a = c.at("anchors").at(std::string(view_key(v)));
      r.anchors_[v == View::A4C ? 0 : 1] = {a.at("poor").get<double>(), a.at("optimum").get<double>(),
                                            a.at("over").get<double>()};
    }
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("malformed rubric config: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigurationError(std::string("malformed rubric config: ") + e.what());
  }
  r.check();
  return r;
}

void Rubric::check() const {
  for (auto a : kAttributes) {
    std::set<std::string> names;
    for (const auto& c : criteria(a)) {
      if (!names.insert(c.name).second) throw ConfigurationError("duplicate criterion '" + c.name + "'");
      if (!(0.0 <= c.poor && c.poor <= c.average && c.average <= c.optimum)) {
        throw ConfigurationError("criterion '" + c.name + "' columns must satisfy 0 <= poor <= average <= optimum");
      }
    }
    if (names.empty()) throw ConfigurationError("attribute without criteria");
  }
  if (!(bands_.unsuitable_below <= bands_.poor_max && bands_.poor_max <= bands_.average_max)) {
    throw ConfigurationError("band thresholds must be ordered");
  }
  for (const auto& a : anchors_) {
    const bool uncalibrated = a.poor == 0.0 && a.optimum == 0.0 && a.over == 0.0;
    if (!uncalibrated && !(0.0 < a.poor && a.poor < a.optimum && a.optimum < a.over)) {
      throw ConfigurationError("contrast anchors must satisfy 0 < poor < optimum < over");
    }
  }
}

Rubric Rubric::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open rubric config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigurationError("rubric config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json Rubric::to_json() const {
  json attrs = json::array();
  for (auto a : kAttributes) {
    json crit = json::array();
    for (const auto& c : criteria(a)) {
      crit.push_back({{"name", c.name}, {"poor", c.poor}, {"average", c.average}, {"optimum", c.optimum}});
    }
    attrs.push_back({{"attribute", attribute_key(a)}, {"criteria", crit}});
  }
  json anchors;
  for (View v : {View::A4C, View::A2C}) {
    const auto& a = contrast_anchors(v);
    anchors[std::string(view_key(v))] = {{"poor", a.poor}, {"optimum", a.optimum}, {"over", a.over}};
  }
  return {{"version", version_},
          {"bands",
           {{"unsuitable_below", bands_.unsuitable_below}, {"poor_max", bands_.poor_max}, {"average_max", bands_.average_max}}},
          {"attributes", attrs},
          {"contrast",
           {{"clinical", {{"poor", clinical_.poor}, {"optimum", clinical_.optimum}, {"over", clinical_.over}}},
            {"anchors", anchors}}}};
}

const CriterionSpec& Rubric::criterion(Attribute a, std::string_view name) const {
  for (const auto& c : criteria(a))
    if (c.name == name) return c;
  throw ValidationError("unknown criterion '" + std::string(name) + "' for " + std::string(attribute_key(a)));
}

std::vector<std::string> Rubric::validate(Attribute a, std::span<const CriterionScore> scores) const {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  for (const auto& s : scores) {
    if (s.attribute != a) {
      problems.push_back("'" + s.criterion + "' belongs to " + std::string(attribute_key(s.attribute)));
      continue;
    }
    const auto& specs = criteria(a);
    auto it = std::find_if(specs.begin(), specs.end(), [&](const auto& c) { return c.name == s.criterion; });
    if (it == specs.end()) {
      problems.push_back("unknown criterion '" + s.criterion + "'");
      continue;
    }
    if (!seen.insert(s.criterion).second) problems.push_back("duplicate criterion '" + s.criterion + "'");
    if (!std::isfinite(s.value) || s.value < 0.0) {
      problems.push_back("'" + s.criterion + "' must be a nonnegative number");
    } else if (s.value > it->optimum) {
      problems.push_back("'" + s.criterion + "' = " + fmt(s.value) + " exceeds ceiling " + fmt(it->optimum));
    }
  }
  for (const auto& c : criteria(a)) {
    const bool present = std::any_of(scores.begin(), scores.end(),
                                     [&](const auto& s) { return s.attribute == a && s.criterion == c.name; });
    if (!present) problems.push_back("missing criterion '" + c.name + "'");
  }
  return problems;
}

double Rubric::composite_score(Attribute a, std::span<const CriterionScore> scores) const {
  const auto problems = validate(a, scores);
  if (!problems.empty()) {
    std::string msg = std::string(attribute_key(a)) + ": ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw ValidationError(msg);
  }
  double total = 0.0;
  for (const auto& s : scores) total += s.value;
  return std::min(total, kScoreCap);
}

double Rubric::composite_score(Attribute a, const std::map<std::string, double>& values) const {
  std::vector<CriterionScore> scores;
  for (const auto& [name, v] : values) scores.push_back({a, name, v});
  return composite_score(a, scores);
}

std::vector<CriterionScore> Rubric::column(Attribute a, Column c) const {
  std::vector<CriterionScore> out;
  for (const auto& spec : criteria(a)) {
    const double v = c == Column::poor ? spec.poor : c == Column::average ? spec.average : spec.optimum;
    out.push_back({a, spec.name, v});
  }
  return out;
}

std::vector<CriterionScore> Rubric::criteria_at_severity(Attribute a, double s) const {
  if (!(s >= 0.0 && s <= 2.0)) throw ValidationError("severity must lie in [0, 2]");
  std::vector<CriterionScore> out;
  for (const auto& c : criteria(a)) {
    double v;
    if (s <= 0.5) {
      v = lerp(c.optimum, c.average, s / 0.5);
    } else if (s <= 1.0) {
      v = lerp(c.average, c.poor, (s - 0.5) / 0.5);
    } else {
      v = lerp(c.poor, 0.0, s - 1.0);
    }
    out.push_back({a, c.name, std::clamp(v, 0.0, c.optimum)});
  }
  return out;
}

double Rubric::score_at_severity(Attribute a, double s) const { return composite_score(a, criteria_at_severity(a, s)); }

double Rubric::severity_for_score(Attribute a, double raw) const {
  const double top = score_at_severity(a, 0.0);
  if (!(raw >= 0.0 && raw <= top)) throw ValidationError("score " + fmt(raw) + " outside the attainable range");
  if (raw == top) return 0.0;
  if (raw == 0.0) return 2.0;
  double lo = 0.0, hi = 2.0;
  for (int it = 0; it < 100 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (score_at_severity(a, mid) > raw) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

QualityBand Rubric::quality_band(double raw) const {
  if (raw < bands_.unsuitable_below) return QualityBand::unsuitable;
  if (raw <= bands_.poor_max) return QualityBand::poor;
  if (raw <= bands_.average_max) return QualityBand::average;
  return QualityBand::optimum;
}

double Rubric::contrast_to_clinical(double r, View view) const {
  const auto& a = contrast_anchors(view);
  if (a.optimum == 0.0) throw ConfigurationError("contrast anchors are not calibrated");
  const auto& q = clinical_;
  double score;
  if (r <= a.poor) {
    score = q.poor * r / a.poor;
  } else if (r <= a.optimum) {
    score = lerp(q.poor, q.optimum, (r - a.poor) / (a.optimum - a.poor));
  } else {
    // The over-contrast slope continues past the over anchor.
    score = lerp(q.optimum, q.over, (r - a.optimum) / (a.over - a.optimum));
  }
  return std::clamp(score, 0.0, kScoreCap);
}

void Rubric::set_contrast_anchors(View v, ContrastAnchors a) {
  anchors_[v == View::A4C ? 0 : 1] = a;
  check();
}

double normalize_score(double raw) {
  if (!(raw >= 0.0 && raw <= kScoreCap)) throw ValidationError("raw score " + fmt(raw) + " outside [0, 9]");
  return raw / kScoreCap;
}

QualityBand quality_band(double raw) { return Rubric::standard().quality_band(raw); }

AttributeScores AttributeScores::from_raw(const std::array<double, 4>& raw, const Rubric& rubric) {
  AttributeScores s;
  for (std::size_t i = 0; i < 4; ++i) s.values[i] = {raw[i], normalize_score(raw[i]), rubric.quality_band(raw[i])};
  return s;
}

AttributeScores AttributeScores::from_normalized(const std::array<double, 4>& normalized, const Rubric& rubric) {
  std::array<double, 4> raw{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!(normalized[i] >= 0.0 && normalized[i] <= 1.0)) throw ValidationError("normalised score outside [0, 1]");
    raw[i] = normalized[i] * kScoreCap;
  }
  auto s = from_raw(raw, rubric);
  for (std::size_t i = 0; i < 4; ++i) s.values[i].normalized = normalized[i];
  return s;
}

std::array<double, 4> AttributeScores::normalized() const {
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = values[i].normalized;
  return out;
}

std::array<double, 4> AttributeScores::raw() const {
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = values[i].raw;
  return out;
}

void AttributeScores::validate(const Rubric& rubric) const {
  for (auto a : kAttributes) {
    const auto& v = (*this)[a];
    const std::string key(attribute_key(a));
    if (!(v.raw >= 0.0 && v.raw <= kScoreCap)) throw ValidationError(key + " raw score outside [0, 9]");
    if (std::abs(v.normalized - v.raw / kScoreCap) > 1e-12) throw ValidationError(key + " normalised score != raw / 9");
    if (v.band != rubric.quality_band(v.raw)) throw ValidationError(key + " band inconsistent with raw score");
  }
}

json AttributeScores::to_json() const {
  json j = json::object();
  for (auto a : kAttributes) {
    const auto& v = (*this)[a];
    j[std::string(attribute_key(a))] = {{"raw", v.raw}, {"normalized", v.normalized}, {"band", band_key(v.band)}};
  }
  return j;
}

AttributeScores AttributeScores::from_json(const json& j, const Rubric& rubric) {
  std::array<double, 4> raw{};
  try {
    for (auto a : kAttributes) raw[index_of(a)] = j.at(std::string(attribute_key(a))).at("raw").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed score block: ") + e.what());
  }
  auto s = from_raw(raw, rubric);
  for (auto a : kAttributes) {
    const auto& block = j.at(std::string(attribute_key(a)));
    if (block.contains("band") && parse_band(block.at("band").get<std::string>()) != s[a].band) {
      throw ValidationError(std::string(attribute_key(a)) + " band inconsistent with raw score");
    }
  }
  return s;
}

}  // namespace echoqa::rubric
