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

#include "echoqa/phantom/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "echoqa/metrics/quality.hpp"
#include "echoqa/rng.hpp"

namespace echoqa::phantom {

using geometry::Foreshortening;
using nlohmann::json;

namespace {

// Scene layout in pixels.
constexpr double kProbeX = 113.0, kProbeY = 8.0;
constexpr double kSectorRadius = 210.0;
constexpr double kSectorHalfAngle = 40.0 * std::numbers::pi / 180.0;
constexpr double kHeartX = 113.0, kHeartY = 120.5;
constexpr double kHeartScale = 82.5;  // pixels per heart unit (half the long axis)
constexpr double kEdgeWidth = 1.5;

// Native intensities.
constexpr double kTissue = 0.30;
constexpr double kMyocardium = 0.85;
constexpr double kBlood = 0.06;

struct Ellipse {
  double cv, cu;  // centre, lateral / long-axis heart units
  double a, b;    // semi-axes
};

struct Scene {
  Ellipse envelope;
  std::vector<Ellipse> chambers;
  double apex_v = 0.0, apex_u = 0.0;  // LV endocardial apex
};

double phase(std::size_t t) {
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(kClipLength)));
}

double foreshorten_shift_px(Foreshortening f) {
  switch (f) {
    case Foreshortening::zero: return 0.0;
    case Foreshortening::mild: return 0.04 * kFrameSize;
    case Foreshortening::severe: return 0.10 * kFrameSize;
  }
  return 0.0;
}

// Ventricles shorten toward a fixed apex and narrow. A foreshortened LV is
// cut short by `shift` pixels at end-diastole (the plane misses the true
// apex) and its apex slides a further `shift` toward the base by end-systole.
Ellipse ventricle(Ellipse e, double phi, double shift_px) {
  const double top0 = e.cu - e.b;
  const double bottom = top0 + 2.0 * e.b * (1.0 - 0.12 * phi);
  const double top = top0 + shift_px * (1.0 + phi) / kHeartScale;
  return {e.cv, 0.5 * (top + bottom), e.a * (1.0 - 0.25 * phi), 0.5 * (bottom - top)};
}

Ellipse atrium(Ellipse e, double phi) { return {e.cv, e.cu, e.a * (1.0 + 0.1 * phi), e.b * (1.0 + 0.1 * phi)}; }

Scene scene(View view, double phi, Foreshortening f) {
  const double shift = foreshorten_shift_px(f);
  Scene s;
  Ellipse lv;
  if (view == View::A4C) {
    s.envelope = {0.0, 0.05, 0.75, 1.0};
    lv = ventricle({0.30, -0.25, 0.24, 0.55}, phi, shift);
    s.chambers = {lv, ventricle({-0.32, -0.15, 0.20, 0.45}, phi, 0.0), atrium({0.30, 0.62, 0.22, 0.25}, phi),
                  atrium({-0.30, 0.62, 0.20, 0.24}, phi)};
  } else {
    s.envelope = {0.0, 0.05, 0.55, 1.0};
    lv = ventricle({0.0, -0.25, 0.32, 0.55}, phi, shift);
    s.chambers = {lv, atrium({0.0, 0.62, 0.30, 0.25}, phi)};
  }
  s.apex_v = lv.cv;
  s.apex_u = lv.cu - lv.b;
  return s;
}

// Fraction of the pixel covered by the ellipse, using a first-order signed
// distance to its boundary and a linear ramp of width kEdgeWidth.
double coverage(const Ellipse& e, double v, double u) {
  const double dv = (v - e.cv) / e.a, du = (u - e.cu) / e.b;
  const double q = dv * dv + du * du;
  if (q < 0.25) return 1.0;
  if (q > 2.25) return 0.0;
  const double rho = std::sqrt(q);
  const double gv = dv / e.a, gu = du / e.b;
  const double grad = std::sqrt(gv * gv + gu * gu) / (rho * kHeartScale);
  const double dist = (rho - 1.0) / grad;
  return std::clamp(0.5 - dist / kEdgeWidth, 0.0, 1.0);
}

struct SectorGrid {
  std::vector<unsigned char> inside;
  std::vector<double> depth;  // distance from the probe, pixels
};

const SectorGrid& sector() {
  static const SectorGrid grid = [] {
    SectorGrid g;
    g.inside.resize(kFrameSize * kFrameSize);
    g.depth.resize(kFrameSize * kFrameSize);
    for (std::size_t y = 0; y < kFrameSize; ++y) {
      for (std::size_t x = 0; x < kFrameSize; ++x) {
        const double dx = double(x) - kProbeX, dy = double(y) - kProbeY;
        const double r = std::hypot(dx, dy);
        const double angle = std::atan2(dx, dy);
        g.depth[y * kFrameSize + x] = r;
        g.inside[y * kFrameSize + x] = dy > 0.0 && r <= kSectorRadius && std::abs(angle) <= kSectorHalfAngle;
      }
    }
    return g;
  }();
  return grid;
}

// Native intensity map (before contrast, gain and noise); 0 outside the sector.
std::vector<double> native(View view, double phi, Foreshortening f, double rotation_deg) {
  const auto& grid = sector();
  const Scene s = scene(view, phi, f);
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), sn = std::sin(th);
  std::vector<double> out(kFrameSize * kFrameSize, 0.0);
  for (std::size_t y = 0; y < kFrameSize; ++y) {
    for (std::size_t x = 0; x < kFrameSize; ++x) {
      const std::size_t i = y * kFrameSize + x;
      if (!grid.inside[i]) continue;
      const double dx = double(x) - kHeartX, dy = double(y) - kHeartY;
      const double v = (dx * c + dy * sn) / kHeartScale;
      const double u = (-dx * sn + dy * c) / kHeartScale;
      double t = kTissue;
      const double m = coverage(s.envelope, v, u);
      t = t * (1.0 - m) + kMyocardium * m;
      for (const auto& e : s.chambers) {
        const double k = coverage(e, v, u);
        t = t * (1.0 - k) + kBlood * k;
      }
      out[i] = t;
    }
  }
  return out;
}

geometry::Point2 to_pixels(double v, double u, double rotation_deg) {
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), sn = std::sin(th);
  return {kHeartX + kHeartScale * (v * c - u * sn), kHeartY + kHeartScale * (v * sn + u * c)};
}

const std::vector<double>& reference_template(View view) {
  static const std::vector<double> a4c = native(View::A4C, 0.0, Foreshortening::zero, 0.0);
  static const std::vector<double> a2c = native(View::A2C, 0.0, Foreshortening::zero, 0.0);
  return view == View::A4C ? a4c : a2c;
}

bool in_range(double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; }

}  // namespace

void PhantomParams::validate() const {
  if (!in_range(contrast_level, 0.0, 1.0)) throw ValidationError("contrast_level must lie in [0,1]");
  if (!in_range(gain_gradient, -1.0, 1.0)) throw ValidationError("gain_gradient must lie in [-1,1]");
  if (!in_range(axis_rotation_deg, -30.0, 30.0)) throw ValidationError("axis_rotation_deg must lie in [-30,30]");
  if (!in_range(noise_amplitude, 0.0, 0.2)) throw ValidationError("noise_amplitude must lie in [0,0.2]");
}

json PhantomParams::to_json() const {
  return {{"seed", seed},
          {"contrast_level", contrast_level},
          {"gain_gradient", gain_gradient},
          {"axis_rotation_deg", axis_rotation_deg},
          {"foreshorten_level", geometry::foreshortening_key(foreshorten_level)},
          {"noise_amplitude", noise_amplitude},
          {"view", view_key(view)}};
}

PhantomParams PhantomParams::from_json(const json& j) {
  PhantomParams p;
  try {
    p.seed = j.at("seed").get<std::uint64_t>();
    p.contrast_level = j.at("contrast_level").get<double>();
    p.gain_gradient = j.at("gain_gradient").get<double>();
    p.axis_rotation_deg = j.at("axis_rotation_deg").get<double>();
    p.foreshorten_level = geometry::parse_foreshortening(j.at("foreshorten_level").get<std::string>());
    p.noise_amplitude = j.at("noise_amplitude").get<double>();
    p.view = parse_view(j.at("view").get<std::string>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed phantom parameters: ") + e.what());
  }
  p.validate();
  return p;
}

void CineClip::validate(const rubric::Rubric& rubric) const {
  if (frames.size() != kClipLength) {
    throw ValidationError("clip " + clip_id + " has " + std::to_string(frames.size()) + " frames, expected 20");
  }
  for (const auto& f : frames) {
    if (f.width() != frames.front().width() || f.height() != frames.front().height()) {
      throw ValidationError("clip " + clip_id + " mixes frame dimensions");
    }
  }
  if (apex_track.apex_positions.size() != frames.size()) {
    throw ValidationError("clip " + clip_id + " apex track length differs from frame count");
  }
  apex_track.validate();
  labels.validate(rubric);
  if (params) params->validate();
}

// Past the optimum (0.8) bright walls and the blood pool clip, as over-gain does.
double contrast_gain(double c) { return c <= 0.8 ? c / 0.8 : 1.0 + 2.5 * (c - 0.8); }

Frame reference_frame(View view, double contrast_level) {
  if (!in_range(contrast_level, 0.0, 1.0)) throw ValidationError("contrast_level must lie in [0,1]");
  const auto& t = reference_template(view);
  const auto& grid = sector();
  const double k = contrast_gain(contrast_level);
  std::vector<float> px(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    px[i] = grid.inside[i] ? static_cast<float>(std::clamp(kTissue + k * (t[i] - kTissue), 0.0, 1.0)) : 0.0f;
  }
  return Frame(kFrameSize, kFrameSize, std::move(px));
}

RenderedClip render_clip(const PhantomParams& p) {
  p.validate();
  const auto& grid = sector();
  const double k = contrast_gain(p.contrast_level);
  Rng rng(mix_seed(p.seed, kGeneratorVersion));
  RenderedClip out{{}, reference_frame(p.view, p.contrast_level), {}};
  out.apex_track.ed_index = kEdIndex;
  out.apex_track.es_index = kEsIndex;
  out.apex_track.frame_height = static_cast<double>(kFrameSize);
  for (std::size_t t = 0; t < kClipLength; ++t) {
    const double phi = phase(t);
    const auto base = native(p.view, phi, p.foreshorten_level, p.axis_rotation_deg);
    std::vector<float> px(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double noise = 1.0 + p.noise_amplitude * (2.0 * rng.uniform() - 1.0);
      if (!grid.inside[i]) {
        px[i] = 0.0f;
        continue;
      }
      double v = kTissue + k * (base[i] - kTissue);
      // Time-gain error ramps in over the far half of the sector.
      const double far = std::max(0.0, grid.depth[i] - 0.5 * kSectorRadius) / (0.5 * kSectorRadius);
      v *= std::max(0.0, 1.0 + p.gain_gradient * far);
      v *= noise;
      // Quantise to 8 bits so a save/load cycle is lossless.
      px[i] = from_u8(static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    out.frames.emplace_back(kFrameSize, kFrameSize, std::move(px));
    const Scene s = scene(p.view, phi, p.foreshorten_level);
    out.apex_track.apex_positions.push_back(to_pixels(s.apex_v, s.apex_u, p.axis_rotation_deg));
  }
  return out;
}

std::array<std::vector<rubric::CriterionScore>, 4> label_criteria(const RenderedClip& clip, const PhantomParams& p,
                                                                  const rubric::Rubric& rubric) {
  std::array<std::vector<rubric::CriterionScore>, 4> out;
  out[index_of(Attribute::OnAxis)] = rubric.criteria_at_severity(Attribute::OnAxis, std::abs(p.axis_rotation_deg) / 30.0);
  out[index_of(Attribute::DepthGain)] = rubric.criteria_at_severity(Attribute::DepthGain, std::abs(p.gain_gradient));

  const double clinical = rubric.contrast_to_clinical(metrics::rms_contrast(clip.reference), p.view);
  out[index_of(Attribute::LVClarity)] =
      rubric.criteria_at_severity(Attribute::LVClarity, rubric.severity_for_score(Attribute::LVClarity, clinical));

  switch (p.foreshorten_level) {
    case Foreshortening::zero:
      out[index_of(Attribute::Foreshorten)] = rubric.column(Attribute::Foreshorten, rubric::Column::optimum);
      break;
    case Foreshortening::mild:
      out[index_of(Attribute::Foreshorten)] = rubric.column(Attribute::Foreshorten, rubric::Column::average);
      break;
    case Foreshortening::severe: {
      // The diastolic shape is intact; apex visibility and systolic shape are poor.
      auto c = rubric.column(Attribute::Foreshorten, rubric::Column::poor);
      const auto avg = rubric.column(Attribute::Foreshorten, rubric::Column::average);
      c[1].value = avg[1].value;
      out[index_of(Attribute::Foreshorten)] = c;
      break;
    }
  }
  return out;
}

rubric::AttributeScores label_clip(const RenderedClip& clip, const PhantomParams& p, const rubric::Rubric& rubric) {
  const auto criteria = label_criteria(clip, p, rubric);
  std::array<double, 4> raw{};
  for (auto a : kAttributes) raw[index_of(a)] = rubric.composite_score(a, criteria[index_of(a)]);
  return rubric::AttributeScores::from_raw(raw, rubric);
}

CineClip generate_clip(const PhantomParams& params, std::string clip_id, const rubric::Rubric& rubric) {
  auto rendered = render_clip(params);
  CineClip clip;
  clip.clip_id = std::move(clip_id);
  clip.view = params.view;
  clip.labels = label_clip(rendered, params, rubric);
  clip.frames = std::move(rendered.frames);
  clip.apex_track = std::move(rendered.apex_track);
  clip.params = params;
  return clip;
}

rubric::ContrastAnchors calibrate_contrast_anchors(View view) {
  return {metrics::rms_contrast(reference_frame(view, 0.2)), metrics::rms_contrast(reference_frame(view, 0.8)),
          metrics::rms_contrast(reference_frame(view, 1.0))};
}

TargetRange target_range(int level) {
  switch (level) {
    case 0: return {4.41, 4.49};
    case 1: return {5.5, 6.4};
    case 2: return {8.2, 9.0};
  }
  throw ValidationError("quality level must be 0, 1 or 2");
}

std::array<std::size_t, 3> level_quotas(std::size_t count, const LevelMix& mix) {
  const std::array<double, 3> p{mix.poor, mix.average, mix.optimum};
  double total = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("level mix probabilities must be nonnegative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("level mix probabilities must sum to 1");
  std::array<std::size_t, 3> q{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = p[i] * static_cast<double>(count);
    q[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(q[i]);
    assigned += q[i];
  }
  while (assigned < count) {
    // Largest remainder; ties go to the lower level.
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best]) best = i;
    ++q[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return q;
}

namespace {

// Contrast level in [lo, hi] whose clinical clarity equals `target`, given
// the map increases on that interval.
double solve_contrast(View view, double target, double lo, double hi, const rubric::Rubric& rubric) {
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double q = rubric.contrast_to_clinical(metrics::rms_contrast(reference_frame(view, mid)), view);
    if (q < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

PhantomParams params_for_levels(const QualityLevels& levels, std::uint64_t seed, const rubric::Rubric& rubric) {
  Rng rng(seed);
  PhantomParams p;
  p.view = rng.coin() ? View::A4C : View::A2C;
  p.noise_amplitude = rng.uniform(0.02, 0.08);
  p.seed = rng.next_u64();

  auto draw = [&](int level) {
    const auto r = target_range(level);
    return rng.uniform(r.lo, r.hi);
  };
  auto sign = [&] { return rng.coin() ? 1.0 : -1.0; };

  const double on_axis = draw(levels[index_of(Attribute::OnAxis)]);
  p.axis_rotation_deg = std::min(30.0, 30.0 * rubric.severity_for_score(Attribute::OnAxis, on_axis)) * sign();

  const double gain = draw(levels[index_of(Attribute::DepthGain)]);
  p.gain_gradient = std::min(1.0, rubric.severity_for_score(Attribute::DepthGain, gain)) * sign();

  const int clarity_level = levels[index_of(Attribute::LVClarity)];
  const bool over = clarity_level == 1 && rng.coin();
  if (over) {
    // Saturated plateau; the label still comes from the reference RMS.
    p.contrast_level = rng.uniform(0.95, 1.0);
  } else {
    p.contrast_level = solve_contrast(p.view, draw(clarity_level), 0.0, 0.8, rubric);
  }

  switch (levels[index_of(Attribute::Foreshorten)]) {
    case 0: p.foreshorten_level = Foreshortening::severe; break;
    case 1: p.foreshorten_level = Foreshortening::mild; break;
    default: p.foreshorten_level = Foreshortening::zero; break;
  }
  return p;
}

std::vector<CineClip> generate_dataset(std::size_t count, std::uint64_t seed, LevelMix mix, const rubric::Rubric& rubric) {
  if (count < 5) throw ValidationError("a dataset needs at least 5 clips");
  const auto quotas = level_quotas(count, mix);
  std::array<std::vector<int>, 4> per_attribute;
  for (auto a : kAttributes) {
    auto& levels = per_attribute[index_of(a)];
    for (int l = 0; l < 3; ++l) levels.insert(levels.end(), quotas[l], l);
    Rng rng(mix_seed(seed, 1000 + index_of(a)));
    shuffle(levels, rng);
  }
  std::vector<CineClip> clips;
  clips.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    QualityLevels levels{};
    for (auto a : kAttributes) levels[index_of(a)] = per_attribute[index_of(a)][i];
    char id[32];
    std::snprintf(id, sizeof id, "c%03zu", i);
    auto clip = generate_clip(params_for_levels(levels, mix_seed(seed, i), rubric), id, rubric);
    clip.levels = levels;
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace echoqa::phantom
