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

#include "echoqa/metrics/quality.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace echoqa::metrics {

double rms_contrast(const Frame& frame, std::optional<Roi> roi) {
  const Roi r = roi.value_or(Roi{0, 0, frame.width(), frame.height()});
  if (r.width == 0 || r.height == 0) throw ValidationError("rms_contrast: empty region");
  if (r.x + r.width > frame.width() || r.y + r.height > frame.height()) {
    throw ValidationError("rms_contrast: region exceeds the frame");
  }
  // Welford accumulation; stable for 8-bit data over large frames.
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (std::size_t y = r.y; y < r.y + r.height; ++y) {
    for (std::size_t x = r.x; x < r.x + r.width; ++x) {
      const double v = frame.at(x, y);
      ++n;
      const double delta = v - mean;
      mean += delta / static_cast<double>(n);
      m2 += delta * (v - mean);
    }
  }
  return std::sqrt(std::max(0.0, m2 / static_cast<double>(n)));
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) throw ValidationError("sample variance needs at least 2 values");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(values.size() - 1);
}

DepthGainProfile depth_gain_profile(const Frame& frame, std::size_t band_count) {
  if (band_count == 0 || band_count > frame.height()) {
    throw ValidationError("depth_gain_profile: band count must be in [1, frame height]");
  }
  DepthGainProfile profile;
  profile.band_count = band_count;
  std::vector<double> values;
  for (std::size_t b = 0; b < band_count; ++b) {
    const std::size_t y0 = b * frame.height() / band_count;
    const std::size_t y1 = (b + 1) * frame.height() / band_count;
    values.clear();
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = 0; x < frame.width(); ++x) values.push_back(frame.at(x, y));
    if (values.size() < 2) {
      throw ValidationError("depth_gain_profile: band " + std::to_string(b) + " has fewer than 2 pixels");
    }
    profile.band_means.push_back(std::accumulate(values.begin(), values.end(), 0.0) /
                                 static_cast<double>(values.size()));
    profile.band_variances.push_back(sample_variance(values));
  }
  return profile;
}

namespace {

void check_pairs(std::span<const ScorePair> pairs) {
  if (pairs.empty()) throw ValidationError("score list is empty");
  for (const auto& p : pairs) {
    if (!(p.ground_truth >= 0.0 && p.ground_truth <= 1.0) || !(p.predicted >= 0.0 && p.predicted <= 1.0)) {
      throw ValidationError("normalised scores must lie in [0,1]");
    }
  }
}

}  // namespace

double class_error(std::span<const ScorePair> pairs) {
  check_pairs(pairs);
  double acc = 0.0;
  for (const auto& p : pairs) acc += std::abs(p.ground_truth - p.predicted);
  return acc / static_cast<double>(pairs.size());
}

double model_accuracy(std::span<const ScorePair> pairs) { return (1.0 - class_error(pairs)) * 100.0; }

Disparity interobserver_disparity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("disparity: annotator tracks differ in length");
  if (a.size() < 2) throw ValidationError("disparity: need at least 2 paired scores");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = std::abs(a[i] - b[i]);
  Disparity d;
  d.mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(diff.size());
  d.std = std::sqrt(sample_variance(diff));
  return d;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BoxSummary box_summary(std::vector<double> values) {
  if (values.empty()) throw ValidationError("box summary of an empty sample");
  std::sort(values.begin(), values.end());
  BoxSummary s;
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile(values, 0.25);
  s.median = quantile(values, 0.5);
  s.q3 = quantile(values, 0.75);
  const double iqr = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * iqr, hi_fence = s.q3 + 1.5 * iqr;
  s.whisker_low = s.max;
  s.whisker_high = s.min;
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      ++s.outliers;
      continue;
    }
    s.whisker_low = std::min(s.whisker_low, v);
    s.whisker_high = std::max(s.whisker_high, v);
  }
  return s;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("spearman needs two equal-length samples");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace echoqa::metrics
