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

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "echoqa/metrics/frame.hpp"

namespace echoqa::metrics {

/// Axis-aligned pixel rectangle.
struct Roi {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// RMS contrast: population standard deviation of intensities over the
/// region (whole frame by default), normalised by the pixel count.
double rms_contrast(const Frame& frame, std::optional<Roi> roi = std::nullopt);

/// Sample variance with the n-1 denominator.
double sample_variance(std::span<const double> values);

struct DepthGainProfile {
  std::size_t band_count = 0;
  std::vector<double> band_means;      // near field (top) first
  std::vector<double> band_variances;  // sample variances, n-1 denominator
};

inline constexpr std::size_t kDefaultBandCount = 4;

/// Splits the frame into horizontal bands (row ranges floor(i*H/B) ..
/// floor((i+1)*H/B)) and summarises each band's intensities.
DepthGainProfile depth_gain_profile(const Frame& frame, std::size_t band_count = kDefaultBandCount);

struct ScorePair {
  double ground_truth = 0.0;
  double predicted = 0.0;
};

/// Mean absolute difference between ground-truth and predicted normalised scores.
double class_error(std::span<const ScorePair> pairs);

/// (1 - class_error) * 100.
double model_accuracy(std::span<const ScorePair> pairs);

struct Disparity {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

/// Mean and sample std of |a_i - b_i|.
Disparity interobserver_disparity(std::span<const double> a, std::span<const double> b);

/// Box-plot summary (type-7 quartiles, Tukey whiskers at 1.5 IQR clipped to data).
struct BoxSummary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
  double whisker_low = 0, whisker_high = 0;
  std::size_t outliers = 0;
};

BoxSummary box_summary(std::vector<double> values);

/// Linear-interpolated quantile (type 7) of an unsorted sample, q in [0,1].
double quantile(std::vector<double> values, double q);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace echoqa::metrics
