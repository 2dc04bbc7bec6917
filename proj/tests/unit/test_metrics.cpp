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

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "echoqa/metrics/quality.hpp"
#include "echoqa/rng.hpp"
#include "support/oracles.hpp"

using namespace echoqa;
using namespace echoqa::metrics;

namespace {

Frame random_frame(std::size_t w, std::size_t h, Rng& rng) {
  std::vector<float> px(w * h);
  for (auto& p : px) p = static_cast<float>(rng.uniform());
  return Frame(w, h, std::move(px));
}

}  // namespace

TEST_CASE("frame validates range and size") {
  CHECK_THROWS_AS(Frame(0, 3), ValidationError);
  CHECK_THROWS_AS(Frame(2, 1, std::vector<float>{0.5f, 1.5f}), ValidationError);
  CHECK_THROWS_AS(Frame(2, 2, std::vector<float>{0.5f}), ValidationError);
  CHECK_THROWS_AS(Frame(2, 1, std::vector<float>{0.5f, std::nanf("")}), ValidationError);
}

TEST_CASE("rms contrast") {
  CHECK(rms_contrast(Frame(4, 4, 0.5f)) == 0.0);
  // Half zeros, half ones: sd = 0.5.
  Frame checker(2, 2, std::vector<float>{0, 1, 1, 0});
  CHECK(rms_contrast(checker) == doctest::Approx(0.5).epsilon(1e-15));
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    auto f = random_frame(8, 8, rng);
    CHECK(std::abs(rms_contrast(f) - oracle::rms_contrast(f)) <= 1e-10);
  }
}

TEST_CASE("rms contrast region of interest") {
  Frame f(4, 4, 0.0f);
  f.at(1, 1) = 1.0f;
  f.at(2, 1) = 1.0f;
  CHECK(rms_contrast(f, Roi{1, 1, 2, 1}) == 0.0);
  CHECK(rms_contrast(f, Roi{0, 1, 4, 1}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(rms_contrast(f, Roi{3, 3, 2, 2}), ValidationError);
  CHECK_THROWS_AS(rms_contrast(f, Roi{0, 0, 0, 2}), ValidationError);
}

TEST_CASE("rms contrast is permutation invariant and scales linearly") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    auto f = random_frame(9, 7, rng);
    std::vector<float> px(f.pixels().begin(), f.pixels().end());
    shuffle(px, rng);
    CHECK(rms_contrast(Frame(9, 7, px)) == doctest::Approx(rms_contrast(f)).epsilon(1e-12));
    const float a = static_cast<float>(rng.uniform(0.05, 1.0));
    std::vector<float> scaled(px);
    for (auto& p : scaled) p *= a;
    // The float product carries ~1e-7 relative rounding.
    CHECK(rms_contrast(Frame(9, 7, scaled)) == doctest::Approx(a * rms_contrast(f)).epsilon(1e-6));
  }
}

TEST_CASE("depth gain profile") {
  auto uniform = depth_gain_profile(Frame(5, 8, 0.3f));
  REQUIRE(uniform.band_count == 4);
  for (std::size_t b = 0; b < 4; ++b) {
    CHECK(uniform.band_variances[b] == 0.0);
    CHECK(uniform.band_means[b] == doctest::Approx(0.3));
  }
  // One band holding {0, 1}: n-1 denominator gives 0.5 (population would be 0.25).
  auto two = depth_gain_profile(Frame(2, 1, std::vector<float>{0.0f, 1.0f}), 1);
  CHECK(two.band_variances[0] == doctest::Approx(0.5));
  CHECK(sample_variance(std::vector<double>{0.0, 2.0}) == 2.0);

  std::vector<float> ramp(10 * 20);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 10; ++x) ramp[y * 10 + x] = static_cast<float>(y) / 19.0f;
  auto prof = depth_gain_profile(Frame(10, 20, ramp), 5);
  for (std::size_t b = 1; b < 5; ++b) CHECK(prof.band_means[b] > prof.band_means[b - 1]);

  CHECK_THROWS_AS(depth_gain_profile(Frame(3, 3), 4), ValidationError);
  CHECK_THROWS_AS(depth_gain_profile(Frame(1, 3), 3), ValidationError);
  CHECK_THROWS_AS(depth_gain_profile(Frame(3, 3), 0), ValidationError);
}

TEST_CASE("depth gain profile matches the loop oracle and shifts with a constant") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    std::vector<float> px(12 * 16);
    for (auto& p : px) p = static_cast<float>(rng.uniform(0.1, 0.6));
    Frame f(12, 16, px);
    auto prof = depth_gain_profile(f, 4);
    for (std::size_t b = 0; b < 4; ++b) {
      std::vector<double> band;
      for (std::size_t y = b * 4; y < b * 4 + 4; ++y)
        for (std::size_t x = 0; x < 12; ++x) band.push_back(f.at(x, y));
      CHECK(std::abs(prof.band_variances[b] - oracle::sample_variance(band)) <= 1e-10);
    }
    std::vector<float> shifted(px);
    for (auto& p : shifted) p += 0.25f;
    auto sp = depth_gain_profile(Frame(12, 16, shifted), 4);
    for (std::size_t b = 0; b < 4; ++b) {
      CHECK(sp.band_means[b] == doctest::Approx(prof.band_means[b] + 0.25).epsilon(1e-6));
      CHECK(sp.band_variances[b] == doctest::Approx(prof.band_variances[b]).epsilon(1e-4));
    }
  }
}

TEST_CASE("class error and accuracy") {
  std::vector<ScorePair> same{{0.3, 0.3}, {0.9, 0.9}};
  CHECK(class_error(same) == 0.0);
  CHECK(model_accuracy(same) == 100.0);
  std::vector<ScorePair> one{{0.9, 0.88}};
  CHECK(class_error(one) == doctest::Approx(0.02).epsilon(1e-12));
  std::vector<ScorePair> reported{{1.0, 1.0 - 0.0232}};
  CHECK(model_accuracy(reported) == doctest::Approx(97.68).epsilon(1e-12));
  CHECK_THROWS_AS(class_error(std::vector<ScorePair>{}), ValidationError);
  CHECK_THROWS_AS(class_error(std::vector<ScorePair>{{1.2, 0.5}}), ValidationError);

  Rng rng(4);
  std::vector<ScorePair> pairs;
  std::vector<double> gt, pr;
  for (int i = 0; i < 100; ++i) {
    pairs.push_back({rng.uniform(), rng.uniform()});
    gt.push_back(pairs.back().ground_truth);
    pr.push_back(pairs.back().predicted);
  }
  const double err = class_error(pairs);
  CHECK(std::abs(err - oracle::mean_abs_diff(gt, pr)) <= 1e-10);
  CHECK(std::abs(model_accuracy(pairs) - (100.0 - 100.0 * err)) <= 1e-10);
  CHECK(err >= 0.0);
  CHECK(err <= 1.0);
}

TEST_CASE("interobserver disparity") {
  std::vector<double> a{0.5, 0.9}, b{0.3, 0.9};
  auto d = interobserver_disparity(a, b);
  CHECK(d.mean == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(d.std == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
  auto z = interobserver_disparity(a, a);
  CHECK(z.mean == 0.0);
  CHECK(z.std == 0.0);
  CHECK_THROWS_AS(interobserver_disparity(a, std::vector<double>{0.1}), ValidationError);

  Rng rng(5);
  std::vector<double> x(40), y(40), diff(40);
  for (std::size_t i = 0; i < 40; ++i) {
    x[i] = rng.uniform();
    y[i] = rng.uniform();
    diff[i] = std::fabs(x[i] - y[i]);
  }
  auto r = interobserver_disparity(x, y);
  auto s = interobserver_disparity(y, x);
  CHECK(r.mean == s.mean);
  CHECK(r.std == s.std);
  CHECK(std::abs(r.mean - oracle::mean_abs_diff(x, y)) <= 1e-10);
  CHECK(std::abs(r.std - std::sqrt(oracle::sample_variance(diff))) <= 1e-10);
}

TEST_CASE("quantiles, box summary, spearman") {
  CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile({5}, 0.9) == 5.0);
  auto box = box_summary({1, 2, 3, 4, 5, 6, 7, 8, 100});
  CHECK(box.median == 5.0);
  CHECK(box.q1 == 3.0);
  CHECK(box.q3 == 7.0);
  CHECK(box.whisker_high == 8.0);
  CHECK(box.outliers == 1);
  CHECK(box.max == 100.0);

  std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> up{2, 4, 6, 8, 100}, down{5, 4, 3, 2, 1};
  CHECK(spearman(x, up) == doctest::Approx(1.0));
  CHECK(spearman(x, down) == doctest::Approx(-1.0));
  // Ties receive average ranks: levels {0,0,1,1} against {1,2,3,4}.
  CHECK(spearman(std::vector<double>{0, 0, 1, 1}, std::vector<double>{1, 2, 3, 4}) ==
        doctest::Approx(2.0 / std::sqrt(5.0)));
}
