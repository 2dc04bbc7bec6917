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

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "echoqa/error.hpp"

namespace echoqa {

enum class FrameOrigin { phantom, imported };

/// Intensity of an 8-bit level. Every producer of quantised pixels uses this
/// so that a write/read cycle reproduces the same floats.
inline float from_u8(unsigned level) { return static_cast<float>(level / 255.0); }

/// Grayscale image with intensities in [0,1], row-major.
class Frame {
 public:
  Frame() = default;
  Frame(std::size_t width, std::size_t height, float fill = 0.0f, FrameOrigin origin = FrameOrigin::phantom)
      : width_(width), height_(height), origin_(origin), pixels_(width * height, fill) {
    if (width == 0 || height == 0) throw ValidationError("frame dimensions must be positive");
    if (!(fill >= 0.0f && fill <= 1.0f)) throw ValidationError("frame fill outside [0,1]");
  }
  Frame(std::size_t width, std::size_t height, std::vector<float> pixels,
        FrameOrigin origin = FrameOrigin::phantom)
      : width_(width), height_(height), origin_(origin), pixels_(std::move(pixels)) {
    if (width == 0 || height == 0) throw ValidationError("frame dimensions must be positive");
    if (pixels_.size() != width * height) throw ValidationError("frame pixel count does not match dimensions");
    for (float p : pixels_)
      if (!(p >= 0.0f && p <= 1.0f)) throw ValidationError("frame pixel outside [0,1]");
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  FrameOrigin origin() const { return origin_; }
  std::span<const float> pixels() const { return pixels_; }
  std::span<float> pixels() { return pixels_; }

  float at(std::size_t x, std::size_t y) const { return pixels_[y * width_ + x]; }
  float& at(std::size_t x, std::size_t y) { return pixels_[y * width_ + x]; }

  friend bool operator==(const Frame& a, const Frame& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.pixels_ == b.pixels_;
  }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  FrameOrigin origin_ = FrameOrigin::phantom;
  std::vector<float> pixels_;
};

}  // namespace echoqa
