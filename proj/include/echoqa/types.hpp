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
#include <string>
#include <string_view>

#include "echoqa/error.hpp"

namespace echoqa {

/// The four quality attributes, in report column order.
enum class Attribute { OnAxis, LVClarity, DepthGain, Foreshorten };

inline constexpr std::array<Attribute, 4> kAttributes{Attribute::OnAxis, Attribute::LVClarity,
                                                      Attribute::DepthGain, Attribute::Foreshorten};

inline std::size_t index_of(Attribute a) { return static_cast<std::size_t>(a); }

/// Stable machine key ("OnAxis", ...), used in every file format.
inline std::string_view attribute_key(Attribute a) {
  switch (a) {
    case Attribute::OnAxis: return "OnAxis";
    case Attribute::LVClarity: return "LVClarity";
    case Attribute::DepthGain: return "DepthGain";
    case Attribute::Foreshorten: return "Foreshorten";
  }
  return "";
}

/// Report column heading.
inline std::string_view attribute_label(Attribute a) {
  switch (a) {
    case Attribute::OnAxis: return "On-Axis";
    case Attribute::LVClarity: return "LV Clarity";
    case Attribute::DepthGain: return "Depth Gain";
    case Attribute::Foreshorten: return "Fore-Shortening";
  }
  return "";
}

inline Attribute parse_attribute(std::string_view key) {
  for (auto a : kAttributes)
    if (attribute_key(a) == key) return a;
  throw ValidationError("unknown attribute '" + std::string(key) + "'");
}

enum class View { A4C, A2C };

inline std::string_view view_key(View v) { return v == View::A4C ? "A4C" : "A2C"; }

inline View parse_view(std::string_view key) {
  if (key == "A4C") return View::A4C;
  if (key == "A2C") return View::A2C;
  throw ValidationError("unknown view '" + std::string(key) + "'");
}

enum class QualityBand { unsuitable, poor, average, optimum };

inline std::string_view band_key(QualityBand b) {
  switch (b) {
    case QualityBand::unsuitable: return "unsuitable";
    case QualityBand::poor: return "poor";
    case QualityBand::average: return "average";
    case QualityBand::optimum: return "optimum";
  }
  return "";
}

inline QualityBand parse_band(std::string_view key) {
  for (auto b : {QualityBand::unsuitable, QualityBand::poor, QualityBand::average, QualityBand::optimum})
    if (band_key(b) == key) return b;
  throw ValidationError("unknown quality band '" + std::string(key) + "'");
}

}  // namespace echoqa
