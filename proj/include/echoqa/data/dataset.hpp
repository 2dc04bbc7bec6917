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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoqa/phantom/phantom.hpp"
#include "echoqa/rng.hpp"

namespace echoqa::data {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestName = "manifest";
inline constexpr std::size_t kInputSize = 227;

/// Binary 8-bit portable graymap (P5).
void write_pgm(const fs::path& path, const Frame& frame);
Frame read_pgm(const fs::path& path);

enum class Split { train, val, test };
std::string_view split_key(Split s);
Split parse_split(std::string_view key);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Validation and test each get round(0.2 n) (halves away from zero); the
/// remainder goes to training.
SplitCounts split_sizes(std::size_t n);

using SplitAssignment = std::map<std::string, Split>;

/// Clip-level 60:20:20 split. Ids are sorted before a seeded shuffle, so
/// the input order does not matter.
SplitAssignment split_dataset(std::vector<std::string> clip_ids, std::uint64_t seed);

struct ClipEntry {
  std::string id;
  View view = View::A4C;
  std::vector<std::string> frame_files;  // relative to the dataset root
  std::size_t width = 0, height = 0;
  rubric::AttributeScores labels;
  std::string annotator = "phantom";
  geometry::ApexTrack apex_track;
  std::optional<phantom::PhantomParams> params;
  std::optional<phantom::QualityLevels> levels;
  std::optional<Split> split;
};

struct DatasetManifest {
  int version = kManifestVersion;
  std::optional<std::uint64_t> split_seed;
  std::vector<ClipEntry> clips;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);

  const ClipEntry& find(const std::string& id) const;
  SplitCounts split_counts() const;
  /// Throws when a split is present but not within one clip of 60:20:20.
  void check_split_fractions() const;
};

DatasetManifest read_manifest(const fs::path& root);
void write_manifest(const fs::path& root, const DatasetManifest& manifest);

/// Writes frames and the manifest; returns the manifest.
DatasetManifest save_dataset(const std::vector<phantom::CineClip>& clips, const fs::path& root,
                             const SplitAssignment* splits = nullptr);

/// Loads one clip's frames, checking existence and dimensions.
phantom::CineClip load_clip(const fs::path& root, const ClipEntry& entry);

struct Dataset {
  DatasetManifest manifest;
  std::vector<phantom::CineClip> clips;  // manifest order

  /// Clips assigned to a split; throws StateError if the dataset is unsplit.
  std::vector<phantom::CineClip> subset(Split s) const;
};

Dataset load_dataset(const fs::path& root);

/// Adds split assignments to an existing dataset's manifest.
DatasetManifest assign_splits(const fs::path& root, std::uint64_t seed);

struct AugmentationSpec {
  double max_translation_fraction = 0.05;  // of width / height
  double max_rotation_deg = 10.0;
  bool horizontal_flip = false;
  bool vertical_flip = false;

  static AugmentationSpec none() { return {0.0, 0.0, false, false}; }
  void validate() const;
};

struct AugmentationDraw {
  long shift_x = 0;
  long shift_y = 0;
  double rotation_deg = 0.0;
  bool flip_h = false;
  bool flip_v = false;
};

AugmentationDraw draw_augmentation(const AugmentationSpec& spec, std::size_t width, std::size_t height, Rng& rng);

/// Flip, rotate about the centre, then translate; bilinear sampling with
/// zero fill, output clipped to [0,1].
Frame augment(const Frame& frame, const AugmentationDraw& draw);
Frame augment(const Frame& frame, const AugmentationSpec& spec, Rng& rng);

/// Bilinear resample to 227x227 (pixel-centre aligned).
Frame resize_to_input(const Frame& frame);

}  // namespace echoqa::data
