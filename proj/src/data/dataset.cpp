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

#include "echoqa/data/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace echoqa::data {

using nlohmann::json;

// ---- PGM -------------------------------------------------------------------

void write_pgm(const fs::path& path, const Frame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << frame.width() << ' ' << frame.height() << "\n255\n";
  std::string bytes(frame.pixels().size(), '\0');
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(frame.pixels()[i] * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t pgm_number(std::istream& in, const fs::path& path) {
  const auto tok = pgm_token(in);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isdigit(ch); })) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  return std::stoul(tok);
}

}  // namespace

Frame read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (pgm_token(in) != "P5") throw IoError(path.string() + ": not a binary graymap (P5)");
  const std::size_t w = pgm_number(in, path), h = pgm_number(in, path), maxval = pgm_number(in, path);
  if (w == 0 || h == 0) throw IoError(path.string() + ": empty image");
  if (maxval == 0 || maxval > 255) throw IoError(path.string() + ": only 8-bit graymaps are supported");
  std::string bytes(w * h, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw IoError(path.string() + ": truncated pixel data");
  std::vector<float> px(w * h);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const unsigned level = static_cast<unsigned char>(bytes[i]);
    if (level > maxval) throw IoError(path.string() + ": pixel above maxval");
    px[i] = maxval == 255 ? from_u8(level) : static_cast<float>(double(level) / double(maxval));
  }
  return Frame(w, h, std::move(px), FrameOrigin::imported);
}

// ---- splits ----------------------------------------------------------------

std::string_view split_key(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "";
}

Split parse_split(std::string_view key) {
  if (key == "train") return Split::train;
  if (key == "val") return Split::val;
  if (key == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(key) + "'");
}

SplitCounts split_sizes(std::size_t n) {
  const auto held = static_cast<std::size_t>(std::round(0.2 * static_cast<double>(n)));
  return {n - 2 * held, held, held};
}

SplitAssignment split_dataset(std::vector<std::string> ids, std::uint64_t seed) {
  if (ids.size() < 5) throw ValidationError("splitting needs at least 5 clips");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ValidationError("duplicate clip id");
  Rng rng(seed);
  shuffle(ids, rng);
  const auto counts = split_sizes(ids.size());
  SplitAssignment out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out[ids[i]] = i < counts.val ? Split::val : i < counts.val + counts.test ? Split::test : Split::train;
  }
  return out;
}

// ---- manifest --------------------------------------------------------------

json DatasetManifest::to_json() const {
  json clips_j = json::array();
  for (const auto& c : clips) {
    json apex = json::array();
    for (const auto& p : c.apex_track.apex_positions) apex.push_back({p.x, p.y});
    json j = {{"id", c.id},
              {"view", view_key(c.view)},
              {"frames", c.frame_files},
              {"width", c.width},
              {"height", c.height},
              {"labels", c.labels.to_json()},
              {"annotator", c.annotator},
              {"apex_track",
               {{"ed_index", c.apex_track.ed_index},
                {"es_index", c.apex_track.es_index},
                {"frame_height", c.apex_track.frame_height},
                {"positions", apex}}}};
    if (c.params) j["params"] = c.params->to_json();
    if (c.levels) {
      json lv;
      for (auto a : kAttributes) lv[std::string(attribute_key(a))] = (*c.levels)[index_of(a)];
      j["levels"] = lv;
    }
    if (c.split) j["split"] = split_key(*c.split);
    clips_j.push_back(std::move(j));
  }
  json j = {{"format", "echoqa-dataset"}, {"version", version}, {"clips", clips_j}};
  if (split_seed) j["split_seed"] = *split_seed;
  return j;
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  if (!j.is_object() || !j.contains("version")) throw IoError("manifest has no version field");
  m.version = j.at("version").get<int>();
  if (m.version != kManifestVersion) {
    throw IoError("unsupported manifest version " + std::to_string(m.version) + " (expected " +
                  std::to_string(kManifestVersion) + ")");
  }
  if (j.contains("split_seed")) m.split_seed = j.at("split_seed").get<std::uint64_t>();
  for (const auto& cj : j.at("clips")) {
    ClipEntry c;
    c.id = cj.value("id", "");
    try {
      c.view = parse_view(cj.at("view").get<std::string>());
      c.frame_files = cj.at("frames").get<std::vector<std::string>>();
      c.width = cj.at("width").get<std::size_t>();
      c.height = cj.at("height").get<std::size_t>();
      c.labels = rubric::AttributeScores::from_json(cj.at("labels"));
      c.annotator = cj.at("annotator").get<std::string>();
      const auto& at = cj.at("apex_track");
      c.apex_track.ed_index = at.at("ed_index").get<std::size_t>();
      c.apex_track.es_index = at.at("es_index").get<std::size_t>();
      c.apex_track.frame_height = at.at("frame_height").get<double>();
      for (const auto& p : at.at("positions")) c.apex_track.apex_positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      if (cj.contains("params")) c.params = phantom::PhantomParams::from_json(cj.at("params"));
      if (cj.contains("levels")) {
        phantom::QualityLevels lv{};
        for (auto a : kAttributes) lv[index_of(a)] = cj.at("levels").at(std::string(attribute_key(a))).get<int>();
        c.levels = lv;
      }
      if (cj.contains("split")) c.split = parse_split(cj.at("split").get<std::string>());
    } catch (const json::exception& e) {
      throw IoError("manifest entry for clip '" + c.id + "' is malformed: " + e.what());
    } catch (const ValidationError& e) {
      throw IoError("manifest entry for clip '" + c.id + "' is invalid: " + e.what());
    }
    m.clips.push_back(std::move(c));
  }
  m.check_split_fractions();
  return m;
}

const ClipEntry& DatasetManifest::find(const std::string& id) const {
  for (const auto& c : clips)
    if (c.id == id) return c;
  throw NotFoundError("no clip '" + id + "' in the manifest");
}

SplitCounts DatasetManifest::split_counts() const {
  SplitCounts s;
  for (const auto& c : clips) {
    if (!c.split) continue;
    (*c.split == Split::train ? s.train : *c.split == Split::val ? s.val : s.test)++;
  }
  return s;
}

void DatasetManifest::check_split_fractions() const {
  const auto n_split = std::count_if(clips.begin(), clips.end(), [](const auto& c) { return c.split.has_value(); });
  if (n_split == 0) return;
  if (static_cast<std::size_t>(n_split) != clips.size()) throw IoError("manifest assigns splits to only some clips");
  const auto s = split_counts();
  const double n = static_cast<double>(clips.size());
  if (std::abs(double(s.train) - 0.6 * n) > 1.0 || std::abs(double(s.val) - 0.2 * n) > 1.0 ||
      std::abs(double(s.test) - 0.2 * n) > 1.0) {
    throw IoError("manifest split sizes are not within one clip of 60:20:20");
  }
}

DatasetManifest read_manifest(const fs::path& root) {
  std::ifstream in(root / kManifestName);
  if (!in) throw IoError("no manifest in " + root.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("manifest in " + root.string() + " is not valid JSON: " + e.what());
  }
  return DatasetManifest::from_json(j);
}

void write_manifest(const fs::path& root, const DatasetManifest& manifest) {
  const auto tmp = root / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write manifest in " + root.string());
    out << manifest.to_json().dump(2) << '\n';
    if (!out) throw IoError("short write of manifest in " + root.string());
  }
  fs::rename(tmp, root / kManifestName);
}

DatasetManifest save_dataset(const std::vector<phantom::CineClip>& clips, const fs::path& root,
                             const SplitAssignment* splits) {
  fs::create_directories(root / "clips");
  DatasetManifest m;
  for (const auto& clip : clips) {
    clip.validate();
    ClipEntry e;
    e.id = clip.clip_id;
    if (e.id.empty() || e.id.find_first_of("/\\.") != std::string::npos) {
      throw ValidationError("clip id '" + e.id + "' is not usable as a directory name");
    }
    e.view = clip.view;
    e.width = clip.frames.front().width();
    e.height = clip.frames.front().height();
    e.labels = clip.labels;
    e.annotator = clip.annotator;
    e.apex_track = clip.apex_track;
    e.params = clip.params;
    e.levels = clip.levels;
    fs::create_directories(root / "clips" / e.id);
    for (std::size_t i = 0; i < clip.frames.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%02zu.pgm", i);
      const auto rel = "clips/" + e.id + "/" + name;
      write_pgm(root / rel, clip.frames[i]);
      e.frame_files.push_back(rel);
    }
    if (splits) {
      auto it = splits->find(e.id);
      if (it == splits->end()) throw ValidationError("split assignment misses clip '" + e.id + "'");
      e.split = it->second;
    }
    m.clips.push_back(std::move(e));
  }
  m.check_split_fractions();
  write_manifest(root, m);
  return m;
}

phantom::CineClip load_clip(const fs::path& root, const ClipEntry& e) {
  phantom::CineClip clip;
  clip.clip_id = e.id;
  clip.view = e.view;
  clip.labels = e.labels;
  clip.annotator = e.annotator;
  clip.apex_track = e.apex_track;
  clip.params = e.params;
  clip.levels = e.levels;
  for (const auto& rel : e.frame_files) {
    const auto path = root / rel;
    if (!fs::exists(path)) throw IoError("clip " + e.id + ": missing frame file " + rel);
    Frame f;
    try {
      f = read_pgm(path);
    } catch (const IoError& err) {
      throw IoError("clip " + e.id + ": " + err.what());
    }
    if (f.width() != e.width || f.height() != e.height) {
      throw IoError("clip " + e.id + ": frame " + rel + " is " + std::to_string(f.width()) + "x" +
                    std::to_string(f.height()) + ", manifest declares " + std::to_string(e.width) + "x" +
                    std::to_string(e.height));
    }
    clip.frames.push_back(std::move(f));
  }
  try {
    clip.validate();
  } catch (const ValidationError& err) {
    throw IoError(std::string("clip ") + e.id + ": " + err.what());
  }
  return clip;
}

Dataset load_dataset(const fs::path& root) {
  Dataset d{read_manifest(root), {}};
  for (const auto& e : d.manifest.clips) d.clips.push_back(load_clip(root, e));
  return d;
}

std::vector<phantom::CineClip> Dataset::subset(Split s) const {
  std::vector<phantom::CineClip> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& split = manifest.clips[i].split;
    if (!split) throw StateError("dataset has no split assignment");
    if (*split == s) out.push_back(clips[i]);
  }
  return out;
}

DatasetManifest assign_splits(const fs::path& root, std::uint64_t seed) {
  auto m = read_manifest(root);
  std::vector<std::string> ids;
  for (const auto& c : m.clips) ids.push_back(c.id);
  const auto assignment = split_dataset(ids, seed);
  for (auto& c : m.clips) c.split = assignment.at(c.id);
  m.split_seed = seed;
  m.check_split_fractions();
  write_manifest(root, m);
  return m;
}

// ---- augmentation ----------------------------------------------------------

void AugmentationSpec::validate() const {
  if (!(max_translation_fraction >= 0.0 && max_translation_fraction <= 0.05)) {
    throw ValidationError("max_translation_fraction must lie in [0, 0.05]");
  }
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 10.0)) {
    throw ValidationError("max_rotation_deg must lie in [0, 10]");
  }
}

namespace {

long round_half_away(double v) { return static_cast<long>(std::round(v)); }

float bilinear(const Frame& f, double x, double y) {
  const double x0f = std::floor(x), y0f = std::floor(y);
  const long x0 = static_cast<long>(x0f), y0 = static_cast<long>(y0f);
  const double fx = x - x0f, fy = y - y0f;
  auto px = [&](long xx, long yy) -> double {
    if (xx < 0 || yy < 0 || xx >= long(f.width()) || yy >= long(f.height())) return 0.0;
    return f.at(std::size_t(xx), std::size_t(yy));
  };
  const double top = px(x0, y0) + fx * (px(x0 + 1, y0) - px(x0, y0));
  const double bottom = px(x0, y0 + 1) + fx * (px(x0 + 1, y0 + 1) - px(x0, y0 + 1));
  return static_cast<float>(std::clamp(top + fy * (bottom - top), 0.0, 1.0));
}

}  // namespace

AugmentationDraw draw_augmentation(const AugmentationSpec& spec, std::size_t width, std::size_t height, Rng& rng) {
  spec.validate();
  AugmentationDraw d;
  const double tx = rng.uniform(-1.0, 1.0) * spec.max_translation_fraction;
  const double ty = rng.uniform(-1.0, 1.0) * spec.max_translation_fraction;
  d.shift_x = round_half_away(tx * static_cast<double>(width));
  d.shift_y = round_half_away(ty * static_cast<double>(height));
  d.rotation_deg = rng.uniform(-1.0, 1.0) * spec.max_rotation_deg;
  d.flip_h = spec.horizontal_flip && rng.coin();
  d.flip_v = spec.vertical_flip && rng.coin();
  return d;
}

Frame augment(const Frame& f, const AugmentationDraw& d) {
  const double cx = 0.5 * double(f.width() - 1), cy = 0.5 * double(f.height() - 1);
  const double th = d.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  std::vector<float> out(f.width() * f.height());
  for (std::size_t y = 0; y < f.height(); ++y) {
    for (std::size_t x = 0; x < f.width(); ++x) {
      // Invert translate, rotate, flip in that order.
      const double ux = double(x) - double(d.shift_x) - cx, uy = double(y) - double(d.shift_y) - cy;
      double sx = c * ux + s * uy + cx;
      double sy = -s * ux + c * uy + cy;
      if (d.flip_h) sx = double(f.width() - 1) - sx;
      if (d.flip_v) sy = double(f.height() - 1) - sy;
      out[y * f.width() + x] = bilinear(f, sx, sy);
    }
  }
  return Frame(f.width(), f.height(), std::move(out), f.origin());
}

Frame augment(const Frame& frame, const AugmentationSpec& spec, Rng& rng) {
  return augment(frame, draw_augmentation(spec, frame.width(), frame.height(), rng));
}

Frame resize_to_input(const Frame& f) {
  if (f.width() < 8 || f.height() < 8) throw ValidationError("frame smaller than 8x8 cannot be resized");
  if (f.width() == kInputSize && f.height() == kInputSize) return f;
  const double sx = double(f.width()) / double(kInputSize), sy = double(f.height()) / double(kInputSize);
  std::vector<float> out(kInputSize * kInputSize);
  for (std::size_t y = 0; y < kInputSize; ++y) {
    const double src_y = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(f.height() - 1));
    for (std::size_t x = 0; x < kInputSize; ++x) {
      const double src_x = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(f.width() - 1));
      out[y * kInputSize + x] = bilinear(f, src_x, src_y);
    }
  }
  return Frame(kInputSize, kInputSize, std::move(out), f.origin());
}

}  // namespace echoqa::data
