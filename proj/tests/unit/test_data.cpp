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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "echoqa/data/dataset.hpp"

using namespace echoqa;
using namespace echoqa::data;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("echoqa_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("c" + std::to_string(1000 + i));
  return out;
}

}  // namespace

TEST_CASE("pgm round trip") {
  TempDir dir("pgm");
  Rng rng(1);
  std::vector<float> px(13 * 7);
  for (auto& p : px) p = static_cast<float>(rng.uniform());
  Frame f(13, 7, px);
  write_pgm(dir.path / "a.pgm", f);
  auto g = read_pgm(dir.path / "a.pgm");
  REQUIRE(g.width() == 13);
  REQUIRE(g.height() == 7);
  double worst = 0.0;
  for (std::size_t i = 0; i < px.size(); ++i) worst = std::max(worst, double(std::abs(g.pixels()[i] - px[i])));
  CHECK(worst <= 0.5 / 255.0 + 1e-7);
  // Second cycle is bit-exact.
  write_pgm(dir.path / "b.pgm", g);
  CHECK(read_pgm(dir.path / "b.pgm") == g);

  std::ofstream(dir.path / "c.pgm", std::ios::binary) << "P5\n# comment\n2 1\n255\n" << char(0) << char(255);
  auto c = read_pgm(dir.path / "c.pgm");
  CHECK(c.at(0, 0) == 0.0f);
  CHECK(c.at(1, 0) == 1.0f);
  std::ofstream(dir.path / "d.pgm", std::ios::binary) << "P2\n2 1\n255\n0 255\n";
  CHECK_THROWS_AS(read_pgm(dir.path / "d.pgm"), IoError);
  std::ofstream(dir.path / "e.pgm", std::ios::binary) << "P5\n4 4\n255\nabc";
  CHECK_THROWS_AS(read_pgm(dir.path / "e.pgm"), IoError);
  std::ofstream(dir.path / "f.pgm", std::ios::binary) << "P5\n1 1\n65535\nab";
  CHECK_THROWS_AS(read_pgm(dir.path / "f.pgm"), IoError);
}

TEST_CASE("split sizes") {
  auto s = split_sizes(100);
  CHECK(s.train == 60);
  CHECK(s.val == 20);
  CHECK(s.test == 20);
  s = split_sizes(1039);
  CHECK(s.train == 623);
  CHECK(s.val == 208);
  CHECK(s.test == 208);
  s = split_sizes(5);
  CHECK(s.train == 3);
  CHECK(s.val == 1);
  CHECK(s.test == 1);
}

TEST_CASE("split is a deterministic partition") {
  auto a = split_dataset(ids(1039), 4);
  CHECK(a.size() == 1039);
  std::map<Split, int> count;
  for (const auto& [id, s] : a) ++count[s];
  CHECK(count[Split::train] == 623);
  CHECK(count[Split::val] == 208);
  CHECK(count[Split::test] == 208);
  auto reversed = ids(1039);
  std::reverse(reversed.begin(), reversed.end());
  CHECK(split_dataset(reversed, 4) == a);
  CHECK_FALSE(split_dataset(ids(1039), 5) == a);
  CHECK_THROWS_AS(split_dataset(ids(4), 1), ValidationError);
  auto dup = ids(6);
  dup[1] = dup[0];
  CHECK_THROWS_AS(split_dataset(dup, 1), ValidationError);
}

TEST_CASE("dataset save and load") {
  TempDir dir("ds");
  const auto clips = phantom::generate_dataset(5, 11);
  std::vector<std::string> names;
  for (const auto& c : clips) names.push_back(c.clip_id);
  const auto splits = split_dataset(names, 2);
  save_dataset(clips, dir.path, &splits);
  CHECK(fs::exists(dir.path / "manifest"));
  CHECK(fs::exists(dir.path / "clips" / "c000" / "frame_00.pgm"));
  CHECK(fs::exists(dir.path / "clips" / "c004" / "frame_19.pgm"));

  auto ds = load_dataset(dir.path);
  REQUIRE(ds.clips.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(ds.clips[i].frames == clips[i].frames);
    CHECK(ds.clips[i].labels.raw() == clips[i].labels.raw());
    CHECK(ds.clips[i].params == clips[i].params);
    CHECK(ds.clips[i].levels == clips[i].levels);
    CHECK(ds.manifest.clips[i].split == splits.at(clips[i].clip_id));
  }
  CHECK(ds.subset(Split::train).size() == 3);
  CHECK(ds.subset(Split::test).size() == 1);

  // Saving what was loaded reproduces the directory byte for byte.
  TempDir again("ds2");
  save_dataset(ds.clips, again.path, &splits);
  CHECK(slurp(again.path / "manifest") == slurp(dir.path / "manifest"));
  CHECK(slurp(again.path / "clips/c003/frame_07.pgm") == slurp(dir.path / "clips/c003/frame_07.pgm"));
}

TEST_CASE("load errors name the clip") {
  TempDir dir("bad");
  save_dataset(phantom::generate_dataset(5, 12), dir.path);
  CHECK_THROWS_AS(load_dataset(dir.path).subset(Split::train), StateError);
  fs::remove(dir.path / "clips" / "c002" / "frame_05.pgm");
  try {
    load_dataset(dir.path);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("c002") != std::string::npos);
  }
  write_pgm(dir.path / "clips" / "c002" / "frame_05.pgm", Frame(10, 10));
  try {
    load_dataset(dir.path);
    FAIL("expected an error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("c002") != std::string::npos);
  }
  auto j = read_manifest(dir.path).to_json();
  j["version"] = 7;
  std::ofstream(dir.path / "manifest") << j.dump();
  CHECK_THROWS_AS(read_manifest(dir.path), IoError);
  j.erase("version");
  std::ofstream(dir.path / "manifest") << j.dump();
  CHECK_THROWS_AS(read_manifest(dir.path), IoError);
  CHECK_THROWS_AS(read_manifest(dir.path / "nowhere"), IoError);
}

TEST_CASE("assign splits writes a 60:20:20 manifest") {
  TempDir dir("assign");
  save_dataset(phantom::generate_dataset(10, 3), dir.path);
  auto m = assign_splits(dir.path, 9);
  CHECK(m.split_counts().train == 6);
  CHECK(read_manifest(dir.path).split_seed == 9u);
  CHECK(read_manifest(dir.path).to_json() == m.to_json());
  auto j = m.to_json();
  for (auto& c : j["clips"]) c["split"] = "train";
  CHECK_THROWS_AS(DatasetManifest::from_json(j), IoError);
}

namespace {

Frame gradient_frame(std::size_t w, std::size_t h) {
  std::vector<float> px(w * h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) px[y * w + x] = float(x + 2 * y) / float(w + 2 * h);
  return Frame(w, h, px);
}

}  // namespace

TEST_CASE("augmentation") {
  const auto f = gradient_frame(40, 30);
  Rng rng(3);
  CHECK(augment(f, AugmentationSpec::none(), rng) == f);

  AugmentationSpec spec;
  const auto fixed = [&] {
    AugmentationSpec s = spec;
    s.max_rotation_deg = 0.0;
    return s;
  }();
  // Translation at the bound rounds half away from zero: 0.05 * 227 = 11.35 -> 11.
  CHECK(std::lround(0.05 * 227) == 11);
  AugmentationDraw d;
  d.shift_x = 11;
  auto shifted = augment(gradient_frame(227, 20), d);
  CHECK(shifted.at(11, 5) == gradient_frame(227, 20).at(0, 5));
  CHECK(shifted.at(5, 5) == 0.0f);

  for (int t = 0; t < 200; ++t) {
    auto draw = draw_augmentation(spec, 227, 227, rng);
    CHECK(std::abs(draw.rotation_deg) <= 10.0);
    CHECK(std::abs(draw.shift_x) <= 11);
    CHECK(std::abs(draw.shift_y) <= 11);
    CHECK_FALSE(draw.flip_h);
    auto tdraw = draw_augmentation(fixed, 227, 227, rng);
    CHECK(tdraw.rotation_deg == 0.0);
  }
  Rng r1(77), r2(77);
  const auto a = augment(f, spec, r1), b = augment(f, spec, r2);
  CHECK(a == b);
  CHECK(a.width() == f.width());
  for (float v : a.pixels()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  AugmentationDraw flip;
  flip.flip_h = true;
  CHECK(augment(f, flip).at(0, 3) == f.at(39, 3));
  AugmentationSpec bad;
  bad.max_rotation_deg = 11;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("resize to the model input") {
  const auto same = gradient_frame(227, 227);
  CHECK(resize_to_input(same) == same);
  auto flat = resize_to_input(Frame(454, 454, 0.37f));
  CHECK(flat.width() == 227);
  for (float v : flat.pixels()) CHECK(v == 0.37f);

  std::vector<float> ramp(454 * 454);
  for (std::size_t y = 0; y < 454; ++y)
    for (std::size_t x = 0; x < 454; ++x) ramp[y * 454 + x] = float(x) / 453.0f;
  auto r = resize_to_input(Frame(454, 454, ramp));
  double worst = 0.0;
  for (std::size_t x = 0; x < 227; ++x) {
    const double expected = ((double(x) + 0.5) * 2.0 - 0.5) / 453.0;
    worst = std::max(worst, std::abs(double(r.at(x, 100)) - expected));
  }
  CHECK(worst <= 1e-3);
  CHECK_THROWS_AS(resize_to_input(Frame(7, 100)), ValidationError);
}
