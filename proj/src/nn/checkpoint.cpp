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

#include "echoqa/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace echoqa::nn {

const NamedArray& Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw IoError("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["version"] = kCheckpointVersion;
  header["metadata"] = ckpt.metadata;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (a.data.size() != shape_numel(a.shape)) {
      throw ConfigurationError("checkpoint tensor '" + a.name + "' length does not match its shape");
    }
    header["tensors"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset},
                                 {"count", a.data.size()}});
    offset += a.data.size() * sizeof(float);
  }
  header["data_bytes"] = offset;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  std::vector<unsigned char> bytes;
  bytes.reserve(offset);
  for (const auto& a : ckpt.arrays) {
    for (float v : a.data) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<unsigned char>((bits >> (8 * k)) & 0xFFu));
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty checkpoint " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != kCheckpointFormat) throw IoError("not an echoqa checkpoint: " + path.string());
  if (!header.contains("version")) throw IoError("checkpoint header lacks a version field");
  const int version = header["version"].get<int>();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  const auto total = header.at("data_bytes").get<std::size_t>();
  std::vector<unsigned char> bytes(total);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total));
  if (static_cast<std::size_t>(in.gcount()) != total) throw IoError("truncated checkpoint " + path.string());

  Checkpoint ckpt;
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    NamedArray a;
    a.name = t.at("name").get<std::string>();
    a.shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto count = t.at("count").get<std::size_t>();
    if (count != shape_numel(a.shape) || offset + count * 4 > total) {
      throw IoError("checkpoint tensor '" + a.name + "' has an inconsistent table entry");
    }
    a.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= std::uint32_t(bytes[offset + 4 * i + k]) << (8 * k);
      a.data[i] = std::bit_cast<float>(bits);
    }
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

}  // namespace echoqa::nn
