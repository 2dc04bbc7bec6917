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

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "echoqa/data/dataset.hpp"
#include "echoqa/model/model.hpp"
#include "echoqa/rubric/rubric.hpp"
#include "echoqa/service/annotations.hpp"

namespace echoqa::service {

struct ServiceConfig {
  std::filesystem::path data_root;
  std::optional<std::filesystem::path> model_path;
  std::optional<std::filesystem::path> annotations_path;  // default: <data>/annotations.jsonl
  std::optional<std::filesystem::path> rubric_path;       // default: built-in table
  std::string host = "127.0.0.1";
  int port = 8080;

  /// Defaults overridden by ECHOQA_PORT and ECHOQA_DATA when set.
  static ServiceConfig from_env();
};

/// Lossless 8-bit grayscale PNG of a frame.
std::string encode_png(const Frame& frame);

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Request handlers, independent of the HTTP transport.
class Service {
 public:
  explicit Service(ServiceConfig config);

  const ServiceConfig& config() const { return config_; }
  bool has_model() const { return model_.has_value(); }

  Response list_clips() const;
  Response get_clip(const std::string& id) const;
  Response get_frame(const std::string& id, const std::string& index) const;
  Response get_scores(const std::string& id);
  Response get_annotations(const std::string& id) const;
  Response post_annotation(const std::string& id, const std::string& body);
  Response get_disparity(const std::string& annotators) const;
  Response get_rubric() const;

 private:
  const data::ClipEntry& entry(const std::string& id) const;

  ServiceConfig config_;
  rubric::Rubric rubric_;
  data::DatasetManifest manifest_;
  std::unique_ptr<AnnotationStore> store_;
  std::optional<model::MultiStreamModel<float>> model_;
  std::mutex model_mutex_;
  std::map<std::string, rubric::AttributeScores> score_cache_;
};

/// Structured error body: {"error": {"code", "message", "fields"}}.
Response error_response(int status, const std::string& code, const std::string& message,
                        const std::vector<std::string>& fields = {});

/// HTTP front end over a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace echoqa::service
