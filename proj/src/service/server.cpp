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

#include "echoqa/service/server.hpp"

#include <png.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include <httplib.h>

#include "echoqa/model/train.hpp"

namespace echoqa::service {

using nlohmann::json;

namespace {

Response json_response(const json& j, int status = 200) { return {status, j.dump(), "application/json"}; }

template <typename Fn>
Response guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const AnnotationRejected& e) {
    return error_response(e.code() == "malformed" ? 400 : 422, e.code(), "annotation rejected", e.fields());
  } catch (const NotFoundError& e) {
    return error_response(404, "not_found", e.what());
  } catch (const ValidationError& e) {
    return error_response(422, "validation", e.what());
  } catch (const IoError& e) {
    return error_response(500, "io", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

void png_write(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void png_flush(png_structp) {}

}  // namespace

Response error_response(int status, const std::string& code, const std::string& message,
                        const std::vector<std::string>& fields) {
  return json_response({{"error", {{"code", code}, {"message", message}, {"fields", fields}}}}, status);
}

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig c;
  if (const char* port = std::getenv("ECHOQA_PORT"); port && *port) {
    char* end = nullptr;
    const long p = std::strtol(port, &end, 10);
    if (*end != '\0' || p < 0 || p > 65535) throw ConfigurationError(std::string("ECHOQA_PORT is not a port: ") + port);
    c.port = static_cast<int>(p);
  }
  if (const char* data = std::getenv("ECHOQA_DATA"); data && *data) c.data_root = data;
  return c;
}

std::string encode_png(const Frame& frame) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: cannot create info");
  }
  std::string out;
  std::vector<png_byte> row(frame.width());
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: encoding failed");
  }
  png_set_write_fn(png, &out, png_write, png_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(frame.width()), static_cast<png_uint_32>(frame.height()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < frame.height(); ++y) {
    for (std::size_t x = 0; x < frame.width(); ++x) {
      row[x] = static_cast<png_byte>(std::lround(frame.at(x, y) * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

// ---- service ---------------------------------------------------------------

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  if (config_.data_root.empty()) throw ConfigurationError("no dataset root given (use --data or ECHOQA_DATA)");
  rubric_ = config_.rubric_path ? rubric::Rubric::load(*config_.rubric_path) : rubric::Rubric::standard();
  manifest_ = data::read_manifest(config_.data_root);
  store_ = std::make_unique<AnnotationStore>(
      config_.annotations_path.value_or(config_.data_root / "annotations.jsonl"), rubric_);
  if (config_.model_path) model_.emplace(model::load_model(*config_.model_path));
}

const data::ClipEntry& Service::entry(const std::string& id) const { return manifest_.find(id); }

Response Service::list_clips() const {
  return guarded([&] {
    json clips = json::array();
    for (const auto& e : manifest_.clips) {
      json c = {{"id", e.id},
                {"view", view_key(e.view)},
                {"frames", e.frame_files.size()},
                {"width", e.width},
                {"height", e.height}};
      c["split"] = e.split ? json(data::split_key(*e.split)) : json(nullptr);
      clips.push_back(c);
    }
    return json_response({{"count", manifest_.clips.size()}, {"clips", clips}});
  });
}

Response Service::get_clip(const std::string& id) const {
  return guarded([&] {
    const auto& e = entry(id);
    json urls = json::array();
    for (std::size_t i = 0; i < e.frame_files.size(); ++i) urls.push_back("/clips/" + id + "/frames/" + std::to_string(i));
    json apex = json::array();
    for (const auto& p : e.apex_track.apex_positions) apex.push_back({p.x, p.y});
    json j = {{"id", e.id},
              {"view", view_key(e.view)},
              {"frames", e.frame_files.size()},
              {"width", e.width},
              {"height", e.height},
              {"labels", e.labels.to_json()},
              {"label_source", e.annotator},
              {"apex_track", apex},
              {"frame_urls", urls}};
    j["split"] = e.split ? json(data::split_key(*e.split)) : json(nullptr);
    return json_response(j);
  });
}

Response Service::get_frame(const std::string& id, const std::string& index) const {
  return guarded([&] {
    const auto& e = entry(id);
    std::size_t i = 0;
    if (index.empty() || index.size() > 6 || index.find_first_not_of("0123456789") != std::string::npos) {
      throw NotFoundError("frame '" + index + "' of clip " + id + " does not exist");
    }
    i = std::stoul(index);
    if (i >= e.frame_files.size()) {
      throw NotFoundError("clip " + id + " has " + std::to_string(e.frame_files.size()) + " frames, no frame " + index);
    }
    const auto frame = data::read_pgm(config_.data_root / e.frame_files[i]);
    return Response{200, encode_png(frame), "image/png"};
  });
}

Response Service::get_scores(const std::string& id) {
  return guarded([&] {
    const auto& e = entry(id);
    if (!model_) return error_response(503, "no_model", "no model loaded; start the service with a checkpoint");
    rubric::AttributeScores predicted;
    {
      std::lock_guard lock(model_mutex_);
      auto it = score_cache_.find(id);
      if (it == score_cache_.end()) {
        const auto clip = data::load_clip(config_.data_root, e);
        it = score_cache_.emplace(id, model::forward_score(*model_, clip)).first;
      }
      predicted = it->second;
    }
    json annotations = json::array();
    json deltas = json::object();
    for (const auto& r : store_->current_for_clip(id)) {
      annotations.push_back(r.to_json());
      json d = json::object();
      for (const auto& [a, raw] : r.composites) {
        d[std::string(attribute_key(a))] = rubric::normalize_score(raw) - predicted[a].normalized;
      }
      deltas[r.annotator] = d;
    }
    return json_response({{"clip_id", id},
                          {"model", predicted.to_json()},
                          {"labels", e.labels.to_json()},
                          {"annotations", annotations},
                          {"deltas", deltas}});
  });
}

Response Service::get_annotations(const std::string& id) const {
  return guarded([&] {
    entry(id);
    json all = json::array();
    for (const auto& r : store_->for_clip(id)) all.push_back(r.to_json());
    json current = json::array();
    for (const auto& r : store_->current_for_clip(id)) current.push_back(r.record_id);
    return json_response({{"clip_id", id}, {"records", all}, {"current", current}});
  });
}

Response Service::post_annotation(const std::string& id, const std::string& body) {
  return guarded([&] {
    entry(id);
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception& e) {
      return error_response(400, "malformed", std::string("request body is not JSON: ") + e.what());
    }
    const auto record = store_->append(id, AnnotationSubmission::from_json(j));
    return json_response(record.to_json(), 201);
  });
}

Response Service::get_disparity(const std::string& annotators) const {
  return guarded([&] {
    std::vector<std::string> ids;
    std::stringstream ss(annotators);
    for (std::string part; std::getline(ss, part, ',');) ids.push_back(part);
    if (ids.size() != 2 || ids[0].empty() || ids[1].empty()) {
      return error_response(422, "validation", "annotators must name exactly two ids, e.g. annotators=GT1,GT2",
                            {"annotators"});
    }
    return json_response(store_->disparity(ids[0], ids[1]).to_json());
  });
}

Response Service::get_rubric() const {
  return guarded([&] { return json_response(rubric_.to_json()); });
}

// ---- HTTP ------------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;

  explicit Impl(Service& s) : service(s) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    auto send = [](httplib::Response& res, const Response& r) {
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.Get("/clips", [&, send](const httplib::Request&, httplib::Response& res) { send(res, service.list_clips()); });
    server.Get(R"(/clips/([^/]+))", [&, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.get_clip(req.matches[1]));
    });
    server.Get(R"(/clips/([^/]+)/frames/([^/]+))", [&, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.get_frame(req.matches[1], req.matches[2]));
    });
    server.Get(R"(/clips/([^/]+)/scores)", [&, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.get_scores(req.matches[1]));
    });
    server.Get(R"(/clips/([^/]+)/annotations)", [&, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.get_annotations(req.matches[1]));
    });
    server.Post(R"(/clips/([^/]+)/annotations)", [&, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.post_annotation(req.matches[1], req.body));
    });
    server.Get("/disparity", [&, send](const httplib::Request& req, httplib::Response& res) {
      send(res, service.get_disparity(req.get_param_value("annotators")));
    });
    server.Get("/rubric", [&, send](const httplib::Request&, httplib::Response& res) { send(res, service.get_rubric()); });
    server.set_error_handler([send](const httplib::Request& req, httplib::Response& res) {
      if (res.body.empty()) {
        const auto code = res.status == 404 ? "not_found" : "http_" + std::to_string(res.status);
        send(res, error_response(res.status, code, "no route for " + req.method + " " + req.path));
      }
    });
    server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "unknown error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send(res, error_response(500, "internal", what));
    });
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }
void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace echoqa::service
