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

#include "echoqa/service/annotations.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace echoqa::service {

using nlohmann::json;

namespace {

json criteria_json(const CriterionValues& c) {
  json j = json::object();
  for (const auto& [a, values] : c) {
    json v = json::object();
    for (const auto& [name, value] : values) v[name] = value;
    j[std::string(attribute_key(a))] = v;
  }
  return j;
}

json composites_json(const std::map<Attribute, double>& c) {
  json j = json::object();
  for (const auto& [a, v] : c) j[std::string(attribute_key(a))] = v;
  return j;
}

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) s += (s.empty() ? "" : "; ") + p;
  return s;
}

std::string format_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

bool valid_annotator(const std::string& id) {
  static const std::regex pattern("[A-Za-z0-9_-]{1,32}");
  return std::regex_match(id, pattern);
}

void write_line(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
  const off_t before = ::lseek(fd, 0, SEEK_END);
  const ssize_t n = ::write(fd, line.data(), line.size());
  if (n != static_cast<ssize_t>(line.size())) {
    const std::string why = n < 0 ? std::strerror(errno) : "short write";
    if (before >= 0 && ::ftruncate(fd, before) != 0) {
      // The torn tail is skipped on load even if truncation fails.
    }
    ::close(fd);
    throw IoError("cannot append to " + path.string() + ": " + why);
  }
  if (::fsync(fd) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    throw IoError("fsync failed for " + path.string() + ": " + why);
  }
  ::close(fd);
}

}  // namespace

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---- records ---------------------------------------------------------------

json AnnotationRecord::to_json() const {
  return {{"record_id", record_id},
          {"annotator", annotator},
          {"clip_id", clip_id},
          {"criteria", criteria_json(criteria)},
          {"composites", composites_json(composites)},
          {"timestamp", timestamp},
          {"supersedes", supersedes ? json(*supersedes) : json(nullptr)}};
}

AnnotationRecord AnnotationRecord::from_json(const json& j) {
  try {
    AnnotationRecord r;
    r.record_id = j.at("record_id");
    r.annotator = j.at("annotator");
    r.clip_id = j.at("clip_id");
    for (const auto& [key, values] : j.at("criteria").items()) {
      auto& dst = r.criteria[parse_attribute(key)];
      for (const auto& [name, value] : values.items()) dst[name] = value.get<double>();
    }
    for (const auto& [key, value] : j.at("composites").items()) r.composites[parse_attribute(key)] = value.get<double>();
    r.timestamp = j.at("timestamp");
    if (j.contains("supersedes") && !j.at("supersedes").is_null()) r.supersedes = j.at("supersedes").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed annotation record: ") + e.what());
  } catch (const ValidationError& e) {
    throw IoError(std::string("malformed annotation record: ") + e.what());
  }
}

AnnotationRejected::AnnotationRejected(std::string code, std::vector<std::string> fields)
    : ValidationError(code + ": " + join(fields)), code_(std::move(code)), fields_(std::move(fields)) {}

AnnotationSubmission AnnotationSubmission::from_json(const json& j) {
  std::vector<std::string> problems;
  AnnotationSubmission s;
  if (!j.is_object()) throw AnnotationRejected("malformed", {"body: expected a JSON object"});
  if (!j.contains("annotator") || !j.at("annotator").is_string()) {
    problems.push_back("annotator: required string");
  } else {
    s.annotator = j.at("annotator");
  }
  if (!j.contains("criteria") || !j.at("criteria").is_object() || j.at("criteria").empty()) {
    problems.push_back("criteria: required non-empty object keyed by attribute");
  } else {
    for (const auto& [key, values] : j.at("criteria").items()) {
      Attribute a;
      try {
        a = parse_attribute(key);
      } catch (const ValidationError&) {
        problems.push_back("criteria." + key + ": unknown attribute");
        continue;
      }
      if (!values.is_object()) {
        problems.push_back("criteria." + key + ": expected an object of criterion values");
        continue;
      }
      auto& dst = s.criteria[a];
      for (const auto& [name, value] : values.items()) {
        if (!value.is_number()) {
          problems.push_back("criteria." + key + "." + name + ": not a number");
          continue;
        }
        dst[name] = value.get<double>();
      }
    }
  }
  if (j.contains("composites") && !j.at("composites").is_null()) {
    if (!j.at("composites").is_object()) {
      problems.push_back("composites: expected an object keyed by attribute");
    } else {
      for (const auto& [key, value] : j.at("composites").items()) {
        try {
          if (!value.is_number()) throw ValidationError("not a number");
          s.client_composites[parse_attribute(key)] = value.get<double>();
        } catch (const ValidationError& e) {
          problems.push_back("composites." + key + ": " + e.what());
        }
      }
    }
  }
  if (j.contains("supersedes") && !j.at("supersedes").is_null()) {
    if (!j.at("supersedes").is_string()) {
      problems.push_back("supersedes: expected a record id");
    } else {
      s.supersedes = j.at("supersedes").get<std::string>();
    }
  }
  if (!problems.empty()) throw AnnotationRejected("malformed", problems);
  return s;
}

json DisparityReport::to_json() const {
  json per = json::object();
  for (const auto& [a, d] : per_attribute) per[std::string(attribute_key(a))] = {{"mean", d.mean}, {"std", d.std}};
  return {{"annotators", {first, second}},
          {"clips", clips},
          {"pairs", pairs},
          {"mean", overall.mean},
          {"std", overall.std},
          {"per_attribute", per}};
}

// ---- store -----------------------------------------------------------------

AnnotationStore::AnnotationStore(std::filesystem::path path, const rubric::Rubric& rubric, Clock clock)
    : path_(std::move(path)), rubric_(rubric), clock_(clock ? std::move(clock) : Clock(utc_now)) {
  load();
}

void AnnotationStore::load() {
  if (!std::filesystem::exists(path_)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    return;
  }
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw IoError("cannot read " + path_.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    if (end == std::string::npos) {
      // Torn final write: drop it so the next append starts on a fresh line.
      std::error_code ec;
      std::filesystem::resize_file(path_, pos, ec);
      if (ec) throw IoError("cannot truncate torn record in " + path_.string() + ": " + ec.message());
      break;
    }
    ++line_no;
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    auto r = AnnotationRecord::from_json(j);
    for (const auto& [a, values] : r.criteria) {
      const double expected = rubric_.composite_score(a, values);
      const auto it = r.composites.find(a);
      if (it == r.composites.end() || it->second != expected) {
        throw IoError(path_.string() + ":" + std::to_string(line_no) + ": stored " + std::string(attribute_key(a)) +
                      " composite disagrees with the rubric");
      }
    }
    if (index_.count(r.record_id)) throw IoError("duplicate record id " + r.record_id + " in " + path_.string());
    if (r.supersedes) superseded_by_[*r.supersedes] = r.record_id;
    index_[r.record_id] = records_.size();
    records_.push_back(std::move(r));
  }
}

AnnotationRecord AnnotationStore::append(const std::string& clip_id, const AnnotationSubmission& s) {
  std::vector<std::string> problems;
  if (!valid_annotator(s.annotator)) problems.push_back("annotator: 1-32 letters, digits, '-' or '_'");
  if (s.criteria.empty()) problems.push_back("criteria: at least one attribute is required");

  AnnotationRecord r;
  r.annotator = s.annotator;
  r.clip_id = clip_id;
  r.criteria = s.criteria;
  for (const auto& [a, values] : s.criteria) {
    std::vector<rubric::CriterionScore> scores;
    for (const auto& [name, value] : values) scores.push_back({a, name, value});
    const auto issues = rubric_.validate(a, scores);
    for (const auto& issue : issues) problems.push_back(std::string(attribute_key(a)) + ": " + issue);
    if (issues.empty()) r.composites[a] = rubric_.composite_score(a, scores);
  }
  if (!problems.empty()) throw AnnotationRejected("validation", problems);

  std::vector<std::string> mismatches;
  for (const auto& [a, client] : s.client_composites) {
    const auto it = r.composites.find(a);
    if (it == r.composites.end()) {
      mismatches.push_back("composites." + std::string(attribute_key(a)) + ": no criteria submitted");
    } else if (std::abs(it->second - client) > 1e-9) {
      mismatches.push_back("composites." + std::string(attribute_key(a)) + ": client " + format_value(client) +
                           ", server " + format_value(it->second));
    }
  }
  if (!mismatches.empty()) throw AnnotationRejected("composite_mismatch", mismatches);

  std::lock_guard lock(mutex_);
  if (s.supersedes) {
    const auto it = index_.find(*s.supersedes);
    if (it == index_.end()) {
      throw AnnotationRejected("validation", {"supersedes: unknown record " + *s.supersedes});
    }
    const auto& prev = records_[it->second];
    if (prev.annotator != s.annotator || prev.clip_id != clip_id) {
      throw AnnotationRejected("validation", {"supersedes: record " + *s.supersedes + " belongs to another annotator or clip"});
    }
    if (superseded_by_.count(*s.supersedes)) {
      throw AnnotationRejected("validation", {"supersedes: record " + *s.supersedes + " was already revised by " +
                                              superseded_by_.at(*s.supersedes)});
    }
  }
  char id[24];
  std::snprintf(id, sizeof id, "r%06zu", records_.size() + 1);
  r.record_id = id;
  r.timestamp = clock_();
  r.supersedes = s.supersedes;
  write_line(path_, r.to_json().dump() + "\n");
  if (r.supersedes) superseded_by_[*r.supersedes] = r.record_id;
  index_[r.record_id] = records_.size();
  records_.push_back(r);
  return r;
}

std::vector<AnnotationRecord> AnnotationStore::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::vector<AnnotationRecord> AnnotationStore::for_clip(const std::string& clip_id) const {
  std::lock_guard lock(mutex_);
  std::vector<AnnotationRecord> out;
  for (const auto& r : records_) {
    if (r.clip_id == clip_id) out.push_back(r);
  }
  return out;
}

std::vector<AnnotationRecord> AnnotationStore::current_for_clip(const std::string& clip_id) const {
  std::lock_guard lock(mutex_);
  std::vector<AnnotationRecord> out;
  for (const auto& r : records_) {
    if (r.clip_id == clip_id && !superseded_by_.count(r.record_id)) out.push_back(r);
  }
  return out;
}

std::optional<AnnotationRecord> AnnotationStore::current_locked(const std::string& annotator,
                                                                const std::string& clip_id) const {
  // Chains are linear and a record can be revised once, so the unsuperseded
  // record for (annotator, clip) is unique unless several chains were started.
  std::optional<AnnotationRecord> out;
  for (const auto& r : records_) {
    if (r.annotator == annotator && r.clip_id == clip_id && !superseded_by_.count(r.record_id)) out = r;
  }
  return out;
}

std::optional<AnnotationRecord> AnnotationStore::current(const std::string& annotator, const std::string& clip_id) const {
  std::lock_guard lock(mutex_);
  return current_locked(annotator, clip_id);
}

DisparityReport AnnotationStore::disparity(const std::string& first, const std::string& second) const {
  if (first == second) throw ValidationError("disparity needs two different annotators");
  std::lock_guard lock(mutex_);
  std::set<std::string> clips;
  for (const auto& r : records_) {
    if (r.annotator == first) clips.insert(r.clip_id);
  }
  DisparityReport report;
  report.first = first;
  report.second = second;
  std::vector<double> a, b;
  std::map<Attribute, std::pair<std::vector<double>, std::vector<double>>> per;
  for (const auto& clip : clips) {
    const auto ra = current_locked(first, clip);
    const auto rb = current_locked(second, clip);
    if (!ra || !rb) continue;
    bool shared = false;
    for (const auto& [attr, va] : ra->composites) {
      const auto it = rb->composites.find(attr);
      if (it == rb->composites.end()) continue;
      shared = true;
      a.push_back(rubric::normalize_score(va));
      b.push_back(rubric::normalize_score(it->second));
      per[attr].first.push_back(a.back());
      per[attr].second.push_back(b.back());
    }
    if (shared) ++report.clips;
  }
  report.pairs = a.size();
  if (a.size() < 2) {
    throw ValidationError("disparity needs at least 2 shared scores between " + first + " and " + second + ", found " +
                          std::to_string(a.size()));
  }
  report.overall = metrics::interobserver_disparity(a, b);
  for (const auto& [attr, v] : per) {
    if (v.first.size() >= 2) report.per_attribute[attr] = metrics::interobserver_disparity(v.first, v.second);
  }
  return report;
}

}  // namespace echoqa::service
