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
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoqa/metrics/quality.hpp"
#include "echoqa/rubric/rubric.hpp"
#include "echoqa/types.hpp"

namespace echoqa::service {

/// Criterion values per attribute as entered by an annotator.
using CriterionValues = std::map<Attribute, std::map<std::string, double>>;

struct AnnotationRecord {
  std::string record_id;
  std::string annotator;
  std::string clip_id;
  CriterionValues criteria;
  std::map<Attribute, double> composites;  // raw 0-9, recomputed server-side
  std::string timestamp;                   // ISO 8601, UTC
  std::optional<std::string> supersedes;

  nlohmann::json to_json() const;
  static AnnotationRecord from_json(const nlohmann::json& j);
};

/// What a client sends; composites are optional and, when present, must
/// match the server's recomputation.
struct AnnotationSubmission {
  std::string annotator;
  CriterionValues criteria;
  std::map<Attribute, double> client_composites;
  std::optional<std::string> supersedes;

  /// Parses a request body; throws ValidationError naming malformed fields.
  static AnnotationSubmission from_json(const nlohmann::json& j);
};

/// A submission failed validation; `fields` lists each offending entry.
class AnnotationRejected : public ValidationError {
 public:
  AnnotationRejected(std::string code, std::vector<std::string> fields);
  const std::string& code() const { return code_; }
  const std::vector<std::string>& fields() const { return fields_; }

 private:
  std::string code_;
  std::vector<std::string> fields_;
};

struct DisparityReport {
  std::string first;
  std::string second;
  std::size_t clips = 0;  // clips both annotators scored
  std::size_t pairs = 0;  // (clip, attribute) pairs pooled
  metrics::Disparity overall;
  std::map<Attribute, metrics::Disparity> per_attribute;  // attributes with >= 2 pairs

  nlohmann::json to_json() const;
};

/// Append-only JSON-lines log of annotation records.
///
/// Each record is written with a single write() and fsync'd before append()
/// returns. Records are never rewritten; a revision names the record it
/// supersedes. A torn final line left by a crash is truncated on load.
class AnnotationStore {
 public:
  using Clock = std::function<std::string()>;

  AnnotationStore(std::filesystem::path path, const rubric::Rubric& rubric = rubric::Rubric::standard(),
                  Clock clock = {});

  const std::filesystem::path& path() const { return path_; }

  /// Validates against the rubric, recomputes composites and persists.
  /// Throws AnnotationRejected on any problem; nothing is written then.
  AnnotationRecord append(const std::string& clip_id, const AnnotationSubmission& submission);

  std::vector<AnnotationRecord> records() const;
  std::vector<AnnotationRecord> for_clip(const std::string& clip_id) const;
  /// Head of each annotator's revision chain for a clip.
  std::vector<AnnotationRecord> current_for_clip(const std::string& clip_id) const;
  std::optional<AnnotationRecord> current(const std::string& annotator, const std::string& clip_id) const;

  /// Disparity of normalised composites over clips both annotators scored,
  /// pooling every attribute both gave. Throws ValidationError with < 2 pairs.
  DisparityReport disparity(const std::string& first, const std::string& second) const;

 private:
  void load();
  std::optional<AnnotationRecord> current_locked(const std::string& annotator, const std::string& clip_id) const;

  std::filesystem::path path_;
  const rubric::Rubric& rubric_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::vector<AnnotationRecord> records_;
  std::map<std::string, std::size_t> index_;  // record id -> position
  std::map<std::string, std::string> superseded_by_;
};

/// UTC wall-clock time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_now();

}  // namespace echoqa::service
