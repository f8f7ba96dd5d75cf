// SPDX-License-Identifier: Apache-2.0
//
// Canonical record types and the JSONL container shared by every stage.
//
// File layout: line 1 is a manifest object ({"kind":"manifest","v":1,...}),
// every following line is one record. Keys are emitted in sorted order, UTF-8,
// LF line endings, so equal values always serialize to equal bytes.
#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <unordered_set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "recap/errors.hpp"

namespace recap {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class CaptionSource { alt_text, sft_seed, candidate, reviewed, final_caption };
enum class Stage { ingested, candidates, pairs, balanced, sft_export, dpo_export, review_queue };
enum class LengthMode { whitespace, model_tokens };

std::string_view to_string(CaptionSource s);
std::string_view to_string(Stage s);
std::string_view to_string(LengthMode m);
CaptionSource caption_source_from_string(std::string_view s);
Stage stage_from_string(std::string_view s);
LengthMode length_mode_from_string(std::string_view s);

struct CaptionRecord {
  std::string id;
  std::string image_ref;
  std::optional<std::string> alt_text;
  std::optional<std::string> caption;
  CaptionSource source = CaptionSource::alt_text;

  void validate() const;
  bool operator==(const CaptionRecord&) const = default;
};

struct SamplerParams {
  double top_p = 1.0;
  std::size_t top_k = 20;
  double temperature = 1.0;
  std::size_t k_samples = 8;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SamplerParams&) const = default;
};

struct Candidate {
  std::string text;
  std::size_t token_length = 0;
  double critic_score = 0.0;

  bool operator==(const Candidate&) const = default;
};

inline constexpr std::size_t kMaxCandidates = 64;

struct CandidateSet {
  std::string record_id;
  std::string prompt;
  std::vector<Candidate> candidates;  // generation order
  SamplerParams sampler;

  void validate() const;
  bool operator==(const CandidateSet&) const = default;
};

struct PreferencePair {
  std::string record_id;
  std::string prompt;
  std::string chosen;
  std::size_t chosen_length = 0;
  std::string rejected;
  std::size_t rejected_length = 0;
  double chosen_score = 0.0;
  double rejected_score = 0.0;

  void validate() const;
  bool operator==(const PreferencePair&) const = default;
};

struct DatasetManifest {
  Stage stage = Stage::ingested;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string created_at;
  LengthMode length_mode = LengthMode::whitespace;
  json extra = json::object();  // stage-specific counts and reports

  bool operator==(const DatasetManifest&) const = default;
};

void to_json(json& j, const CaptionRecord& r);
void from_json(const json& j, CaptionRecord& r);
void to_json(json& j, const SamplerParams& p);
void from_json(const json& j, SamplerParams& p);
void to_json(json& j, const Candidate& c);
void from_json(const json& j, Candidate& c);
void to_json(json& j, const CandidateSet& s);
void from_json(const json& j, CandidateSet& s);
void to_json(json& j, const PreferencePair& p);
void from_json(const json& j, PreferencePair& p);
void to_json(json& j, const DatasetManifest& m);
void from_json(const json& j, DatasetManifest& m);

/// Which stages a record type may appear in. Specialized per record type.
template <class Record>
struct RecordTraits;

template <class Record>
concept HasUniqueKey = requires(const Record& r) {
  { RecordTraits<Record>::unique_key(r) } -> std::convertible_to<const std::string*>;
};

template <>
struct RecordTraits<CaptionRecord> {
  static bool accepts(Stage s) { return s == Stage::ingested || s == Stage::sft_export; }
  static const std::string* unique_key(const CaptionRecord& r) { return &r.id; }
};
template <>
struct RecordTraits<CandidateSet> {
  static bool accepts(Stage s) { return s == Stage::candidates; }
};
template <>
struct RecordTraits<PreferencePair> {
  static bool accepts(Stage s) {
    return s == Stage::pairs || s == Stage::balanced || s == Stage::dpo_export;
  }
};

/// Canonical single-line encoding (sorted keys, UTF-8, no trailing newline).
std::string dump_line(const json& j);

/// Content hash of a serialized config.
std::string config_hash_of(std::string_view serialized_config);

namespace detail {
DatasetManifest parse_manifest_line(const std::string& line);
[[noreturn]] void throw_record_error(std::size_t line, const std::string& what);
}  // namespace detail

/// Streams records lazily in file order. The manifest is parsed on
/// construction; `next()` returns nullopt at end of file and then checks the
/// body line count against the manifest.
template <class Record>
class JsonlReader {
 public:
  JsonlReader(const std::filesystem::path& path, Stage expected_stage) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in_, line)) throw ParseError(1, "missing manifest header");
    line_ = 1;
    manifest_ = detail::parse_manifest_line(line);
    if (manifest_.stage != expected_stage) {
      throw StageMismatch("expected stage '" + std::string(to_string(expected_stage)) +
                          "' but file is '" + std::string(to_string(manifest_.stage)) + "'");
    }
    if (!RecordTraits<Record>::accepts(manifest_.stage)) {
      throw StageMismatch("stage '" + std::string(to_string(manifest_.stage)) +
                          "' does not hold this record type");
    }
  }

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  std::size_t line() const noexcept { return line_; }

  std::optional<Record> next() {
    std::string line;
    if (!std::getline(in_, line)) {
      if (seen_ != manifest_.count) {
        throw ParseError(line_, "manifest count " + std::to_string(manifest_.count) +
                                    " but body has " + std::to_string(seen_) + " records");
      }
      return std::nullopt;
    }
    ++line_;
    ++seen_;
    Record r;
    try {
      r = json::parse(line).template get<Record>();
    } catch (const std::exception& e) {
      detail::throw_record_error(line_, e.what());
    }
    if constexpr (HasUniqueKey<Record>) {
      if (!keys_.insert(*RecordTraits<Record>::unique_key(r)).second) {
        throw ParseError(line_, "duplicate id '" + *RecordTraits<Record>::unique_key(r) + "'");
      }
    }
    return r;
  }

 private:
  std::ifstream in_;
  DatasetManifest manifest_;
  std::size_t line_ = 0;
  std::size_t seen_ = 0;
  std::unordered_set<std::string> keys_;
};

/// Reads only the manifest header line.
DatasetManifest peek_manifest(const std::filesystem::path& path);

template <class Record>
struct Dataset {
  DatasetManifest manifest;
  std::vector<Record> records;
};

template <class Record>
Dataset<Record> read_jsonl(const std::filesystem::path& path, Stage expected_stage) {
  JsonlReader<Record> reader(path, expected_stage);
  Dataset<Record> out{reader.manifest(), {}};
  out.records.reserve(out.manifest.count);
  while (auto r = reader.next()) out.records.push_back(std::move(*r));
  return out;
}

/// Serializes manifest + records exactly as `write_jsonl` would write them.
template <class Record>
std::string encode_jsonl(const DatasetManifest& manifest, std::span<const Record> records) {
  if (manifest.count != records.size()) {
    throw InvalidArgument("manifest count " + std::to_string(manifest.count) + " != " +
                          std::to_string(records.size()) + " records");
  }
  if (!RecordTraits<Record>::accepts(manifest.stage)) {
    throw StageMismatch("stage '" + std::string(to_string(manifest.stage)) +
                        "' does not hold this record type");
  }
  if constexpr (HasUniqueKey<Record>) {
    std::unordered_set<std::string> keys;
    for (const auto& r : records) {
      if (!keys.insert(*RecordTraits<Record>::unique_key(r)).second) {
        throw InvalidArgument("duplicate id '" + *RecordTraits<Record>::unique_key(r) + "'");
      }
    }
  }
  std::string out = dump_line(json(manifest));
  out.push_back('\n');
  for (const auto& r : records) {
    out += dump_line(json(r));
    out.push_back('\n');
  }
  return out;
}

void write_bytes(const std::filesystem::path& path, std::string_view bytes);

/// Writes the file and returns its size in bytes.
template <class Record>
std::size_t write_jsonl(const std::filesystem::path& path, const DatasetManifest& manifest,
                        std::span<const Record> records) {
  const std::string bytes = encode_jsonl(manifest, records);
  write_bytes(path, bytes);
  return bytes.size();
}

template <class Record>
std::size_t write_jsonl(const std::filesystem::path& path, const DatasetManifest& manifest,
                        const std::vector<Record>& records) {
  return write_jsonl(path, manifest, std::span<const Record>(records));
}

}  // namespace recap
