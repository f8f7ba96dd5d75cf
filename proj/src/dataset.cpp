// SPDX-License-Identifier: Apache-2.0
#include "recap/dataset.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include "recap/util.hpp"

namespace recap {

namespace {

template <class Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names,
                std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  throw InvalidArgument("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

constexpr std::array<std::string_view, 5> kSourceNames = {"alt_text", "sft_seed", "candidate",
                                                          "reviewed", "final"};
constexpr std::array<std::string_view, 7> kStageNames = {
    "ingested", "candidates", "pairs", "balanced", "sft_export", "dpo_export", "review_queue"};
constexpr std::array<std::string_view, 2> kLengthModeNames = {"whitespace", "model_tokens"};

void require_finite(double v, std::string_view what) {
  if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + " must be finite");
}

template <class T>
void get_optional(const json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) {
    out = it->get<T>();
  } else {
    out.reset();
  }
}

}  // namespace

std::string_view to_string(CaptionSource s) { return kSourceNames.at(static_cast<std::size_t>(s)); }
std::string_view to_string(Stage s) { return kStageNames.at(static_cast<std::size_t>(s)); }
std::string_view to_string(LengthMode m) {
  return kLengthModeNames.at(static_cast<std::size_t>(m));
}

CaptionSource caption_source_from_string(std::string_view s) {
  return parse_enum<CaptionSource>(s, kSourceNames, "caption source");
}
Stage stage_from_string(std::string_view s) { return parse_enum<Stage>(s, kStageNames, "stage"); }
LengthMode length_mode_from_string(std::string_view s) {
  return parse_enum<LengthMode>(s, kLengthModeNames, "length mode");
}

void CaptionRecord::validate() const {
  if (id.empty()) throw InvalidArgument("caption record id must be nonempty");
  if (source == CaptionSource::candidate && !caption) {
    throw InvalidArgument("candidate record '" + id + "' has no caption");
  }
}

void SamplerParams::validate() const {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("top_p must be in (0, 1]");
  if (top_k == 0) throw InvalidArgument("top_k must be positive");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw InvalidArgument("temperature must be finite and >= 0");
  }
  if (k_samples == 0) throw InvalidArgument("k_samples must be positive");
}

void CandidateSet::validate() const {
  if (candidates.empty() || candidates.size() > kMaxCandidates) {
    throw InvalidArgument("candidate set '" + record_id + "' must hold 1.." +
                          std::to_string(kMaxCandidates) + " candidates");
  }
  for (const auto& c : candidates) require_finite(c.critic_score, "critic_score");
  sampler.validate();
}

void PreferencePair::validate() const {
  require_finite(chosen_score, "chosen_score");
  require_finite(rejected_score, "rejected_score");
  if (chosen_score < rejected_score) {
    throw InvalidArgument("pair '" + record_id + "': chosen_score < rejected_score");
  }
  if (chosen == rejected) throw InvalidArgument("pair '" + record_id + "': chosen == rejected");
}

void to_json(json& j, const CaptionRecord& r) {
  j = json{{"id", r.id},
           {"image_ref", r.image_ref},
           {"alt_text", r.alt_text ? json(*r.alt_text) : json(nullptr)},
           {"caption", r.caption ? json(*r.caption) : json(nullptr)},
           {"source", to_string(r.source)}};
}

void from_json(const json& j, CaptionRecord& r) {
  j.at("id").get_to(r.id);
  j.at("image_ref").get_to(r.image_ref);
  get_optional(j, "alt_text", r.alt_text);
  get_optional(j, "caption", r.caption);
  r.source = caption_source_from_string(j.at("source").get<std::string>());
  r.validate();
}

void to_json(json& j, const SamplerParams& p) {
  j = json{{"top_p", p.top_p},
           {"top_k", p.top_k},
           {"temperature", p.temperature},
           {"k_samples", p.k_samples},
           {"seed", p.seed}};
}

void from_json(const json& j, SamplerParams& p) {
  j.at("top_p").get_to(p.top_p);
  j.at("top_k").get_to(p.top_k);
  j.at("temperature").get_to(p.temperature);
  j.at("k_samples").get_to(p.k_samples);
  j.at("seed").get_to(p.seed);
  p.validate();
}

void to_json(json& j, const Candidate& c) {
  j = json{{"text", c.text}, {"token_length", c.token_length}, {"critic_score", c.critic_score}};
}

void from_json(const json& j, Candidate& c) {
  j.at("text").get_to(c.text);
  j.at("token_length").get_to(c.token_length);
  j.at("critic_score").get_to(c.critic_score);
}

void to_json(json& j, const CandidateSet& s) {
  j = json{{"record_id", s.record_id},
           {"prompt", s.prompt},
           {"candidates", s.candidates},
           {"sampler", s.sampler}};
}

void from_json(const json& j, CandidateSet& s) {
  j.at("record_id").get_to(s.record_id);
  j.at("prompt").get_to(s.prompt);
  j.at("candidates").get_to(s.candidates);
  j.at("sampler").get_to(s.sampler);
  s.validate();
}

void to_json(json& j, const PreferencePair& p) {
  j = json{{"record_id", p.record_id},           {"prompt", p.prompt},
           {"chosen", p.chosen},                 {"chosen_length", p.chosen_length},
           {"rejected", p.rejected},             {"rejected_length", p.rejected_length},
           {"chosen_score", p.chosen_score},     {"rejected_score", p.rejected_score}};
}

void from_json(const json& j, PreferencePair& p) {
  j.at("record_id").get_to(p.record_id);
  j.at("prompt").get_to(p.prompt);
  j.at("chosen").get_to(p.chosen);
  j.at("chosen_length").get_to(p.chosen_length);
  j.at("rejected").get_to(p.rejected);
  j.at("rejected_length").get_to(p.rejected_length);
  j.at("chosen_score").get_to(p.chosen_score);
  j.at("rejected_score").get_to(p.rejected_score);
  p.validate();
}

void to_json(json& j, const DatasetManifest& m) {
  j = json{{"kind", "manifest"},
           {"v", kSchemaVersion},
           {"stage", to_string(m.stage)},
           {"count", m.count},
           {"seed", m.seed},
           {"config_hash", m.config_hash},
           {"created_at", m.created_at},
           {"length_mode", to_string(m.length_mode)},
           {"extra", m.extra}};
}

void from_json(const json& j, DatasetManifest& m) {
  if (j.value("kind", std::string()) != "manifest") throw InvalidArgument("not a manifest");
  if (j.at("v").get<int>() != kSchemaVersion) {
    throw InvalidArgument("unsupported schema version " + j.at("v").dump());
  }
  m.stage = stage_from_string(j.at("stage").get<std::string>());
  j.at("count").get_to(m.count);
  j.at("seed").get_to(m.seed);
  j.at("config_hash").get_to(m.config_hash);
  j.at("created_at").get_to(m.created_at);
  m.length_mode = length_mode_from_string(j.at("length_mode").get<std::string>());
  m.extra = j.value("extra", json::object());
}

std::string dump_line(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

std::string config_hash_of(std::string_view serialized_config) {
  return sha256_hex(serialized_config);
}

namespace detail {
DatasetManifest parse_manifest_line(const std::string& line);
}

void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
  write_file_atomic(path, bytes);
}

DatasetManifest peek_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing manifest header");
  return detail::parse_manifest_line(line);
}

namespace detail {

DatasetManifest parse_manifest_line(const std::string& line) {
  try {
    return json::parse(line).get<DatasetManifest>();
  } catch (const std::exception& e) {
    throw ParseError(1, std::string("bad manifest: ") + e.what());
  }
}

void throw_record_error(std::size_t line, const std::string& what) { throw ParseError(line, what); }

}  // namespace detail

}  // namespace recap
