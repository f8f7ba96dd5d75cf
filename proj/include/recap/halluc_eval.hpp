// SPDX-License-Identifier: Apache-2.0
//
// Detail-level hallucination evaluation. A judge splits a caption into visual
// details and labels each one; `aggregate` turns a set of judgments into
// caption-level and detail-level rates.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "recap/chat_client.hpp"
#include "recap/dataset.hpp"
#include "recap/judgment.hpp"
#include "recap/prompt_template.hpp"
#include "recap/toy_policy.hpp"

namespace recap {

/// Captions with at most this many hallucinated details count as
/// low-hallucination.
inline constexpr std::size_t kLowHallucThreshold = 2;

inline constexpr std::size_t kDefaultEvalSamples = 1000;

struct JudgeRequest {
  std::string record_id;
  std::string image_ref;
  std::optional<std::string> alt_text;
  std::string caption;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual DetailJudgment judge(const JudgeRequest& request) = 0;
  virtual std::string_view kind() const = 0;
};

/// Exact judge for the synthetic world: one detail per token.
class OracleJudge final : public Judge {
 public:
  explicit OracleJudge(const ToyWorld& world) : world_(world) {}
  DetailJudgment judge(const JudgeRequest& request) override;
  std::string_view kind() const override { return "oracle"; }

 private:
  const ToyWorld& world_;
};

/// Deterministic offline judge. Captions with a canned verdict (looked up by
/// SHA-256 of the caption text) are returned verbatim; any other caption is
/// split into clauses and each clause is labelled hallucinated with
/// probability `halluc_rate`, drawn from a hash of (seed, clause).
class MockJudge final : public Judge {
 public:
  explicit MockJudge(std::uint64_t seed = 0, double halluc_rate = 0.1);

  void add_canned(std::string_view caption, std::vector<Detail> details);
  /// JSONL lines {"caption": ..., "details": [...]} or {"caption_sha256": ...}.
  void load_canned(const std::filesystem::path& path);

  DetailJudgment judge(const JudgeRequest& request) override;
  std::string_view kind() const override { return "mock"; }

 private:
  std::uint64_t seed_;
  double halluc_rate_;
  std::map<std::string, std::vector<Detail>> canned_;
};

/// Remote LLM judge. Sends the rendered template and expects a JSON object
/// {"details": [{"text": ..., "verdict": "faithful|hallucinated|neutral"}]}
/// somewhere in the reply. The raw reply is kept on the judgment.
class HttpJudge final : public Judge {
 public:
  HttpJudge(ChatClient& client, PromptTemplate prompt);
  DetailJudgment judge(const JudgeRequest& request) override;
  std::string_view kind() const override { return "http_chat"; }

  /// Parses a judge reply. Exposed for tests.
  static std::vector<Detail> parse_reply(std::string_view reply);

 private:
  ChatClient& client_;
  PromptTemplate prompt_;
};

struct QualityReport {
  std::size_t n_captions = 0;
  double avg_length = 0.0;
  double avg_details = 0.0;
  double non_halluc_rate = 0.0;
  double low_halluc_rate = 0.0;
  double detail_halluc_rate = 0.0;
  bool no_judged_details = false;  // detail_halluc_rate defined as 0

  bool operator==(const QualityReport&) const = default;
};

void to_json(nlohmann::json& j, const QualityReport& r);
void from_json(const nlohmann::json& j, QualityReport& r);

/// Fixed-order summation; neutral details are excluded from the
/// detail-level denominator. Throws EmptyBatch on empty input.
QualityReport aggregate(std::span<const DetailJudgment> judgments);

/// Which record field holds the text to evaluate.
enum class CaptionField { caption, alt_text };

struct EvaluationOptions {
  std::size_t sample_n = kDefaultEvalSamples;
  std::uint64_t seed = 0;
  std::size_t workers = 4;
  CaptionField field = CaptionField::caption;
  double max_failure_fraction = 0.10;
};

struct EvaluationResult {
  QualityReport report;
  std::vector<DetailJudgment> judgments;  // sampled order
  std::vector<std::string> failed_ids;
};

/// Indices of a uniform sample without replacement, ascending. Returns all
/// indices when sample_n >= n.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t sample_n, std::uint64_t seed);

/// Thrown when too many judge calls fail. Successful judgments so far are
/// carried along (and written to the partial-results file by
/// `evaluate_dataset`).
class EvaluationAborted : public Error {
 public:
  EvaluationAborted(const std::string& what, std::vector<DetailJudgment> partial)
      : Error(what), partial_(std::move(partial)) {}
  const std::vector<DetailJudgment>& partial() const noexcept { return partial_; }

 private:
  std::vector<DetailJudgment> partial_;
};

EvaluationResult evaluate_records(std::span<const CaptionRecord> records, Judge& judge,
                                  const EvaluationOptions& options);

/// Reads a caption file (stage `ingested` or `sft_export`), evaluates a
/// sample and writes one judgment per line to `judgments_out`. On abort the
/// judgments so far go to `<judgments_out>.partial`.
EvaluationResult evaluate_dataset(const std::filesystem::path& file, Judge& judge,
                                  const EvaluationOptions& options,
                                  const std::filesystem::path& judgments_out);

}  // namespace recap
