// SPDX-License-Identifier: Apache-2.0
//
// Preference-pair construction: k-way candidate sampling, critic scoring,
// best/worst selection and length balancing.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "recap/chat_client.hpp"
#include "recap/dataset.hpp"
#include "recap/halluc_eval.hpp"
#include "recap/prompt_template.hpp"
#include "recap/toy_policy.hpp"
#include "recap/util.hpp"

namespace recap {

struct BalanceConfig {
  double epsilon = 0.5;
  double retention_floor = 0.5;
  std::uint64_t seed = 0;
  /// Size of the pair set retention is measured against. Defaults to the
  /// input size; re-balancing an earlier output passes the original count so
  /// the floor means the same thing twice.
  std::optional<std::size_t> source_count;

  void validate() const;
};

struct BalanceReport {
  std::size_t source_count = 0;
  std::size_t input_count = 0;
  std::size_t retained = 0;
  std::vector<std::string> removed_ids;  // removal order
  double mean_chosen_length = 0.0;
  double mean_rejected_length = 0.0;
  double mean_gap = 0.0;
  double retention = 0.0;
  bool balanced = false;
};

void to_json(nlohmann::json& j, const BalanceReport& r);
void from_json(const nlohmann::json& j, BalanceReport& r);

struct BalanceResult {
  std::vector<PreferencePair> pairs;
  BalanceReport report;
};

/// Greedy extreme-gap removal. With gap = chosen_length - rejected_length,
/// while |mean gap| > epsilon and one more removal keeps retention at or
/// above the floor, drop the pair with the most extreme gap on the side the
/// mean leans to. Ties go to the lower rejected (minimum) score, then the
/// lower record_id. Retained pairs keep their input order.
BalanceResult balance_lengths(std::span<const PreferencePair> pairs, const BalanceConfig& config);

/// Chosen is the first candidate with the maximum score, rejected the first
/// with the minimum. None when every score is equal.
std::optional<PreferencePair> select_pair(const CandidateSet& set);

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string prompt(const CaptionRecord& record) const = 0;
  /// One candidate. `sampler.seed` is already specific to this candidate.
  virtual std::string generate(const CaptionRecord& record, const SamplerParams& sampler) = 0;
  virtual std::size_t token_length(std::string_view text) const = 0;
  virtual LengthMode length_mode() const = 0;
  virtual std::string_view kind() const = 0;
};

/// Samples from a toy policy; the prompt is the record's scene locator.
class ToyGenerator final : public Generator {
 public:
  ToyGenerator(const ToyPolicy& policy, const ToyWorld& world) : policy_(policy), world_(world) {}
  std::string prompt(const CaptionRecord& record) const override { return record.image_ref; }
  std::string generate(const CaptionRecord& record, const SamplerParams& sampler) override;
  std::size_t token_length(std::string_view text) const override { return count_words(text); }
  LengthMode length_mode() const override { return LengthMode::model_tokens; }
  std::string_view kind() const override { return "toy_policy"; }

 private:
  const ToyPolicy& policy_;
  const ToyWorld& world_;
};

/// Asks a chat endpoint for a caption using a prompt template with
/// {{alt_text}} and {{image_ref}} placeholders.
class EndpointGenerator final : public Generator {
 public:
  EndpointGenerator(TextEndpoint& endpoint, PromptTemplate prompt)
      : endpoint_(endpoint), prompt_(std::move(prompt)) {}
  std::string prompt(const CaptionRecord& record) const override;
  std::string generate(const CaptionRecord& record, const SamplerParams& sampler) override;
  std::size_t token_length(std::string_view text) const override { return count_words(text); }
  LengthMode length_mode() const override { return LengthMode::whitespace; }
  std::string_view kind() const override { return endpoint_.deterministic() ? "mock" : "http_chat"; }

 private:
  TextEndpoint& endpoint_;
  PromptTemplate prompt_;
};

/// Scores a caption through a judge: unique faithful details minus lambda
/// times hallucinated details. With the oracle judge this equals
/// `oracle_score`.
class Critic {
 public:
  explicit Critic(Judge& judge, double lambda_halluc = 1.0);
  double score(const CaptionRecord& record, const std::string& caption) const;

 private:
  Judge& judge_;
  double lambda_;
};

struct SamplingResult {
  std::vector<CandidateSet> sets;  // input record order, failed records omitted
  std::vector<std::string> failed_ids;
};

/// k = sampler.k_samples candidates per record (k >= 2). Candidate j of a
/// record uses seed derive_seed(derive_seed(sampler.seed, id), j), so the
/// output does not depend on worker scheduling.
SamplingResult sample_candidates(std::span<const CaptionRecord> records, Generator& generator,
                                 const Critic& critic, const SamplerParams& sampler,
                                 std::size_t workers);

struct PairCounts {
  std::size_t records = 0;
  std::size_t failed = 0;
  std::size_t candidate_sets = 0;
  std::size_t no_signal = 0;
  std::size_t duplicates = 0;
  std::size_t pairs = 0;
  std::size_t retained = 0;
};

void to_json(nlohmann::json& j, const PairCounts& c);

/// Pairs from candidate sets, dropping no-signal sets and pairs whose
/// chosen and rejected texts are identical.
std::vector<PreferencePair> pairs_from_sets(std::span<const CandidateSet> sets, PairCounts& counts);

struct PairBuild {
  SamplingResult sampling;
  std::vector<PreferencePair> pairs;  // before balancing
  BalanceResult balanced;             // empty when there are no pairs
  PairCounts counts;
};

PairBuild build_pairs(std::span<const CaptionRecord> records, Generator& generator,
                      const Critic& critic, const SamplerParams& sampler,
                      const BalanceConfig& balance, std::size_t workers);

}  // namespace recap
