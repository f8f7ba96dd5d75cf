// SPDX-License-Identifier: Apache-2.0
#include "recap/pair_foundry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "recap/errors.hpp"

namespace recap {

void BalanceConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InvalidArgument("balance epsilon must be finite and > 0");
  }
  if (!(retention_floor > 0.0 && retention_floor <= 1.0)) {
    throw InvalidArgument("retention_floor must be in (0, 1]");
  }
}

void to_json(nlohmann::json& j, const BalanceReport& r) {
  j = nlohmann::json{{"source_count", r.source_count},
                     {"input_count", r.input_count},
                     {"retained", r.retained},
                     {"removed_ids", r.removed_ids},
                     {"mean_chosen_length", r.mean_chosen_length},
                     {"mean_rejected_length", r.mean_rejected_length},
                     {"mean_gap", r.mean_gap},
                     {"retention", r.retention},
                     {"balanced", r.balanced}};
}

void from_json(const nlohmann::json& j, BalanceReport& r) {
  j.at("source_count").get_to(r.source_count);
  j.at("input_count").get_to(r.input_count);
  j.at("retained").get_to(r.retained);
  j.at("removed_ids").get_to(r.removed_ids);
  j.at("mean_chosen_length").get_to(r.mean_chosen_length);
  j.at("mean_rejected_length").get_to(r.mean_rejected_length);
  j.at("mean_gap").get_to(r.mean_gap);
  j.at("retention").get_to(r.retention);
  j.at("balanced").get_to(r.balanced);
}

BalanceResult balance_lengths(std::span<const PreferencePair> pairs, const BalanceConfig& config) {
  config.validate();
  if (pairs.empty()) throw EmptyBatch("balance_lengths needs at least one pair");
  const std::size_t n = pairs.size();
  const std::size_t source = config.source_count.value_or(n);
  if (source < n) throw InvalidArgument("source_count is smaller than the input");

  std::vector<std::int64_t> gap(n);
  std::int64_t sum_gap = 0, sum_chosen = 0, sum_rejected = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::int64_t>(pairs[i].chosen_length);
    const auto r = static_cast<std::int64_t>(pairs[i].rejected_length);
    gap[i] = c - r;
    sum_gap += gap[i];
    sum_chosen += c;
    sum_rejected += r;
  }

  // Two removal orders: most positive gap first and most negative gap first.
  auto tie_less = [&](std::size_t a, std::size_t b) {
    if (pairs[a].rejected_score != pairs[b].rejected_score) {
      return pairs[a].rejected_score < pairs[b].rejected_score;
    }
    if (pairs[a].record_id != pairs[b].record_id) return pairs[a].record_id < pairs[b].record_id;
    return a < b;
  };
  std::vector<std::size_t> high(n);
  std::iota(high.begin(), high.end(), std::size_t{0});
  std::vector<std::size_t> low = high;
  std::sort(high.begin(), high.end(), [&](std::size_t a, std::size_t b) {
    return gap[a] != gap[b] ? gap[a] > gap[b] : tie_less(a, b);
  });
  std::sort(low.begin(), low.end(), [&](std::size_t a, std::size_t b) {
    return gap[a] != gap[b] ? gap[a] < gap[b] : tie_less(a, b);
  });

  std::vector<bool> removed(n, false);
  std::size_t kept = n, hi = 0, lo = 0;
  BalanceReport report;
  auto over = [&] {
    return std::abs(static_cast<double>(sum_gap)) > config.epsilon * static_cast<double>(kept);
  };
  auto may_remove = [&] {
    return kept > 1 &&
           static_cast<double>(kept - 1) >= config.retention_floor * static_cast<double>(source);
  };
  while (over() && may_remove()) {
    std::size_t victim;
    if (sum_gap > 0) {
      while (removed[high[hi]]) ++hi;
      victim = high[hi];
    } else {
      while (removed[low[lo]]) ++lo;
      victim = low[lo];
    }
    removed[victim] = true;
    --kept;
    sum_gap -= gap[victim];
    sum_chosen -= static_cast<std::int64_t>(pairs[victim].chosen_length);
    sum_rejected -= static_cast<std::int64_t>(pairs[victim].rejected_length);
    report.removed_ids.push_back(pairs[victim].record_id);
  }

  BalanceResult result;
  result.pairs.reserve(kept);
  for (std::size_t i = 0; i < n; ++i) {
    if (!removed[i]) result.pairs.push_back(pairs[i]);
  }
  const double k = static_cast<double>(kept);
  report.source_count = source;
  report.input_count = n;
  report.retained = kept;
  report.mean_chosen_length = static_cast<double>(sum_chosen) / k;
  report.mean_rejected_length = static_cast<double>(sum_rejected) / k;
  report.mean_gap = static_cast<double>(sum_gap) / k;
  report.retention = k / static_cast<double>(source);
  report.balanced = !over();
  result.report = std::move(report);
  return result;
}

std::optional<PreferencePair> select_pair(const CandidateSet& set) {
  if (set.candidates.size() < 2) {
    throw InvalidArgument("candidate set '" + set.record_id + "' needs at least two candidates");
  }
  std::size_t best = 0, worst = 0;
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    const double s = set.candidates[i].critic_score;
    if (!std::isfinite(s)) throw NonFiniteScore("candidate set '" + set.record_id + "'");
    if (s > set.candidates[best].critic_score) best = i;
    if (s < set.candidates[worst].critic_score) worst = i;
  }
  const auto& w = set.candidates[best];
  const auto& l = set.candidates[worst];
  if (w.critic_score == l.critic_score) return std::nullopt;
  return PreferencePair{set.record_id, set.prompt,   w.text,        w.token_length,
                        l.text,        l.token_length, w.critic_score, l.critic_score};
}

std::string ToyGenerator::generate(const CaptionRecord& record, const SamplerParams& sampler) {
  Rng rng(sampler.seed);
  return ToyWorld::render(sample(policy_, world_.context_of(record.image_ref), sampler, rng));
}

std::string EndpointGenerator::prompt(const CaptionRecord& record) const {
  return prompt_.render({{"alt_text", record.alt_text.value_or("")}, {"image_ref", record.image_ref}});
}

std::string EndpointGenerator::generate(const CaptionRecord& record, const SamplerParams& sampler) {
  const ChatMessage msgs[] = {{"user", prompt(record), record.image_ref}};
  return endpoint_.complete(msgs, sampler);
}

Critic::Critic(Judge& judge, double lambda_halluc) : judge_(judge), lambda_(lambda_halluc) {
  if (!(lambda_halluc >= 0.0) || !std::isfinite(lambda_halluc)) {
    throw InvalidArgument("lambda_halluc must be finite and >= 0");
  }
}

double Critic::score(const CaptionRecord& record, const std::string& caption) const {
  const auto j = judge_.judge({record.id, record.image_ref, record.alt_text, caption});
  std::set<std::string_view> faithful;
  std::size_t halluc = 0;
  for (const auto& d : j.details) {
    if (d.verdict == Verdict::faithful) faithful.insert(d.text);
    if (d.verdict == Verdict::hallucinated) ++halluc;
  }
  return static_cast<double>(faithful.size()) - lambda_ * static_cast<double>(halluc);
}

SamplingResult sample_candidates(std::span<const CaptionRecord> records, Generator& generator,
                                 const Critic& critic, const SamplerParams& sampler,
                                 std::size_t workers) {
  sampler.validate();
  const std::size_t k = sampler.k_samples;
  if (k < 2 || k > kMaxCandidates) {
    throw InvalidArgument("k_samples must be in 2.." + std::to_string(kMaxCandidates));
  }
  auto sets = parallel_map<std::optional<CandidateSet>>(
      records.size(), workers, [&](std::size_t i) -> std::optional<CandidateSet> {
        const auto& record = records[i];
        CandidateSet set;
        set.record_id = record.id;
        set.sampler = sampler;
        set.sampler.seed = derive_seed(sampler.seed, record.id);
        try {
          set.prompt = generator.prompt(record);
          for (std::size_t j = 0; j < k; ++j) {
            SamplerParams one = set.sampler;
            one.seed = derive_seed(set.sampler.seed, j);
            Candidate c;
            c.text = generator.generate(record, one);
            c.token_length = generator.token_length(c.text);
            c.critic_score = critic.score(record, c.text);
            set.candidates.push_back(std::move(c));
          }
        } catch (const Error&) {
          return std::nullopt;
        }
        return set;
      });
  SamplingResult out;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i]) {
      out.sets.push_back(std::move(*sets[i]));
    } else {
      out.failed_ids.push_back(records[i].id);
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const PairCounts& c) {
  j = nlohmann::json{{"records", c.records},       {"failed", c.failed},
                     {"candidate_sets", c.candidate_sets}, {"no_signal", c.no_signal},
                     {"duplicates", c.duplicates}, {"pairs", c.pairs},
                     {"retained", c.retained}};
}

std::vector<PreferencePair> pairs_from_sets(std::span<const CandidateSet> sets, PairCounts& counts) {
  std::vector<PreferencePair> pairs;
  for (const auto& set : sets) {
    auto pair = select_pair(set);
    if (!pair) {
      ++counts.no_signal;
    } else if (pair->chosen == pair->rejected) {
      ++counts.duplicates;
    } else {
      pairs.push_back(std::move(*pair));
    }
  }
  counts.candidate_sets += sets.size();
  counts.pairs += pairs.size();
  return pairs;
}

PairBuild build_pairs(std::span<const CaptionRecord> records, Generator& generator,
                      const Critic& critic, const SamplerParams& sampler,
                      const BalanceConfig& balance, std::size_t workers) {
  balance.validate();
  PairBuild out;
  out.counts.records = records.size();
  out.sampling = sample_candidates(records, generator, critic, sampler, workers);
  out.counts.failed = out.sampling.failed_ids.size();
  out.pairs = pairs_from_sets(out.sampling.sets, out.counts);
  if (!out.pairs.empty()) {
    out.balanced = balance_lengths(out.pairs, balance);
  }
  out.counts.retained = out.balanced.pairs.size();
  return out;
}

}  // namespace recap
