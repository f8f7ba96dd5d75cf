// SPDX-License-Identifier: Apache-2.0
//
// Continuous DPO: train against a frozen reference until the held-out metric
// stops improving, then promote the current policy to reference, resample
// preference pairs with it and keep going.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "recap/dpo.hpp"
#include "recap/halluc_eval.hpp"
#include "recap/pair_foundry.hpp"
#include "recap/toy_policy.hpp"

namespace recap {

struct EvalPoint {
  std::size_t step = 0;
  double metric = 0.0;

  bool operator==(const EvalPoint&) const = default;
};

/// Fires when the best metric over the last `window` evaluations beats the
/// best of all earlier evaluations by less than `delta`. A delta of -inf
/// disables it.
class PlateauDetector {
 public:
  PlateauDetector(std::size_t window, double delta);

  /// Steps must be strictly increasing.
  void record(std::size_t step, double metric);
  bool ready() const noexcept { return history_.size() >= window_ + 1; }
  /// Throws NotEnoughEvaluations unless ready().
  bool plateaued() const;

  std::size_t window() const noexcept { return window_; }
  double delta() const noexcept { return delta_; }
  const std::vector<EvalPoint>& history() const noexcept { return history_; }

 private:
  std::size_t window_;
  double delta_;
  std::vector<EvalPoint> history_;
};

bool plateau_detect(const PlateauDetector& detector);

/// Held-out non-hallucination rate of a toy policy, judged by the oracle.
/// Each held-out record draws its caption from a stream seeded by (seed,
/// record index), so successive evaluations share random numbers and their
/// differences reflect the policy rather than sampling noise.
class HeldoutEvaluator {
 public:
  HeldoutEvaluator(const ToyWorld& world, std::vector<CaptionRecord> records, std::uint64_t seed,
                   SamplerParams sampler, std::size_t workers);

  QualityReport report(const ToyPolicy& policy) const;
  double operator()(const ToyPolicy& policy) const { return report(policy).non_halluc_rate; }

 private:
  const ToyWorld& world_;
  std::vector<CaptionRecord> records_;
  std::uint64_t seed_;
  SamplerParams sampler_;
  std::size_t workers_;
};

/// Supplies the preference data for one round, sampled with `sampler_policy`.
class PairSource {
 public:
  struct Batch {
    std::vector<PreferencePair> pairs;  // balanced, as written to disk
    std::vector<TokenPair> tokens;      // same pairs in model tokens
    PairCounts counts;
    std::optional<BalanceReport> balance;
    LengthMode length_mode = LengthMode::model_tokens;
  };
  virtual ~PairSource() = default;
  virtual Batch make_pairs(const ToyPolicy& sampler_policy, std::size_t round_index) = 0;
};

/// Toy-world pair source: draws a fresh record pool each round (or reuses
/// earlier pairs too when asked), samples candidates with the given policy,
/// scores them with the oracle and balances lengths.
class ToyPairSource final : public PairSource {
 public:
  struct Options {
    std::size_t records_per_round = 1000;
    SamplerParams sampler;
    BalanceConfig balance;
    double lambda_halluc = 1.0;
    bool reuse_old_pairs = false;
    std::uint64_t seed = 0;
    std::size_t workers = 4;
  };
  ToyPairSource(const ToyWorld& world, Options options);
  Batch make_pairs(const ToyPolicy& sampler_policy, std::size_t round_index) override;

 private:
  const ToyWorld& world_;
  Options options_;
  Batch previous_;
};

struct ControllerConfig {
  DpoConfig dpo;
  std::size_t max_steps = 600;  // per round
  std::size_t eval_every = 20;
  std::size_t window = 3;
  double delta = 0.005;
  std::size_t max_rounds = 2;  // total rounds, the first being plain DPO
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepEvent {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_margin = 0.0;
  double mean_weight = 0.0;
};

void to_json(nlohmann::json& j, const StepEvent& e);

struct CdpoRound {
  std::size_t round_index = 0;
  std::string reference_checkpoint;  // policy_hash of the reference
  std::string policy_checkpoint;     // policy_hash at the end of the round
  std::string pair_dataset;          // SHA-256 of the pair file bytes
  std::size_t pair_count = 0;
  PairCounts pair_counts;
  std::optional<BalanceReport> balance;
  std::size_t steps_taken = 0;
  double initial_metric = 0.0;
  double final_metric = 0.0;
  double best_metric = 0.0;
  std::optional<std::size_t> plateau_step;  // first evaluation at which the detector fired
  std::vector<EvalPoint> history;
  std::vector<StepEvent> events;
};

void to_json(nlohmann::json& j, const CdpoRound& r);

using MetricFn = std::function<double(const ToyPolicy&)>;

/// Trains `policy` against `reference` on `pairs`. Evaluates at step 0 and
/// every `eval_every` steps; stops at `max_steps`, or at the first plateau
/// when `stop_on_plateau` is set. Returns the trained policy.
ToyPolicy train_dpo_round(ToyPolicy policy, const ToyPolicy& reference,
                          std::span<const TokenPair> pairs, const ControllerConfig& config,
                          const MetricFn& metric, bool stop_on_plateau, std::uint64_t shuffle_seed,
                          CdpoRound& round);

/// Round artifacts go to <dir>/round_<n>/ when a directory is given.
struct RoundOutput {
  std::optional<std::filesystem::path> dir;
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// One continuation: the reference becomes a snapshot of `policy`, fresh
/// pairs are sampled with it, and DPO resumes against that reference.
/// Throws DegeneratePreferenceSet when no usable pair comes back.
CdpoRound cdpo_round(ToyPolicy& policy, PairSource& source, const ControllerConfig& config,
                     const MetricFn& metric, std::size_t round_index, bool final_round,
                     const RoundOutput& output);

struct ControllerResult {
  ToyPolicy policy;
  std::vector<CdpoRound> rounds;
};

/// Round 0 is plain DPO against `initial` as reference. Every non-final round
/// ends at its first plateau and triggers the next; the final round spends
/// its whole step budget.
ControllerResult run_controller(const ToyPolicy& initial, PairSource& source,
                                const ControllerConfig& config, const MetricFn& metric,
                                const RoundOutput& output);

}  // namespace recap
