// SPDX-License-Identifier: Apache-2.0
#include "recap/cdpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recap/errors.hpp"
#include "recap/util.hpp"

namespace recap {

PlateauDetector::PlateauDetector(std::size_t window, double delta) : window_(window), delta_(delta) {
  if (window == 0) throw InvalidArgument("plateau window must be >= 1");
  if (std::isnan(delta)) throw InvalidArgument("plateau delta must not be NaN");
}

void PlateauDetector::record(std::size_t step, double metric) {
  if (!history_.empty() && step <= history_.back().step) {
    throw InvalidArgument("evaluation steps must be strictly increasing");
  }
  history_.push_back({step, metric});
}

bool PlateauDetector::plateaued() const {
  if (!ready()) throw NotEnoughEvaluations();
  const auto split = history_.end() - static_cast<std::ptrdiff_t>(window_);
  auto best = [](auto first, auto last) {
    double m = -std::numeric_limits<double>::infinity();
    for (auto it = first; it != last; ++it) m = std::max(m, it->metric);
    return m;
  };
  return best(split, history_.end()) - best(history_.begin(), split) < delta_;
}

bool plateau_detect(const PlateauDetector& detector) { return detector.plateaued(); }

HeldoutEvaluator::HeldoutEvaluator(const ToyWorld& world, std::vector<CaptionRecord> records,
                                   std::uint64_t seed, SamplerParams sampler, std::size_t workers)
    : world_(world), records_(std::move(records)), seed_(seed), sampler_(sampler), workers_(workers) {
  if (records_.empty()) throw InvalidArgument("held-out set is empty");
  sampler_.validate();
}

QualityReport HeldoutEvaluator::report(const ToyPolicy& policy) const {
  std::vector<CaptionRecord> captioned = records_;
  for (std::size_t i = 0; i < captioned.size(); ++i) {
    Rng rng(derive_seed(seed_, i));
    const auto seq = sample(policy, world_.context_of(captioned[i].image_ref), sampler_, rng);
    captioned[i].caption = ToyWorld::render(seq);
  }
  OracleJudge judge(world_);
  EvaluationOptions options;
  options.sample_n = captioned.size();
  options.workers = workers_;
  return evaluate_records(captioned, judge, options).report;
}

namespace {

std::vector<TokenPair> to_token_pairs(const ToyWorld& world, std::span<const PreferencePair> pairs) {
  std::vector<TokenPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({world.context_of(p.prompt), world.parse(p.chosen), world.parse(p.rejected)});
  }
  return out;
}

}  // namespace

ToyPairSource::ToyPairSource(const ToyWorld& world, Options options)
    : world_(world), options_(std::move(options)) {
  options_.balance.validate();
  options_.sampler.validate();
}

PairSource::Batch ToyPairSource::make_pairs(const ToyPolicy& sampler_policy, std::size_t round_index) {
  const auto records = world_.make_records("round" + std::to_string(round_index),
                                           options_.records_per_round,
                                           derive_seed(options_.seed, round_index));
  ToyGenerator generator(sampler_policy, world_);
  OracleJudge judge(world_);
  Critic critic(judge, options_.lambda_halluc);
  SamplerParams sampler = options_.sampler;
  sampler.seed = derive_seed(options_.seed, "candidates-" + std::to_string(round_index));
  auto built = build_pairs(records, generator, critic, sampler, options_.balance, options_.workers);

  Batch batch;
  batch.counts = built.counts;
  if (!built.pairs.empty()) batch.balance = built.balanced.report;
  batch.pairs = std::move(built.balanced.pairs);
  if (options_.reuse_old_pairs) {
    batch.pairs.insert(batch.pairs.begin(), previous_.pairs.begin(), previous_.pairs.end());
  }
  batch.tokens = to_token_pairs(world_, batch.pairs);
  previous_.pairs = batch.pairs;
  return batch;
}

void ControllerConfig::validate() const {
  dpo.validate();
  if (dpo.batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (eval_every == 0) throw InvalidArgument("eval_every must be positive");
  if (window == 0) throw InvalidArgument("plateau window must be >= 1");
  if (std::isnan(delta)) throw InvalidArgument("plateau delta must not be NaN");
}

void to_json(nlohmann::json& j, const StepEvent& e) {
  j = nlohmann::json{{"step", e.step},
                     {"loss", e.loss},
                     {"mean_margin", e.mean_margin},
                     {"mean_weight", e.mean_weight}};
}

void to_json(nlohmann::json& j, const CdpoRound& r) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& p : r.history) history.push_back({{"step", p.step}, {"metric", p.metric}});
  j = nlohmann::json{{"round_index", r.round_index},
                     {"reference_checkpoint", r.reference_checkpoint},
                     {"policy_checkpoint", r.policy_checkpoint},
                     {"pair_dataset", r.pair_dataset},
                     {"pair_count", r.pair_count},
                     {"pair_counts", r.pair_counts},
                     {"balance", r.balance ? nlohmann::json(*r.balance) : nlohmann::json(nullptr)},
                     {"steps_taken", r.steps_taken},
                     {"initial_metric", r.initial_metric},
                     {"final_metric", r.final_metric},
                     {"best_metric", r.best_metric},
                     {"plateau_step", r.plateau_step ? nlohmann::json(*r.plateau_step)
                                                     : nlohmann::json(nullptr)},
                     {"history", std::move(history)}};
}

ToyPolicy train_dpo_round(ToyPolicy policy, const ToyPolicy& reference,
                          std::span<const TokenPair> pairs, const ControllerConfig& config,
                          const MetricFn& metric, bool stop_on_plateau, std::uint64_t shuffle_seed,
                          CdpoRound& round) {
  config.validate();
  if (pairs.empty()) throw DegeneratePreferenceSet();
  PlateauDetector detector(config.window, config.delta);
  auto evaluate = [&](std::size_t step) {
    const double m = metric(policy);
    detector.record(step, m);
    if (!round.plateau_step && detector.ready() && detector.plateaued()) round.plateau_step = step;
  };
  evaluate(0);
  round.initial_metric = detector.history().front().metric;

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(shuffle_seed);
  std::size_t cursor = order.size();
  std::vector<TokenPair> batch;
  std::size_t step = 0;
  while (step < config.max_steps && !(stop_on_plateau && round.plateau_step)) {
    if (cursor == order.size()) {
      rng.shuffle(std::span<std::size_t>(order));
      cursor = 0;
    }
    const std::size_t take = std::min(config.dpo.batch_size, order.size() - cursor);
    batch.clear();
    for (std::size_t i = 0; i < take; ++i) batch.push_back(pairs[order[cursor + i]]);
    cursor += take;

    const auto g = dpo_grad(policy, reference, batch, config.dpo.beta);
    policy = sgd_step(policy, g.grad, config.dpo.learning_rate);
    ++step;
    round.events.push_back({step, g.loss, g.mean_margin, g.mean_weight});
    if (step % config.eval_every == 0) evaluate(step);
  }
  if (detector.history().back().step != step) evaluate(step);

  round.steps_taken = step;
  round.history = detector.history();
  round.final_metric = round.history.back().metric;
  round.best_metric = round.initial_metric;
  for (const auto& p : round.history) round.best_metric = std::max(round.best_metric, p.metric);
  return policy;
}

namespace {

DatasetManifest pair_manifest(const PairSource::Batch& batch, const RoundOutput& output,
                              std::size_t round_index) {
  DatasetManifest m;
  m.stage = Stage::balanced;
  m.count = batch.pairs.size();
  m.seed = output.seed;
  m.config_hash = output.config_hash;
  m.created_at = manifest_timestamp(true);
  m.length_mode = batch.length_mode;
  m.extra = {{"round", round_index}, {"counts", batch.counts}};
  if (batch.balance) m.extra["balance"] = *batch.balance;
  return m;
}

}  // namespace

CdpoRound cdpo_round(ToyPolicy& policy, PairSource& source, const ControllerConfig& config,
                     const MetricFn& metric, std::size_t round_index, bool final_round,
                     const RoundOutput& output) {
  CdpoRound round;
  round.round_index = round_index;
  const ToyPolicy reference = policy;  // deep snapshot
  round.reference_checkpoint = policy_hash(reference);

  auto batch = source.make_pairs(policy, round_index);
  round.pair_counts = batch.counts;
  round.balance = batch.balance;
  round.pair_count = batch.pairs.size();
  if (batch.tokens.empty()) throw DegeneratePreferenceSet();
  const std::string pair_bytes =
      encode_jsonl(pair_manifest(batch, output, round_index), std::span<const PreferencePair>(batch.pairs));
  round.pair_dataset = sha256_hex(pair_bytes);

  policy = train_dpo_round(std::move(policy), reference, batch.tokens, config, metric, !final_round,
                           derive_seed(config.seed, "dpo-shuffle-" + std::to_string(round_index)),
                           round);
  round.policy_checkpoint = policy_hash(policy);

  if (output.dir) {
    const auto dir = *output.dir / ("round_" + std::to_string(round_index));
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "pairs.jsonl", pair_bytes);
    save_checkpoint(dir / "ref.ckpt", reference);
    save_checkpoint(dir / "policy.ckpt", policy);
    std::string events;
    for (const auto& e : round.events) {
      events += dump_line(nlohmann::json(e));
      events.push_back('\n');
    }
    write_file_atomic(dir / "events.jsonl", events);
    write_file_atomic(dir / "report.json", nlohmann::json(round).dump(2) + "\n");
  }
  return round;
}

ControllerResult run_controller(const ToyPolicy& initial, PairSource& source,
                                const ControllerConfig& config, const MetricFn& metric,
                                const RoundOutput& output) {
  config.validate();
  const std::size_t rounds = std::max<std::size_t>(config.max_rounds, 1);
  ControllerResult result{initial, {}};
  for (std::size_t r = 0; r < rounds; ++r) {
    const bool final_round = r + 1 == rounds;
    result.rounds.push_back(
        cdpo_round(result.policy, source, config, metric, r, final_round, output));
    if (!result.rounds.back().plateau_step) break;  // no plateau, nothing to continue from
  }
  return result;
}

}  // namespace recap
