// SPDX-License-Identifier: Apache-2.0
#include "recap/pipeline.hpp"

#include <unistd.h>

#include <atomic>

#include "recap/errors.hpp"
#include "recap/util.hpp"

namespace recap {

ToySetup make_toy_setup(const PipelineConfig& config) {
  auto world = ToyWorld::generate(config.toy.world, derive_seed(config.seed, "world"));
  auto base = world.base_policy(config.toy.base, derive_seed(config.seed, "base"));
  auto heldout =
      world.make_records("heldout", config.toy.heldout_records, derive_seed(config.seed, "heldout"));
  return {std::move(world), std::move(base), std::move(heldout)};
}

HeldoutEvaluator make_evaluator(const ToySetup& setup, const PipelineConfig& config) {
  SamplerParams sampler = config.sampler;
  return HeldoutEvaluator(setup.world, setup.heldout, derive_seed(config.seed, "eval"), sampler,
                          config.workers);
}

ControllerConfig controller_config(const PipelineConfig& config) {
  ControllerConfig c;
  c.dpo = {config.beta, config.learning_rate, config.dpo.batch_size};
  c.max_steps = config.max_steps;
  c.eval_every = config.eval_every;
  c.window = config.plateau_window;
  c.delta = config.plateau_delta;
  c.max_rounds = config.max_rounds;
  c.seed = derive_seed(config.seed, "controller");
  return c;
}

ToyPairSource::Options pair_source_options(const PipelineConfig& config) {
  ToyPairSource::Options o;
  o.records_per_round = config.toy.pair_records;
  o.sampler = config.sampler;
  o.balance = config.balance;
  o.lambda_halluc = config.toy.lambda_halluc;
  o.reuse_old_pairs = config.reuse_old_pairs;
  o.seed = derive_seed(config.seed, "pairs");
  o.workers = config.workers;
  return o;
}

ToyTeacher::ToyTeacher(const ToyPolicy& policy, const ToyWorld& world, std::size_t attempts,
                       double lambda_halluc)
    : policy_(policy), world_(world), attempts_(std::max<std::size_t>(attempts, 1)),
      critic_{lambda_halluc} {}

std::string ToyTeacher::generate(const CaptionRecord& record, const SamplerParams& sampler) {
  const auto context = world_.context_of(record.image_ref);
  Rng rng(sampler.seed);
  TokenSeq best;
  double best_score = 0.0;
  for (std::size_t i = 0; i < attempts_; ++i) {
    auto seq = sample(policy_, context, sampler, rng);
    const double s = oracle_score(critic_, world_.scene(context), seq);
    if (i == 0 || s > best_score) {
      best = std::move(seq);
      best_score = s;
    }
  }
  return ToyWorld::render(best);
}

namespace {

DatasetManifest manifest_for(const PipelineConfig& config, Stage stage, std::size_t count,
                             nlohmann::json extra = nlohmann::json::object()) {
  DatasetManifest m;
  m.stage = stage;
  m.count = count;
  m.seed = config.seed;
  m.config_hash = config.hash();
  m.created_at = manifest_timestamp(true);
  m.length_mode = LengthMode::model_tokens;
  m.extra = std::move(extra);
  return m;
}

std::atomic<unsigned> temp_counter{0};

template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

SftStage run_toy_sft(const ToySetup& setup, const PipelineConfig& config,
                     const std::optional<std::filesystem::path>& dir) {
  const auto records =
      setup.world.make_records("sft", config.toy.sft_records, derive_seed(config.seed, "sft-records"));
  ToyTeacher teacher(setup.base, setup.world, config.toy.sft_attempts, config.toy.lambda_halluc);
  OracleJudge judge(setup.world);
  SeedGenOptions gen;
  gen.sampler = config.sampler;
  gen.sampler.seed = derive_seed(config.seed, "sft-teacher");
  gen.workers = config.workers;
  gen.endpoint = "toy_teacher";
  gen.pre_annotator = &judge;
  auto seeded = gen_sft_seed(records, teacher, gen);

  // The review queue lives on disk so the oracle reviewer goes through the
  // same journal as a human would; without a run directory use a temp dir.
  const auto work = dir ? *dir
                        : std::filesystem::temp_directory_path() /
                              ("recap-sft-" + std::to_string(::getpid()) + "-" +
                               std::to_string(temp_counter++));
  std::filesystem::create_directories(work);
  const auto queue_path = work / "queue.jsonl";
  std::filesystem::remove(queue_path.string() + ".journal");
  write_review_queue(queue_path, manifest_for(config, Stage::review_queue, seeded.items.size()),
                     seeded.items);

  SftExport exported;
  {
    ReviewStore store(queue_path);
    for (const auto& item : seeded.items) {
      std::size_t halluc = 0;
      std::vector<std::size_t> flagged;
      for (std::size_t i = 0; i < item.pre_annotations->size(); ++i) {
        if ((*item.pre_annotations)[i].verdict == Verdict::hallucinated) {
          ++halluc;
          flagged.push_back(i);
        }
      }
      VerdictRequest v;
      v.item_id = item.id;
      v.reviewer = "toy-oracle";
      v.flagged_details = flagged;
      if (halluc <= config.toy.review_max_halluc) {
        v.decision = Decision::approve;
      } else {
        v.decision = Decision::reject;
        v.reason = std::to_string(halluc) + " hallucinated details";
      }
      store.apply(v);
    }
    exported = export_sft(store.snapshot());
  }

  std::vector<TokenExample> examples;
  examples.reserve(exported.records.size());
  for (const auto& r : exported.records) {
    examples.push_back({setup.world.context_of(r.image_ref), setup.world.parse(*r.caption)});
  }
  SftSchedule schedule;
  schedule.batch_size = config.sft.batch_size;
  schedule.epochs = config.sft.epochs;
  schedule.learning_rate = config.toy.sft_learning_rate;
  schedule.seed = derive_seed(config.seed, "sft-train");
  auto policy = train_sft(setup.base, std::move(examples), schedule);

  if (dir) {
    write_jsonl(*dir / "records.jsonl", manifest_for(config, Stage::ingested, records.size()), records);
    write_jsonl(*dir / "sft.jsonl",
                manifest_for(config, Stage::sft_export, exported.records.size(), export_counts(exported)),
                exported.records);
    std::string rejections;
    for (const auto& r : exported.rejected) {
      rejections += dump_line({{"id", r.id}, {"reason", r.reason}}) + "\n";
    }
    write_file_atomic(*dir / "rejections.jsonl", rejections);
    save_checkpoint(*dir / "base.ckpt", setup.base);
    save_checkpoint(*dir / "policy.ckpt", policy);
  } else {
    std::filesystem::remove_all(work);
  }
  return {std::move(policy), std::move(exported), seeded.items.size()};
}

nlohmann::json run_pipeline(const PipelineConfig& config, const std::filesystem::path& run_dir) {
  config.validate();
  if (config.generator.kind != "toy_policy" || config.judge.kind != "oracle") {
    throw ConfigError("run_pipeline trains the toy policy; it needs generator.kind = toy_policy "
                      "and judge.kind = oracle");
  }
  std::filesystem::create_directories(run_dir);
  write_file_atomic(run_dir / "config.ini", config.serialize());

  const auto setup = stage("setup", [&] { return make_toy_setup(config); });
  const auto evaluator = make_evaluator(setup, config);

  const auto base_report = stage("evaluate", [&] { return evaluator.report(setup.base); });
  auto sft = stage("sft", [&] { return run_toy_sft(setup, config, run_dir / "sft"); });
  const auto sft_report = stage("evaluate", [&] { return evaluator.report(sft.policy); });

  ToyPairSource source(setup.world, pair_source_options(config));
  const MetricFn metric = [&](const ToyPolicy& p) { return evaluator(p); };
  RoundOutput output{run_dir, config.hash(), config.seed};
  auto result = stage("cdpo", [&] {
    return run_controller(sft.policy, source, controller_config(config), metric, output);
  });
  save_checkpoint(run_dir / "final.ckpt", result.policy);
  const auto final_report = stage("evaluate", [&] { return evaluator.report(result.policy); });

  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : result.rounds) {
    for (const auto& p : r.history) {
      history.push_back({{"round", r.round_index}, {"step", p.step}, {"metric", p.metric}});
    }
  }
  nlohmann::json report{
      {"config_hash", config.hash()},
      {"seed", config.seed},
      {"metric", "heldout_non_halluc_rate"},
      {"sft",
       {{"queued", sft.queued},
        {"counts", export_counts(sft.exported)},
        {"checkpoint", policy_hash(sft.policy)}}},
      {"reports", {{"base", base_report}, {"sft", sft_report}, {"final", final_report}}},
      {"stage_metrics",
       {{"base", base_report.non_halluc_rate},
        {"sft", sft_report.non_halluc_rate},
        {"dpo", result.rounds.front().final_metric},
        {"cdpo", result.rounds.size() > 1 ? nlohmann::json(result.rounds.back().final_metric)
                                          : nlohmann::json(nullptr)}}},
      {"rounds", result.rounds},
      {"metric_history", std::move(history)},
      {"checkpoints",
       {{"base", policy_hash(setup.base)},
        {"sft", policy_hash(sft.policy)},
        {"final", policy_hash(result.policy)}}}};
  write_file_atomic(run_dir / "report.json", report.dump(2) + "\n");
  return report;
}

}  // namespace recap
