// SPDX-License-Identifier: Apache-2.0
#include "recap/cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "recap/config.hpp"
#include "recap/errors.hpp"
#include "recap/pipeline.hpp"
#include "recap/review.hpp"
#include "recap/sft.hpp"
#include "recap/util.hpp"

namespace recap {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void emit(const json& summary) { std::cout << summary.dump(2) << std::endl; }

PipelineConfig load_config(const std::string& path) {
  return path.empty() ? PipelineConfig{} : PipelineConfig::load(path);
}

DatasetManifest manifest_for(const PipelineConfig& config, Stage stage, std::size_t count,
                             LengthMode mode, json extra = json::object()) {
  DatasetManifest m;
  m.stage = stage;
  m.count = count;
  m.seed = config.seed;
  m.config_hash = config.hash();
  m.created_at = manifest_timestamp(true);
  m.length_mode = mode;
  m.extra = std::move(extra);
  return m;
}

/// Generator, judge and whatever they borrow from, built from the config.
struct Backends {
  std::optional<ToySetup> toy;
  std::optional<ToyPolicy> policy;
  std::unique_ptr<ChatClient> generator_client;
  std::unique_ptr<ChatClient> judge_client;
  std::unique_ptr<TextEndpoint> endpoint;
  std::unique_ptr<Generator> generator;
  std::unique_ptr<Judge> judge;
  std::string generator_desc;

  const ToySetup& toy_setup(const PipelineConfig& config) {
    if (!toy) toy.emplace(make_toy_setup(config));
    return *toy;
  }

  Generator& make_generator(const PipelineConfig& config, const std::string& policy_path) {
    const auto& kind = config.generator.kind;
    if (kind == "toy_policy") {
      const auto& setup = toy_setup(config);
      policy.emplace(policy_path.empty() ? setup.base : load_checkpoint(policy_path));
      if (!policy->same_shape(setup.base)) {
        throw ConfigError("policy checkpoint does not match the configured toy world");
      }
      generator = std::make_unique<ToyGenerator>(*policy, setup.world);
      generator_desc = policy_path.empty() ? "toy:base" : "toy:" + policy_hash(*policy);
    } else {
      auto prompt = PromptTemplate::load(config.generator.prompt);
      if (kind == "mock") {
        endpoint = std::make_unique<MockTextEndpoint>();
      } else {
        generator_client = std::make_unique<ChatClient>(config.generator.chat);
        endpoint = std::make_unique<ChatTextEndpoint>(*generator_client);
      }
      generator_desc = endpoint->describe();
      generator = std::make_unique<EndpointGenerator>(*endpoint, std::move(prompt));
    }
    return *generator;
  }

  Judge& make_judge(const PipelineConfig& config, const std::string& kind) {
    if (kind == "oracle") {
      judge = std::make_unique<OracleJudge>(toy_setup(config).world);
    } else if (kind == "mock") {
      auto mock = std::make_unique<MockJudge>(config.seed, config.judge.mock_halluc_rate);
      if (!config.judge.canned.empty()) mock->load_canned(config.judge.canned);
      judge = std::move(mock);
    } else if (kind == "http_chat") {
      config.judge.chat.validate();
      judge_client = std::make_unique<ChatClient>(config.judge.chat);
      judge = std::make_unique<HttpJudge>(*judge_client, PromptTemplate::load(config.judge.prompt));
    } else {
      throw ConfigError("unknown judge kind '" + kind + "'");
    }
    return *judge;
  }
};

std::string with_suffix(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

// ---- subcommands ----------------------------------------------------------

struct IngestArgs {
  std::string config, input, output;
  std::size_t toy = 0;
};

int cmd_ingest(const IngestArgs& a) {
  const auto config = load_config(a.config);
  std::vector<CaptionRecord> records;
  if (a.toy > 0) {
    const auto setup = make_toy_setup(config);
    records = setup.world.make_records("rec", a.toy, derive_seed(config.seed, "ingest"));
  } else {
    if (a.input.empty()) throw ConfigError("ingest needs --input or --toy");
    std::ifstream in(a.input, std::ios::binary);
    if (!in) throw IoError("cannot open " + a.input);
    std::string line;
    std::size_t lineno = 0;
    std::unordered_set<std::string> seen;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      CaptionRecord r;
      try {
        const auto j = json::parse(line);
        char fallback[32];
        std::snprintf(fallback, sizeof fallback, "rec-%06zu", records.size());
        r.id = j.contains("id") ? j.at("id").get<std::string>() : std::string(fallback);
        for (const char* key : {"image_ref", "image", "url"}) {
          if (j.contains(key)) {
            r.image_ref = j.at(key).get<std::string>();
            break;
          }
        }
        if (r.image_ref.empty()) throw InvalidArgument("no image_ref/image/url field");
        for (const char* key : {"alt_text", "text"}) {
          if (j.contains(key) && !j.at(key).is_null()) {
            r.alt_text = j.at(key).get<std::string>();
            break;
          }
        }
        if (j.contains("caption") && !j.at("caption").is_null()) r.caption = j.at("caption").get<std::string>();
        r.source = CaptionSource::alt_text;
        r.validate();
      } catch (const std::exception& e) {
        throw ParseError(lineno, e.what());
      }
      if (!seen.insert(r.id).second) throw ParseError(lineno, "duplicate id '" + r.id + "'");
      records.push_back(std::move(r));
    }
  }
  const auto mode = a.toy > 0 ? LengthMode::model_tokens : LengthMode::whitespace;
  const auto bytes = write_jsonl(a.output, manifest_for(config, Stage::ingested, records.size(), mode), records);
  emit({{"stage", "ingested"}, {"output", a.output}, {"count", records.size()}, {"bytes", bytes}});
  return 0;
}

struct GenSeedArgs {
  std::string config, input, output, template_path, policy;
  bool annotate = false;
};

int cmd_gen_sft_seed(const GenSeedArgs& a) {
  auto config = load_config(a.config);
  if (!a.template_path.empty()) config.generator.prompt = a.template_path;
  const auto tmpl = PromptTemplate::load(config.generator.prompt);
  const auto data = read_jsonl<CaptionRecord>(a.input, Stage::ingested);
  Backends b;
  auto& generator = b.make_generator(config, a.policy);
  SeedGenOptions options;
  options.sampler = config.sampler;
  options.sampler.seed = derive_seed(config.seed, "sft-seed");
  options.workers = config.workers;
  options.template_version = tmpl.version;
  options.endpoint = b.generator_desc;
  options.deterministic = config.generator.kind != "http_chat";
  if (a.annotate) options.pre_annotator = &b.make_judge(config, config.judge.kind);
  const auto result = gen_sft_seed(data.records, generator, options);
  write_review_queue(a.output,
                     manifest_for(config, Stage::review_queue, result.items.size(), generator.length_mode(),
                                  {{"failed", result.failed_ids.size()}, {"failed_ids", result.failed_ids}}),
                     result.items);
  emit({{"stage", "review_queue"},
        {"output", a.output},
        {"pending", result.items.size()},
        {"failed", result.failed_ids.size()},
        {"template_version", tmpl.version}});
  return 0;
}

struct SampleArgs {
  std::string config, input, output, policy;
  std::size_t k = 0;
};

SamplerParams sampler_for(const PipelineConfig& config, std::size_t k) {
  SamplerParams s = config.sampler;
  if (k > 0) s.k_samples = k;
  s.seed = derive_seed(config.seed, "candidates");
  return s;
}

int cmd_sample_candidates(const SampleArgs& a) {
  const auto config = load_config(a.config);
  const auto data = read_jsonl<CaptionRecord>(a.input, Stage::ingested);
  Backends b;
  auto& generator = b.make_generator(config, a.policy);
  Critic critic(b.make_judge(config, config.judge.kind), config.toy.lambda_halluc);
  const auto result =
      sample_candidates(data.records, generator, critic, sampler_for(config, a.k), config.workers);
  write_jsonl(a.output,
              manifest_for(config, Stage::candidates, result.sets.size(), generator.length_mode(),
                           {{"failed", result.failed_ids.size()}, {"failed_ids", result.failed_ids}}),
              result.sets);
  emit({{"stage", "candidates"},
        {"output", a.output},
        {"records", data.records.size()},
        {"candidate_sets", result.sets.size()},
        {"failed", result.failed_ids.size()}});
  return 0;
}

struct BuildArgs {
  std::string config, input, output, pairs_output, candidates_output, policy;
  std::size_t k = 0;
};

int cmd_build_pairs(const BuildArgs& a) {
  const auto config = load_config(a.config);
  const auto stage = peek_manifest(a.input).stage;
  PairCounts counts;
  std::vector<CandidateSet> sets;
  std::vector<std::string> failed;
  LengthMode mode = LengthMode::whitespace;
  if (stage == Stage::candidates) {
    auto data = read_jsonl<CandidateSet>(a.input, Stage::candidates);
    sets = std::move(data.records);
    mode = data.manifest.length_mode;
    counts.records = sets.size();
  } else {
    const auto data = read_jsonl<CaptionRecord>(a.input, Stage::ingested);
    Backends b;
    auto& generator = b.make_generator(config, a.policy);
    Critic critic(b.make_judge(config, config.judge.kind), config.toy.lambda_halluc);
    auto result =
        sample_candidates(data.records, generator, critic, sampler_for(config, a.k), config.workers);
    sets = std::move(result.sets);
    failed = std::move(result.failed_ids);
    mode = generator.length_mode();
    counts.records = data.records.size();
    counts.failed = failed.size();
    if (!a.candidates_output.empty()) {
      write_jsonl(a.candidates_output,
                  manifest_for(config, Stage::candidates, sets.size(), mode, {{"failed", failed.size()}}),
                  sets);
    }
  }
  const auto pairs = pairs_from_sets(sets, counts);
  if (!a.pairs_output.empty()) {
    write_jsonl(a.pairs_output, manifest_for(config, Stage::pairs, pairs.size(), mode, {{"counts", counts}}),
                pairs);
  }
  json extra{{"failed_ids", failed}};
  std::vector<PreferencePair> kept;
  if (!pairs.empty()) {
    auto balanced = balance_lengths(pairs, config.balance);
    extra["balance"] = balanced.report;
    kept = std::move(balanced.pairs);
  }
  counts.retained = kept.size();
  extra["counts"] = counts;
  write_jsonl(a.output, manifest_for(config, Stage::balanced, kept.size(), mode, extra), kept);
  emit({{"stage", "balanced"}, {"output", a.output}, {"counts", counts},
        {"balance", extra.value("balance", json(nullptr))}});
  return 0;
}

struct BalanceArgs {
  std::string config, input, output;
  std::optional<double> epsilon, floor;
};

int cmd_balance(const BalanceArgs& a) {
  const auto config = load_config(a.config);
  const auto stage = peek_manifest(a.input).stage;
  if (stage != Stage::pairs && stage != Stage::balanced) {
    throw StageMismatch("balance reads a pairs or balanced file, got '" + std::string(to_string(stage)) + "'");
  }
  const auto data = read_jsonl<PreferencePair>(a.input, stage);
  BalanceConfig bc = config.balance;
  if (a.epsilon) bc.epsilon = *a.epsilon;
  if (a.floor) bc.retention_floor = *a.floor;
  if (auto it = data.manifest.extra.find("balance"); it != data.manifest.extra.end()) {
    bc.source_count = it->at("source_count").get<std::size_t>();
  }
  json extra = data.manifest.extra;
  std::vector<PreferencePair> kept;
  if (!data.records.empty()) {
    auto result = balance_lengths(data.records, bc);
    extra["balance"] = result.report;
    kept = std::move(result.pairs);
  }
  auto manifest = manifest_for(config, Stage::balanced, kept.size(), data.manifest.length_mode, extra);
  write_jsonl(a.output, manifest, kept);
  emit({{"stage", "balanced"}, {"output", a.output}, {"retained", kept.size()},
        {"balance", extra.value("balance", json(nullptr))}});
  return 0;
}

struct TrainArgs {
  std::string config, pairs, policy, reference, output, events;
  std::optional<std::size_t> steps;
};

int cmd_train_dpo(const TrainArgs& a) {
  const auto config = load_config(a.config);
  const auto setup = make_toy_setup(config);
  const auto data = read_jsonl<PreferencePair>(a.pairs, peek_manifest(a.pairs).stage);
  std::vector<TokenPair> tokens;
  for (const auto& p : data.records) {
    tokens.push_back({setup.world.context_of(p.prompt), setup.world.parse(p.chosen), setup.world.parse(p.rejected)});
  }
  if (tokens.empty()) throw DegeneratePreferenceSet();
  const auto policy = a.policy.empty() ? setup.base : load_checkpoint(a.policy);
  const auto reference = a.reference.empty() ? policy : load_checkpoint(a.reference);
  if (!policy.same_shape(setup.base) || !reference.same_shape(policy)) {
    throw ShapeMismatch("checkpoint shape does not match the configured toy world");
  }
  auto cc = controller_config(config);
  if (a.steps) cc.max_steps = *a.steps;
  const auto evaluator = make_evaluator(setup, config);
  CdpoRound round;
  const auto trained = train_dpo_round(policy, reference, tokens, cc,
                                       [&](const ToyPolicy& p) { return evaluator(p); }, false,
                                       derive_seed(cc.seed, "train-dpo"), round);
  save_checkpoint(a.output, trained);
  const auto events_path = a.events.empty() ? with_suffix(a.output, ".events.jsonl") : a.events;
  std::string events;
  for (const auto& e : round.events) events += dump_line(json(e)) + "\n";
  write_file_atomic(events_path, events);
  json history = json::array();
  for (const auto& p : round.history) history.push_back({{"step", p.step}, {"metric", p.metric}});
  emit({{"stage", "dpo"},
        {"output", a.output},
        {"events", events_path},
        {"pairs", tokens.size()},
        {"steps", round.steps_taken},
        {"final_loss", round.events.empty() ? json(nullptr) : json(round.events.back().loss)},
        {"reference_checkpoint", policy_hash(reference)},
        {"policy_checkpoint", policy_hash(trained)},
        {"history", history}});
  return 0;
}

struct CdpoArgs {
  std::string config, run_dir = "runs", run_id;
  std::optional<std::size_t> max_rounds;
};

json run_summary(const json& report, const fs::path& dir) {
  return {{"run_dir", dir.string()},
          {"config_hash", report.at("config_hash")},
          {"stage_metrics", report.at("stage_metrics")},
          {"rounds", report.at("rounds").size()},
          {"final_checkpoint", report.at("checkpoints").at("final")}};
}

int cmd_run_cdpo(const CdpoArgs& a) {
  auto config = load_config(a.config);
  if (a.max_rounds) config.max_rounds = *a.max_rounds;
  const auto id = a.run_id.empty() ? "run-" + std::to_string(config.seed) : a.run_id;
  const auto dir = fs::path(a.run_dir) / id;
  emit(run_summary(run_pipeline(config, dir), dir));
  return 0;
}

struct EvalArgs {
  std::string config, input, judge, output, judgments, field = "caption";
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
};

int cmd_evaluate(const EvalArgs& a) {
  const auto config = load_config(a.config);
  Backends b;
  auto& judge = b.make_judge(config, a.judge.empty() ? config.judge.kind : a.judge);
  EvaluationOptions options;
  options.sample_n = a.n.value_or(config.eval_samples);
  options.seed = a.seed.value_or(config.seed);
  options.workers = config.workers;
  if (a.field == "alt_text") {
    options.field = CaptionField::alt_text;
  } else if (a.field != "caption") {
    throw ConfigError("--field must be caption or alt_text");
  }
  const auto judgments = a.judgments.empty() ? with_suffix(a.input, ".judgments.jsonl") : a.judgments;
  const auto result = evaluate_dataset(a.input, judge, options, judgments);
  json report{{"input", a.input},
              {"judge", judge.kind()},
              {"sample_n", options.sample_n},
              {"seed", options.seed},
              {"failed", result.failed_ids.size()},
              {"judgments", judgments},
              {"report", result.report}};
  if (!a.output.empty()) write_file_atomic(a.output, report.dump(2) + "\n");
  emit(report);
  return 0;
}

struct ExportArgs {
  std::string config, queue, output, rejections;
};

int cmd_export(const ExportArgs& a) {
  const auto config = load_config(a.config);
  ReviewStore store(a.queue);
  const auto exported = export_sft(store.snapshot());
  const auto mode = peek_manifest(a.queue).length_mode;
  write_jsonl(a.output,
              manifest_for(config, Stage::sft_export, exported.records.size(), mode, export_counts(exported)),
              exported.records);
  const auto rej_path = a.rejections.empty() ? with_suffix(a.output, ".rejections.jsonl") : a.rejections;
  std::string rej;
  for (const auto& r : exported.rejected) rej += dump_line({{"id", r.id}, {"reason", r.reason}}) + "\n";
  write_file_atomic(rej_path, rej);
  for (const auto& r : exported.rejected) {
    std::cerr << "rejected " << r.id << (r.reason.empty() ? "" : ": " + r.reason) << "\n";
  }
  emit({{"stage", "sft_export"}, {"output", a.output}, {"rejections", rej_path}, {"counts", export_counts(exported)}});
  return 0;
}

struct ServeArgs {
  std::string queue, host = "127.0.0.1", static_dir;
  int port = 8080;
};

int cmd_serve_review(const ServeArgs& a) {
  // Block the stop signals before any thread starts; a dedicated thread
  // waits for them and shuts the server down.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ReviewStore store(a.queue);
  ReviewServer server(store, a.static_dir.empty() ? std::nullopt : std::optional<fs::path>(a.static_dir));
  const int port = server.bind(a.host, a.port);
  std::jthread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  std::cout << dump_line({{"listening", port},
                          {"host", a.host},
                          {"journal", store.journal_path().string()},
                          {"repaired_bytes", store.repaired_bytes()}})
            << std::endl;
  server.listen();
  // Wake the waiter if the server stopped on its own.
  pthread_kill(waiter.native_handle(), SIGTERM);
  return 0;
}

struct DemoArgs {
  std::string config, out = "runs";
  std::uint64_t seed = 0;
};

int cmd_demo_toy(const DemoArgs& a) {
  auto config = load_config(a.config);
  config.seed = a.seed;
  const auto dir = fs::path(a.out) / ("demo-" + std::to_string(a.seed));
  emit(run_summary(run_pipeline(config, dir), dir));
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Low-hallucination recaptioning pipeline"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* s_ingest = app.add_subcommand("ingest", "Normalize raw image-text records");
  s_ingest->add_option("--config", ingest.config, "Run config (INI)");
  s_ingest->add_option("--input", ingest.input, "Raw JSONL: image_ref|image|url, alt_text|text, id");
  s_ingest->add_option("--toy", ingest.toy, "Generate N synthetic-world records instead");
  s_ingest->add_option("--output", ingest.output)->required();

  GenSeedArgs seed;
  auto* s_seed = app.add_subcommand("gen-sft-seed", "Generate SFT seed captions into a review queue");
  s_seed->add_option("--config", seed.config);
  s_seed->add_option("--input", seed.input)->required();
  s_seed->add_option("--output", seed.output)->required();
  s_seed->add_option("--template", seed.template_path, "Prompt template (default: generator.prompt)");
  s_seed->add_option("--policy", seed.policy, "Toy policy checkpoint");
  s_seed->add_flag("--annotate", seed.annotate, "Attach judge pre-annotations");

  SampleArgs sample_args;
  auto* s_sample = app.add_subcommand("sample-candidates", "Sample k scored candidates per record");
  s_sample->add_option("--config", sample_args.config);
  s_sample->add_option("--input", sample_args.input)->required();
  s_sample->add_option("--output", sample_args.output)->required();
  s_sample->add_option("--policy", sample_args.policy);
  s_sample->add_option("-k,--k", sample_args.k);

  BuildArgs build;
  auto* s_build = app.add_subcommand("build-pairs", "Candidates -> best/worst pairs -> length balancing");
  s_build->add_option("--config", build.config);
  s_build->add_option("--input", build.input, "Ingested records or a candidates file")->required();
  s_build->add_option("--output", build.output)->required();
  s_build->add_option("--pairs-output", build.pairs_output, "Also write unbalanced pairs");
  s_build->add_option("--candidates-output", build.candidates_output);
  s_build->add_option("--policy", build.policy);
  s_build->add_option("-k,--k", build.k);

  BalanceArgs bal;
  auto* s_bal = app.add_subcommand("balance", "Length-balance a pair file");
  s_bal->add_option("--config", bal.config);
  s_bal->add_option("--input", bal.input)->required();
  s_bal->add_option("--output", bal.output)->required();
  s_bal->add_option("--epsilon", bal.epsilon);
  s_bal->add_option("--retention-floor", bal.floor);

  TrainArgs train;
  auto* s_train = app.add_subcommand("train-dpo", "DPO on a pair file (toy policy)");
  s_train->add_option("--config", train.config);
  s_train->add_option("--pairs", train.pairs)->required();
  s_train->add_option("--policy", train.policy, "Starting checkpoint (default: base policy)");
  s_train->add_option("--reference", train.reference, "Reference checkpoint (default: --policy)");
  s_train->add_option("--output", train.output)->required();
  s_train->add_option("--events", train.events);
  s_train->add_option("--steps", train.steps);

  CdpoArgs cdpo;
  auto* s_cdpo = app.add_subcommand("run-cdpo", "Full toy run: SFT prep, DPO, CDPO rounds");
  s_cdpo->add_option("--config", cdpo.config);
  s_cdpo->add_option("--run-dir", cdpo.run_dir);
  s_cdpo->add_option("--run-id", cdpo.run_id);
  s_cdpo->add_option("--max-rounds", cdpo.max_rounds);

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("evaluate", "Detail-level hallucination metrics");
  s_eval->add_option("--config", eval.config);
  s_eval->add_option("--input", eval.input)->required();
  s_eval->add_option("--judge", eval.judge)->check(CLI::IsMember({"oracle", "mock", "http_chat"}));
  s_eval->add_option("-n,--n", eval.n);
  s_eval->add_option("--seed", eval.seed);
  s_eval->add_option("--output", eval.output);
  s_eval->add_option("--judgments", eval.judgments);
  s_eval->add_option("--field", eval.field)->check(CLI::IsMember({"caption", "alt_text"}));

  ExportArgs exp;
  auto* s_exp = app.add_subcommand("export", "Export reviewed captions as an SFT dataset");
  s_exp->add_option("--config", exp.config);
  s_exp->add_option("--queue", exp.queue)->required();
  s_exp->add_option("--output", exp.output)->required();
  s_exp->add_option("--rejections", exp.rejections);

  ServeArgs serve;
  auto* s_serve = app.add_subcommand("serve-review", "Serve the review HTTP API");
  s_serve->add_option("--queue", serve.queue)->required();
  s_serve->add_option("--host", serve.host);
  s_serve->add_option("--port", serve.port, "0 picks a free port");
  s_serve->add_option("--static", serve.static_dir, "Directory with the review UI build");

  DemoArgs demo;
  auto* s_demo = app.add_subcommand("demo-toy", "End-to-end toy pipeline");
  s_demo->add_option("--config", demo.config);
  s_demo->add_option("--seed", demo.seed);
  s_demo->add_option("--out", demo.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    if (sub == s_ingest) return cmd_ingest(ingest);
    if (sub == s_seed) return cmd_gen_sft_seed(seed);
    if (sub == s_sample) return cmd_sample_candidates(sample_args);
    if (sub == s_build) return cmd_build_pairs(build);
    if (sub == s_bal) return cmd_balance(bal);
    if (sub == s_train) return cmd_train_dpo(train);
    if (sub == s_cdpo) return cmd_run_cdpo(cdpo);
    if (sub == s_eval) return cmd_evaluate(eval);
    if (sub == s_exp) return cmd_export(exp);
    if (sub == s_serve) return cmd_serve_review(serve);
    if (sub == s_demo) return cmd_demo_toy(demo);
  } catch (const ConfigError& e) {
    std::cerr << "recap " << name << ": config error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << "recap " << name << ": error in stage '" << e.stage() << "': " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "recap " << name << ": error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace recap
