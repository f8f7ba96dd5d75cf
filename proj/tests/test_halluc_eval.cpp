#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "mock_chat_server.hpp"
#include "recap/errors.hpp"
#include "recap/halluc_eval.hpp"
#include "recap/util.hpp"
#include "support.hpp"

using namespace recap;
using testing::TempDir;

namespace {

DetailJudgment with_counts(std::size_t halluc, std::size_t faithful, std::size_t neutral = 0,
                           std::size_t length = 10) {
  DetailJudgment j;
  j.caption_length = length;
  for (std::size_t i = 0; i < halluc; ++i) j.details.push_back({"h", Verdict::hallucinated});
  for (std::size_t i = 0; i < faithful; ++i) j.details.push_back({"f", Verdict::faithful});
  for (std::size_t i = 0; i < neutral; ++i) j.details.push_back({"n", Verdict::neutral});
  return j;
}

ToyWorld tiny_world() {
  ToyWorldConfig cfg;
  cfg.contexts = 1;
  cfg.vocab = 16;
  cfg.max_len = 8;
  cfg.faithful_per_scene = 1;
  cfg.halluc_per_scene = 1;
  return ToyWorld(cfg, {SyntheticScene{0, {3}, {9}}});
}

std::vector<CaptionRecord> caption_records(std::size_t n) {
  std::vector<CaptionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"c" + std::to_string(i), "img", "alt",
                   "A dog on a sofa. A lamp in the corner; a window", CaptionSource::reviewed});
    out.back().caption = *out.back().caption + " " + std::to_string(i);
  }
  return out;
}

class FailingJudge final : public Judge {
 public:
  explicit FailingJudge(std::size_t every) : every_(every) {}
  DetailJudgment judge(const JudgeRequest& r) override {
    const auto n = std::stoul(r.record_id.substr(1));
    if (n % every_ == 0) throw JudgeError(r.record_id, "HTTP 500");
    return {r.record_id, 1, {{"x", Verdict::faithful}}, std::nullopt};
  }
  std::string_view kind() const override { return "failing"; }

 private:
  std::size_t every_;
};

}  // namespace

TEST_CASE("aggregate: the 0/1/2/3 fixture") {
  std::vector<DetailJudgment> js{with_counts(0, 5), with_counts(1, 4), with_counts(2, 3), with_counts(3, 2)};
  const auto r = aggregate(js);
  CHECK(r.n_captions == 4);
  CHECK(r.non_halluc_rate == 0.25);
  CHECK(r.low_halluc_rate == 0.75);
  CHECK(r.detail_halluc_rate == doctest::Approx(0.30).epsilon(1e-15));
  CHECK(r.avg_details == 5.0);
  CHECK(r.avg_length == 10.0);
  CHECK_FALSE(r.no_judged_details);
}

TEST_CASE("aggregate: clean captions, empty input, no details") {
  std::vector<DetailJudgment> clean{with_counts(0, 3), with_counts(0, 1)};
  const auto r = aggregate(clean);
  CHECK(r.non_halluc_rate == 1.0);
  CHECK(r.low_halluc_rate == 1.0);
  CHECK(r.detail_halluc_rate == 0.0);
  CHECK_THROWS_AS(aggregate(std::span<const DetailJudgment>{}), EmptyBatch);
  std::vector<DetailJudgment> none{with_counts(0, 0), with_counts(0, 0, 2)};
  const auto n = aggregate(none);
  CHECK(n.no_judged_details);
  CHECK(n.detail_halluc_rate == 0.0);
  CHECK(n.non_halluc_rate == 1.0);
  CHECK(n.avg_details == 1.0);  // neutral details are still details
}

TEST_CASE("aggregate: caption-level and detail-level rates measure different things") {
  // 1000 captions with 10 details each: 779 clean, 199 with two hallucinated
  // details and 22 with one. Most captions are clean while only a few
  // percent of details are hallucinated.
  std::vector<DetailJudgment> js;
  for (int i = 0; i < 779; ++i) js.push_back(with_counts(0, 10));
  for (int i = 0; i < 199; ++i) js.push_back(with_counts(2, 8));
  for (int i = 0; i < 22; ++i) js.push_back(with_counts(1, 9));
  const auto r = aggregate(js);
  CHECK(r.non_halluc_rate == doctest::Approx(0.779));
  CHECK(r.detail_halluc_rate == doctest::Approx(0.042));
  CHECK(r.low_halluc_rate == 1.0);
}

TEST_CASE("aggregate: ordering of rates and permutation invariance (1000 random sets)") {
  Rng rng(10);
  for (int t = 0; t < 1000; ++t) {
    std::vector<DetailJudgment> js;
    const std::size_t n = 1 + rng.below(30);
    for (std::size_t i = 0; i < n; ++i) {
      js.push_back(with_counts(rng.below(5), rng.below(8), rng.below(3), rng.below(40)));
    }
    const auto r = aggregate(js);
    CHECK(r.non_halluc_rate <= r.low_halluc_rate);
    for (double x : {r.non_halluc_rate, r.low_halluc_rate, r.detail_halluc_rate}) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
    rng.shuffle(std::span(js));
    CHECK(aggregate(js) == r);
  }
}

TEST_CASE("oracle judge on the toy scene") {
  const auto world = tiny_world();
  OracleJudge judge(world);
  const auto j = judge.judge({"r", ToyWorld::image_ref(0), std::nullopt, "t3 t9"});
  CHECK(j.details.size() == 2);
  CHECK(j.hallucinated() == 1);
  CHECK(j.caption_length == 2);
  const auto empty = judge.judge({"e", ToyWorld::image_ref(0), std::nullopt, ""});
  CHECK(empty.details.empty());
  CHECK(aggregate(std::span(&empty, 1)).non_halluc_rate == 1.0);
}

TEST_CASE("oracle-judged toy data: aggregate equals a recount over raw sequences") {
  const auto world = ToyWorld::generate({}, 1);
  const auto policy = world.base_policy({}, 1);
  const auto records = world.make_records("h", 300, 1);
  OracleJudge judge(world);
  Rng rng(5);
  std::vector<CaptionRecord> captioned;
  std::size_t clean = 0, low = 0, halluc = 0, judged = 0;
  for (const auto& r : records) {
    const auto ctx = world.context_of(r.image_ref);
    const auto seq = sample(policy, ctx, {}, rng);
    std::size_t h = 0;
    for (Token t : seq) {
      if (t == kEos) continue;
      const auto& s = world.scene(ctx);
      if (std::binary_search(s.halluc_tokens.begin(), s.halluc_tokens.end(), t)) ++h, ++judged;
      if (std::binary_search(s.faithful_tokens.begin(), s.faithful_tokens.end(), t)) ++judged;
    }
    clean += h == 0;
    low += h <= 2;
    halluc += h;
    auto c = r;
    c.caption = ToyWorld::render(seq);
    captioned.push_back(c);
  }
  EvaluationOptions opts;
  opts.sample_n = 1000;
  const auto res = evaluate_records(captioned, judge, opts);
  CHECK(res.report.n_captions == 300);
  CHECK(res.report.non_halluc_rate == static_cast<double>(clean) / 300);
  CHECK(res.report.low_halluc_rate == static_cast<double>(low) / 300);
  CHECK(res.report.detail_halluc_rate == static_cast<double>(halluc) / judged);
}

TEST_CASE("mock judge: canned verdicts pass through verbatim") {
  MockJudge judge(3, 0.5);
  const std::vector<Detail> canned{{"a red bus", Verdict::faithful},
                                   {"in Paris", Verdict::hallucinated},
                                   {"at dusk", Verdict::neutral}};
  judge.add_canned("A red bus in Paris at dusk.", canned);
  const auto j = judge.judge({"r", "img", std::nullopt, "A red bus in Paris at dusk."});
  CHECK(j.details == canned);

  TempDir dir;
  std::ofstream(dir / "canned.jsonl")
      << dump_line({{"caption_sha256", sha256_hex("other caption")},
                    {"details", {{{"text", "x"}, {"verdict", "hallucinated"}}}}})
      << "\n";
  judge.load_canned(dir / "canned.jsonl");
  CHECK(judge.judge({"r", "img", std::nullopt, "other caption"}).hallucinated() == 1);
}

TEST_CASE("mock judge: deterministic clause verdicts at the configured rate") {
  MockJudge a(9, 0.3), b(9, 0.3);
  std::size_t h = 0, total = 0;
  for (int i = 0; i < 2000; ++i) {
    const std::string caption = "clause " + std::to_string(i) + ". other " + std::to_string(i * 7);
    const auto ja = a.judge({"r", "img", std::nullopt, caption});
    CHECK(ja == b.judge({"r", "img", std::nullopt, caption}));
    CHECK(ja.details.size() == 2);
    h += ja.hallucinated();
    total += ja.details.size();
  }
  CHECK(static_cast<double>(h) / total == doctest::Approx(0.3).epsilon(0.1));
  CHECK(MockJudge(1, 0.0).judge({"r", "img", std::nullopt, ""}).details.empty());
}

TEST_CASE("http judge: parses the reply and keeps the raw response") {
  const std::string reply =
      "Here you go:\n{\"details\": [{\"text\": \"a cat\", \"verdict\": \"faithful\"}, "
      "{\"text\": \"on the moon\", \"verdict\": \"hallucinated\"}]}\nThanks";
  testing::MockChatServer server([&](std::size_t, const nlohmann::json&) {
    return testing::Reply{200, testing::completion_body(reply)};
  });
  ChatEndpointConfig cfg;
  cfg.base_url = server.base_url();
  cfg.model = "judge";
  ChatClient client(cfg);
  HttpJudge judge(client, PromptTemplate{"Check: {{caption}} ({{alt_text}})", "v1"});
  const auto j = judge.judge({"r1", "http://img", std::string("alt"), "a cat on the moon"});
  CHECK(j.details.size() == 2);
  CHECK(j.hallucinated() == 1);
  REQUIRE(j.raw_response);
  CHECK(j.raw_response->find("on the moon") != std::string::npos);
  const auto body = server.bodies().front();
  CHECK(body.at("messages").dump().find("Check: a cat on the moon (alt)") != std::string::npos);

  CHECK_THROWS(HttpJudge::parse_reply("no json here"));
  CHECK_THROWS(HttpJudge::parse_reply("{\"details\": [{\"text\": \"x\", \"verdict\": \"maybe\"}]}"));
  CHECK(HttpJudge::parse_reply("{\"details\": []}").empty());
}

TEST_CASE("http judge: hard failure carries the record id") {
  testing::MockChatServer server([](std::size_t, const nlohmann::json&) {
    return testing::Reply{400, "{\"error\":\"bad\"}"};
  });
  ChatEndpointConfig cfg;
  cfg.base_url = server.base_url();
  cfg.model = "judge";
  ChatClient client(cfg);
  HttpJudge judge(client, PromptTemplate{"{{caption}}", "v1"});
  try {
    (void)judge.judge({"rec-42", "img", std::nullopt, "x"});
    FAIL("expected JudgeError");
  } catch (const JudgeError& e) {
    CHECK(e.record_id() == "rec-42");
  }
}

TEST_CASE("sample_indices") {
  CHECK(sample_indices(5, 1000, 1) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  const auto s = sample_indices(1000, 100, 3);
  CHECK(s.size() == 100);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK(sample_indices(1000, 100, 3) == s);
  CHECK(sample_indices(1000, 100, 4) != s);
  // Every index is picked about equally often.
  std::vector<int> hits(20, 0);
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    for (auto i : sample_indices(20, 5, seed)) ++hits[i];
  }
  for (int h : hits) CHECK(h == doctest::Approx(1000).epsilon(0.15));
}

TEST_CASE("evaluate_dataset: sampling, determinism, judgments file") {
  TempDir dir;
  const auto records = caption_records(50);
  DatasetManifest m;
  m.stage = Stage::sft_export;
  m.count = records.size();
  write_jsonl(dir / "d.jsonl", m, records);
  MockJudge judge(4, 0.2);
  EvaluationOptions opts;
  CHECK(opts.sample_n == 1000);
  const auto all = evaluate_dataset(dir / "d.jsonl", judge, opts, dir / "j.jsonl");
  CHECK(all.report.n_captions == 50);
  std::vector<std::string> ids;
  for (const auto& j : all.judgments) ids.push_back(j.record_id);
  std::sort(ids.begin(), ids.end());
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  const auto text = read_file(dir / "j.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 50);

  opts.sample_n = 20;
  opts.seed = 11;
  const auto a = evaluate_dataset(dir / "d.jsonl", judge, opts, dir / "a.jsonl");
  const auto b = evaluate_dataset(dir / "d.jsonl", judge, opts, dir / "b.jsonl");
  CHECK(a.report.n_captions == 20);
  CHECK(a.report == b.report);
  CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
}

TEST_CASE("evaluate_dataset: too many judge failures abort with partial results") {
  TempDir dir;
  const auto records = caption_records(40);
  DatasetManifest m;
  m.stage = Stage::sft_export;
  m.count = records.size();
  write_jsonl(dir / "d.jsonl", m, records);
  FailingJudge every5(5);  // 20% fail
  CHECK_THROWS_AS(evaluate_dataset(dir / "d.jsonl", every5, {}, dir / "j.jsonl"), EvaluationAborted);
  const auto partial = read_file(dir / "j.jsonl.partial");
  CHECK(std::count(partial.begin(), partial.end(), '\n') == 32);
  CHECK_FALSE(std::filesystem::exists(dir / "j.jsonl"));

  FailingJudge every20(20);  // 5% fail: tolerated and reported
  const auto ok = evaluate_dataset(dir / "d.jsonl", every20, {}, dir / "k.jsonl");
  CHECK(ok.failed_ids.size() == 2);
  CHECK(ok.report.n_captions == 38);
}
