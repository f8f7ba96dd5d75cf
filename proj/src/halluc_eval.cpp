// SPDX-License-Identifier: Apache-2.0
#include "recap/halluc_eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "recap/util.hpp"

namespace recap {

DetailJudgment OracleJudge::judge(const JudgeRequest& request) {
  const auto context = world_.context_of(request.image_ref);
  return oracle_detail_judgments(world_.scene(context), world_.parse(request.caption),
                                 request.record_id);
}

MockJudge::MockJudge(std::uint64_t seed, double halluc_rate) : seed_(seed), halluc_rate_(halluc_rate) {
  if (!(halluc_rate >= 0.0 && halluc_rate <= 1.0)) {
    throw InvalidArgument("mock halluc_rate must be in [0, 1]");
  }
}

void MockJudge::add_canned(std::string_view caption, std::vector<Detail> details) {
  canned_[sha256_hex(caption)] = std::move(details);
}

void MockJudge::load_canned(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto details = j.at("details").get<std::vector<Detail>>();
      if (j.contains("caption_sha256")) {
        canned_[j.at("caption_sha256").get<std::string>()] = std::move(details);
      } else {
        add_canned(j.at("caption").get<std::string>(), std::move(details));
      }
    } catch (const std::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_clauses(std::string_view caption) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= caption.size(); ++i) {
    if (i == caption.size() || caption[i] == '.' || caption[i] == ',' || caption[i] == ';') {
      auto clause = trim(caption.substr(start, i - start));
      if (!clause.empty()) out.push_back(std::move(clause));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

DetailJudgment MockJudge::judge(const JudgeRequest& request) {
  DetailJudgment j;
  j.record_id = request.record_id;
  j.caption_length = count_words(request.caption);
  if (auto it = canned_.find(sha256_hex(request.caption)); it != canned_.end()) {
    j.details = it->second;
    return j;
  }
  for (auto& clause : split_clauses(request.caption)) {
    Rng rng(derive_seed(seed_, clause));
    const Verdict v = rng.uniform() < halluc_rate_ ? Verdict::hallucinated : Verdict::faithful;
    j.details.push_back({std::move(clause), v});
  }
  return j;
}

HttpJudge::HttpJudge(ChatClient& client, PromptTemplate prompt)
    : client_(client), prompt_(std::move(prompt)) {}

std::vector<Detail> HttpJudge::parse_reply(std::string_view reply) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw InvalidArgument("judge reply holds no JSON object");
  }
  const auto j = nlohmann::json::parse(reply.substr(open, close - open + 1));
  return j.at("details").get<std::vector<Detail>>();
}

DetailJudgment HttpJudge::judge(const JudgeRequest& request) {
  DetailJudgment j;
  j.record_id = request.record_id;
  j.caption_length = count_words(request.caption);
  if (trim(request.caption).empty()) return j;
  const std::string prompt = prompt_.render({{"caption", request.caption},
                                             {"alt_text", request.alt_text.value_or("")},
                                             {"image_ref", request.image_ref}});
  const ChatMessage msgs[] = {{"user", prompt, request.image_ref}};
  SamplerParams greedy;
  greedy.temperature = 0.0;
  greedy.top_k = 1;
  try {
    const auto result = client_.complete(msgs, greedy);
    j.raw_response = result.text;
    j.details = parse_reply(result.text);
  } catch (const std::exception& e) {
    throw JudgeError(request.record_id, e.what());
  }
  return j;
}

void to_json(nlohmann::json& j, const QualityReport& r) {
  j = nlohmann::json{{"n_captions", r.n_captions},
                     {"avg_length", r.avg_length},
                     {"avg_details", r.avg_details},
                     {"non_halluc_rate", r.non_halluc_rate},
                     {"low_halluc_rate", r.low_halluc_rate},
                     {"detail_halluc_rate", r.detail_halluc_rate},
                     {"no_judged_details", r.no_judged_details}};
}

void from_json(const nlohmann::json& j, QualityReport& r) {
  j.at("n_captions").get_to(r.n_captions);
  j.at("avg_length").get_to(r.avg_length);
  j.at("avg_details").get_to(r.avg_details);
  j.at("non_halluc_rate").get_to(r.non_halluc_rate);
  j.at("low_halluc_rate").get_to(r.low_halluc_rate);
  j.at("detail_halluc_rate").get_to(r.detail_halluc_rate);
  j.at("no_judged_details").get_to(r.no_judged_details);
}

QualityReport aggregate(std::span<const DetailJudgment> judgments) {
  if (judgments.empty()) throw EmptyBatch("aggregate needs at least one judgment");
  std::size_t clean = 0, low = 0, total_len = 0, total_details = 0, halluc = 0, judged = 0;
  for (const auto& j : judgments) {
    const std::size_t h = j.hallucinated();
    clean += h == 0 ? 1 : 0;
    low += h <= kLowHallucThreshold ? 1 : 0;
    total_len += j.caption_length;
    total_details += j.details.size();
    halluc += h;
    judged += h + j.faithful();
  }
  const double n = static_cast<double>(judgments.size());
  QualityReport r;
  r.n_captions = judgments.size();
  r.avg_length = static_cast<double>(total_len) / n;
  r.avg_details = static_cast<double>(total_details) / n;
  r.non_halluc_rate = static_cast<double>(clean) / n;
  r.low_halluc_rate = static_cast<double>(low) / n;
  r.no_judged_details = judged == 0;
  r.detail_halluc_rate = judged == 0 ? 0.0 : static_cast<double>(halluc) / static_cast<double>(judged);
  return r;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t sample_n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (sample_n >= n) return idx;
  Rng rng(derive_seed(seed, "eval-sample"));
  // Partial Fisher-Yates: the first sample_n slots become the sample.
  for (std::size_t i = 0; i < sample_n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(sample_n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

EvaluationResult evaluate_records(std::span<const CaptionRecord> records, Judge& judge,
                                  const EvaluationOptions& options) {
  const auto picked = sample_indices(records.size(), options.sample_n, options.seed);
  if (picked.empty()) throw EmptyBatch("nothing to evaluate");

  struct Outcome {
    std::optional<DetailJudgment> judgment;
    std::string error;
  };
  auto outcomes = parallel_map<Outcome>(picked.size(), options.workers, [&](std::size_t i) {
    const auto& r = records[picked[i]];
    JudgeRequest req{r.id, r.image_ref, r.alt_text,
                     (options.field == CaptionField::caption ? r.caption : r.alt_text).value_or("")};
    try {
      return Outcome{judge.judge(req), {}};
    } catch (const std::exception& e) {
      return Outcome{std::nullopt, e.what()};
    }
  });

  EvaluationResult result;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i].judgment) {
      result.judgments.push_back(std::move(*outcomes[i].judgment));
    } else {
      result.failed_ids.push_back(records[picked[i]].id);
    }
  }
  const double failure_fraction =
      static_cast<double>(result.failed_ids.size()) / static_cast<double>(picked.size());
  if (failure_fraction > options.max_failure_fraction || result.judgments.empty()) {
    throw EvaluationAborted(std::to_string(result.failed_ids.size()) + " of " +
                                std::to_string(picked.size()) + " judge calls failed",
                            std::move(result.judgments));
  }
  result.report = aggregate(result.judgments);
  return result;
}

namespace {

void write_judgments(const std::filesystem::path& path, std::span<const DetailJudgment> judgments) {
  std::string out;
  for (const auto& j : judgments) {
    out += dump_line(nlohmann::json(j));
    out.push_back('\n');
  }
  write_file_atomic(path, out);
}

}  // namespace

EvaluationResult evaluate_dataset(const std::filesystem::path& file, Judge& judge,
                                  const EvaluationOptions& options,
                                  const std::filesystem::path& judgments_out) {
  const auto stage = peek_manifest(file).stage;
  const auto data = read_jsonl<CaptionRecord>(file, stage);
  try {
    auto result = evaluate_records(data.records, judge, options);
    write_judgments(judgments_out, result.judgments);
    return result;
  } catch (const EvaluationAborted& e) {
    auto partial = judgments_out;
    partial += ".partial";
    write_judgments(partial, e.partial());
    throw;
  }
}

}  // namespace recap
