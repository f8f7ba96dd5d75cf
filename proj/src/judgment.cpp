// SPDX-License-Identifier: Apache-2.0
#include "recap/judgment.hpp"

#include <algorithm>

#include "recap/errors.hpp"

namespace recap {

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::faithful:
      return "faithful";
    case Verdict::hallucinated:
      return "hallucinated";
    case Verdict::neutral:
      return "neutral";
  }
  return "neutral";
}

Verdict verdict_from_string(std::string_view s) {
  if (s == "faithful") return Verdict::faithful;
  if (s == "hallucinated") return Verdict::hallucinated;
  if (s == "neutral") return Verdict::neutral;
  throw InvalidArgument("unknown verdict '" + std::string(s) + "'");
}

std::size_t DetailJudgment::hallucinated() const {
  return static_cast<std::size_t>(std::count_if(
      details.begin(), details.end(), [](const Detail& d) { return d.verdict == Verdict::hallucinated; }));
}

std::size_t DetailJudgment::faithful() const {
  return static_cast<std::size_t>(std::count_if(
      details.begin(), details.end(), [](const Detail& d) { return d.verdict == Verdict::faithful; }));
}

void to_json(nlohmann::json& j, const Detail& d) {
  j = nlohmann::json{{"text", d.text}, {"verdict", to_string(d.verdict)}};
}

void from_json(const nlohmann::json& j, Detail& d) {
  j.at("text").get_to(d.text);
  d.verdict = verdict_from_string(j.at("verdict").get<std::string>());
}

void to_json(nlohmann::json& j, const DetailJudgment& d) {
  j = nlohmann::json{{"record_id", d.record_id},
                     {"caption_length", d.caption_length},
                     {"details", d.details}};
  if (d.raw_response) j["raw_response"] = *d.raw_response;
}

void from_json(const nlohmann::json& j, DetailJudgment& d) {
  j.at("record_id").get_to(d.record_id);
  j.at("caption_length").get_to(d.caption_length);
  j.at("details").get_to(d.details);
  if (auto it = j.find("raw_response"); it != j.end() && it->is_string()) {
    d.raw_response = it->get<std::string>();
  } else {
    d.raw_response.reset();
  }
}

}  // namespace recap
