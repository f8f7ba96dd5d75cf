// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace recap {

enum class Verdict { faithful, hallucinated, neutral };

std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

struct Detail {
  std::string text;
  Verdict verdict = Verdict::neutral;

  bool operator==(const Detail&) const = default;
};

/// One caption split into visual details, each judged once.
struct DetailJudgment {
  std::string record_id;
  std::size_t caption_length = 0;
  std::vector<Detail> details;
  std::optional<std::string> raw_response;  // remote judges only

  std::size_t hallucinated() const;
  std::size_t faithful() const;

  bool operator==(const DetailJudgment&) const = default;
};

void to_json(nlohmann::json& j, const Detail& d);
void from_json(const nlohmann::json& j, Detail& d);
void to_json(nlohmann::json& j, const DetailJudgment& d);
void from_json(const nlohmann::json& j, DetailJudgment& d);

}  // namespace recap
