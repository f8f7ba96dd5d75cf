// SPDX-License-Identifier: Apache-2.0
#include "recap/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <vector>

#include "recap/errors.hpp"
#include "recap/util.hpp"

namespace recap {

namespace {

template <class T>
void parse_value(const std::string& s, T& out) {
  if constexpr (std::is_same_v<T, std::string>) {
    out = s;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1" || s == "yes") {
      out = true;
    } else if (s == "false" || s == "0" || s == "no") {
      out = false;
    } else {
      throw ConfigError("expected a boolean, got '" + s + "'");
    }
  } else if constexpr (std::is_same_v<T, std::chrono::milliseconds>) {
    std::int64_t ms = 0;
    parse_value(s, ms);
    out = std::chrono::milliseconds(ms);
  } else {
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || end != s.data() + s.size()) {
      throw ConfigError("cannot parse '" + s + "' as a number");
    }
  }
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::chrono::milliseconds>) {
    return std::to_string(v.count());
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  } else {
    return std::to_string(v);
  }
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <class Access>
Field make_field(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](PipelineConfig& c, const std::string& s) { parse_value(s, access(c)); },
          [access](const PipelineConfig& c) {
            return format_value(access(const_cast<PipelineConfig&>(c)));
          }};
}

#define RECAP_FIELD(section, key, member) \
  make_field(section, key, [](PipelineConfig& c) -> auto& { return c.member; })

void endpoint_fields(std::vector<Field>& f, const std::string& s, EndpointSettings PipelineConfig::*m) {
  auto at = [m](PipelineConfig& c) -> EndpointSettings& { return c.*m; };
  f.push_back(make_field(s, "kind", [at](PipelineConfig& c) -> auto& { return at(c).kind; }));
  f.push_back(make_field(s, "prompt", [at](PipelineConfig& c) -> auto& { return at(c).prompt; }));
  f.push_back(make_field(s, "base_url", [at](PipelineConfig& c) -> auto& { return at(c).chat.base_url; }));
  f.push_back(make_field(s, "model", [at](PipelineConfig& c) -> auto& { return at(c).chat.model; }));
  f.push_back(make_field(s, "api_key_env", [at](PipelineConfig& c) -> auto& { return at(c).chat.api_key_env; }));
  f.push_back(make_field(s, "path", [at](PipelineConfig& c) -> auto& { return at(c).chat.path; }));
  f.push_back(make_field(s, "timeout_ms", [at](PipelineConfig& c) -> auto& { return at(c).chat.timeout; }));
  f.push_back(make_field(s, "max_retries", [at](PipelineConfig& c) -> auto& { return at(c).chat.max_retries; }));
  f.push_back(
      make_field(s, "max_in_flight", [at](PipelineConfig& c) -> auto& { return at(c).chat.max_in_flight; }));
  f.push_back(
      make_field(s, "backoff_base_ms", [at](PipelineConfig& c) -> auto& { return at(c).chat.backoff_base; }));
  f.push_back(make_field(s, "backoff_ceiling_ms",
                   [at](PipelineConfig& c) -> auto& { return at(c).chat.backoff_ceiling; }));
  f.push_back(
      make_field(s, "mock_halluc_rate", [at](PipelineConfig& c) -> auto& { return at(c).mock_halluc_rate; }));
  f.push_back(make_field(s, "canned", [at](PipelineConfig& c) -> auto& { return at(c).canned; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        RECAP_FIELD("run", "seed", seed),
        RECAP_FIELD("run", "workers", workers),
        RECAP_FIELD("run", "max_rounds", max_rounds),
        RECAP_FIELD("run", "reuse_old_pairs", reuse_old_pairs),

        RECAP_FIELD("preset_sft", "batch_size", sft.batch_size),
        RECAP_FIELD("preset_sft", "learning_rate", sft.learning_rate),
        RECAP_FIELD("preset_sft", "epochs", sft.epochs),
        RECAP_FIELD("preset_dpo", "batch_size", dpo.batch_size),
        RECAP_FIELD("preset_dpo", "learning_rate", dpo.learning_rate),
        RECAP_FIELD("preset_dpo", "epochs", dpo.epochs),
        RECAP_FIELD("preset_cdpo", "batch_size", cdpo.batch_size),
        RECAP_FIELD("preset_cdpo", "learning_rate", cdpo.learning_rate),
        RECAP_FIELD("preset_cdpo", "epochs", cdpo.epochs),
        RECAP_FIELD("preset_resolution", "min_pixels", resolution_min),
        RECAP_FIELD("preset_resolution", "max_pixels", resolution_max),

        RECAP_FIELD("sampler", "top_p", sampler.top_p),
        RECAP_FIELD("sampler", "top_k", sampler.top_k),
        RECAP_FIELD("sampler", "temperature", sampler.temperature),
        RECAP_FIELD("sampler", "k_samples", sampler.k_samples),

        RECAP_FIELD("balance", "epsilon", balance.epsilon),
        RECAP_FIELD("balance", "retention_floor", balance.retention_floor),

        RECAP_FIELD("plateau", "window", plateau_window),
        RECAP_FIELD("plateau", "delta", plateau_delta),

        RECAP_FIELD("dpo", "beta", beta),
        RECAP_FIELD("dpo", "learning_rate", learning_rate),
        RECAP_FIELD("dpo", "max_steps", max_steps),
        RECAP_FIELD("dpo", "eval_every", eval_every),
        RECAP_FIELD("dpo", "eval_samples", eval_samples),

        RECAP_FIELD("toy", "contexts", toy.world.contexts),
        RECAP_FIELD("toy", "vocab", toy.world.vocab),
        RECAP_FIELD("toy", "max_len", toy.world.max_len),
        RECAP_FIELD("toy", "faithful_per_scene", toy.world.faithful_per_scene),
        RECAP_FIELD("toy", "halluc_per_scene", toy.world.halluc_per_scene),
        RECAP_FIELD("toy", "base_eos", toy.base.eos),
        RECAP_FIELD("toy", "base_faithful", toy.base.faithful),
        RECAP_FIELD("toy", "base_halluc", toy.base.halluc),
        RECAP_FIELD("toy", "base_neutral", toy.base.neutral),
        RECAP_FIELD("toy", "base_spread", toy.base.spread),
        RECAP_FIELD("toy", "sft_records", toy.sft_records),
        RECAP_FIELD("toy", "pair_records", toy.pair_records),
        RECAP_FIELD("toy", "heldout_records", toy.heldout_records),
        RECAP_FIELD("toy", "sft_attempts", toy.sft_attempts),
        RECAP_FIELD("toy", "review_max_halluc", toy.review_max_halluc),
        RECAP_FIELD("toy", "sft_learning_rate", toy.sft_learning_rate),
        RECAP_FIELD("toy", "lambda_halluc", toy.lambda_halluc),
    };
    endpoint_fields(f, "generator", &PipelineConfig::generator);
    endpoint_fields(f, "judge", &PipelineConfig::judge);
    return f;
  }();
  return table;
}

#undef RECAP_FIELD

}  // namespace

void PipelineConfig::validate() const {
  try {
    sampler.validate();
    balance.validate();
    DpoConfig{beta, learning_rate, dpo.batch_size}.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (sampler.k_samples < 2) throw ConfigError("sampler.k_samples must be >= 2");
  if (plateau_window == 0) throw ConfigError("plateau.window must be >= 1");
  if (std::isnan(plateau_delta)) throw ConfigError("plateau.delta must not be NaN");
  if (eval_every == 0) throw ConfigError("dpo.eval_every must be positive");
  if (dpo.batch_size == 0 || sft.batch_size == 0 || cdpo.batch_size == 0) {
    throw ConfigError("preset batch sizes must be positive");
  }
  if (workers == 0) throw ConfigError("run.workers must be positive");
  if (generator.kind != "toy_policy" && generator.kind != "mock" && generator.kind != "http_chat") {
    throw ConfigError("generator.kind must be toy_policy, mock or http_chat");
  }
  if (judge.kind != "oracle" && judge.kind != "mock" && judge.kind != "http_chat") {
    throw ConfigError("judge.kind must be oracle, mock or http_chat");
  }
  if (generator.kind == "http_chat") generator.chat.validate();
  if (judge.kind == "http_chat") judge.chat.validate();
  if (toy.world.vocab < 2 || toy.world.contexts == 0 || toy.world.max_len == 0) {
    throw ConfigError("toy world needs vocab >= 2, contexts >= 1, max_len >= 1");
  }
  if (toy.world.faithful_per_scene + toy.world.halluc_per_scene > toy.world.vocab - 1) {
    throw ConfigError("toy scenes need more tokens than the vocabulary has");
  }
  if (toy.heldout_records == 0 || toy.pair_records == 0) {
    throw ConfigError("toy record counts must be positive");
  }
}

std::string PipelineConfig::serialize() const {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(*this) + "\n";
  }
  return out;
}

std::string PipelineConfig::hash() const { return sha256_hex(serialize()); }

PipelineConfig PipelineConfig::parse(std::string_view text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  PipelineConfig config;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) throw ConfigError("config: key '" + section + "' outside any section");
    const auto& table = fields();
    if (std::none_of(table.begin(), table.end(), [&](const Field& f) { return f.section == section; })) {
      throw ConfigError("config: unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      auto it = std::find_if(table.begin(), table.end(),
                             [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == table.end()) throw ConfigError("config: unknown key [" + section + "] " + key);
      try {
        it->set(config, value.get_value<std::string>());
      } catch (const ConfigError& e) {
        throw ConfigError("config: [" + section + "] " + key + ": " + e.what());
      }
    }
  }
  config.validate();
  return config;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError("config file not found: " + path.string());
  }
  return parse(read_file(path));
}

}  // namespace recap
