// SPDX-License-Identifier: Apache-2.0
#include "recap/prompt_template.hpp"

#include "recap/errors.hpp"
#include "recap/util.hpp"

namespace recap {

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError("prompt template not found: " + path.string());
  }
  return {read_file(path), path.stem().string()};
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& vars) const {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find("{{", pos);
    if (open == std::string::npos) break;
    const auto close = text.find("}}", open + 2);
    if (close == std::string::npos) break;
    out.append(text, pos, open - pos);
    const auto name = text.substr(open + 2, close - open - 2);
    if (auto it = vars.find(name); it != vars.end()) {
      out += it->second;
    } else {
      out.append(text, open, close + 2 - open);
    }
    pos = close + 2;
  }
  out.append(text, pos, std::string::npos);
  return out;
}

}  // namespace recap
