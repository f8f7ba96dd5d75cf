// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace recap {

/// A versioned prompt file. Placeholders are written `{{name}}`. The version
/// is the file stem (prompts/sft/v1.txt -> "v1").
struct PromptTemplate {
  std::string text;
  std::string version;

  /// Throws ConfigError when the file does not exist.
  static PromptTemplate load(const std::filesystem::path& path);

  /// Unknown placeholders are left untouched.
  std::string render(const std::map<std::string, std::string>& vars) const;
};

}  // namespace recap
