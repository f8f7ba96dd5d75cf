// SPDX-License-Identifier: Apache-2.0
//
// End-to-end toy run: SFT data prep (teacher captions, review, export, SFT),
// DPO, then CDPO rounds. Everything is seeded from the config, so the same
// config produces byte-identical artifacts.
#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "recap/cdpo.hpp"
#include "recap/config.hpp"
#include "recap/sft.hpp"

namespace recap {

struct ToySetup {
  ToyWorld world;
  ToyPolicy base;
  std::vector<CaptionRecord> heldout;
};

ToySetup make_toy_setup(const PipelineConfig& config);
HeldoutEvaluator make_evaluator(const ToySetup& setup, const PipelineConfig& config);
ControllerConfig controller_config(const PipelineConfig& config);
ToyPairSource::Options pair_source_options(const PipelineConfig& config);

/// Best-of-n sampler over a toy policy, ranked by the oracle critic. Plays
/// the strong external captioner of the SFT data-prep stage.
class ToyTeacher final : public Generator {
 public:
  ToyTeacher(const ToyPolicy& policy, const ToyWorld& world, std::size_t attempts,
             double lambda_halluc);
  std::string prompt(const CaptionRecord& record) const override { return record.image_ref; }
  std::string generate(const CaptionRecord& record, const SamplerParams& sampler) override;
  std::size_t token_length(std::string_view text) const override { return count_words(text); }
  LengthMode length_mode() const override { return LengthMode::model_tokens; }
  std::string_view kind() const override { return "toy_teacher"; }

 private:
  const ToyPolicy& policy_;
  const ToyWorld& world_;
  std::size_t attempts_;
  OracleCritic critic_;
};

struct SftStage {
  ToyPolicy policy;
  SftExport exported;
  std::size_t queued = 0;
};

/// Teacher captions -> review queue -> oracle reviewer (approve when at most
/// review_max_halluc details are hallucinated) -> export -> SFT from the
/// base policy. Artifacts go to `dir` when given.
SftStage run_toy_sft(const ToySetup& setup, const PipelineConfig& config,
                     const std::optional<std::filesystem::path>& dir);

/// Runs every stage and writes <run_dir>/report.json. Stage failures are
/// rethrown as StageError.
nlohmann::json run_pipeline(const PipelineConfig& config, const std::filesystem::path& run_dir);

}  // namespace recap
