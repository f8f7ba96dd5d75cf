// SPDX-License-Identifier: Apache-2.0
//
// SFT data curation: generate seed captions with an external generator, put
// them through manual review, export what the reviewers kept.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "recap/dataset.hpp"
#include "recap/halluc_eval.hpp"
#include "recap/pair_foundry.hpp"
#include "recap/review.hpp"

namespace recap {

struct SeedGenOptions {
  SamplerParams sampler;
  std::size_t workers = 4;
  std::string template_version = "none";
  std::string endpoint;       // recorded in provenance
  bool deterministic = true;  // timestamps from manifest_timestamp
  Judge* pre_annotator = nullptr;
};

struct SeedGenResult {
  std::vector<ReviewItem> items;  // input order, all pending
  std::vector<std::string> failed_ids;
};

/// One caption per record. Each record's sampler seed is derived from the
/// base seed and the record id.
SeedGenResult gen_sft_seed(std::span<const CaptionRecord> records, Generator& generator,
                           const SeedGenOptions& options);

struct Rejection {
  std::string id;
  std::string reason;
};

struct SftExport {
  std::vector<CaptionRecord> records;  // source "reviewed", caption = final text
  std::vector<Rejection> rejected;
  std::size_t approved = 0;  // includes edited
  std::size_t edited = 0;
  std::size_t pending = 0;
};

/// Approved items export their caption, edited items their edited caption.
/// Throws Error when nothing was approved.
SftExport export_sft(std::span<const ReviewItem> items);

nlohmann::json export_counts(const SftExport& e);

}  // namespace recap
