// SPDX-License-Identifier: Apache-2.0
#include "recap/sft.hpp"

#include <optional>

#include "recap/errors.hpp"
#include "recap/util.hpp"

namespace recap {

SeedGenResult gen_sft_seed(std::span<const CaptionRecord> records, Generator& generator,
                           const SeedGenOptions& options) {
  options.sampler.validate();
  const std::string created_at = manifest_timestamp(options.deterministic);
  auto items = parallel_map<std::optional<ReviewItem>>(
      records.size(), options.workers, [&](std::size_t i) -> std::optional<ReviewItem> {
        const auto& r = records[i];
        SamplerParams sampler = options.sampler;
        sampler.seed = derive_seed(options.sampler.seed, r.id);
        ReviewItem item;
        item.id = r.id;
        item.image_ref = r.image_ref;
        item.alt_text = r.alt_text;
        try {
          item.caption = generator.generate(r, sampler);
          if (options.pre_annotator) {
            item.pre_annotations =
                options.pre_annotator->judge({r.id, r.image_ref, r.alt_text, item.caption}).details;
          }
        } catch (const Error&) {
          return std::nullopt;
        }
        item.provenance = {{"template_version", options.template_version},
                           {"endpoint", options.endpoint},
                           {"generator", generator.kind()},
                           {"seed", sampler.seed},
                           {"created_at", created_at}};
        return item;
      });
  SeedGenResult out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]) {
      out.items.push_back(std::move(*items[i]));
    } else {
      out.failed_ids.push_back(records[i].id);
    }
  }
  return out;
}

SftExport export_sft(std::span<const ReviewItem> items) {
  if (items.empty()) throw Error("review queue is empty; nothing to export");
  SftExport out;
  for (const auto& it : items) {
    switch (it.status) {
      case ReviewStatus::pending:
        ++out.pending;
        break;
      case ReviewStatus::rejected:
        out.rejected.push_back({it.id, it.reason.value_or("")});
        break;
      case ReviewStatus::edited:
        ++out.edited;
        [[fallthrough]];
      case ReviewStatus::approved: {
        ++out.approved;
        CaptionRecord r;
        r.id = it.id;
        r.image_ref = it.image_ref;
        r.alt_text = it.alt_text;
        r.caption = it.status == ReviewStatus::edited ? it.edited_caption : it.caption;
        r.source = CaptionSource::reviewed;
        out.records.push_back(std::move(r));
        break;
      }
    }
  }
  if (out.approved == 0) {
    throw Error("no approved items to export (" + std::to_string(out.rejected.size()) +
                " rejected, " + std::to_string(out.pending) + " pending)");
  }
  return out;
}

nlohmann::json export_counts(const SftExport& e) {
  return {{"approved", e.approved},
          {"edited", e.edited},
          {"rejected", e.rejected.size()},
          {"pending", e.pending}};
}

}  // namespace recap
