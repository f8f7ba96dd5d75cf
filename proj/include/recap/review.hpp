// SPDX-License-Identifier: Apache-2.0
//
// Manual review queue. The queue file (stage review_queue) holds the items as
// generated and is never rewritten; every decision goes to an append-only
// journal next to it, fsync'd before it is acknowledged. Opening a store
// replays the journal over the queue file, so state after a crash is exactly
// the set of decisions that reached the disk.
#pragma once

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "recap/dataset.hpp"
#include "recap/judgment.hpp"

namespace recap {

enum class ReviewStatus { pending, approved, edited, rejected };
enum class Decision { approve, edit, reject };

std::string_view to_string(ReviewStatus s);
std::string_view to_string(Decision d);
ReviewStatus review_status_from_string(std::string_view s);
Decision decision_from_string(std::string_view s);

struct ReviewItem {
  std::string id;
  std::string image_ref;
  std::optional<std::string> alt_text;
  std::string caption;  // as generated
  nlohmann::json provenance = nlohmann::json::object();
  std::optional<std::vector<Detail>> pre_annotations;

  // Decision state, filled in from the journal.
  ReviewStatus status = ReviewStatus::pending;
  std::optional<std::string> edited_caption;
  std::vector<std::size_t> flagged_details;
  std::optional<std::string> reviewer;
  std::optional<std::string> reason;

  bool operator==(const ReviewItem&) const = default;
};

void to_json(nlohmann::json& j, const ReviewItem& r);
void from_json(const nlohmann::json& j, ReviewItem& r);

template <>
struct RecordTraits<ReviewItem> {
  static bool accepts(Stage s) { return s == Stage::review_queue; }
  static const std::string* unique_key(const ReviewItem& r) { return &r.id; }
};

struct VerdictRequest {
  std::string item_id;
  Decision decision = Decision::approve;
  std::optional<std::string> edited_caption;
  std::vector<std::size_t> flagged_details;
  std::optional<std::string> reviewer;
  std::optional<std::string> reason;
};

void to_json(nlohmann::json& j, const VerdictRequest& v);
/// Validates shape only; semantic checks happen in ReviewStore::apply.
void from_json(const nlohmann::json& j, VerdictRequest& v);

struct ReviewStats {
  std::size_t total = 0;
  std::size_t pending = 0;
  std::size_t approved = 0;
  std::size_t edited = 0;
  std::size_t rejected = 0;
  std::map<std::string, std::size_t> per_reviewer;
};

void to_json(nlohmann::json& j, const ReviewStats& s);

class ReviewStore {
 public:
  /// Journal defaults to "<queue>.journal". A torn final journal line (no
  /// trailing newline) is cut off; any other malformed line is a ParseError.
  explicit ReviewStore(const std::filesystem::path& queue,
                       std::optional<std::filesystem::path> journal = std::nullopt);
  ~ReviewStore();
  ReviewStore(const ReviewStore&) = delete;
  ReviewStore& operator=(const ReviewStore&) = delete;

  /// Up to `limit` pending items in queue order.
  std::vector<ReviewItem> pending(std::size_t limit) const;
  std::optional<ReviewItem> item(const std::string& id) const;
  /// All items in queue order with their current state.
  std::vector<ReviewItem> snapshot() const;
  ReviewStats stats() const;

  /// Journals the verdict, then applies it. Throws ConflictError for an
  /// unknown or already decided item, InvalidArgument for a malformed edit.
  ReviewItem apply(const VerdictRequest& verdict);

  const std::filesystem::path& journal_path() const noexcept { return journal_path_; }
  /// Bytes cut from a torn journal tail when the store was opened.
  std::size_t repaired_bytes() const noexcept { return repaired_bytes_; }

  /// Test hook: when RECAP_REVIEW_CRASH_AFTER_APPEND is set, the process
  /// exits right after the journal write and before the in-memory update.
  static constexpr const char* kCrashEnv = "RECAP_REVIEW_CRASH_AFTER_APPEND";

 private:
  void check(const VerdictRequest& v) const;
  void apply_in_memory(const VerdictRequest& v);
  void append(const std::string& line);

  mutable std::mutex mu_;
  std::vector<ReviewItem> items_;
  std::unordered_map<std::string, std::size_t> index_;
  std::filesystem::path journal_path_;
  int fd_ = -1;
  std::size_t seq_ = 0;
  std::size_t repaired_bytes_ = 0;
};

/// Writes a fresh queue file of pending items.
void write_review_queue(const std::filesystem::path& path, const DatasetManifest& manifest,
                        const std::vector<ReviewItem>& items);

/// HTTP front end for a ReviewStore (GET /api/queue, POST /api/verdict,
/// GET /api/stats, GET /api/item/{id}).
class ReviewServer {
 public:
  explicit ReviewServer(ReviewStore& store, std::optional<std::filesystem::path> static_dir = {});
  ~ReviewServer();

  /// Binds (port 0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace recap
