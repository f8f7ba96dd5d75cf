// SPDX-License-Identifier: Apache-2.0
#include "recap/review.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstdlib>
#include <cstring>

#include <httplib.h>

#include "recap/errors.hpp"
#include "recap/util.hpp"

namespace recap {

namespace {

constexpr std::array<std::string_view, 4> kStatusNames = {"pending", "approved", "edited", "rejected"};
constexpr std::array<std::string_view, 3> kDecisionNames = {"approve", "edit", "reject"};

template <class T>
void get_opt(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) {
    out = it->get<T>();
  } else {
    out.reset();
  }
}

template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::string_view to_string(ReviewStatus s) { return kStatusNames.at(static_cast<std::size_t>(s)); }
std::string_view to_string(Decision d) { return kDecisionNames.at(static_cast<std::size_t>(d)); }

ReviewStatus review_status_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kStatusNames.size(); ++i) {
    if (kStatusNames[i] == s) return static_cast<ReviewStatus>(i);
  }
  throw InvalidArgument("unknown review status '" + std::string(s) + "'");
}

Decision decision_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kDecisionNames.size(); ++i) {
    if (kDecisionNames[i] == s) return static_cast<Decision>(i);
  }
  throw InvalidArgument("unknown decision '" + std::string(s) + "'");
}

void to_json(nlohmann::json& j, const ReviewItem& r) {
  j = nlohmann::json{{"id", r.id},
                     {"image_ref", r.image_ref},
                     {"alt_text", opt_json(r.alt_text)},
                     {"caption", r.caption},
                     {"provenance", r.provenance},
                     {"pre_annotations", opt_json(r.pre_annotations)},
                     {"status", to_string(r.status)},
                     {"edited_caption", opt_json(r.edited_caption)},
                     {"flagged_details", r.flagged_details},
                     {"reviewer", opt_json(r.reviewer)},
                     {"reason", opt_json(r.reason)}};
}

void from_json(const nlohmann::json& j, ReviewItem& r) {
  j.at("id").get_to(r.id);
  if (r.id.empty()) throw InvalidArgument("review item id must be nonempty");
  j.at("image_ref").get_to(r.image_ref);
  get_opt(j, "alt_text", r.alt_text);
  j.at("caption").get_to(r.caption);
  r.provenance = j.value("provenance", nlohmann::json::object());
  get_opt(j, "pre_annotations", r.pre_annotations);
  r.status = review_status_from_string(j.value("status", std::string("pending")));
  get_opt(j, "edited_caption", r.edited_caption);
  r.flagged_details = j.value("flagged_details", std::vector<std::size_t>{});
  get_opt(j, "reviewer", r.reviewer);
  get_opt(j, "reason", r.reason);
}

void to_json(nlohmann::json& j, const VerdictRequest& v) {
  j = nlohmann::json{{"item_id", v.item_id},
                     {"decision", to_string(v.decision)},
                     {"edited_caption", opt_json(v.edited_caption)},
                     {"flagged_details", v.flagged_details},
                     {"reviewer", opt_json(v.reviewer)},
                     {"reason", opt_json(v.reason)}};
}

void from_json(const nlohmann::json& j, VerdictRequest& v) {
  j.at("item_id").get_to(v.item_id);
  v.decision = decision_from_string(j.at("decision").get<std::string>());
  get_opt(j, "edited_caption", v.edited_caption);
  v.flagged_details = j.value("flagged_details", std::vector<std::size_t>{});
  get_opt(j, "reviewer", v.reviewer);
  get_opt(j, "reason", v.reason);
}

void to_json(nlohmann::json& j, const ReviewStats& s) {
  j = nlohmann::json{{"total", s.total},       {"pending", s.pending},
                     {"approved", s.approved}, {"edited", s.edited},
                     {"rejected", s.rejected}, {"per_reviewer", s.per_reviewer}};
}

ReviewStore::ReviewStore(const std::filesystem::path& queue,
                         std::optional<std::filesystem::path> journal)
    : journal_path_(journal.value_or(std::filesystem::path(queue.string() + ".journal"))) {
  auto data = read_jsonl<ReviewItem>(queue, Stage::review_queue);
  items_ = std::move(data.records);
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].status != ReviewStatus::pending) {
      throw ParseError(i + 2, "queue file items must be pending; decisions live in the journal");
    }
    index_.emplace(items_[i].id, i);
  }

  if (std::filesystem::exists(journal_path_)) {
    const std::string bytes = read_file(journal_path_);
    std::size_t pos = 0, line = 0;
    while (pos < bytes.size()) {
      const auto nl = bytes.find('\n', pos);
      if (nl == std::string::npos) {
        // Torn final write: the verdict was never acknowledged.
        repaired_bytes_ = bytes.size() - pos;
        std::filesystem::resize_file(journal_path_, pos);
        break;
      }
      ++line;
      VerdictRequest v;
      try {
        const auto j = nlohmann::json::parse(std::string_view(bytes).substr(pos, nl - pos));
        j.at("verdict").get_to(v);
        check(v);
      } catch (const std::exception& e) {
        throw ParseError(line, std::string("journal ") + journal_path_.string() + ": " + e.what());
      }
      apply_in_memory(v);
      ++seq_;
      pos = nl + 1;
    }
  }
  fd_ = ::open(journal_path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw IoError("cannot open journal " + journal_path_.string() + ": " + std::strerror(errno));
}

ReviewStore::~ReviewStore() {
  if (fd_ >= 0) ::close(fd_);
}

std::vector<ReviewItem> ReviewStore::pending(std::size_t limit) const {
  std::lock_guard lock(mu_);
  std::vector<ReviewItem> out;
  for (const auto& it : items_) {
    if (out.size() >= limit) break;
    if (it.status == ReviewStatus::pending) out.push_back(it);
  }
  return out;
}

std::optional<ReviewItem> ReviewStore::item(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return items_[it->second];
}

std::vector<ReviewItem> ReviewStore::snapshot() const {
  std::lock_guard lock(mu_);
  return items_;
}

ReviewStats ReviewStore::stats() const {
  std::lock_guard lock(mu_);
  ReviewStats s;
  s.total = items_.size();
  for (const auto& it : items_) {
    switch (it.status) {
      case ReviewStatus::pending: ++s.pending; break;
      case ReviewStatus::approved: ++s.approved; break;
      case ReviewStatus::edited: ++s.edited; break;
      case ReviewStatus::rejected: ++s.rejected; break;
    }
    if (it.status != ReviewStatus::pending) ++s.per_reviewer[it.reviewer.value_or("anonymous")];
  }
  return s;
}

void ReviewStore::check(const VerdictRequest& v) const {
  auto it = index_.find(v.item_id);
  if (it == index_.end()) throw ConflictError("unknown item '" + v.item_id + "'");
  const auto& item = items_[it->second];
  if (item.status != ReviewStatus::pending) {
    throw ConflictError("item '" + v.item_id + "' already " + std::string(to_string(item.status)));
  }
  if (v.decision == Decision::edit) {
    if (!v.edited_caption || v.edited_caption->empty() || *v.edited_caption == item.caption) {
      throw InvalidArgument("edit needs an edited_caption that differs from the original");
    }
  } else if (v.edited_caption) {
    throw InvalidArgument("edited_caption is only allowed with decision 'edit'");
  }
}

void ReviewStore::apply_in_memory(const VerdictRequest& v) {
  auto& item = items_[index_.at(v.item_id)];
  item.status = v.decision == Decision::approve ? ReviewStatus::approved
                : v.decision == Decision::edit  ? ReviewStatus::edited
                                                : ReviewStatus::rejected;
  item.edited_caption = v.edited_caption;
  item.flagged_details = v.flagged_details;
  item.reviewer = v.reviewer;
  item.reason = v.reason;
}

void ReviewStore::append(const std::string& line) {
  const char* p = line.data();
  std::size_t left = line.size();
  while (left > 0) {
    const ssize_t n = ::write(fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("journal write failed: " + std::string(std::strerror(errno)));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (::fdatasync(fd_) != 0) throw IoError("journal fsync failed: " + std::string(std::strerror(errno)));
}

ReviewItem ReviewStore::apply(const VerdictRequest& verdict) {
  std::lock_guard lock(mu_);
  check(verdict);
  append(dump_line({{"seq", seq_ + 1}, {"verdict", verdict}}) + "\n");
  ++seq_;
  if (std::getenv(kCrashEnv) != nullptr) std::_Exit(75);
  apply_in_memory(verdict);
  return items_[index_.at(verdict.item_id)];
}

void write_review_queue(const std::filesystem::path& path, const DatasetManifest& manifest,
                        const std::vector<ReviewItem>& items) {
  if (manifest.stage != Stage::review_queue) throw StageMismatch("review queue manifest must be stage review_queue");
  write_jsonl(path, manifest, items);
}

struct ReviewServer::Impl {
  ReviewStore& store;
  httplib::Server server;
  int port = 0;
  explicit Impl(ReviewStore& s) : store(s) {}
};

namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

ReviewServer::ReviewServer(ReviewStore& store, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(store)) {
  auto& srv = impl_->server;
  auto& st = impl_->store;

  srv.Get("/api/queue", [&st](const httplib::Request& req, httplib::Response& res) {
    std::size_t limit = 10;
    if (req.has_param("limit")) {
      try {
        limit = std::stoul(req.get_param_value("limit"));
      } catch (const std::exception&) {
        return reply(res, 400, {{"error", "limit must be a non-negative integer"}});
      }
    }
    limit = std::min<std::size_t>(limit, 1000);
    reply(res, 200, {{"items", st.pending(limit)}, {"pending", st.stats().pending}});
  });

  srv.Get("/api/stats", [&st](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, st.stats());
  });

  srv.Get(R"(/api/item/([^/]+))", [&st](const httplib::Request& req, httplib::Response& res) {
    const auto item = st.item(req.matches[1]);
    if (!item) return reply(res, 404, {{"error", "no such item"}});
    reply(res, 200, *item);
  });

  srv.Post("/api/verdict", [&st](const httplib::Request& req, httplib::Response& res) {
    VerdictRequest v;
    try {
      nlohmann::json::parse(req.body).get_to(v);
    } catch (const std::exception& e) {
      return reply(res, 400, {{"error", std::string("bad verdict: ") + e.what()}});
    }
    try {
      reply(res, 200, {{"item", st.apply(v)}});
    } catch (const ConflictError& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const InvalidArgument& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  });

  if (static_dir) srv.set_mount_point("/", static_dir->string());
}

ReviewServer::~ReviewServer() = default;

int ReviewServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    impl_->port = srv.bind_to_any_port(host);
  } else {
    impl_->port = srv.bind_to_port(host, port) ? port : -1;
  }
  if (impl_->port < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return impl_->port;
}

void ReviewServer::listen() { impl_->server.listen_after_bind(); }

void ReviewServer::stop() { impl_->server.stop(); }

}  // namespace recap
