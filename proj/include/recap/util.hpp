// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace recap {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename, so readers never see a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Number of whitespace-delimited tokens.
std::size_t count_words(std::string_view text);

/// Manifest timestamp. Honors SOURCE_DATE_EPOCH; otherwise deterministic
/// runs get the epoch and live runs get the wall clock.
std::string manifest_timestamp(bool deterministic);

std::string utc_now_iso8601();

/// Evaluates fn(i) for i in [0, n) on up to `workers` threads. Results are
/// stored by index, so output order never depends on completion order. The
/// first exception thrown by any task is rethrown after all workers join.
template <class Result, class Fn>
std::vector<Result> parallel_map(std::size_t n, std::size_t workers, Fn&& fn) {
  std::vector<Result> out(n);
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::atomic_flag error_set = ATOMIC_FLAG_INIT;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            out[i] = fn(i);
          } catch (...) {
            if (!error_set.test_and_set()) first_error = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace recap
