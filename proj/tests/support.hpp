// Shared test helpers. The reference implementations here are written from
// the definitions, deliberately without calling into the library's math, so
// they can serve as oracles.
#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <quadmath.h>

#include "recap/dpo.hpp"
#include "recap/rng.hpp"
#include "recap/toy_policy.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    path_ = fs::temp_directory_path() /
            ("recap-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline recap::ToyPolicy random_policy(std::size_t V, std::size_t C, std::size_t L, recap::Rng& rng,
                                      double scale = 1.0) {
  recap::Matrix m(C, V);
  for (double& x : m.values()) x = rng.normal(0.0, scale);
  return recap::ToyPolicy(L, std::move(m));
}

/// A valid sequence: up to L-1 non-EOS tokens, then EOS.
inline recap::TokenSeq random_sequence(std::size_t V, std::size_t L, recap::Rng& rng) {
  const std::size_t n = rng.below(L);  // 0..L-1 content tokens
  recap::TokenSeq seq;
  for (std::size_t i = 0; i < n; ++i) seq.push_back(1 + static_cast<recap::Token>(rng.below(V - 1)));
  seq.push_back(recap::kEos);
  return seq;
}

inline std::vector<recap::TokenPair> random_batch(std::size_t n, std::size_t V, std::size_t C,
                                                std::size_t L, recap::Rng& rng) {
  std::vector<recap::TokenPair> out;
  while (out.size() < n) {
    recap::TokenPair p{rng.below(C), random_sequence(V, L, rng), random_sequence(V, L, rng)};
    if (p.chosen != p.rejected) out.push_back(std::move(p));
  }
  return out;
}

inline recap::ToyPolicy perturbed(const recap::ToyPolicy& p, recap::Rng& rng, double sd) {
  recap::Matrix m = p.logits();
  for (double& x : m.values()) x += rng.normal(0.0, sd);
  return recap::ToyPolicy(p.max_len(), std::move(m));
}

using quad = __float128;

/// log pi(seq | c) evaluated one step at a time in quad precision. A
/// sequence holding L-1 content tokens ends with a forced EOS that carries
/// no probability mass.
inline quad naive_log_prob_q(const recap::ToyPolicy& p, std::size_t c, const recap::TokenSeq& seq) {
  const auto row = p.row(c);
  quad mx = row[0];
  for (double x : row) mx = std::max<quad>(mx, x);
  quad z = 0;
  for (double x : row) z += expq(static_cast<quad>(x) - mx);
  const quad lse = mx + logq(z);
  quad total = 0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (t == p.max_len() - 1) break;  // forced EOS
    total += static_cast<quad>(row[seq[t]]) - lse;
  }
  return total;
}

inline double naive_log_prob(const recap::ToyPolicy& p, std::size_t c, const recap::TokenSeq& seq) {
  return static_cast<double>(naive_log_prob_q(p, c, seq));
}

inline quad naive_dpo_loss_q(const recap::ToyPolicy& policy, const recap::ToyPolicy& ref,
                             const std::vector<recap::TokenPair>& batch, double beta) {
  quad sum = 0;
  for (const auto& pr : batch) {
    const quad m = beta * ((naive_log_prob_q(policy, pr.context, pr.chosen) -
                            naive_log_prob_q(ref, pr.context, pr.chosen)) -
                           (naive_log_prob_q(policy, pr.context, pr.rejected) -
                            naive_log_prob_q(ref, pr.context, pr.rejected)));
    sum += log1pq(expq(-m));
  }
  return sum / batch.size();
}

/// Central difference of the batch loss w.r.t. logits(r, v), step h.
inline double fd_dpo_grad(const recap::ToyPolicy& policy, const recap::ToyPolicy& ref,
                          const std::vector<recap::TokenPair>& batch, double beta, std::size_t r,
                          std::size_t v, double h = 1e-5) {
  recap::Matrix plus = policy.logits(), minus = policy.logits();
  plus(r, v) += h;
  minus(r, v) -= h;
  const quad step = static_cast<quad>(plus(r, v)) - minus(r, v);
  const quad hi = naive_dpo_loss_q(recap::ToyPolicy(policy.max_len(), plus), ref, batch, beta);
  const quad lo = naive_dpo_loss_q(recap::ToyPolicy(policy.max_len(), minus), ref, batch, beta);
  return static_cast<double>((hi - lo) / step);
}

inline std::string bin_path() { return RECAP_BIN; }
inline fs::path source_dir() { return RECAP_SOURCE_DIR; }

/// Runs a shell command, returns its exit status.
inline int run(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace testing
