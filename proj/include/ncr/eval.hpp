#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ncr/data.hpp"
#include "ncr/ranking.hpp"

namespace ncr {

/// 1-based position of `target` in the list, if present.
inline std::optional<std::size_t> rank_of(const RankedList& ranked, Index target) {
  for (std::size_t p = 0; p < ranked.items.size(); ++p)
    if (ranked.items[p] == target) return p + 1;
  return std::nullopt;
}

inline int hit_ratio(const RankedList& ranked, Index target, std::size_t k) {
  const auto r = rank_of(ranked, target);
  return r && *r <= k ? 1 : 0;
}

/// Single relevant item: 1 / log2(rank + 1) within the cutoff, else 0.
inline double ndcg_at_k(const RankedList& ranked, Index target, std::size_t k) {
  const auto r = rank_of(ranked, target);
  if (!r || *r > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(*r) + 1.0);
}

enum class Holdout { validation, test };

struct EvalOptions {
  std::size_t k = 10;
  std::size_t negatives = 100;
  RngSeed seed{};
  Holdout holdout = Holdout::test;
  std::size_t threads = 1;
};

struct UserEval {
  Index user = 0;
  Index target = 0;
  std::optional<std::size_t> rank;  // absent when beyond K
};

struct EvalReport {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  double hr = 0.0;
  double ndcg = 0.0;
  std::vector<UserEval> per_user;

  /// HR at a smaller cutoff, recomputed from the per-user ranks. Tournament
  /// lists are prefix-stable, so this equals a separate run at that cutoff.
  double hr_at(std::size_t cutoff) const {
    if (per_user.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : per_user) s += e.rank && *e.rank <= cutoff ? 1.0 : 0.0;
    return s / static_cast<double>(per_user.size());
  }
  double ndcg_at(std::size_t cutoff) const {
    if (per_user.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : per_user)
      if (e.rank && *e.rank <= cutoff) s += 1.0 / std::log2(static_cast<double>(*e.rank) + 1.0);
    return s / static_cast<double>(per_user.size());
  }

  nlohmann::json to_json(const std::vector<std::string>* user_ids = nullptr) const {
    nlohmann::json j{{"k", k}, {"hr", hr}, {"ndcg", ndcg}, {"seed", seed}};
    auto& rows = j["per_user"] = nlohmann::json::array();
    for (const auto& e : per_user) {
      nlohmann::json row;
      if (user_ids) row["user"] = (*user_ids)[e.user];
      else row["user"] = e.user;
      if (e.rank) row["rank"] = *e.rank;
      else row["rank"] = nullptr;
      rows.push_back(std::move(row));
    }
    return j;
  }
};

/// Per-user candidate lists: sampled negatives followed by the held-out item.
struct EvalCandidates {
  std::vector<std::vector<Index>> lists;
  std::vector<Index> targets;
};

inline constexpr std::uint64_t kValidationStream = 0x76616c6964ull;

inline EvalCandidates build_candidates(const SplitDataset& split, const EvalOptions& opts) {
  EvalCandidates c;
  const RngSeed seed =
      opts.holdout == Holdout::validation ? derive_seed(opts.seed, kValidationStream) : opts.seed;
  c.lists.resize(split.user_count());
  c.targets.resize(split.user_count());
  std::size_t short_users = 0;
  for (Index u = 0; u < split.user_count(); ++u) {
    c.targets[u] = opts.holdout == Holdout::validation ? split.validation[u].item : split.test[u].item;
    c.lists[u] = sample_eval_negatives(split, u, opts.negatives, seed, false);
    if (c.lists[u].size() < opts.negatives) ++short_users;
    c.lists[u].push_back(c.targets[u]);
  }
  if (short_users > 0) {
    warn(std::to_string(short_users) + " user(s) have fewer than " + std::to_string(opts.negatives) +
         " non-interacted items; their candidate lists use all of them");
  }
  return c;
}

namespace detail {

template <typename F>
void parallel_for_users(std::size_t users, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, users));
  if (threads == 1) {
    for (std::size_t u = 0; u < users; ++u) body(static_cast<Index>(u));
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t u = t; u < users; u += threads) body(static_cast<Index>(u));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Leave-one-out evaluation with any ranker callable
/// (Index user, std::span<const Index> candidates, std::size_t k) -> RankedList.
template <typename Ranker>
EvalReport evaluate_ranker(Ranker&& ranker, const EvalCandidates& candidates, const EvalOptions& opts) {
  EvalReport report;
  report.k = opts.k;
  report.seed = opts.seed.value;
  const std::size_t users = candidates.lists.size();
  report.per_user.resize(users);
  detail::parallel_for_users(users, opts.threads, [&](Index u) {
    const RankedList ranked = ranker(u, std::span<const Index>(candidates.lists[u]), opts.k);
    const Index target = candidates.targets[u];
    auto r = rank_of(ranked, target);
    if (r && *r > opts.k) r.reset();
    report.per_user[u] = {u, target, r};
  });
  double hr = 0.0, ndcg = 0.0;
  for (const auto& e : report.per_user) {
    if (e.rank) {
      hr += 1.0;
      ndcg += 1.0 / std::log2(static_cast<double>(*e.rank) + 1.0);
    }
  }
  if (users > 0) {
    report.hr = hr / static_cast<double>(users);
    report.ndcg = ndcg / static_cast<double>(users);
  }
  return report;
}

template <typename Ranker>
EvalReport evaluate_ranker(Ranker&& ranker, const SplitDataset& split, const EvalOptions& opts) {
  return evaluate_ranker(std::forward<Ranker>(ranker), build_candidates(split, opts), opts);
}

template <PairwiseModel M>
auto tournament_ranker(const M& model) {
  return [&model](Index u, std::span<const Index> cands, std::size_t k) {
    return top_k(model, u, cands, k);
  };
}

/// HR@K / NDCG@K of a pairwise model, ranking each held-out item among its
/// sampled negatives with the tournament top-K.
template <PairwiseModel M>
EvalReport evaluate(const M& model, const SplitDataset& split, const EvalOptions& opts = {}) {
  return evaluate_ranker(tournament_ranker(model), split, opts);
}

template <PairwiseModel M>
EvalReport evaluate(const M& model, const EvalCandidates& candidates, const EvalOptions& opts) {
  return evaluate_ranker(tournament_ranker(model), candidates, opts);
}

inline std::string csv_summary_header() { return "model,factors,ratio,k,hr,ndcg"; }

inline std::string csv_summary_row(const std::string& model, std::size_t factors, std::size_t ratio,
                                   std::size_t k, double hr, double ndcg) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << model << ',' << factors << ',' << ratio << ',' << k << ',' << hr << ','
     << ndcg;
  return os.str();
}

}  // namespace ncr
