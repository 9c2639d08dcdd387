#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncr/log.hpp"
#include "ncr/models.hpp"

namespace ncr {

struct RankedList {
  Index user = 0;
  std::vector<Index> items;  // most preferred first
  std::size_t k = 0;
};

/// JSON line {"user": ..., "items": [...]}, using external ids when given.
inline nlohmann::json to_json(const RankedList& list, const std::vector<std::string>* user_ids = nullptr,
                              const std::vector<std::string>* item_ids = nullptr) {
  nlohmann::json j;
  if (user_ids) j["user"] = (*user_ids)[list.user];
  else j["user"] = list.user;
  auto& items = j["items"] = nlohmann::json::array();
  for (const Index i : list.items) {
    if (item_ids) items.push_back((*item_ids)[i]);
    else items.push_back(i);
  }
  return j;
}

/// Pairwise predictive rule: i is preferred iff y(u,i,j) > y(u,j,i). An exact
/// tie goes to the smaller item id.
template <PairwiseModel M>
bool prefer(const M& model, Index u, Index i, Index j) {
  if (i == j) throw std::invalid_argument("prefer: items must differ, got " + std::to_string(i) + " twice");
  const double forward = predict(model, u, i, j);
  const double backward = predict(model, u, j, i);
  if (forward != backward) return forward > backward;
  return i < j;
}

namespace detail {

inline std::vector<Index> sorted_unique_candidates(std::span<const Index> candidates) {
  if (candidates.empty()) throw std::invalid_argument("top_k: empty candidate set");
  std::vector<Index> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("top_k: duplicate candidate items");
  }
  return sorted;
}

// Comparisons are memoized per (a, b) position pair up to this many candidates.
inline constexpr std::size_t kMemoLimit = 2048;

}  // namespace detail

/// Tournament top-K: K passes over the remaining candidates in ascending id
/// order, each keeping the running winner under `prefer` and appending it.
template <PairwiseModel M>
RankedList top_k(const M& model, Index u, std::span<const Index> candidates, std::size_t k) {
  if (k == 0) throw std::invalid_argument("top_k: K must be at least 1");
  const auto items = detail::sorted_unique_candidates(candidates);
  const std::size_t count = items.size();
  if (k > count) {
    warn("top_k: K=" + std::to_string(k) + " exceeds " + std::to_string(count) +
         " candidates; ranking all of them");
    k = count;
  }

  // memo[a * count + b]: 0 unknown, 1 items[a] preferred over items[b], 2 not
  std::vector<signed char> memo;
  if (count <= detail::kMemoLimit) memo.assign(count * count, 0);
  auto wins = [&](std::size_t a, std::size_t b) {
    if (memo.empty()) return prefer(model, u, items[a], items[b]);
    auto& slot = memo[a * count + b];
    if (slot == 0) {
      const bool r = prefer(model, u, items[a], items[b]);
      slot = r ? 1 : 2;
      memo[b * count + a] = r ? 2 : 1;
    }
    return slot == 1;
  };

  RankedList out{u, {}, k};
  out.items.reserve(k);
  std::vector<bool> taken(count, false);
  for (std::size_t pass = 0; pass < k; ++pass) {
    std::size_t best = count;
    for (std::size_t c = 0; c < count; ++c) {
      if (taken[c]) continue;
      if (best == count || wins(c, best)) best = c;
    }
    taken[best] = true;
    out.items.push_back(items[best]);
  }
  return out;
}

namespace detail {

template <PairwiseModel M>
std::vector<char> preference_matrix(const M& model, Index u, std::span<const Index> items) {
  const std::size_t n = items.size();
  std::vector<char> pref(n * n, 0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const bool r = prefer(model, u, items[a], items[b]);
      pref[a * n + b] = r;
      pref[b * n + a] = !r;
    }
  }
  return pref;
}

inline void check_audit_items(std::span<const Index> items) {
  if (items.size() < 3) throw std::invalid_argument("transitivity_audit: need at least 3 items");
  std::vector<Index> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("transitivity_audit: duplicate items");
  }
}

}  // namespace detail

/// Counts ordered triples (i, j, k) of distinct items with i > j and j > k
/// but not i > k, exhaustively.
template <PairwiseModel M>
std::size_t transitivity_audit(const M& model, Index u, std::span<const Index> items) {
  detail::check_audit_items(items);
  const std::size_t n = items.size();
  const auto pref = detail::preference_matrix(model, u, items);
  std::size_t violations = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < n; ++c)
        if (a != b && b != c && a != c && pref[a * n + b] && pref[b * n + c] && !pref[a * n + c])
          ++violations;
  return violations;
}

/// Sampled variant: draws `sample_count` ordered triples of distinct items.
template <PairwiseModel M>
std::size_t transitivity_audit(const M& model, Index u, std::span<const Index> items,
                               std::size_t sample_count, RngSeed seed) {
  detail::check_audit_items(items);
  Rng rng(seed);
  const std::size_t n = items.size();
  std::size_t violations = 0;
  for (std::size_t s = 0; s < sample_count; ++s) {
    const auto a = static_cast<std::size_t>(rng.below(n));
    auto b = static_cast<std::size_t>(rng.below(n - 1));
    if (b >= a) ++b;
    std::size_t c;
    do {
      c = static_cast<std::size_t>(rng.below(n));
    } while (c == a || c == b);
    if (prefer(model, u, items[a], items[b]) && prefer(model, u, items[b], items[c]) &&
        !prefer(model, u, items[a], items[c])) {
      ++violations;
    }
  }
  return violations;
}

}  // namespace ncr
