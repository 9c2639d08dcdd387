#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ncr/data.hpp"
#include "ncr/numerics.hpp"

namespace ncr {

/// Planted block-preference data: users and items are split into `blocks`
/// equal groups; user u belongs to block u % blocks and only interacts with
/// items of its own block. Within a block, item r (0-based rank) is drawn with
/// weight 1 / (r + 1)^zipf_exponent, without replacement. Timestamps are a
/// random permutation of the draws, so held-out items are ordinary draws.
struct BlockFixtureConfig {
  std::size_t users = 200;
  std::size_t items = 100;
  std::size_t per_user = 20;
  std::size_t blocks = 2;
  double zipf_exponent = 1.0;
  RngSeed seed{2024};
};

inline std::size_t block_of_user(const BlockFixtureConfig& c, Index u) { return u % c.blocks; }
inline std::size_t block_of_item(const BlockFixtureConfig& c, Index i) {
  return i / (c.items / c.blocks);
}

inline InteractionSet make_block_fixture(const BlockFixtureConfig& c) {
  if (c.blocks == 0 || c.items % c.blocks != 0 || c.per_user > c.items / c.blocks) {
    throw std::invalid_argument("block fixture: items must split evenly and cover per_user");
  }
  const std::size_t width = c.items / c.blocks;
  Rng rng(c.seed);
  std::vector<double> base(width);
  for (std::size_t r = 0; r < width; ++r) base[r] = 1.0 / std::pow(static_cast<double>(r + 1), c.zipf_exponent);

  std::vector<std::vector<Interaction>> per_user(c.users);
  for (Index u = 0; u < c.users; ++u) {
    const std::size_t offset = block_of_user(c, u) * width;
    std::vector<double> w = base;
    for (std::size_t draw = 0; draw < c.per_user; ++draw) {
      double total = 0.0;
      for (double x : w) total += x;
      double target = rng.uniform() * total;
      std::size_t pick = 0;
      while (pick + 1 < width && (w[pick] == 0.0 || target >= w[pick])) {
        target -= w[pick];
        ++pick;
      }
      if (w[pick] == 0.0) {  // rounding fell off the end: take the last available
        pick = width;
        while (w[--pick] == 0.0) {}
      }
      w[pick] = 0.0;
      per_user[u].push_back({static_cast<Index>(offset + pick), 0});
    }
    std::vector<std::int64_t> stamps(c.per_user);
    for (std::size_t t = 0; t < stamps.size(); ++t) stamps[t] = static_cast<std::int64_t>(t);
    rng.shuffle(std::span<std::int64_t>(stamps));
    for (std::size_t t = 0; t < stamps.size(); ++t) per_user[u][t].timestamp = stamps[t];
  }
  std::vector<std::string> users, items;
  for (std::size_t u = 0; u < c.users; ++u) users.push_back("u" + std::to_string(u));
  for (std::size_t i = 0; i < c.items; ++i) items.push_back("i" + std::to_string(i));
  return InteractionSet(std::move(per_user), c.items, std::move(users), std::move(items));
}

/// The same fixture as raw log lines, for exercising ingestion.
inline std::vector<RawInteraction> block_fixture_raw(const BlockFixtureConfig& c) {
  const InteractionSet data = make_block_fixture(c);
  std::vector<RawInteraction> raw;
  for (Index u = 0; u < data.user_count(); ++u)
    for (const auto& x : data.items_of(u))
      raw.push_back({data.user_ids()[u], data.item_ids()[x.item], x.timestamp});
  return raw;
}

}  // namespace ncr
