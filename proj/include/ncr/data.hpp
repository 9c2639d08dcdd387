#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ncr/log.hpp"
#include "ncr/numerics.hpp"

namespace ncr {

using Index = std::uint32_t;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawInteraction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
  friend bool operator==(const RawInteraction&, const RawInteraction&) = default;
};

enum class InputFormat { movielens_dat, csv };

inline InputFormat parse_input_format(std::string_view name) {
  if (name == "movielens-dat" || name == "dat") return InputFormat::movielens_dat;
  if (name == "csv") return InputFormat::csv;
  throw std::invalid_argument("unknown input format '" + std::string(name) +
                              "' (expected movielens-dat or csv)");
}

struct LineError {
  std::size_t line = 0;
  std::string message;
};

struct LoadReport {
  std::size_t lines = 0;  // non-blank lines, header excluded
  std::vector<LineError> errors;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(s.substr(start)));
      return out;
    }
    out.push_back(trim(s.substr(start, pos - start)));
    start = pos + sep.size();
  }
}

inline bool parse_int(std::string_view s, std::int64_t& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool parse_real(std::string_view s) {
  if (s.empty()) return false;
  std::string tmp(s);
  char* end = nullptr;
  std::strtod(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size();
}

}  // namespace detail

/// Parses rating logs. Ratings are validated then discarded. More than 1%
/// malformed lines aborts with a DataError; fewer are recorded in `report`.
inline std::vector<RawInteraction> load_interactions(std::istream& in, InputFormat format,
                                                     LoadReport* report = nullptr) {
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  rep = {};
  std::vector<RawInteraction> out;
  const std::string_view sep = format == InputFormat::movielens_dat ? "::" : ",";

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = detail::trim(line);
    if (text.empty()) continue;
    const auto fields = detail::split(text, sep);
    const bool header_candidate = format == InputFormat::csv && out.empty() && rep.lines == 0;

    std::string problem;
    std::int64_t ts = 0;
    if (fields.size() != 4) {
      problem = "expected 4 fields, found " + std::to_string(fields.size());
    } else if (fields[0].empty() || fields[1].empty()) {
      problem = "empty user or item id";
    } else if (!detail::parse_real(fields[2])) {
      problem = "rating is not a number";
    } else if (!detail::parse_int(fields[3], ts)) {
      problem = "timestamp is not an integer";
    } else if (ts < 0) {
      problem = "negative timestamp";
    }

    if (problem.empty()) {
      ++rep.lines;
      out.push_back({std::string(fields[0]), std::string(fields[1]), ts});
      continue;
    }
    if (header_candidate && fields.size() == 4) continue;  // optional csv header
    ++rep.lines;
    rep.errors.push_back({line_no, problem});
  }

  if (!rep.errors.empty()) {
    if (rep.errors.size() * 100 > rep.lines) {
      std::ostringstream os;
      os << "too many malformed lines: " << rep.errors.size() << " of " << rep.lines
         << " (first at line " << rep.errors.front().line << ": " << rep.errors.front().message
         << ")";
      throw DataError(os.str());
    }
    warn(std::to_string(rep.errors.size()) + " malformed line(s) skipped, first at line " +
         std::to_string(rep.errors.front().line) + ": " + rep.errors.front().message);
  }
  return out;
}

inline std::vector<RawInteraction> load_interactions_file(const std::filesystem::path& path,
                                                          InputFormat format,
                                                          LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return load_interactions(in, format, report);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

struct Interaction {
  Index item = 0;
  std::int64_t timestamp = 0;
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Binary implicit-feedback matrix with dense internal ids. Each user's list
/// is ordered by (timestamp, item id), oldest first.
class InteractionSet {
 public:
  InteractionSet() = default;

  InteractionSet(std::vector<std::vector<Interaction>> per_user, std::size_t item_count,
                 std::vector<std::string> user_ids = {}, std::vector<std::string> item_ids = {})
      : per_user_(std::move(per_user)),
        item_count_(item_count),
        user_ids_(std::move(user_ids)),
        item_ids_(std::move(item_ids)) {
    if (user_ids_.empty()) {
      for (std::size_t u = 0; u < per_user_.size(); ++u) user_ids_.push_back(std::to_string(u));
    }
    if (item_ids_.empty()) {
      for (std::size_t i = 0; i < item_count_; ++i) item_ids_.push_back(std::to_string(i));
    }
    if (user_ids_.size() != per_user_.size() || item_ids_.size() != item_count_) {
      throw DataError("InteractionSet: id map sizes do not match user/item counts");
    }
    sorted_.resize(per_user_.size());
    for (std::size_t u = 0; u < per_user_.size(); ++u) {
      auto& list = per_user_[u];
      std::sort(list.begin(), list.end(), [](const Interaction& a, const Interaction& b) {
        return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.item < b.item;
      });
      auto& ids = sorted_[u];
      ids.reserve(list.size());
      for (const auto& x : list) {
        if (x.item >= item_count_) {
          throw DataError("InteractionSet: item id " + std::to_string(x.item) +
                          " out of range for user " + std::to_string(u));
        }
        ids.push_back(x.item);
      }
      std::sort(ids.begin(), ids.end());
      if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        throw DataError("InteractionSet: duplicate interaction for user " + std::to_string(u));
      }
      total_ += list.size();
    }
  }

  std::size_t user_count() const { return per_user_.size(); }
  std::size_t item_count() const { return item_count_; }
  std::size_t interaction_count() const { return total_; }

  std::span<const Interaction> items_of(Index u) const { return per_user_.at(u); }
  std::span<const Index> sorted_items(Index u) const { return sorted_.at(u); }
  bool contains(Index u, Index i) const {
    const auto& ids = sorted_[u];
    return std::binary_search(ids.begin(), ids.end(), i);
  }

  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }

  std::optional<Index> find_user(const std::string& external) const {
    const auto it = std::find(user_ids_.begin(), user_ids_.end(), external);
    if (it == user_ids_.end()) return std::nullopt;
    return static_cast<Index>(it - user_ids_.begin());
  }

 private:
  std::vector<std::vector<Interaction>> per_user_;
  std::vector<std::vector<Index>> sorted_;
  std::size_t item_count_ = 0;
  std::size_t total_ = 0;
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
};

/// Deduplicates (earliest timestamp wins), removes users and items with fewer
/// than `min_count` interactions until a fixed point, then assigns dense ids in
/// order of first appearance in `raw`.
inline InteractionSet filter_and_remap(const std::vector<RawInteraction>& raw,
                                       std::size_t min_count = 10) {
  if (min_count < 1) throw std::invalid_argument("filter_and_remap: min_count must be >= 1");

  std::unordered_map<std::string, Index> user_tmp, item_tmp;
  std::vector<const std::string*> user_names, item_names;
  struct Row {
    Index u, i;
    std::int64_t ts;
  };
  std::vector<Row> rows;
  rows.reserve(raw.size());
  for (const auto& r : raw) {
    auto [uit, unew] = user_tmp.try_emplace(r.user, static_cast<Index>(user_names.size()));
    if (unew) user_names.push_back(&uit->first);
    auto [iit, inew] = item_tmp.try_emplace(r.item, static_cast<Index>(item_names.size()));
    if (inew) item_names.push_back(&iit->first);
    rows.push_back({uit->second, iit->second, r.timestamp});
  }

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.u != b.u) return a.u < b.u;
    if (a.i != b.i) return a.i < b.i;
    return a.ts < b.ts;
  });
  rows.erase(std::unique(rows.begin(), rows.end(),
                         [](const Row& a, const Row& b) { return a.u == b.u && a.i == b.i; }),
             rows.end());

  std::vector<bool> user_alive(user_names.size(), true), item_alive(item_names.size(), true);
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<std::size_t> uc(user_names.size(), 0), ic(item_names.size(), 0);
    for (const auto& r : rows) {
      if (user_alive[r.u] && item_alive[r.i]) {
        ++uc[r.u];
        ++ic[r.i];
      }
    }
    for (std::size_t u = 0; u < uc.size(); ++u) {
      if (user_alive[u] && uc[u] < min_count) {
        user_alive[u] = false;
        changed = true;
      }
    }
    for (std::size_t i = 0; i < ic.size(); ++i) {
      if (item_alive[i] && ic[i] < min_count) {
        item_alive[i] = false;
        changed = true;
      }
    }
  }

  constexpr Index kDropped = ~Index{0};
  std::vector<Index> user_map(user_names.size(), kDropped), item_map(item_names.size(), kDropped);
  std::vector<std::string> user_ids, item_ids;
  for (std::size_t u = 0; u < user_names.size(); ++u) {
    if (user_alive[u]) {
      user_map[u] = static_cast<Index>(user_ids.size());
      user_ids.push_back(*user_names[u]);
    }
  }
  for (std::size_t i = 0; i < item_names.size(); ++i) {
    if (item_alive[i]) {
      item_map[i] = static_cast<Index>(item_ids.size());
      item_ids.push_back(*item_names[i]);
    }
  }
  if (user_ids.empty() || item_ids.empty()) throw DataError("dataset empty after filtering");

  std::vector<std::vector<Interaction>> per_user(user_ids.size());
  for (const auto& r : rows) {
    if (user_alive[r.u] && item_alive[r.i]) per_user[user_map[r.u]].push_back({item_map[r.i], r.ts});
  }
  const std::size_t n = item_ids.size();
  return InteractionSet(std::move(per_user), n, std::move(user_ids), std::move(item_ids));
}

/// Leave-one-out partition: per user the latest interaction is the test item,
/// the second latest the validation item.
struct SplitDataset {
  InteractionSet train;
  std::vector<Interaction> validation;
  std::vector<Interaction> test;

  std::size_t user_count() const { return train.user_count(); }
  std::size_t item_count() const { return train.item_count(); }

  /// True if u interacted with i in any partition.
  bool interacted(Index u, Index i) const {
    return validation[u].item == i || test[u].item == i || train.contains(u, i);
  }
};

inline SplitDataset leave_one_out_split(const InteractionSet& data) {
  std::vector<std::vector<Interaction>> train(data.user_count());
  std::vector<Interaction> validation, test;
  validation.reserve(data.user_count());
  test.reserve(data.user_count());
  for (Index u = 0; u < data.user_count(); ++u) {
    const auto list = data.items_of(u);
    if (list.size() < 3) {
      throw DataError("user " + data.user_ids()[u] + " has " + std::to_string(list.size()) +
                      " interactions; leave-one-out needs at least 3");
    }
    test.push_back(list[list.size() - 1]);
    validation.push_back(list[list.size() - 2]);
    train[u].assign(list.begin(), list.end() - 2);
  }
  return {InteractionSet(std::move(train), data.item_count(), data.user_ids(), data.item_ids()),
          std::move(validation), std::move(test)};
}

/// One training instance. Label 1 means i is the observed item.
struct LabeledTriplet {
  Index u = 0;
  Index i = 0;
  Index j = 0;
  std::uint8_t y = 0;
  friend bool operator==(const LabeledTriplet&, const LabeledTriplet&) = default;
  friend auto operator<=>(const LabeledTriplet&, const LabeledTriplet&) = default;
};

/// Draws one epoch: for every observed (u, i) and each of `ratio` draws, an
/// unobserved j uniformly at random, emitting (u, i, j, 1) and its mirror
/// (u, j, i, 0). The epoch is shuffled.
inline std::vector<LabeledTriplet> sample_triplets(const InteractionSet& train, std::size_t ratio,
                                                   RngSeed seed) {
  if (ratio < 1) throw std::invalid_argument("sample_triplets: ratio must be >= 1");
  Rng rng(seed);
  const std::size_t n = train.item_count();
  std::vector<LabeledTriplet> out;
  out.reserve(2 * ratio * train.interaction_count());
  for (Index u = 0; u < train.user_count(); ++u) {
    const auto items = train.sorted_items(u);
    if (items.empty()) continue;
    if (items.size() >= n) {
      warn("user " + train.user_ids()[u] + " has interacted with every item; skipped");
      continue;
    }
    for (const Index i : items) {
      for (std::size_t r = 0; r < ratio; ++r) {
        Index j;
        do {
          j = static_cast<Index>(rng.below(n));
        } while (train.contains(u, j));
        out.push_back({u, i, j, 1});
        out.push_back({u, j, i, 0});
      }
    }
  }
  rng.shuffle(std::span<LabeledTriplet>(out));
  return out;
}

/// `count` distinct items the user never interacted with (in any partition),
/// deterministic per (seed, u). Returns all candidates if fewer exist.
inline std::vector<Index> sample_eval_negatives(const SplitDataset& data, Index u,
                                                std::size_t count = 100, RngSeed seed = {},
                                                bool warn_short = true) {
  std::vector<Index> pool;
  pool.reserve(data.item_count());
  for (Index i = 0; i < data.item_count(); ++i) {
    if (!data.interacted(u, i)) pool.push_back(i);
  }
  if (pool.size() <= count) {
    if (pool.size() < count && warn_short) {
      warn("user " + data.train.user_ids()[u] + " has only " + std::to_string(pool.size()) +
           " non-interacted items (" + std::to_string(count) + " requested)");
    }
    return pool;
  }
  Rng rng(derive_seed(seed, u));
  for (std::size_t k = 0; k < count; ++k) {
    const auto pick = k + static_cast<std::size_t>(rng.below(pool.size() - k));
    std::swap(pool[k], pool[pick]);
  }
  pool.resize(count);
  return pool;
}

// ---- split persistence ------------------------------------------------------

inline constexpr const char* kTrainFile = "train.tsv";
inline constexpr const char* kValidationFile = "validation.tsv";
inline constexpr const char* kTestFile = "test.tsv";
inline constexpr const char* kIdMapFile = "id_map.json";

namespace detail {

inline std::string holdout_tsv(const std::vector<Interaction>& rows) {
  std::string out;
  for (std::size_t u = 0; u < rows.size(); ++u) {
    out += std::to_string(u) + '\t' + std::to_string(rows[u].item) + '\t' +
           std::to_string(rows[u].timestamp) + '\n';
  }
  return out;
}

inline std::string train_tsv(const InteractionSet& train) {
  std::string out;
  for (Index u = 0; u < train.user_count(); ++u) {
    for (const auto& x : train.items_of(u)) {
      out += std::to_string(u) + '\t' + std::to_string(x.item) + '\t' +
             std::to_string(x.timestamp) + '\n';
    }
  }
  return out;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Stable 64-bit hash of the split's train/validation/test contents, hex.
inline std::string split_fingerprint(const SplitDataset& split) {
  std::uint64_t h = detail::fnv1a(detail::train_tsv(split.train));
  h = detail::fnv1a("|", h);
  h = detail::fnv1a(detail::holdout_tsv(split.validation), h);
  h = detail::fnv1a("|", h);
  h = detail::fnv1a(detail::holdout_tsv(split.test), h);
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

inline void save_split(const SplitDataset& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_text(dir / kTrainFile, detail::train_tsv(split.train));
  detail::write_text(dir / kValidationFile, detail::holdout_tsv(split.validation));
  detail::write_text(dir / kTestFile, detail::holdout_tsv(split.test));
  nlohmann::json ids = {{"users", split.train.user_ids()}, {"items", split.train.item_ids()}};
  detail::write_text(dir / kIdMapFile, ids.dump(1) + "\n");
}

inline SplitDataset load_split(const std::filesystem::path& dir) {
  nlohmann::json ids;
  try {
    ids = nlohmann::json::parse(detail::read_text(dir / kIdMapFile));
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / kIdMapFile).string() + ": " + e.what());
  }
  auto users = ids.at("users").get<std::vector<std::string>>();
  auto items = ids.at("items").get<std::vector<std::string>>();
  const std::size_t m = users.size(), n = items.size();

  auto parse_rows = [&](const char* name, auto&& sink) {
    std::istringstream in(detail::read_text(dir / name));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto f = detail::split(line, "\t");
      std::int64_t u = 0, i = 0, ts = 0;
      if (f.size() != 3 || !detail::parse_int(f[0], u) || !detail::parse_int(f[1], i) ||
          !detail::parse_int(f[2], ts) || u < 0 || i < 0 || static_cast<std::size_t>(u) >= m ||
          static_cast<std::size_t>(i) >= n) {
        throw DataError((dir / name).string() + ":" + std::to_string(line_no) +
                        ": malformed split row");
      }
      sink(static_cast<Index>(u), Interaction{static_cast<Index>(i), ts});
    }
  };

  std::vector<std::vector<Interaction>> train(m);
  parse_rows(kTrainFile, [&](Index u, Interaction x) { train[u].push_back(x); });
  auto read_holdout = [&](const char* name) {
    std::vector<Interaction> rows(m);
    std::vector<bool> seen(m, false);
    parse_rows(name, [&](Index u, Interaction x) {
      rows[u] = x;
      seen[u] = true;
    });
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw DataError((dir / name).string() + ": missing rows for some users");
    }
    return rows;
  };
  auto validation = read_holdout(kValidationFile);
  auto test = read_holdout(kTestFile);
  return {InteractionSet(std::move(train), n, std::move(users), std::move(items)),
          std::move(validation), std::move(test)};
}

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double density = 0.0;
};

inline DatasetStats dataset_stats(const InteractionSet& data) {
  DatasetStats s{data.user_count(), data.item_count(), data.interaction_count(), 0.0};
  s.density = static_cast<double>(s.interactions) /
              (static_cast<double>(s.users) * static_cast<double>(s.items));
  return s;
}

}  // namespace ncr
