#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncr/data.hpp"
#include "ncr/eval.hpp"
#include "ncr/numerics.hpp"
#include "ncr/ranking.hpp"
#include "ncr/trainer.hpp"

namespace ncr {

// ---- ItemPop -----------------------------------------------------------------

struct PopularityTable {
  std::vector<std::uint64_t> counts;  // per item, training interactions

  static PopularityTable from(const InteractionSet& train) {
    PopularityTable t{std::vector<std::uint64_t>(train.item_count(), 0)};
    for (Index u = 0; u < train.user_count(); ++u)
      for (const Index i : train.sorted_items(u)) ++t.counts[i];
    return t;
  }

  std::size_t items() const { return counts.size(); }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

/// Non-personalized: descending training count, ties by ascending item id.
inline RankedList itempop_rank(const PopularityTable& table, std::span<const Index> candidates,
                               std::size_t k, Index user = 0) {
  if (candidates.empty()) throw std::invalid_argument("itempop_rank: empty candidate set");
  std::vector<Index> items(candidates.begin(), candidates.end());
  for (const Index i : items)
    if (i >= table.items()) throw std::out_of_range("itempop_rank: item " + std::to_string(i) + " out of range");
  std::sort(items.begin(), items.end(), [&](Index a, Index b) {
    return table.counts[a] != table.counts[b] ? table.counts[a] > table.counts[b] : a < b;
  });
  k = std::min(k, items.size());
  items.resize(k);
  return {user, std::move(items), k};
}

// ---- BPR-MF ------------------------------------------------------------------

struct BprConfig {
  double learning_rate = 0.05;
  double lambda = 0.01;
  std::size_t negative_ratio = 1;
  std::size_t max_epochs = 100;
  RngSeed seed{};
  double plateau = 0.001;
  bool stop_on_plateau = true;
  std::size_t eval_k = 10;
  std::size_t eval_negatives = 100;
  std::size_t threads = 1;
};

struct BprParams {
  DenseMatrix user;  // m x k
  DenseMatrix item;  // n x k
  double learning_rate = 0.05;
  double lambda = 0.01;

  std::size_t users() const { return user.rows(); }
  std::size_t items() const { return item.rows(); }
  std::size_t dim() const { return user.cols(); }

  static BprParams random(std::size_t users, std::size_t items, std::size_t k, RngSeed seed,
                          double learning_rate = 0.05, double lambda = 0.01) {
    if (lambda < 0.0) throw std::invalid_argument("BPR lambda must be >= 0");
    Rng rng(seed);
    BprParams p{DenseMatrix(users, k), DenseMatrix(items, k), learning_rate, lambda};
    gaussian_fill(p.user, rng);
    gaussian_fill(p.item, rng);
    return p;
  }
};

inline void for_each_tensor(BprParams& p, auto&& f) {
  f("bpr.user", p.user);
  f("bpr.item", p.item);
}
inline void for_each_tensor(const BprParams& p, auto&& f) {
  f("bpr.user", p.user);
  f("bpr.item", p.item);
}

/// x_uij = U_u . V_i - U_u . V_j
inline double bpr_score(const BprParams& p, Index u, Index i, Index j) {
  detail::check_ids(p.users(), p.items(), u, i, j);
  const auto pu = p.user.row(u);
  return dot(pu, p.item.row(i)) - dot(pu, p.item.row(j));
}

/// Lets the pairwise machinery (prefer, top_k) run on BPR.
inline double predict(const BprParams& p, Index u, Index i, Index j) {
  return sigmoid(bpr_score(p, u, i, j));
}

/// -ln sigmoid(x_uij) + lambda (|U_u|^2 + |V_i|^2 + |V_j|^2)
inline double bpr_objective(const BprParams& p, Index u, Index i, Index j) {
  const double reg = dot(p.user.row(u), p.user.row(u)) + dot(p.item.row(i), p.item.row(i)) +
                     dot(p.item.row(j), p.item.row(j));
  return -log_sigmoid(bpr_score(p, u, i, j)) + p.lambda * reg;
}

/// Adds scale * gradient of bpr_objective into `grad` (only user/item rows
/// u, i, j are touched). Returns the objective value.
inline double bpr_accumulate_gradient(const BprParams& p, Index u, Index i, Index j,
                                      BprParams& grad, double scale = 1.0) {
  const double x = bpr_score(p, u, i, j);
  const double g = -sigmoid(-x);  // d(-ln sigmoid(x))/dx
  const auto pu = p.user.row(u), qi = p.item.row(i), qj = p.item.row(j);
  auto gu = grad.user.row(u), gi = grad.item.row(i), gj = grad.item.row(j);
  double reg = 0.0;
  for (std::size_t k = 0; k < pu.size(); ++k) {
    gu[k] += scale * (g * (qi[k] - qj[k]) + 2.0 * p.lambda * pu[k]);
    gi[k] += scale * (g * pu[k] + 2.0 * p.lambda * qi[k]);
    gj[k] += scale * (-g * pu[k] + 2.0 * p.lambda * qj[k]);
    reg += pu[k] * pu[k] + qi[k] * qi[k] + qj[k] * qj[k];
  }
  return -log_sigmoid(x) + p.lambda * reg;
}

/// One plain SGD step on a single triplet. Returns the objective before the step.
inline double bpr_sgd_step(BprParams& p, Index u, Index i, Index j) {
  const double x = bpr_score(p, u, i, j);
  const double g = -sigmoid(-x);
  auto pu = p.user.row(u), qi = p.item.row(i), qj = p.item.row(j);
  double reg = 0.0;
  const double lr = p.learning_rate, lam = p.lambda;
  for (std::size_t k = 0; k < pu.size(); ++k) {
    const double uk = pu[k], ik = qi[k], jk = qj[k];
    reg += uk * uk + ik * ik + jk * jk;
    pu[k] -= lr * (g * (ik - jk) + 2.0 * lam * uk);
    qi[k] -= lr * (g * uk + 2.0 * lam * ik);
    qj[k] -= lr * (-g * uk + 2.0 * lam * jk);
  }
  return -log_sigmoid(x) + lam * reg;
}

/// Descending U_u . V_i, ties by ascending id.
inline RankedList mf_topk(const BprParams& p, Index u, std::span<const Index> candidates,
                          std::size_t k) {
  if (candidates.empty()) throw std::invalid_argument("mf_topk: empty candidate set");
  if (u >= p.users()) throw std::out_of_range("mf_topk: user " + std::to_string(u) + " out of range");
  std::vector<std::pair<double, Index>> scored;
  scored.reserve(candidates.size());
  for (const Index i : candidates) {
    if (i >= p.items()) throw std::out_of_range("mf_topk: item " + std::to_string(i) + " out of range");
    scored.emplace_back(dot(p.user.row(u), p.item.row(i)), i);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  k = std::min(k, scored.size());
  RankedList out{u, {}, k};
  for (std::size_t r = 0; r < k; ++r) out.items.push_back(scored[r].second);
  return out;
}

struct BprTrainResult {
  BprParams params;
  TrainHistory history;
};

/// SGD on the BPR criterion over uniformly sampled (u, i, j) with the same
/// epoch, stopping and model-selection conventions as the neural trainer.
inline BprTrainResult bpr_train(const SplitDataset& split, std::size_t k, const BprConfig& cfg) {
  if (k < 1) throw std::invalid_argument("BPR needs at least one latent factor");
  if (cfg.negative_ratio < 1) throw std::invalid_argument("negative ratio must be >= 1");
  BprParams params = BprParams::random(split.user_count(), split.item_count(), k,
                                       derive_seed(cfg.seed, 0x627072ull), cfg.learning_rate,
                                       cfg.lambda);
  BprTrainResult out{params, {}};
  out.history.stop_reason = "max_epochs";
  if (cfg.max_epochs == 0) return out;

  const EvalOptions val_opts{cfg.eval_k, cfg.eval_negatives, cfg.seed, Holdout::validation, cfg.threads};
  const EvalCandidates val_candidates = build_candidates(split, val_opts);
  auto ranker = [&params](Index u, std::span<const Index> c, std::size_t kk) { return mf_topk(params, u, c, kk); };
  double best_hr = -1.0;
  TrainHistory& h = out.history;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    // Positive orientations of the sampled triplets, in shuffled order.
    const auto triplets = sample_triplets(split.train, cfg.negative_ratio, epoch_seed(cfg.seed, epoch));
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& t : triplets) {
      if (t.y != 1) continue;
      sum += bpr_sgd_step(params, t.u, t.i, t.j);
      ++count;
    }
    if (!std::isfinite(sum) || !params.user.all_finite() || !params.item.all_finite()) {
      throw DivergedError(epoch, 0, "non-finite BPR objective");
    }
    const double mean = sum / static_cast<double>(std::max<std::size_t>(count, 1));
    const EvalReport val = evaluate_ranker(ranker, val_candidates, val_opts);
    h.loss.push_back(mean);
    h.val_hr.push_back(val.hr);
    h.val_ndcg.push_back(val.ndcg);
    h.instances.push_back(count);
    if (val.hr > best_hr) {
      best_hr = val.hr;
      h.best_epoch = epoch;
      out.params = params;
    }
    if (cfg.stop_on_plateau && epoch > 0 && loss_plateaued(h.loss[epoch - 1], mean, cfg.plateau)) {
      h.stop_reason = "plateau";
      break;
    }
  }
  return out;
}

}  // namespace ncr
