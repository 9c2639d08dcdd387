#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ncr/ncr.hpp"

namespace ncr::testing {

// Collects warnings instead of printing them, restoring the old handler on exit.
class CapturedWarnings {
 public:
  CapturedWarnings()
      : previous_(set_warning_handler([this](const std::string& m) { messages.push_back(m); })) {}
  ~CapturedWarnings() { set_warning_handler(previous_); }
  CapturedWarnings(const CapturedWarnings&) = delete;
  CapturedWarnings& operator=(const CapturedWarnings&) = delete;

  std::vector<std::string> messages;

 private:
  WarningHandler previous_;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Per-user item lists -> InteractionSet with timestamps in list order.
inline InteractionSet make_set(const std::vector<std::vector<Index>>& lists, std::size_t items) {
  std::vector<std::vector<Interaction>> per_user(lists.size());
  for (std::size_t u = 0; u < lists.size(); ++u)
    for (std::size_t t = 0; t < lists[u].size(); ++t)
      per_user[u].push_back({lists[u][t], static_cast<std::int64_t>(t)});
  return InteractionSet(std::move(per_user), items);
}

// Every parameter redrawn from N(0, scale^2), so gradient checks do not sit
// in the near-linear regime of a fresh initialization.
template <typename M>
void randomize(M& params, Rng& rng, double scale = 0.5) {
  for_each_tensor(params, [&](const auto&, DenseMatrix& t) {
    for (double& v : t.values()) v = rng.normal() * scale;
  });
}

inline std::vector<LabeledTriplet> random_batch(Rng& rng, std::size_t users, std::size_t items, std::size_t size) {
  std::vector<LabeledTriplet> b;
  for (std::size_t k = 0; k < size; ++k) {
    LabeledTriplet t{static_cast<Index>(rng.below(users)), static_cast<Index>(rng.below(items)), 0,
                     static_cast<std::uint8_t>(rng.below(2))};
    do t.j = static_cast<Index>(rng.below(items));
    while (t.j == t.i);
    b.push_back(t);
  }
  return b;
}

// Max relative error of backward() against central differences of the mean
// batch BCE, over `draws` random parameter sets and batches.
template <typename Make>
double worst_gradient_error(Make&& make, int draws, std::uint64_t seed) {
  Rng rng({seed});
  double worst = 0.0;
  for (int d = 0; d < draws; ++d) {
    auto p = make();
    randomize(p, rng);
    const auto batch = random_batch(rng, p.users(), p.items(), 1 + rng.below(3));
    const auto analytic = flatten(backward(p, batch).grad);
    const auto x = flatten(p);
    const auto numeric = finite_diff_grad(
        [&](std::span<const double> v) {
          auto q = p;
          unflatten(q, v);
          return mean_bce(q, batch);
        },
        x, 1e-5);
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, relative_error(analytic[k], numeric[k]));
  }
  return worst;
}

// Same check for the BPR criterion, per sampled (u, i, j), with lambda varied per draw.
inline double worst_bpr_gradient_error(int draws, std::uint64_t seed) {
  Rng rng({seed});
  double worst = 0.0;
  for (int d = 0; d < draws; ++d) {
    auto p = BprParams::random(4, 6, 3, {static_cast<std::uint64_t>(d)}, 0.05, 0.01 + 0.1 * rng.uniform());
    randomize(p, rng);
    const Index u = static_cast<Index>(rng.below(4)), i = static_cast<Index>(rng.below(6));
    Index j = static_cast<Index>(rng.below(5));
    if (j >= i) ++j;
    BprParams grad{DenseMatrix(p.users(), p.dim()), DenseMatrix(p.items(), p.dim())};
    bpr_accumulate_gradient(p, u, i, j, grad);
    Vector x, analytic;
    for_each_tensor(p, [&](const auto&, const DenseMatrix& t) { x.insert(x.end(), t.values().begin(), t.values().end()); });
    for_each_tensor(grad, [&](const auto&, const DenseMatrix& t) {
      analytic.insert(analytic.end(), t.values().begin(), t.values().end());
    });
    const auto numeric = finite_diff_grad(
        [&](std::span<const double> v) {
          BprParams q = p;
          std::copy_n(v.begin(), q.user.size(), q.user.values().begin());
          std::copy(v.begin() + static_cast<std::ptrdiff_t>(q.user.size()), v.end(), q.item.values().begin());
          return bpr_objective(q, u, i, j);
        },
        x, 1e-5);
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, relative_error(analytic[k], numeric[k]));
  }
  return worst;
}

}  // namespace ncr::testing
