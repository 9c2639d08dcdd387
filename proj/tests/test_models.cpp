#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "support.hpp"

using namespace ncr;
using ncr::testing::randomize;
using ncr::testing::random_batch;
using ncr::testing::worst_gradient_error;
using ncr::testing::relative_error;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

NbprParams nbpr_k2() {
  NbprParams p{DenseMatrix::from_rows({{1, 0}}), DenseMatrix::from_rows({{1, 1}, {0, 1}}),
               DenseMatrix::from_rows({{1}, {1}}), DenseMatrix::from_rows({{1}, {1}})};
  return p;
}

// d = 1, one dense layer 3 -> 2.
Tower tiny_tower() {
  Tower t{DenseMatrix::from_rows({{0.5}}), DenseMatrix::from_rows({{0.2}, {-0.3}}),
          {DenseMatrix::from_rows({{1, 0, -1}, {0.5, 0.5, 0.5}})},
          {DenseMatrix::from_rows({{0.1}, {-0.2}})}};
  return t;
}

// Hand trace of tiny_tower for (u=0, i=0, j=1): input [0.5, 0.2, 0.3].
double tiny_tower_logit_with(double w0, double w1) {
  const double h0 = std::tanh(1 * 0.5 + 0 * 0.2 - 1 * 0.3 + 0.1);
  const double h1 = std::tanh(0.5 * 0.5 + 0.5 * 0.2 + 0.5 * 0.3 - 0.2);
  return w0 * h0 + w1 * h1;
}

}  // namespace

// ---- NBPR --------------------------------------------------------------------

TEST(Nbpr, IdenticalItemsAndWeightsGiveOneHalf) {
  auto p = NbprParams::random(3, 4, 6, {1});
  for (std::size_t c = 0; c < p.dim(); ++c) p.item(2, c) = p.item(1, c);
  p.w_neg = p.w_pos;
  EXPECT_EQ(nbpr_forward(p, 0, 1, 2), 0.5);
}

TEST(Nbpr, HandEvaluatedInnerProducts) {
  EXPECT_NEAR(nbpr_forward(nbpr_k2(), 0, 0, 1), sig(1.0), 1e-15);
  EXPECT_NEAR(nbpr_forward(nbpr_k2(), 0, 0, 1), 0.731059, 1e-6);
}

TEST(Nbpr, EqualHalvesAreAntisymmetric) {
  Rng rng({2});
  for (int d = 0; d < 200; ++d) {
    auto p = NbprParams::random(5, 6, 8, {static_cast<std::uint64_t>(d)});
    randomize(p, rng);
    p.w_neg = p.w_pos;
    const Index u = rng.below(5), i = rng.below(6), j = rng.below(6);
    EXPECT_NEAR(nbpr_forward(p, u, i, j) + nbpr_forward(p, u, j, i), 1.0, 1e-12);
  }
}

TEST(Nbpr, EmbeddingIsHalfThePredictiveFactors) {
  const auto p = NbprParams::random(3, 4, 8, {1});
  EXPECT_EQ(p.dim(), 4u);
  EXPECT_EQ(p.factors(), 8u);
  EXPECT_THROW(NbprParams::random(3, 4, 7, {1}), std::invalid_argument);
}

TEST(Nbpr, OutOfRangeIdsThrow) {
  const auto p = NbprParams::random(3, 4, 4, {1});
  EXPECT_THROW(nbpr_forward(p, 3, 0, 1), std::out_of_range);
  EXPECT_THROW(nbpr_forward(p, 0, 4, 1), std::out_of_range);
  EXPECT_THROW(nbpr_forward(p, 0, 0, 9), std::out_of_range);
}

// ---- DNCR --------------------------------------------------------------------

TEST(Dncr, EightFactorsFourLayersGivesPublishedArchitecture) {
  EXPECT_EQ(tower_widths(8, 4), (std::vector<std::size_t>{96, 32, 16, 8}));
  const auto p = DncrParams::random(3, 4, 8, 4, {1});
  EXPECT_EQ(p.tower.dim(), 32u);
  ASSERT_EQ(p.tower.weights.size(), 3u);
  EXPECT_EQ(p.tower.weights[0].shape_string(), "32x96");
  EXPECT_EQ(p.tower.weights[1].shape_string(), "16x32");
  EXPECT_EQ(p.tower.weights[2].shape_string(), "8x16");
  EXPECT_EQ(p.w_out.rows(), 8u);
  EXPECT_EQ(p.factors(), 8u);
}

TEST(Dncr, LayerCountsOneToSix) {
  EXPECT_EQ(tower_widths(8, 1), (std::vector<std::size_t>{12}));
  EXPECT_EQ(tower_widths(8, 2), (std::vector<std::size_t>{24, 8}));
  EXPECT_EQ(tower_widths(8, 3), (std::vector<std::size_t>{48, 16, 8}));
  EXPECT_EQ(tower_widths(8, 6).front(), 384u);
  EXPECT_EQ(tower_widths(8, 6).back(), 8u);
  EXPECT_THROW(tower_widths(8, 0), std::invalid_argument);
  EXPECT_THROW(tower_widths(8, 7), std::invalid_argument);
  EXPECT_THROW(tower_widths(5, 1), std::invalid_argument);
  const auto one = DncrParams::random(3, 4, 8, 1, {1});
  EXPECT_EQ(one.w_out.rows(), 12u);
  EXPECT_EQ(one.factors(), 8u);
}

TEST(Dncr, AllZeroWeightsGiveOneHalf) {
  auto p = DncrParams::random(3, 4, 8, 4, {3});
  for (auto& w : p.tower.weights) w.fill(0.0);
  for (auto& b : p.tower.biases) b.fill(0.0);
  p.w_out.fill(0.0);
  EXPECT_EQ(dncr_forward(p, 1, 2, 3), 0.5);
}

TEST(Dncr, HandTracedOneLayerInstance) {
  const DncrParams p{tiny_tower(), DenseMatrix::from_rows({{1}, {-2}})};
  EXPECT_NEAR(dncr_forward(p, 0, 0, 1), sig(tiny_tower_logit_with(1, -2)), 1e-12);
}

// ---- NeuPR -------------------------------------------------------------------

TEST(Neupr, ZeroTowerHalfReducesToNbpr) {
  Rng rng({4});
  for (int d = 0; d < 20; ++d) {
    auto p = NeuprParams::random(4, 5, 8, 3, {static_cast<std::uint64_t>(d)});
    randomize(p, rng);
    auto w = p.w_out.values();
    for (std::size_t r = 2 * p.product_dim(); r < w.size(); ++r) w[r] = 0.0;
    for (auto& m : p.tower.weights) m.fill(0.0);
    NbprParams n{p.user, p.item, DenseMatrix::column(p.w_pos()), DenseMatrix::column(p.w_neg())};
    const Index u = rng.below(4), i = rng.below(5), j = rng.below(5);
    EXPECT_EQ(neupr_forward(p, u, i, j), nbpr_forward(n, u, i, j));
  }
}

TEST(Neupr, ZeroOutputWeightsGiveOneHalf) {
  auto p = NeuprParams::random(3, 4, 8, 4, {5});
  p.w_out.fill(0.0);
  EXPECT_EQ(neupr_forward(p, 0, 1, 2), 0.5);
}

TEST(Neupr, HandTracedTinyInstance) {
  // k_N = 1: U = 2, V_i = 1, V_j = 0.5; w_pos = 0.3, w_neg = 0.4.
  NeuprParams p{DenseMatrix::from_rows({{2}}), DenseMatrix::from_rows({{1}, {0.5}}), tiny_tower(),
                DenseMatrix::from_rows({{0.3}, {0.4}, {1}, {-2}})};
  const double product = 0.3 * 2 * 1 - 0.4 * 2 * 0.5;
  EXPECT_NEAR(neupr_forward(p, 0, 0, 1), sig(product + tiny_tower_logit_with(1, -2)), 1e-12);
}

TEST(Neupr, OutputHeadIsTwicePredictiveFactors) {
  const auto p = NeuprParams::random(3, 4, 8, 4, {1});
  EXPECT_EQ(p.product_dim(), 4u);
  EXPECT_EQ(p.w_out.rows(), 16u);
  EXPECT_EQ(p.tower.top_width(), 8u);
}

TEST(Forward, AlwaysStrictlyInsideUnitInterval) {
  Rng rng({6});
  auto a = NbprParams::random(4, 5, 4, {1});
  auto b = DncrParams::random(4, 5, 4, 3, {1});
  auto c = NeuprParams::random(4, 5, 4, 3, {1});
  for (int d = 0; d < 200; ++d) {
    randomize(a, rng, 3.0);
    randomize(b, rng, 3.0);
    randomize(c, rng, 3.0);
    const Index u = rng.below(4), i = rng.below(5), j = rng.below(5);
    for (double y : {clamp_probability(nbpr_forward(a, u, i, j)), clamp_probability(dncr_forward(b, u, i, j)),
                     clamp_probability(neupr_forward(c, u, i, j))}) {
      EXPECT_GT(y, 0.0);
      EXPECT_LT(y, 1.0);
    }
  }
}

// ---- loss and gradients -------------------------------------------------------

TEST(BceLoss, KnownValues) {
  EXPECT_NEAR(bce_loss(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(0.5, 1), 0.693147, 1e-6);
  EXPECT_NEAR(bce_loss(1.0 - 1e-15, 1), 0.0, 1e-14);
  EXPECT_NEAR(bce_loss(0.9, 0), -std::log(0.1), 1e-12);
  EXPECT_NEAR(bce_loss(0.9, 0), 2.302585, 1e-6);
  EXPECT_TRUE(std::isfinite(bce_loss(1.0, 0)));
  EXPECT_TRUE(std::isfinite(bce_loss(0.0, 1)));
}

TEST(Gradient, NbprMatchesFiniteDifferences) {
  EXPECT_LT(worst_gradient_error([] { return NbprParams::random(4, 5, 6, {1}); }, 100, 10), 1e-4);
}

TEST(Gradient, DncrMatchesFiniteDifferences) {
  EXPECT_LT(worst_gradient_error([] { return DncrParams::random(4, 5, 8, 4, {1}); }, 100, 11), 1e-4);
}

TEST(Gradient, NeuprMatchesFiniteDifferences) {
  EXPECT_LT(worst_gradient_error([] { return NeuprParams::random(4, 5, 8, 4, {1}); }, 100, 12), 1e-4);
}

TEST(Gradient, OneLayerTowerMatchesFiniteDifferences) {
  EXPECT_LT(worst_gradient_error([] { return DncrParams::random(4, 5, 4, 1, {1}); }, 30, 13), 1e-4);
  EXPECT_LT(worst_gradient_error([] { return NeuprParams::random(4, 5, 4, 1, {1}); }, 30, 14), 1e-4);
}

TEST(Gradient, UntouchedEmbeddingRowsAreExactlyZero) {
  auto p = NeuprParams::random(6, 7, 8, 3, {2});
  Rng rng({3});
  randomize(p, rng);
  const std::vector<LabeledTriplet> batch{{1, 2, 4, 1}, {3, 4, 5, 0}};
  const auto g = backward(p, batch).grad;
  for (Index u : {0u, 2u, 4u, 5u}) {
    for (double v : g.user.row(u)) EXPECT_EQ(v, 0.0);
    for (double v : g.tower.user.row(u)) EXPECT_EQ(v, 0.0);
  }
  for (Index i : {0u, 1u, 3u, 6u}) {
    for (double v : g.item.row(i)) EXPECT_EQ(v, 0.0);
    for (double v : g.tower.item.row(i)) EXPECT_EQ(v, 0.0);
  }
}

TEST(Gradient, DuplicatedTripletDoublesItsContribution) {
  auto p = DncrParams::random(4, 5, 8, 4, {2});
  Rng rng({4});
  randomize(p, rng);
  const LabeledTriplet t{1, 2, 3, 1};
  auto once = zeros_like(p), twice = zeros_like(p);
  accumulate_gradient(p, t, once, 1.0);
  accumulate_gradient(p, t, twice, 1.0);
  accumulate_gradient(p, t, twice, 1.0);
  const auto a = flatten(once), b = flatten(twice);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(b[k], 2.0 * a[k], 1e-15 * std::max(1.0, std::abs(a[k])));
  // In a mean over a batch, the duplicate carries twice the weight of a singleton.
  const LabeledTriplet other{0, 4, 1, 0};
  const auto g_dup = flatten(backward(p, std::vector<LabeledTriplet>{t, t, other}).grad);
  auto single = zeros_like(p), rest = zeros_like(p);
  accumulate_gradient(p, t, single, 1.0);
  accumulate_gradient(p, other, rest, 1.0);
  const auto s = flatten(single), r = flatten(rest);
  for (std::size_t k = 0; k < s.size(); ++k) EXPECT_NEAR(g_dup[k], (2.0 * s[k] + r[k]) / 3.0, 1e-14);
}

TEST(Gradient, EmptyBatchIsRejected) {
  const auto p = NbprParams::random(2, 3, 2, {1});
  EXPECT_THROW(backward(p, std::vector<LabeledTriplet>{}), std::invalid_argument);
}

TEST(Gradient, FlattenRoundTrips) {
  auto p = NeuprParams::random(3, 4, 4, 2, {9});
  const auto v = flatten(p);
  EXPECT_EQ(v.size(), parameter_count(p));
  auto q = zeros_like(p);
  unflatten(q, v);
  EXPECT_EQ(flatten(q), v);
}

// ---- degenerate BPR ------------------------------------------------------------

TEST(DegenerateBpr, IdenticalItemsGiveMinusLnTwo) {
  const auto u = DenseMatrix::from_rows({{0.3, -1.2}});
  const auto v = DenseMatrix::from_rows({{0.5, 0.5}, {0.5, 0.5}});
  EXPECT_NEAR(degenerate_bpr_forward(u, v, 0, 0, 1), -std::log(2.0), 1e-15);
}

TEST(DegenerateBpr, HandInnerProducts) {
  const auto u = DenseMatrix::from_rows({{1, 2}});
  const auto v = DenseMatrix::from_rows({{1, 0}, {0, 1}});
  EXPECT_NEAR(degenerate_bpr_forward(u, v, 0, 0, 1), std::log(sig(-1.0)), 1e-15);
  EXPECT_NEAR(degenerate_bpr_forward(u, v, 0, 0, 1), -1.313262, 1e-6);
}

TEST(DegenerateBpr, EqualsNegatedBprSummand) {
  Rng rng({31});
  for (int d = 0; d < 1000; ++d) {
    DenseMatrix u(3, 4), v(5, 4);
    gaussian_fill(u, rng, 1.0);
    gaussian_fill(v, rng, 1.0);
    BprParams b{u, v, 0.05, 0.0};
    const Index uu = rng.below(3), i = rng.below(5), j = rng.below(5);
    EXPECT_NEAR(degenerate_bpr_forward(u, v, uu, i, j), -bpr_objective(b, uu, i, j), 1e-12);
  }
}

// ---- fusion ------------------------------------------------------------------

TEST(Fusion, HalfAlphaScalesBothHalves) {
  const auto n = NbprParams::random(4, 5, 8, {1});
  const auto d = DncrParams::random(4, 5, 8, 4, {2});
  const auto f = fuse_pretrained(n, d, {0.5});
  EXPECT_EQ(f.user, n.user);
  EXPECT_EQ(f.item, n.item);
  EXPECT_EQ(f.tower.weights, d.tower.weights);
  EXPECT_EQ(f.tower.user, d.tower.user);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(f.w_pos()[r], 0.5 * n.w_pos.values()[r]);
    EXPECT_EQ(f.w_neg()[r], 0.5 * n.w_neg.values()[r]);
  }
  for (std::size_t r = 0; r < 8; ++r) EXPECT_EQ(f.w_tower()[r], 0.5 * d.w_out.values()[r]);
}

TEST(Fusion, AlphaOneZeroesTheTowerHalf) {
  const auto f = fuse_pretrained(NbprParams::random(4, 5, 8, {1}), DncrParams::random(4, 5, 8, 4, {2}), {1.0});
  for (double v : f.w_tower()) EXPECT_EQ(v, 0.0);
}

TEST(Fusion, AlphaZeroWithZeroNbprDonorIsTheDncrPath) {
  auto n = NbprParams::random(4, 5, 8, {1});
  n.user.fill(0.0);
  n.item.fill(0.0);
  const auto d = DncrParams::random(4, 5, 8, 4, {2});
  auto d_big = d;
  Rng rng({8});
  randomize(d_big, rng);
  for (const DncrParams* donor : std::array<const DncrParams*, 2>{&d, &d_big}) {
    const auto f = fuse_pretrained(n, *donor, {0.0});
    for (Index u = 0; u < 4; ++u)
      for (Index i = 0; i < 5; ++i)
        for (Index j = 0; j < 5; ++j) EXPECT_NEAR(neupr_forward(f, u, i, j), dncr_forward(*donor, u, i, j), 1e-15);
  }
}

TEST(Fusion, AlphaOneWithZeroTowerDonorIsTheNbprPath) {
  const auto n = NbprParams::random(4, 5, 8, {1});
  auto d = DncrParams::random(4, 5, 8, 4, {2});
  d.w_out.fill(0.0);
  const auto f = fuse_pretrained(n, d, {1.0});
  for (Index i = 0; i < 5; ++i) EXPECT_EQ(logit(f, 2, i, (i + 1) % 5), logit(n, 2, i, (i + 1) % 5));
}

TEST(Fusion, MismatchNamesTheTensor) {
  const auto n = NbprParams::random(4, 5, 8, {1});
  auto expect_names = [&](const DncrParams& d, const std::string& name) {
    try {
      fuse_pretrained(n, d, {0.5});
      FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
      EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
    }
  };
  expect_names(DncrParams::random(3, 5, 8, 4, {2}), "user");
  expect_names(DncrParams::random(4, 6, 8, 4, {2}), "item");
  expect_names(DncrParams::random(4, 5, 16, 4, {2}), "w_out");
  EXPECT_THROW(fuse_pretrained(n, DncrParams::random(4, 5, 8, 4, {2}), {1.5}), std::invalid_argument);
}
