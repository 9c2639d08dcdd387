#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ncr/data.hpp"
#include "ncr/numerics.hpp"

namespace ncr {

// ---- model concepts ----------------------------------------------------------

/// Anything that scores a (user, item, item) triplet with a probability that
/// the user prefers the first item.
template <typename M>
concept PairwiseModel = requires(const M& m, Index u, Index i, Index j) {
  { predict(m, u, i, j) } -> std::convertible_to<double>;
};

/// A pairwise model whose parameters are a fixed list of dense tensors and
/// whose BCE gradient can be accumulated triplet by triplet.
template <typename M>
concept TrainableModel =
    PairwiseModel<M> && std::copyable<M> &&
    requires(const M& cm, M& m, const LabeledTriplet& t, double scale) {
      { accumulate_gradient(cm, t, m, scale) } -> std::convertible_to<double>;
      for_each_tensor(m, [](const char*, DenseMatrix&) {});
      for_each_tensor(cm, [](const char*, const DenseMatrix&) {});
    };

inline double bce_loss(double y_hat, int y) {
  const double p = clamp_probability(y_hat);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

namespace detail {

inline void check_ids(std::size_t users, std::size_t items, Index u, Index i, Index j) {
  if (u >= users || i >= items || j >= items) {
    throw std::out_of_range("triplet (" + std::to_string(u) + ", " + std::to_string(i) + ", " +
                            std::to_string(j) + ") out of range for " + std::to_string(users) +
                            " users, " + std::to_string(items) + " items");
  }
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t k = 0; k < x.size(); ++k) y[k] += a * x[k];
}

}  // namespace detail

// ---- NBPR --------------------------------------------------------------------

/// Element-wise-product head with a learned output edge weight split into the
/// observed-side half `w_pos` and unobserved-side half `w_neg`.
struct NbprParams {
  DenseMatrix user;   // m x k
  DenseMatrix item;   // n x k
  DenseMatrix w_pos;  // k x 1
  DenseMatrix w_neg;  // k x 1

  std::size_t users() const { return user.rows(); }
  std::size_t items() const { return item.rows(); }
  std::size_t dim() const { return user.cols(); }
  std::size_t factors() const { return 2 * dim(); }

  /// `factors` is the width of the last hidden layer; each embedding has
  /// factors / 2 dimensions.
  static NbprParams random(std::size_t users, std::size_t items, std::size_t factors,
                           RngSeed seed) {
    if (factors < 2 || factors % 2 != 0) {
      throw std::invalid_argument("NBPR needs an even number of predictive factors, got " +
                                  std::to_string(factors));
    }
    const std::size_t k = factors / 2;
    Rng rng(seed);
    NbprParams p{DenseMatrix(users, k), DenseMatrix(items, k), DenseMatrix(k, 1),
                 DenseMatrix(k, 1)};
    for_each(p, [&](const char*, DenseMatrix& t) { gaussian_fill(t, rng); });
    return p;
  }

  template <typename Self, typename F>
  static void for_each(Self& p, F&& f) {
    f("nbpr.user", p.user);
    f("nbpr.item", p.item);
    f("nbpr.w_pos", p.w_pos);
    f("nbpr.w_neg", p.w_neg);
  }
};

inline void for_each_tensor(NbprParams& p, auto&& f) { NbprParams::for_each(p, f); }
inline void for_each_tensor(const NbprParams& p, auto&& f) { NbprParams::for_each(p, f); }

namespace detail {

inline double product_logit(const DenseMatrix& user, const DenseMatrix& item,
                            std::span<const double> w_pos, std::span<const double> w_neg,
                            Index u, Index i, Index j) {
  const auto pu = user.row(u), qi = item.row(i), qj = item.row(j);
  double z = 0.0;
  for (std::size_t k = 0; k < pu.size(); ++k) z += pu[k] * (w_pos[k] * qi[k] - w_neg[k] * qj[k]);
  return z;
}

/// Adds scale * d(product_logit)/d(theta) into the gradient tensors.
inline void product_backward(const DenseMatrix& user, const DenseMatrix& item,
                             std::span<const double> w_pos, std::span<const double> w_neg,
                             Index u, Index i, Index j, double dz, DenseMatrix& g_user,
                             DenseMatrix& g_item, std::span<double> g_w_pos,
                             std::span<double> g_w_neg) {
  const auto pu = user.row(u), qi = item.row(i), qj = item.row(j);
  auto gu = g_user.row(u), gi = g_item.row(i), gj = g_item.row(j);
  for (std::size_t k = 0; k < pu.size(); ++k) {
    g_w_pos[k] += dz * pu[k] * qi[k];
    g_w_neg[k] -= dz * pu[k] * qj[k];
    gu[k] += dz * (w_pos[k] * qi[k] - w_neg[k] * qj[k]);
    gi[k] += dz * w_pos[k] * pu[k];
    gj[k] -= dz * w_neg[k] * pu[k];
  }
}

}  // namespace detail

/// Pre-sigmoid score w_pos . (U_u * V_i) - w_neg . (U_u * V_j).
inline double logit(const NbprParams& p, Index u, Index i, Index j) {
  detail::check_ids(p.users(), p.items(), u, i, j);
  return detail::product_logit(p.user, p.item, p.w_pos.values(), p.w_neg.values(), u, i, j);
}

inline double predict(const NbprParams& p, Index u, Index i, Index j) {
  return sigmoid(logit(p, u, i, j));
}

inline double nbpr_forward(const NbprParams& p, Index u, Index i, Index j) {
  return predict(p, u, i, j);
}

inline double accumulate_gradient(const NbprParams& p, const LabeledTriplet& t, NbprParams& grad,
                                  double scale) {
  const double y_hat = predict(p, t.u, t.i, t.j);
  const double dz = scale * (y_hat - t.y);
  detail::product_backward(p.user, p.item, p.w_pos.values(), p.w_neg.values(), t.u, t.i, t.j, dz,
                           grad.user, grad.item, grad.w_pos.values(), grad.w_neg.values());
  return bce_loss(y_hat, t.y);
}

// ---- tanh tower (DNCR) -------------------------------------------------------

/// Layer widths of the tower for `factors` predictive factors and
/// `hidden_layers` hidden layers, the concatenation counting as the first.
/// Element 0 is the concat width 3d; the last element is the predictive width.
/// Embedding size d = 2^(H-2) * factors, so a single hidden layer is the bare
/// concatenation with d = factors / 2.
inline std::vector<std::size_t> tower_widths(std::size_t factors, std::size_t hidden_layers) {
  if (factors < 1) throw std::invalid_argument("tower needs at least one predictive factor");
  if (hidden_layers < 1 || hidden_layers > 6) {
    throw std::invalid_argument("tower hidden layer count must be in [1, 6], got " +
                                std::to_string(hidden_layers));
  }
  if (hidden_layers == 1) {
    if (factors % 2 != 0) {
      throw std::invalid_argument("a one-layer tower needs an even number of predictive factors, got " +
                                  std::to_string(factors));
    }
    return {3 * (factors / 2)};
  }
  const std::size_t d = factors << (hidden_layers - 2);
  std::vector<std::size_t> widths{3 * d};
  for (std::size_t w = d; widths.size() < hidden_layers; w /= 2) widths.push_back(w);
  return widths;
}

struct Tower {
  DenseMatrix user;                  // m x d
  DenseMatrix item;                  // n x d
  std::vector<DenseMatrix> weights;  // layer l: width[l+1] x width[l]
  std::vector<DenseMatrix> biases;   // layer l: width[l+1] x 1

  std::size_t dim() const { return user.cols(); }
  std::size_t hidden_layers() const { return weights.size() + 1; }
  std::size_t top_width() const { return weights.empty() ? 3 * dim() : weights.back().rows(); }

  static Tower random(std::size_t users, std::size_t items, std::size_t factors,
                      std::size_t hidden_layers, Rng& rng) {
    const auto widths = tower_widths(factors, hidden_layers);
    const std::size_t d = widths[0] / 3;
    Tower t{DenseMatrix(users, d), DenseMatrix(items, d), {}, {}};
    for (std::size_t l = 1; l < widths.size(); ++l) {
      t.weights.emplace_back(widths[l], widths[l - 1]);
      t.biases.emplace_back(widths[l], 1);
    }
    for_each(t, "", [&](const std::string&, DenseMatrix& m) { gaussian_fill(m, rng); });
    return t;
  }

  template <typename Self, typename F>
  static void for_each(Self& t, const std::string& prefix, F&& f) {
    f(prefix + "user", t.user);
    f(prefix + "item", t.item);
    for (std::size_t l = 0; l < t.weights.size(); ++l) {
      f(prefix + "layer" + std::to_string(l) + ".weights", t.weights[l]);
      f(prefix + "layer" + std::to_string(l) + ".bias", t.biases[l]);
    }
  }
};

/// Forward activations kept for backpropagation.
struct TowerTrace {
  Vector input;                     // [U_u; V_i; -V_j]
  std::vector<Vector> activations;  // tanh output of each dense layer

  std::span<const double> top() const {
    return activations.empty() ? std::span<const double>(input) : activations.back();
  }
};

namespace detail {

inline void tower_forward(const Tower& t, Index u, Index i, Index j, TowerTrace& trace) {
  const std::size_t d = t.dim();
  trace.input.resize(3 * d);
  const auto pu = t.user.row(u), qi = t.item.row(i), qj = t.item.row(j);
  for (std::size_t k = 0; k < d; ++k) {
    trace.input[k] = pu[k];
    trace.input[d + k] = qi[k];
    trace.input[2 * d + k] = -qj[k];
  }
  trace.activations.resize(t.weights.size());
  std::span<const double> prev = trace.input;
  for (std::size_t l = 0; l < t.weights.size(); ++l) {
    auto& a = trace.activations[l];
    a.resize(t.weights[l].rows());
    affine_into(t.weights[l], prev, t.biases[l].values(), a);
    for (double& v : a) v = tanh_act(v);
    prev = a;
  }
}

/// Backpropagates d_top (gradient w.r.t. the tower's top output) into `grad`.
inline void tower_backward(const Tower& t, const TowerTrace& trace, Index u, Index i, Index j,
                           std::span<const double> d_top, Tower& grad) {
  Vector delta(d_top.begin(), d_top.end());
  Vector next;
  for (std::size_t l = t.weights.size(); l-- > 0;) {
    const auto& a = trace.activations[l];
    for (std::size_t r = 0; r < a.size(); ++r) delta[r] *= 1.0 - a[r] * a[r];
    const std::span<const double> in =
        l == 0 ? std::span<const double>(trace.input) : trace.activations[l - 1];
    auto& gw = grad.weights[l];
    auto gb = grad.biases[l].values();
    next.assign(in.size(), 0.0);
    for (std::size_t r = 0; r < a.size(); ++r) {
      gb[r] += delta[r];
      axpy(delta[r], in, gw.row(r));
      axpy(delta[r], t.weights[l].row(r), next);
    }
    delta.swap(next);
  }
  const std::size_t d = t.dim();
  auto gu = grad.user.row(u), gi = grad.item.row(i), gj = grad.item.row(j);
  for (std::size_t k = 0; k < d; ++k) {
    gu[k] += delta[k];
    gi[k] += delta[d + k];
    gj[k] -= delta[2 * d + k];
  }
}

inline TowerTrace& scratch_trace() {
  thread_local TowerTrace trace;
  return trace;
}

}  // namespace detail

/// Deep model: concatenated embeddings through a tanh tower, sigmoid output.
struct DncrParams {
  Tower tower;
  DenseMatrix w_out;  // top_width x 1

  std::size_t users() const { return tower.user.rows(); }
  std::size_t items() const { return tower.item.rows(); }
  std::size_t factors() const { return tower.weights.empty() ? 2 * tower.dim() : tower.top_width(); }
  std::size_t hidden_layers() const { return tower.hidden_layers(); }

  static DncrParams random(std::size_t users, std::size_t items, std::size_t factors,
                           std::size_t hidden_layers, RngSeed seed) {
    Rng rng(seed);
    DncrParams p{Tower::random(users, items, factors, hidden_layers, rng), {}};
    p.w_out = DenseMatrix(p.tower.top_width(), 1);
    gaussian_fill(p.w_out, rng);
    return p;
  }
};

inline void for_each_tensor(DncrParams& p, auto&& f) {
  Tower::for_each(p.tower, "dncr.", [&](const std::string& n, DenseMatrix& m) { f(n.c_str(), m); });
  f("dncr.w_out", p.w_out);
}
inline void for_each_tensor(const DncrParams& p, auto&& f) {
  Tower::for_each(p.tower, "dncr.",
                  [&](const std::string& n, const DenseMatrix& m) { f(n.c_str(), m); });
  f("dncr.w_out", p.w_out);
}

inline double logit(const DncrParams& p, Index u, Index i, Index j) {
  detail::check_ids(p.users(), p.items(), u, i, j);
  auto& trace = detail::scratch_trace();
  detail::tower_forward(p.tower, u, i, j, trace);
  return dot(p.w_out.values(), trace.top());
}

inline double predict(const DncrParams& p, Index u, Index i, Index j) {
  return sigmoid(logit(p, u, i, j));
}

inline double dncr_forward(const DncrParams& p, Index u, Index i, Index j) {
  return predict(p, u, i, j);
}

inline double accumulate_gradient(const DncrParams& p, const LabeledTriplet& t, DncrParams& grad,
                                  double scale) {
  detail::check_ids(p.users(), p.items(), t.u, t.i, t.j);
  auto& trace = detail::scratch_trace();
  detail::tower_forward(p.tower, t.u, t.i, t.j, trace);
  const auto top = trace.top();
  const double y_hat = sigmoid(dot(p.w_out.values(), top));
  const double dz = scale * (y_hat - t.y);
  detail::axpy(dz, top, grad.w_out.values());
  Vector d_top(p.w_out.values().begin(), p.w_out.values().end());
  for (double& v : d_top) v *= dz;
  detail::tower_backward(p.tower, trace, t.u, t.i, t.j, d_top, grad.tower);
  return bce_loss(y_hat, t.y);
}

// ---- NeuPR -------------------------------------------------------------------

/// Product head and tanh tower on separate embeddings, fused by one output
/// edge weight over [f_product; f_tower]. `w_out` holds the product half
/// (w_pos then w_neg, k each) followed by the tower half.
struct NeuprParams {
  DenseMatrix user;  // m x k, product head
  DenseMatrix item;  // n x k, product head
  Tower tower;
  DenseMatrix w_out;  // (2k + top_width) x 1

  std::size_t users() const { return user.rows(); }
  std::size_t items() const { return item.rows(); }
  std::size_t product_dim() const { return user.cols(); }
  std::size_t factors() const { return tower.weights.empty() ? 2 * tower.dim() : tower.top_width(); }
  std::size_t hidden_layers() const { return tower.hidden_layers(); }

  std::span<const double> w_pos() const { return w_out.values().subspan(0, product_dim()); }
  std::span<const double> w_neg() const {
    return w_out.values().subspan(product_dim(), product_dim());
  }
  std::span<const double> w_tower() const { return w_out.values().subspan(2 * product_dim()); }

  static NeuprParams random(std::size_t users, std::size_t items, std::size_t factors,
                            std::size_t hidden_layers, RngSeed seed) {
    if (factors < 2 || factors % 2 != 0) {
      throw std::invalid_argument("NeuPR needs an even number of predictive factors, got " +
                                  std::to_string(factors));
    }
    Rng rng(seed);
    const std::size_t k = factors / 2;
    NeuprParams p{DenseMatrix(users, k), DenseMatrix(items, k), {}, {}};
    gaussian_fill(p.user, rng);
    gaussian_fill(p.item, rng);
    p.tower = Tower::random(users, items, factors, hidden_layers, rng);
    p.w_out = DenseMatrix(2 * k + p.tower.top_width(), 1);
    gaussian_fill(p.w_out, rng);
    return p;
  }
};

inline void for_each_tensor(NeuprParams& p, auto&& f) {
  f("neupr.user", p.user);
  f("neupr.item", p.item);
  Tower::for_each(p.tower, "neupr.tower.",
                  [&](const std::string& n, DenseMatrix& m) { f(n.c_str(), m); });
  f("neupr.w_out", p.w_out);
}
inline void for_each_tensor(const NeuprParams& p, auto&& f) {
  f("neupr.user", p.user);
  f("neupr.item", p.item);
  Tower::for_each(p.tower, "neupr.tower.",
                  [&](const std::string& n, const DenseMatrix& m) { f(n.c_str(), m); });
  f("neupr.w_out", p.w_out);
}

inline double logit(const NeuprParams& p, Index u, Index i, Index j) {
  detail::check_ids(p.users(), p.items(), u, i, j);
  auto& trace = detail::scratch_trace();
  detail::tower_forward(p.tower, u, i, j, trace);
  return detail::product_logit(p.user, p.item, p.w_pos(), p.w_neg(), u, i, j) +
         dot(p.w_tower(), trace.top());
}

inline double predict(const NeuprParams& p, Index u, Index i, Index j) {
  return sigmoid(logit(p, u, i, j));
}

inline double neupr_forward(const NeuprParams& p, Index u, Index i, Index j) {
  return predict(p, u, i, j);
}

inline double accumulate_gradient(const NeuprParams& p, const LabeledTriplet& t,
                                  NeuprParams& grad, double scale) {
  detail::check_ids(p.users(), p.items(), t.u, t.i, t.j);
  auto& trace = detail::scratch_trace();
  detail::tower_forward(p.tower, t.u, t.i, t.j, trace);
  const auto top = trace.top();
  const double z = detail::product_logit(p.user, p.item, p.w_pos(), p.w_neg(), t.u, t.i, t.j) +
                   dot(p.w_tower(), top);
  const double y_hat = sigmoid(z);
  const double dz = scale * (y_hat - t.y);

  const std::size_t k = p.product_dim();
  auto gw = grad.w_out.values();
  detail::product_backward(p.user, p.item, p.w_pos(), p.w_neg(), t.u, t.i, t.j, dz, grad.user,
                           grad.item, gw.subspan(0, k), gw.subspan(k, k));
  detail::axpy(dz, top, gw.subspan(2 * k));
  Vector d_top(p.w_tower().begin(), p.w_tower().end());
  for (double& v : d_top) v *= dz;
  detail::tower_backward(p.tower, trace, t.u, t.i, t.j, d_top, grad.tower);
  return bce_loss(y_hat, t.y);
}

// ---- generic parameter utilities --------------------------------------------

template <TrainableModel M>
M zeros_like(const M& params) {
  M out = params;
  for_each_tensor(out, [](const auto&, DenseMatrix& t) { t.fill(0.0); });
  return out;
}

template <TrainableModel M>
std::size_t parameter_count(const M& params) {
  std::size_t n = 0;
  for_each_tensor(params, [&](const auto&, const DenseMatrix& t) { n += t.size(); });
  return n;
}

/// Concatenates every tensor in visiting order.
template <TrainableModel M>
Vector flatten(const M& params) {
  Vector out;
  for_each_tensor(params, [&](const auto&, const DenseMatrix& t) {
    out.insert(out.end(), t.values().begin(), t.values().end());
  });
  return out;
}

template <TrainableModel M>
void unflatten(M& params, std::span<const double> values) {
  if (values.size() != parameter_count(params)) {
    throw ShapeError("unflatten: expected " + std::to_string(parameter_count(params)) +
                     " values, got " + std::to_string(values.size()));
  }
  std::size_t offset = 0;
  for_each_tensor(params, [&](const auto&, DenseMatrix& t) {
    auto dst = t.values();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  });
}

template <TrainableModel M>
bool all_finite(const M& params) {
  bool ok = true;
  for_each_tensor(params, [&](const auto&, const DenseMatrix& t) { ok = ok && t.all_finite(); });
  return ok;
}

template <TrainableModel M>
struct BatchGradient {
  M grad;
  double loss_sum = 0.0;  // sum of per-instance BCE
  std::size_t count = 0;

  double mean_loss() const { return count == 0 ? 0.0 : loss_sum / static_cast<double>(count); }
};

/// Gradient of the mean BCE over `batch` w.r.t. every parameter tensor.
template <TrainableModel M>
BatchGradient<M> backward(const M& params, std::span<const LabeledTriplet> batch) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  BatchGradient<M> out{zeros_like(params), 0.0, batch.size()};
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& t : batch) out.loss_sum += accumulate_gradient(params, t, out.grad, scale);
  return out;
}

/// Mean BCE over a batch, forward only.
template <PairwiseModel M>
double mean_bce(const M& params, std::span<const LabeledTriplet> batch) {
  double s = 0.0;
  for (const auto& t : batch) s += bce_loss(predict(params, t.u, t.i, t.j), t.y);
  return batch.empty() ? 0.0 : s / static_cast<double>(batch.size());
}

// ---- BPR-MF as a degenerate network -------------------------------------------

/// Output of a hidden-layer-free network with the element-wise-product
/// interaction, all-ones edge weight and a_out(x) = -log(1 + e^{-x}):
/// ln sigmoid(U_u . V_i - U_u . V_j).
inline double degenerate_bpr_forward(const DenseMatrix& user, const DenseMatrix& item, Index u,
                                     Index i, Index j) {
  detail::check_ids(user.rows(), item.rows(), u, i, j);
  const auto pu = user.row(u);
  const double x = dot(pu, item.row(i)) - dot(pu, item.row(j));
  return log_sigmoid(x);
}

// ---- pre-training fusion -----------------------------------------------------

struct FusionConfig {
  double alpha = 0.5;
};

/// Builds NeuPR from trained NBPR and DNCR donors. Embeddings and dense
/// layers are copied; the output weight becomes [alpha*w_nbpr; (1-alpha)*w_dncr].
inline NeuprParams fuse_pretrained(const NbprParams& nbpr, const DncrParams& dncr,
                                   FusionConfig cfg) {
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) {
    throw std::invalid_argument("fusion alpha must be in [0, 1], got " + std::to_string(cfg.alpha));
  }
  if (nbpr.users() != dncr.users()) {
    throw ShapeError("fuse_pretrained: nbpr.user has " + std::to_string(nbpr.users()) +
                     " rows but dncr.user has " + std::to_string(dncr.users()));
  }
  if (nbpr.items() != dncr.items()) {
    throw ShapeError("fuse_pretrained: nbpr.item has " + std::to_string(nbpr.items()) +
                     " rows but dncr.item has " + std::to_string(dncr.items()));
  }
  if (nbpr.factors() != dncr.factors()) {
    throw ShapeError("fuse_pretrained: nbpr.w_pos/w_neg give " + std::to_string(nbpr.factors()) +
                     " predictive factors but dncr.w_out has " + std::to_string(dncr.factors()));
  }
  const std::size_t k = nbpr.dim();
  NeuprParams out{nbpr.user, nbpr.item, dncr.tower, DenseMatrix(2 * k + dncr.w_out.rows(), 1)};
  auto w = out.w_out.values();
  for (std::size_t r = 0; r < k; ++r) {
    w[r] = cfg.alpha * nbpr.w_pos.values()[r];
    w[k + r] = cfg.alpha * nbpr.w_neg.values()[r];
  }
  for (std::size_t r = 0; r < dncr.w_out.rows(); ++r) {
    w[2 * k + r] = (1.0 - cfg.alpha) * dncr.w_out.values()[r];
  }
  return out;
}

}  // namespace ncr
