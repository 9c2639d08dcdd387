#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ncr {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles. Embedding tables store one entity per
/// row; layer weights store one output unit per row.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    DenseMatrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    m.values_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
      if (r.size() != m.cols_) throw ShapeError("from_rows: ragged initializer");
      m.values_.insert(m.values_.end(), r.begin(), r.end());
    }
    return m;
  }

  static DenseMatrix column(std::span<const double> v) {
    DenseMatrix m(v.size(), 1);
    std::copy(v.begin(), v.end(), m.values_.begin());
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }
  void scale(double s) {
    for (double& v : values_) v *= s;
  }

  bool same_shape(const DenseMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline DenseMatrix zeros_like(const DenseMatrix& m) { return DenseMatrix(m.rows(), m.cols()); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

/// out[r] = sum_c weights(r, c) * input[c] + bias[r]
inline void affine_into(const DenseMatrix& weights, std::span<const double> input,
                        std::span<const double> bias, std::span<double> out) {
  for (std::size_t r = 0; r < weights.rows(); ++r) out[r] = dot(weights.row(r), input) + bias[r];
}

inline Vector affine(const DenseMatrix& weights, std::span<const double> input,
                     std::span<const double> bias) {
  if (weights.cols() != input.size() || weights.rows() != bias.size()) {
    throw ShapeError("affine: weights " + weights.shape_string() + " incompatible with input " +
                     std::to_string(input.size()) + " and bias " + std::to_string(bias.size()));
  }
  Vector out(weights.rows());
  affine_into(weights, input, bias, out);
  return out;
}

inline constexpr double kProbabilityFloor = 1e-15;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Keeps probabilities away from {0, 1} before taking logarithms.
inline double clamp_probability(double p) {
  return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor);
}

inline double tanh_act(double x) { return std::tanh(x); }

/// ln sigmoid(x) = -log(1 + e^{-x}), evaluated without overflow.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

struct RngSeed {
  std::uint64_t value = 0;
  friend bool operator==(const RngSeed&, const RngSeed&) = default;
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed, e.g. one per epoch or per user.
inline RngSeed derive_seed(RngSeed base, std::uint64_t stream) {
  std::uint64_t s = base.value ^ (stream * 0xD1B54A32D192ED03ull);
  splitmix64(s);
  return RngSeed{splitmix64(s)};
}

/// std::mt19937_64 (whose output sequence the standard pins down) seeded
/// through SplitMix64. Distributions are implemented here because the
/// standard library's are implementation-defined, and streams must be
/// identical across toolchains.
class Rng {
 public:
  explicit Rng(RngSeed seed) {
    std::uint64_t s = seed.value;
    engine_.seed(splitmix64(s));
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound), unbiased (Lemire's multiply-and-reject).
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("Rng::below: bound must be positive");
    unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal via Box-Muller (one variate per pair of uniforms).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t k = items.size(); k > 1; --k) {
      const auto pick = static_cast<std::size_t>(below(k));
      std::swap(items[k - 1], items[pick]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

inline constexpr double kInitStddev = 0.01;

inline void gaussian_fill(DenseMatrix& m, Rng& rng, double stddev = kInitStddev) {
  for (double& v : m.values()) v = stddev * rng.normal();
}

inline DenseMatrix gaussian_init(std::size_t rows, std::size_t cols, RngSeed seed,
                                 double stddev = kInitStddev) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("gaussian_init: zero dimension " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  DenseMatrix m(rows, cols);
  Rng rng(seed);
  gaussian_fill(m, rng, stddev);
  return m;
}

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols, AdamConfig cfg)
      : first_moment(rows, cols), second_moment(rows, cols), config(cfg) {}
  explicit AdamState(const DenseMatrix& like, AdamConfig cfg = {})
      : AdamState(like.rows(), like.cols(), cfg) {}

  DenseMatrix first_moment;
  DenseMatrix second_moment;
  std::uint64_t step = 0;
  AdamConfig config;
};

/// Bias-corrected Adam update applied elementwise.
inline void adam_step(DenseMatrix& params, const DenseMatrix& grads, AdamState& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment) ||
      !params.same_shape(state.second_moment)) {
    throw ShapeError("adam_step: params " + params.shape_string() + ", grads " +
                     grads.shape_string() + ", state " + state.first_moment.shape_string());
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  auto p = params.values();
  auto g = grads.values();
  auto m = state.first_moment.values();
  auto v = state.second_moment.values();
  for (std::size_t k = 0; k < p.size(); ++k) {
    m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
    v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
    const double m_hat = m[k] / correction1;
    const double v_hat = v[k] / correction2;
    p[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

/// Central-difference gradient of a scalar function. Used as the gradient
/// oracle in tests; never on a training path.
template <typename F>
Vector finite_diff_grad(F&& f, std::span<const double> point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Vector x(point.begin(), point.end());
  Vector grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + step;
    const double plus = f(std::span<const double>(x));
    x[k] = saved - step;
    const double minus = f(std::span<const double>(x));
    x[k] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      std::ostringstream os;
      os << "finite_diff_grad: non-finite function value at coordinate " << k;
      throw NumericError(os.str());
    }
    grad[k] = (plus - minus) / (2.0 * step);
  }
  return grad;
}

}  // namespace ncr
