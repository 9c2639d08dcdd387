#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ncr/data.hpp"
#include "ncr/eval.hpp"
#include "ncr/models.hpp"
#include "ncr/numerics.hpp"

namespace ncr {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 256;
  std::size_t negative_ratio = 1;
  std::size_t max_epochs = 100;
  RngSeed seed{};
  double plateau = 0.001;  // stop when the epoch loss improves by less than this fraction
  bool stop_on_plateau = true;  // false: run exactly max_epochs
  std::size_t eval_k = 10;
  std::size_t eval_negatives = 100;
  std::size_t threads = 1;  // validation only
  bool restore_best = true;
  bool keep_batch_losses = false;
  std::function<void(std::size_t epoch, double loss, double val_hr, double val_ndcg)> on_epoch;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (negative_ratio < 1) throw std::invalid_argument("negative ratio must be >= 1");
    if (!(plateau > 0.0 && plateau < 1.0)) throw std::invalid_argument("plateau threshold must be in (0, 1)");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  }
};

struct TrainHistory {
  std::vector<double> loss;  // mean per-instance BCE of each epoch
  std::vector<double> val_hr;
  std::vector<double> val_ndcg;
  std::vector<std::size_t> instances;
  std::vector<std::vector<double>> batch_loss_sums;  // filled when keep_batch_losses
  std::optional<std::size_t> best_epoch;
  std::string stop_reason;

  std::size_t epochs() const { return loss.size(); }

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;

  nlohmann::json to_json() const {
    nlohmann::json j{{"loss", loss},         {"val_hr", val_hr},
                     {"val_ndcg", val_ndcg}, {"instances", instances},
                     {"stop_reason", stop_reason}};
    if (best_epoch) j["best_epoch"] = *best_epoch;
    else j["best_epoch"] = nullptr;
    if (!batch_loss_sums.empty()) j["batch_loss_sums"] = batch_loss_sums;
    return j;
  }
};

class DivergedError : public NumericError {
 public:
  DivergedError(std::size_t epoch, std::size_t batch, const std::string& what)
      : NumericError("diverged at epoch " + std::to_string(epoch) + ", batch " +
                     std::to_string(batch) + ": " + what),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

template <TrainableModel M>
struct TrainResult {
  M params;
  TrainHistory history;
};

inline constexpr std::uint64_t kEpochStream = 0x65706f6368ull;

inline RngSeed epoch_seed(RngSeed seed, std::size_t epoch) {
  return derive_seed(derive_seed(seed, kEpochStream), epoch);
}

inline EvalOptions validation_options(const TrainConfig& cfg) {
  return {cfg.eval_k, cfg.eval_negatives, cfg.seed, Holdout::validation, cfg.threads};
}

/// True when the relative improvement from `previous` to `current` is below
/// the plateau threshold.
inline bool loss_plateaued(double previous, double current, double threshold) {
  return (previous - current) / previous < threshold;
}

template <TrainableModel M>
void check_dimensions(const M& params, const SplitDataset& split) {
  if (params.users() != split.user_count() || params.items() != split.item_count()) {
    throw ShapeError("model is sized for " + std::to_string(params.users()) + " users x " +
                     std::to_string(params.items()) + " items but the split has " +
                     std::to_string(split.user_count()) + " x " + std::to_string(split.item_count()));
  }
}

/// Mini-batch Adam on freshly sampled triplets each epoch. Stops at the loss
/// plateau or `max_epochs`; returns the parameters of the epoch with the best
/// validation HR when `restore_best` is set.
template <TrainableModel M>
TrainResult<M> train(M params, const SplitDataset& split, const TrainConfig& cfg) {
  cfg.validate();
  check_dimensions(params, split);
  TrainResult<M> out{params, {}};
  if (cfg.max_epochs == 0) {
    out.history.stop_reason = "max_epochs";
    return out;
  }

  std::vector<DenseMatrix*> tensors;
  for_each_tensor(params, [&](const auto&, DenseMatrix& t) { tensors.push_back(&t); });
  M grad = zeros_like(params);
  std::vector<DenseMatrix*> grads;
  for_each_tensor(grad, [&](const auto&, DenseMatrix& t) { grads.push_back(&t); });
  std::vector<AdamState> adam;
  for (const auto* t : tensors) adam.emplace_back(*t, AdamConfig{cfg.learning_rate});

  const EvalOptions val_opts = validation_options(cfg);
  const EvalCandidates val_candidates = build_candidates(split, val_opts);
  TrainHistory& h = out.history;
  h.stop_reason = "max_epochs";
  double best_hr = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto triplets = sample_triplets(split.train, cfg.negative_ratio, epoch_seed(cfg.seed, epoch));
    if (triplets.empty()) throw DataError("no training triplets could be sampled");
    double epoch_sum = 0.0;
    std::vector<double> batch_sums;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < triplets.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(triplets.size(), start + cfg.batch_size);
      for (auto* g : grads) g->fill(0.0);
      const double scale = 1.0 / static_cast<double>(end - start);
      double batch_sum = 0.0;
      for (std::size_t t = start; t < end; ++t) {
        batch_sum += accumulate_gradient(params, triplets[t], grad, scale);
      }
      if (!std::isfinite(batch_sum)) throw DivergedError(epoch, batch_index, "non-finite loss");
      for (std::size_t k = 0; k < tensors.size(); ++k) adam_step(*tensors[k], *grads[k], adam[k]);
      epoch_sum += batch_sum;
      if (cfg.keep_batch_losses) batch_sums.push_back(batch_sum);
    }
    if (!all_finite(params)) throw DivergedError(epoch, batch_index, "non-finite parameters");

    const double mean = epoch_sum / static_cast<double>(triplets.size());
    const EvalReport val = evaluate(params, val_candidates, val_opts);
    h.loss.push_back(mean);
    h.val_hr.push_back(val.hr);
    h.val_ndcg.push_back(val.ndcg);
    h.instances.push_back(triplets.size());
    if (cfg.keep_batch_losses) h.batch_loss_sums.push_back(std::move(batch_sums));
    if (val.hr > best_hr) {
      best_hr = val.hr;
      h.best_epoch = epoch;
      if (cfg.restore_best) out.params = params;
    }
    if (cfg.on_epoch) cfg.on_epoch(epoch, mean, val.hr, val.ndcg);
    if (cfg.stop_on_plateau && epoch > 0 && loss_plateaued(h.loss[epoch - 1], mean, cfg.plateau)) {
      h.stop_reason = "plateau";
      break;
    }
  }
  if (!cfg.restore_best) out.params = std::move(params);
  return out;
}

/// Validation HR@K / NDCG@K of `params` without training.
template <PairwiseModel M>
EvalReport validation_report(const M& params, const SplitDataset& split, const TrainConfig& cfg) {
  return evaluate(params, split, validation_options(cfg));
}

inline constexpr std::uint64_t kNbprInitStream = 0x6e627072ull;
inline constexpr std::uint64_t kDncrInitStream = 0x646e6372ull;
inline constexpr std::uint64_t kNeuprInitStream = 0x6e65757072ull;

struct PretrainResult {
  NeuprParams model;
  TrainHistory nbpr;
  TrainHistory dncr;
  TrainHistory neupr;
  EvalReport fused_validation;  // before any NeuPR training
};

/// Trains NBPR and DNCR from random initializations, fuses them with weight
/// `alpha` on the NBPR half, then continues training the fused NeuPR.
inline PretrainResult pretrain_pipeline(const SplitDataset& split, std::size_t factors,
                                        std::size_t hidden_layers, const TrainConfig& cfg,
                                        double alpha = 0.5) {
  const auto m = split.user_count(), n = split.item_count();
  auto nbpr = train(NbprParams::random(m, n, factors, derive_seed(cfg.seed, kNbprInitStream)), split, cfg);
  auto dncr = train(DncrParams::random(m, n, factors, hidden_layers, derive_seed(cfg.seed, kDncrInitStream)),
                    split, cfg);
  NeuprParams fused = fuse_pretrained(nbpr.params, dncr.params, FusionConfig{alpha});
  EvalReport fused_val = validation_report(fused, split, cfg);
  auto neupr = train(std::move(fused), split, cfg);
  return {std::move(neupr.params), std::move(nbpr.history), std::move(dncr.history),
          std::move(neupr.history), std::move(fused_val)};
}

}  // namespace ncr
