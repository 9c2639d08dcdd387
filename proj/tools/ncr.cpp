// ncr: prep / train / eval / recommend / sweep over leave-one-out splits.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ncr/ncr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

constexpr const char* kModelFile = "model.ncr";
constexpr const char* kHistoryFile = "history.json";
constexpr const char* kStatsFile = "stats.json";
constexpr const char* kConfigFile = "config.ini";

struct Options {
  std::string data;
  std::string format = "movielens-dat";
  std::size_t min_count = 10;
  std::string model = "nbpr";
  std::size_t factors = 8;
  std::size_t layers = 4;
  std::optional<double> lr;
  std::size_t batch = 256;
  std::size_t ratio = 1;
  double alpha = 0.5;
  bool pretrain = false;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t k = 10;
  std::size_t threads = 1;
  std::size_t max_epochs = 100;
  double plateau = 0.001;
  bool no_plateau_stop = false;
  double lambda = 0.01;
  std::size_t negatives = 100;
  std::string holdout = "test";
  std::string model_file;
  std::string user;
  bool sweep_k = false;
  std::vector<std::string> models{"itempop", "bpr", "nbpr", "dncr", "neupr"};
  std::vector<std::size_t> factor_grid{8, 16, 24, 32, 64};
  std::vector<std::size_t> ratio_grid{1};
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_dir(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::is_directory(path)) throw ncr::DataError(path + ": not a directory");
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  ncr::detail::write_text(path, text);
}

void echo_config(const CLI::App& app, const fs::path& dir) {
  write_file(dir / kConfigFile, app.config_to_str(true, false));
}

ncr::TrainConfig train_config(const Options& o) {
  ncr::TrainConfig c;
  c.learning_rate = o.lr.value_or(0.001);
  c.batch_size = o.batch;
  c.negative_ratio = o.ratio;
  c.max_epochs = o.max_epochs;
  c.seed = {o.seed};
  c.plateau = o.plateau;
  c.stop_on_plateau = !o.no_plateau_stop;
  c.eval_k = o.k;
  c.eval_negatives = o.negatives;
  c.threads = o.threads;
  return c;
}

ncr::BprConfig bpr_config(const Options& o) {
  ncr::BprConfig c;
  c.learning_rate = o.lr.value_or(0.05);
  c.lambda = o.lambda;
  c.negative_ratio = o.ratio;
  c.max_epochs = o.max_epochs;
  c.seed = {o.seed};
  c.plateau = o.plateau;
  c.stop_on_plateau = !o.no_plateau_stop;
  c.eval_k = o.k;
  c.eval_negatives = o.negatives;
  c.threads = o.threads;
  return c;
}

struct Trained {
  ncr::AnyModel model;
  json history;
};

Trained train_model(const std::string& kind, std::size_t factors, const Options& o,
                    const ncr::SplitDataset& split) {
  const auto m = split.user_count(), n = split.item_count();
  const ncr::TrainConfig cfg = train_config(o);
  cfg.validate();
  const ncr::RngSeed seed{o.seed};
  if (kind == "itempop") return {ncr::PopularityTable::from(split.train), json::object()};
  if (kind == "bpr") {
    auto r = ncr::bpr_train(split, factors, bpr_config(o));
    return {std::move(r.params), r.history.to_json()};
  }
  if (kind == "nbpr") {
    auto r = ncr::train(ncr::NbprParams::random(m, n, factors, ncr::derive_seed(seed, ncr::kNbprInitStream)),
                        split, cfg);
    return {std::move(r.params), r.history.to_json()};
  }
  if (kind == "dncr") {
    auto r = ncr::train(
        ncr::DncrParams::random(m, n, factors, o.layers, ncr::derive_seed(seed, ncr::kDncrInitStream)),
        split, cfg);
    return {std::move(r.params), r.history.to_json()};
  }
  if (kind == "neupr") {
    if (o.pretrain) {
      auto r = ncr::pretrain_pipeline(split, factors, o.layers, cfg, o.alpha);
      json h{{"nbpr", r.nbpr.to_json()},
             {"dncr", r.dncr.to_json()},
             {"neupr", r.neupr.to_json()},
             {"fused_validation", {{"hr", r.fused_validation.hr}, {"ndcg", r.fused_validation.ndcg}}}};
      return {std::move(r.model), std::move(h)};
    }
    auto r = ncr::train(
        ncr::NeuprParams::random(m, n, factors, o.layers, ncr::derive_seed(seed, ncr::kNeuprInitStream)),
        split, cfg);
    return {std::move(r.params), r.history.to_json()};
  }
  throw UsageError("unknown model '" + kind + "' (itempop|bpr|nbpr|dncr|neupr)");
}

ncr::RankedList rank_with(const ncr::AnyModel& model, ncr::Index u, std::span<const ncr::Index> cands,
                          std::size_t k) {
  return std::visit(
      [&](const auto& m) -> ncr::RankedList {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ncr::PopularityTable>) return ncr::itempop_rank(m, cands, k, u);
        else if constexpr (std::is_same_v<T, ncr::BprParams>) return ncr::mf_topk(m, u, cands, k);
        else return ncr::top_k(m, u, cands, k);
      },
      model);
}

void check_compatible(const ncr::LoadedModel& loaded, const ncr::SplitDataset& split) {
  const auto& h = loaded.header;
  const bool users_ok = h.kind == "itempop" || h.users == split.user_count();
  if (users_ok && h.items == split.item_count()) return;
  const std::string model_fp = h.metadata.value("dataset_fingerprint", std::string("unknown"));
  throw ncr::DataError("model was trained on dataset " + model_fp + " (" + std::to_string(h.users) +
                       " users x " + std::to_string(h.items) + " items) but dataset " +
                       ncr::split_fingerprint(split) + " has " + std::to_string(split.user_count()) +
                       " x " + std::to_string(split.item_count()));
}

ncr::Holdout parse_holdout(const std::string& s) {
  if (s == "test") return ncr::Holdout::test;
  if (s == "validation") return ncr::Holdout::validation;
  throw UsageError("--holdout must be test or validation");
}

std::string summary_csv(const std::string& kind, std::size_t factors, std::size_t ratio,
                        const ncr::EvalReport& report, bool sweep) {
  std::string out = ncr::csv_summary_header() + "\n";
  if (!sweep) return out + ncr::csv_summary_row(kind, factors, ratio, report.k, report.hr, report.ndcg) + "\n";
  for (std::size_t k = 1; k <= report.k; ++k)
    out += ncr::csv_summary_row(kind, factors, ratio, k, report.hr_at(k), report.ndcg_at(k)) + "\n";
  return out;
}

// ---- commands -----------------------------------------------------------------

void cmd_prep(const Options& o, const CLI::App& app) {
  if (o.data.empty()) throw UsageError("--data is required");
  if (o.out.empty()) throw UsageError("--out is required");
  const auto format = ncr::parse_input_format(o.format);
  const auto raw = ncr::load_interactions_file(o.data, format);
  const auto data = ncr::filter_and_remap(raw, o.min_count);
  const auto split = ncr::leave_one_out_split(data);
  const auto stats = ncr::dataset_stats(data);
  ncr::save_split(split, o.out);
  json j{{"users", stats.users},
         {"items", stats.items},
         {"interactions", stats.interactions},
         {"density", stats.density},
         {"fingerprint", ncr::split_fingerprint(split)}};
  write_file(fs::path(o.out) / kStatsFile, j.dump(2) + "\n");
  echo_config(app, o.out);
  std::cout << j.dump() << "\n";
}

void cmd_train(const Options& o, const CLI::App& app) {
  require_dir(o.data, "--data");
  if (o.out.empty()) throw UsageError("--out is required");
  const auto split = ncr::load_split(o.data);
  Trained t = train_model(o.model, o.factors, o, split);

  ncr::ModelHeader header;
  header.seed = o.seed;
  header.metadata = {{"dataset_fingerprint", ncr::split_fingerprint(split)},
                     {"ratio", o.ratio},
                     {"batch", o.batch},
                     {"pretrain", o.pretrain},
                     {"alpha", o.alpha}};
  if (o.model != "itempop") header.metadata["train_learning_rate"] = o.lr.value_or(o.model == "bpr" ? 0.05 : 0.001);
  const fs::path out(o.out);
  fs::create_directories(out);
  ncr::save_model_file(out / kModelFile, t.model, header);
  write_file(out / kHistoryFile, t.history.dump(2) + "\n");
  echo_config(app, out);
}

void cmd_eval(const Options& o, const CLI::App& app) {
  require_dir(o.data, "--data");
  if (o.model_file.empty()) throw UsageError("--model-file is required");
  const auto split = ncr::load_split(o.data);
  const auto loaded = ncr::load_model_file(o.model_file);
  check_compatible(loaded, split);

  ncr::EvalOptions opts{o.k, o.negatives, {o.seed}, parse_holdout(o.holdout), o.threads};
  const auto report = ncr::evaluate_ranker(
      [&](ncr::Index u, std::span<const ncr::Index> c, std::size_t k) { return rank_with(loaded.model, u, c, k); },
      split, opts);

  const auto& h = loaded.header;
  const std::size_t ratio = h.metadata.value("ratio", std::size_t{1});
  json j = report.to_json(&split.train.user_ids());
  j["model"] = h.kind;
  j["factors"] = h.factors;
  j["dataset_fingerprint"] = ncr::split_fingerprint(split);
  const std::string csv = summary_csv(h.kind, h.factors, ratio, report, o.sweep_k);
  if (!o.out.empty()) {
    const fs::path out(o.out);
    fs::create_directories(out);
    write_file(out / "report.json", j.dump(2) + "\n");
    write_file(out / "summary.csv", csv);
    echo_config(app, out);
  }
  std::cout << csv;
}

void cmd_recommend(const Options& o) {
  require_dir(o.data, "--data");
  if (o.model_file.empty()) throw UsageError("--model-file is required");
  if (o.user.empty()) throw UsageError("--user is required");
  const auto split = ncr::load_split(o.data);
  const auto loaded = ncr::load_model_file(o.model_file);
  check_compatible(loaded, split);
  const auto u = split.train.find_user(o.user);
  if (!u) throw ncr::DataError("unknown user '" + o.user + "'");

  std::vector<ncr::Index> candidates;
  for (ncr::Index i = 0; i < split.item_count(); ++i)
    if (!split.interacted(*u, i)) candidates.push_back(i);
  if (candidates.empty()) throw ncr::DataError("user '" + o.user + "' has no unobserved items");
  const auto list = rank_with(loaded.model, *u, candidates, o.k);
  std::cout << ncr::to_json(list, &split.train.user_ids(), &split.train.item_ids()).dump() << "\n";
}

void cmd_sweep(const Options& o, const CLI::App& app) {
  require_dir(o.data, "--data");
  if (o.out.empty()) throw UsageError("--out is required");
  const auto split = ncr::load_split(o.data);
  const ncr::EvalOptions eval_opts{o.k, o.negatives, {o.seed}, parse_holdout(o.holdout), o.threads};
  const auto candidates = ncr::build_candidates(split, eval_opts);

  std::string csv = ncr::csv_summary_header() + "\n";
  for (const auto& kind : o.models) {
    const bool uses_factors = kind != "itempop";
    const std::vector<std::size_t> factor_list = uses_factors ? o.factor_grid : std::vector<std::size_t>{0};
    const std::vector<std::size_t> ratio_list = uses_factors ? o.ratio_grid : std::vector<std::size_t>{1};
    for (const std::size_t p : factor_list) {
      for (const std::size_t r : ratio_list) {
        Options run = o;
        run.ratio = r;
        const Trained t = train_model(kind, p, run, split);
        const auto report = ncr::evaluate_ranker(
            [&](ncr::Index u, std::span<const ncr::Index> c, std::size_t k) { return rank_with(t.model, u, c, k); },
            candidates, eval_opts);
        std::string rows = summary_csv(kind, p, r, report, o.sweep_k);
        rows.erase(0, rows.find('\n') + 1);
        csv += rows;
        std::cerr << "sweep: " << kind << " p=" << p << " ratio=" << r << " hr=" << report.hr << "\n";
      }
    }
  }
  const fs::path out(o.out);
  fs::create_directories(out);
  write_file(out / "sweep.csv", csv);
  echo_config(app, out);
  std::cout << csv;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Neural collaborative ranking: prep, train, eval, recommend, sweep"};
  app.set_config("--config", "", "key=value config file; flags override its fields");
  app.require_subcommand(1);

  app.add_option("--data", o.data, "Ratings file (prep) or prepared split directory");
  app.add_option("--format", o.format, "movielens-dat or csv")->capture_default_str();
  app.add_option("--min-count", o.min_count, "Minimum interactions per user and item")->capture_default_str();
  app.add_option("--model", o.model, "itempop|bpr|nbpr|dncr|neupr")->capture_default_str();
  app.add_option("--factors", o.factors, "Predictive factors p")->capture_default_str();
  app.add_option("--layers", o.layers, "Hidden layers H of the DNCR tower")->capture_default_str();
  app.add_option("--lr", o.lr, "Learning rate (default 0.001 neural, 0.05 bpr)");
  app.add_option("--batch", o.batch, "Mini-batch size")->capture_default_str();
  app.add_option("--ratio", o.ratio, "Negatives per positive")->capture_default_str();
  app.add_option("--alpha", o.alpha, "NBPR share of the fused output weight")->capture_default_str();
  app.add_flag("--pretrain", o.pretrain, "NeuPR: fuse pre-trained NBPR and DNCR first");
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--k", o.k, "Ranking cutoff")->capture_default_str();
  app.add_option("--threads", o.threads, "Evaluation threads")->capture_default_str();
  app.add_option("--max-epochs", o.max_epochs, "Epoch limit")->capture_default_str();
  app.add_option("--plateau", o.plateau, "Relative loss improvement below which training stops")
      ->capture_default_str();
  app.add_flag("--no-plateau-stop", o.no_plateau_stop, "Always run --max-epochs epochs");
  app.add_option("--lambda", o.lambda, "BPR L2 weight")->capture_default_str();
  app.add_option("--negatives", o.negatives, "Sampled negatives per evaluated user")->capture_default_str();
  app.add_option("--holdout", o.holdout, "test or validation")->capture_default_str();
  app.add_option("--model-file", o.model_file, "Trained model file");
  app.add_option("--user", o.user, "External user id");
  app.add_flag("--sweep-k", o.sweep_k, "Emit one CSV row per cutoff 1..k");
  app.add_option("--models", o.models, "sweep: model kinds")->capture_default_str();
  app.add_option("--factor-grid", o.factor_grid, "sweep: predictive factors")->capture_default_str();
  app.add_option("--ratio-grid", o.ratio_grid, "sweep: negative ratios")->capture_default_str();

  auto* prep = app.add_subcommand("prep", "Filter, remap and split a ratings file");
  auto* train = app.add_subcommand("train", "Train a model on a prepared split");
  auto* eval = app.add_subcommand("eval", "HR@K / NDCG@K of a model file");
  auto* recommend = app.add_subcommand("recommend", "Top-K unobserved items for one user");
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate a grid, emitting CSV");
  for (auto* sub : {prep, train, eval, recommend, sweep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*prep) cmd_prep(o, app);
    else if (*train) cmd_train(o, app);
    else if (*eval) cmd_eval(o, app);
    else if (*recommend) cmd_recommend(o);
    else if (*sweep) cmd_sweep(o, app);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "ncr: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ncr::NumericError& e) {
    std::cerr << "ncr: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ncr::DataError& e) {
    std::cerr << "ncr: " << e.what() << "\n";
    return kExitData;
  } catch (const ncr::FormatError& e) {
    std::cerr << "ncr: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "ncr: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "ncr: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "ncr: " << e.what() << "\n";
    return kExitData;
  }
}
