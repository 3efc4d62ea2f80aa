#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <thread>
#include <vector>

#include "memefuse/embedding_store.hpp"
#include "memefuse/hard_mining.hpp"
#include "memefuse/mlp_head.hpp"
#include "memefuse/objective.hpp"
#include "memefuse/optimizer.hpp"
#include "memefuse/representation.hpp"
#include "memefuse/rng.hpp"

namespace memefuse {

enum class ModelSelection { best_validation, final_epoch };

constexpr std::string_view selection_name(ModelSelection s) noexcept {
  return s == ModelSelection::best_validation ? "best_validation" : "final_epoch";
}

struct TrainConfig {
  std::size_t epochs = 500;
  double learning_rate = 0.001;
  std::size_t batch_size = 64;
  MiningConfig mining{};
  FusionConfig fusion{};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  OptimizerKind optimizer = OptimizerKind::adam;
  ModelSelection model_selection = ModelSelection::best_validation;
  std::size_t hidden1 = kHidden1;
  std::size_t hidden2 = kHidden2;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (c.batch_size < 2) throw std::invalid_argument("batch_size must be ≥ 2");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    throw std::invalid_argument("learning_rate must be > 0");
  }
  if (c.hidden1 < 1 || c.hidden2 < 1) throw std::invalid_argument("hidden widths must be >= 1");
  validate_mining(c.mining);
  validate_fusion(c.fusion);
}

/// Mean loss terms over the batches of one epoch.
struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double l_ce = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l_hm = 0.0;
  double l_total = 0.0;
  std::size_t batches = 0;
  std::size_t hard_terms = 0;  // hard samples seen by the mining loss
  std::size_t skipped_terms = 0;
  std::optional<double> validation_accuracy;
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> validation_accuracy;  // of the selected parameters
  std::size_t selected_epoch = 0;
  std::size_t skipped_terms = 0;
  std::vector<EpochLog> epochs;
};

struct RunResult {
  HeadParameters params;
  SeedMetrics metrics;
};

/// Called once per optimizer step with that batch's loss values.
using BatchObserver = std::function<void(std::size_t epoch, std::size_t batch, const LossBreakdown&)>;

/// Fused train / validation / test matrices for one fusion setting.
struct PreparedData {
  FusedSplit train;
  FusedSplit validation;
  FusedSplit test;
};

inline PreparedData prepare(const Dataset& ds, const FusionConfig& fusion) {
  const std::size_t dim = ds.manifest.embedding_dim;
  return {fuse_all(ds.split(Split::train), fusion, dim), fuse_all(ds.split(Split::validation), fusion, dim),
          fuse_all(ds.split(Split::test), fusion, dim)};
}

/// Fraction of rows whose argmax logit equals the label. Mining never runs here.
inline double evaluate(const HeadParameters& params, const FusedSplit& split) {
  if (split.size() == 0) throw std::invalid_argument("evaluate: empty split");
  const auto trace = forward(params, split.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (predict_class(trace.logits.row(i)) == split.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

inline double evaluate(const HeadParameters& params, const Dataset& ds, Split split,
                       const FusionConfig& fusion) {
  return evaluate(params, fuse_all(ds.split(split), fusion, ds.manifest.embedding_dim));
}

namespace detail {

inline void gather_batch(const FusedSplit& src, std::span<const std::size_t> rows, Matrix& features,
                         std::vector<std::uint8_t>& labels, std::vector<bool>& hard) {
  features = Matrix(rows.size(), src.features.cols());
  labels.resize(rows.size());
  hard.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = src.features.row(rows[i]);
    std::copy(r.begin(), r.end(), features.row(i).begin());
    labels[i] = src.labels[rows[i]];
    hard[i] = src.hard[rows[i]];
  }
}

}  // namespace detail

/// One seeded training run on already fused data. Deterministic for fixed
/// (data, config, seed).
inline RunResult train_prepared(const PreparedData& data, const TrainConfig& config, std::uint64_t seed,
                                const BatchObserver& observer = {}) {
  validate_train_config(config);
  if (data.train.size() == 0) throw std::invalid_argument("train split is empty");

  const SplitMix64 seed_root(seed);
  const HeadShape shape{data.train.features.cols(), config.hidden1, config.hidden2};
  HeadParameters params = init_parameters(shape, seed_root.split(1)());
  auto shuffle_rng = seed_root.split(2);
  Optimizer optimizer(config.optimizer, config.learning_rate, shape);

  RunResult result;
  result.metrics.seed = seed;
  const bool have_validation = data.validation.size() > 0;
  const bool select_best = config.model_selection == ModelSelection::best_validation && have_validation;
  double best_validation = -1.0;
  HeadParameters best_params;

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Matrix features;
  std::vector<std::uint8_t> labels;
  std::vector<bool> hard;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      detail::gather_batch(data.train, std::span<const std::size_t>(order).subspan(start, stop - start),
                           features, labels, hard);
      const auto obj = evaluate_objective(params, features, labels, hard, config.mining);
      optimizer.step(params, obj.grads);
      if (observer) observer(epoch, log.batches, obj.loss);
      log.l_ce += obj.loss.l_ce;
      log.l1 += obj.loss.l1;
      log.l2 += obj.loss.l2;
      log.l_hm += obj.loss.l_hm;
      log.l_total += obj.loss.l_total;
      log.hard_terms += obj.loss.n_hard;
      log.skipped_terms += obj.loss.n_skipped;
      ++log.batches;
    }
    const double inv = 1.0 / static_cast<double>(log.batches);
    log.l_ce *= inv;
    log.l1 *= inv;
    log.l2 *= inv;
    log.l_hm *= inv;
    log.l_total *= inv;
    result.metrics.skipped_terms += log.skipped_terms;
    if (have_validation) {
      log.validation_accuracy = evaluate(params, data.validation);
      if (select_best && *log.validation_accuracy > best_validation) {
        best_validation = *log.validation_accuracy;
        best_params = params;
        result.metrics.selected_epoch = epoch;
      }
    }
    result.metrics.epochs.push_back(log);
  }

  if (select_best) {
    result.params = std::move(best_params);
    result.metrics.validation_accuracy = best_validation;
  } else {
    result.params = std::move(params);
    result.metrics.selected_epoch = config.epochs;
    if (have_validation) result.metrics.validation_accuracy = result.metrics.epochs.back().validation_accuracy;
  }
  result.metrics.train_accuracy = evaluate(result.params, data.train);
  if (data.test.size() > 0) result.metrics.test_accuracy = evaluate(result.params, data.test);
  return result;
}

inline RunResult train_run(const Dataset& ds, const TrainConfig& config, std::uint64_t seed,
                           const BatchObserver& observer = {}) {
  validate_train_config(config);
  return train_prepared(prepare(ds, config.fusion), config, seed, observer);
}

struct AccuracySummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single value
};

inline AccuracySummary summarize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  AccuracySummary s;
  s.mean = sum / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

struct RunMetrics {
  std::vector<SeedMetrics> per_seed;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;

  [[nodiscard]] std::vector<double> test_accuracies() const {
    std::vector<double> v;
    for (const auto& s : per_seed) v.push_back(s.test_accuracy);
    return v;
  }
};

/// Runs every seed in config.seeds (up to `jobs` at a time, each fully
/// isolated) and aggregates test accuracy. Selected parameters per seed are
/// stored in `heads` when given.
inline RunMetrics train_multi(const Dataset& ds, const TrainConfig& config, std::size_t jobs = 1,
                              std::vector<HeadParameters>* heads = nullptr) {
  validate_train_config(config);
  if (config.seeds.empty()) throw std::invalid_argument("at least one seed is required");
  const auto data = prepare(ds, config.fusion);
  if (data.train.size() == 0) throw std::invalid_argument("train split is empty");
  if (data.test.size() == 0) throw std::invalid_argument("test split is empty");

  RunMetrics out;
  out.per_seed.resize(config.seeds.size());
  if (heads) heads->assign(config.seeds.size(), HeadParameters{});
  std::vector<std::exception_ptr> errors(config.seeds.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < config.seeds.size(); i = next++) {
      try {
        auto run = train_prepared(data, config, config.seeds[i]);
        out.per_seed[i] = std::move(run.metrics);
        if (heads) (*heads)[i] = std::move(run.params);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, config.seeds.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  const auto acc = out.test_accuracies();
  const auto s = summarize(acc);
  out.mean_accuracy = s.mean;
  out.std_accuracy = s.std;
  return out;
}

}  // namespace memefuse
