#pragma once

// JSON documents emitted by the CLI. Schema (all keys always present):
//
// metrics document ("memefuse.metrics/1"):
//   { schema, environment: {engine_version, format_version},
//     dataset: {embedding_dim, responses_per_prompt, encoder_tag, split_counts},
//     config: <train config echo>,
//     seeds: [ {seed, test_accuracy, train_accuracy, validation_accuracy|null,
//               selected_epoch, skipped_terms,
//               epochs: [ {epoch, l_ce, l1, l2, l_hm, l_total, batches,
//                          hard_terms, skipped_terms, validation_accuracy|null} ]} ],
//     mean_accuracy, std_accuracy }
//
// experiment document ("memefuse.experiment/1"):
//   { schema, experiment, axis, environment, dataset, warnings: [...],
//     cells: [ {label, config, metrics: {seeds, mean_accuracy, std_accuracy}} ] }

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "memefuse/embedding_store.hpp"
#include "memefuse/trainer.hpp"

namespace memefuse {

inline constexpr std::string_view kEngineVersion = "0.3.0";

inline nlohmann::json environment_json() {
  return {{"engine_version", kEngineVersion}, {"format_version", kFormatVersion}};
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"embedding_dim", m.embedding_dim},
          {"responses_per_prompt", m.responses_per_prompt},
          {"encoder_tag", m.encoder_tag},
          {"split_counts", m.split_counts}};
}

inline nlohmann::json to_json(const FusionConfig& f) {
  return {{"use_image", f.use_image},
          {"use_text", f.use_text},
          {"use_descriptions", f.use_descriptions},
          {"use_emotions", f.use_emotions},
          {"l2_normalize_blocks", f.l2_normalize_blocks}};
}

inline nlohmann::json to_json(const MiningConfig& m) {
  return {{"n", m.n},
          {"alpha", m.alpha},
          {"neighbor_gradients", m.neighbor_gradients},
          {"reduction", m.reduction == Reduction::sum ? "sum" : "mean"},
          {"margin_clamp", m.margin_clamp}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"optimizer", optimizer_name(c.optimizer)},
          {"model_selection", selection_name(c.model_selection)},
          {"hidden1", c.hidden1},
          {"hidden2", c.hidden2},
          {"seeds", c.seeds},
          {"mining", to_json(c.mining)},
          {"fusion", to_json(c.fusion)}};
}

namespace detail {

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace detail

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"l_ce", e.l_ce},
          {"l1", e.l1},
          {"l2", e.l2},
          {"l_hm", e.l_hm},
          {"l_total", e.l_total},
          {"batches", e.batches},
          {"hard_terms", e.hard_terms},
          {"skipped_terms", e.skipped_terms},
          {"validation_accuracy", detail::optional_json(e.validation_accuracy)}};
}

inline nlohmann::json to_json(const SeedMetrics& s) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : s.epochs) epochs.push_back(to_json(e));
  return {{"seed", s.seed},
          {"test_accuracy", s.test_accuracy},
          {"train_accuracy", s.train_accuracy},
          {"validation_accuracy", detail::optional_json(s.validation_accuracy)},
          {"selected_epoch", s.selected_epoch},
          {"skipped_terms", s.skipped_terms},
          {"epochs", std::move(epochs)}};
}

inline nlohmann::json to_json(const RunMetrics& m) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : m.per_seed) seeds.push_back(to_json(s));
  return {{"seeds", std::move(seeds)}, {"mean_accuracy", m.mean_accuracy}, {"std_accuracy", m.std_accuracy}};
}

inline nlohmann::json metrics_document(const DatasetManifest& manifest, const TrainConfig& config,
                                       const RunMetrics& metrics) {
  auto doc = to_json(metrics);
  doc["schema"] = "memefuse.metrics/1";
  doc["environment"] = environment_json();
  doc["dataset"] = to_json(manifest);
  doc["config"] = to_json(config);
  return doc;
}

}  // namespace memefuse
