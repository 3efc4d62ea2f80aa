#pragma once

// Experiment grids: the nearest-neighbor count sweep and the embedding /
// hard-mining ablation matrix. Each grid cell is an independent train_multi.

#include <algorithm>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "memefuse/report.hpp"
#include "memefuse/trainer.hpp"

namespace memefuse {

struct ExperimentCell {
  std::string label;
  TrainConfig config;
  RunMetrics metrics;
};

struct ExperimentReport {
  std::string experiment;  // "sweep-n" or "ablate"
  std::string axis;        // "n" or "fusion"
  std::vector<ExperimentCell> cells;
  std::vector<std::string> warnings;
};

/// Config for neighbor count n; n == 0 is the no-mining baseline (alpha = 0).
inline TrainConfig with_neighbors(TrainConfig config, std::size_t n) {
  config.mining.n = n;
  if (n == 0) config.mining.alpha = 0.0;
  return config;
}

/// Grid cells of the ablation matrix, in report order.
inline std::vector<std::pair<std::string, TrainConfig>> ablation_grid(const TrainConfig& base, std::size_t n) {
  struct Row {
    const char* label;
    bool descriptions;
    bool emotions;
    bool hard_mining;
  };
  constexpr Row rows[] = {
      {"i+t", false, false, false},      {"i+t+d", true, false, false},   {"i+t+m", false, true, false},
      {"i+t+HM", false, false, true},    {"i+t+d+m", true, true, false}, {"i+t+d+m+HM", true, true, true},
  };
  std::vector<std::pair<std::string, TrainConfig>> grid;
  for (const auto& row : rows) {
    TrainConfig c = base;
    c.fusion.use_image = true;
    c.fusion.use_text = true;
    c.fusion.use_descriptions = row.descriptions;
    c.fusion.use_emotions = row.emotions;
    c = with_neighbors(c, row.hard_mining ? n : 0);
    grid.emplace_back(row.label, c);
  }
  return grid;
}

inline ExperimentReport sweep_n(const Dataset& ds, const TrainConfig& base, std::vector<std::size_t> n_values,
                                std::size_t jobs = 1) {
  ExperimentReport report{"sweep-n", "n", {}, {}};
  std::vector<std::size_t> unique;
  for (std::size_t n : n_values) {
    if (std::find(unique.begin(), unique.end(), n) != unique.end()) {
      report.warnings.push_back("duplicate n=" + std::to_string(n) + " ignored");
      continue;
    }
    unique.push_back(n);
  }
  if (unique.empty()) throw std::invalid_argument("sweep-n: no n values given");
  for (std::size_t n : unique) {
    const auto config = with_neighbors(base, n);
    report.cells.push_back({"n=" + std::to_string(n), config, train_multi(ds, config, jobs)});
  }
  return report;
}

inline ExperimentReport ablate(const Dataset& ds, const TrainConfig& base, std::size_t n = 1,
                               std::size_t jobs = 1) {
  if (n < 1) throw std::invalid_argument("ablate: n must be >= 1 for the hard-mining rows");
  ExperimentReport report{"ablate", "fusion", {}, {}};
  for (auto& [label, config] : ablation_grid(base, n)) {
    report.cells.push_back({label, config, train_multi(ds, config, jobs)});
  }
  return report;
}

inline nlohmann::json to_json(const ExperimentReport& r, const DatasetManifest& manifest) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"label", c.label}, {"config", to_json(c.config)}, {"metrics", to_json(c.metrics)}});
  }
  return {{"schema", "memefuse.experiment/1"},
          {"experiment", r.experiment},
          {"axis", r.axis},
          {"environment", environment_json()},
          {"dataset", to_json(manifest)},
          {"warnings", r.warnings},
          {"cells", std::move(cells)}};
}

/// Plain-text table: one line per cell with mean +/- std accuracy in percent.
inline std::string render_table(const ExperimentReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %10s %8s\n", r.axis.c_str(), "acc(%)", "std");
  out += line;
  for (const auto& c : r.cells) {
    std::snprintf(line, sizeof line, "%-14s %10.2f %8.2f\n", c.label.c_str(), 100.0 * c.metrics.mean_accuracy,
                  100.0 * c.metrics.std_accuracy);
    out += line;
  }
  return out;
}

}  // namespace memefuse
